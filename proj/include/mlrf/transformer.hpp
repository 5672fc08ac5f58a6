#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mlrf/ops.hpp"
#include "mlrf/param_store.hpp"
#include "mlrf/special_ids.hpp"
#include "mlrf/tensor.hpp"

namespace mlrf {

/// Additive score for masked attention entries (finite so gradients stay finite).
inline constexpr double kMaskPenalty = -1e9;

struct ModelConfig {
  int layers = 3;
  int d = 256;
  int d_ff = 1024;
  int heads = 4;
  int src_vocab = 0;
  int tgt_vocab = 0;
  int max_len = 256;
  double dropout = 0.1;

  /// Throws ConfigError describing every violated constraint.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Per-layer representations; reps[0] is the embedding layer, reps[l] the
/// output of stacked layer l. All entries are [seq_len x d].
struct LayerStack {
  std::vector<Tensor> reps;

  std::size_t size() const { return reps.size(); }
  const Tensor& top() const { return reps.back(); }
  const Tensor& operator[](std::size_t i) const { return reps[i]; }
};

/// Boolean attention mask, row-major [rows x cols]; 1 means the key is visible.
class AttentionMask {
 public:
  AttentionMask(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> allowed);

  static AttentionMask causal(std::size_t n);
  /// Hides key columns whose id is kPadId.
  static AttentionMask key_padding(std::size_t rows, std::span<const int> key_ids);
  /// Elementwise AND of two masks of equal shape.
  static AttentionMask both(const AttentionMask& a, const AttentionMask& b);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<const std::uint8_t> allowed() const { return allowed_; }
  bool visible(std::size_t r, std::size_t c) const { return allowed_[r * cols_ + c] != 0; }
  bool has_fully_masked_row() const;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<std::uint8_t> allowed_;
};

/// Train/eval switch plus the dropout RNG for one forward pass.
struct RunContext {
  bool train = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;

  Tensor drop(const Tensor& x) const;
};

struct LinearParams {
  Tensor w;
  Tensor b;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

struct AttentionParams {
  LinearParams query, key, value, output;
};

struct FeedForwardParams {
  LinearParams inner, outer;
};

struct EncoderLayerParams {
  AttentionParams self_attn;
  LayerNormParams ln1;
  FeedForwardParams ffn;
  LayerNormParams ln2;
};

struct DecoderLayerParams {
  AttentionParams self_attn;
  LayerNormParams ln1;
  AttentionParams cross_attn;
  LayerNormParams ln2;
  FeedForwardParams ffn;
  LayerNormParams ln3;
};

/// Handles into a ParamStore for the unfused encoder-decoder.
struct TransformerParams {
  Tensor src_embed;
  Tensor tgt_embed;
  std::vector<EncoderLayerParams> encoder;
  std::vector<DecoderLayerParams> decoder;
  LinearParams output;

  static TransformerParams bind(const ParamStore& store, const ModelConfig& config);
};

/// Parameter declarations for the embeddings, both stacks and the output
/// projection. Nothing is tied between embeddings and the projection.
std::vector<ParamSpec> transformer_layout(const ModelConfig& config);

LinearParams bind_linear(const ParamStore& store, const std::string& prefix);
LayerNormParams bind_layer_norm(const ParamStore& store, const std::string& prefix);
void declare_linear(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t in, std::size_t out_dim,
                    bool with_bias = true);
void declare_layer_norm(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d);

/// Fixed sinusoidal token positions; PE[p, 2i] = sin(p / 10000^(2i/d)),
/// PE[p, 2i+1] = cos(same). Throws ConfigError for odd d.
Tensor positional_encoding(std::size_t seq_len, std::size_t d);

/// Scaled dot-product attention over `heads` heads followed by the output
/// projection. When `weights_out` is given, each head's [len_q x len_k]
/// probability matrix is appended to it.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask* mask,
                            const AttentionParams& params, std::size_t heads,
                            std::vector<Tensor>* weights_out = nullptr);

Tensor feed_forward(const Tensor& x, const FeedForwardParams& params);

/// LN(x + Drop(SelfAtt(x))) then LN(. + Drop(FFN(.))).
Tensor encoder_layer(const Tensor& x, const AttentionMask* self_mask, const EncoderLayerParams& params,
                     std::size_t heads, const RunContext& ctx);

/// Causal self-attention, cross-attention over `memory`, then FFN; each
/// sublayer residual + layer-norm wrapped.
Tensor decoder_layer(const Tensor& z, const Tensor& memory, const AttentionMask& causal_mask,
                     const AttentionMask* memory_mask, const DecoderLayerParams& params, std::size_t heads,
                     const RunContext& ctx);

/// Embeds `src_ids` (plus positions) and runs the encoder stack; PAD keys
/// are masked out of self-attention.
LayerStack encode(std::span<const int> src_ids, const ModelConfig& config, const TransformerParams& params,
                  const RunContext& ctx);

/// Runs the decoder stack over (already BOS-shifted) target ids attending
/// to `memory`. `memory_mask` hides padded source positions when given.
LayerStack decode_teacher_forced(std::span<const int> tgt_ids, const Tensor& memory, const ModelConfig& config,
                                 const TransformerParams& params, const RunContext& ctx,
                                 const AttentionMask* memory_mask = nullptr);

}  // namespace mlrf
