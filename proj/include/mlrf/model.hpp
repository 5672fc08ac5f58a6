#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mlrf/fusion.hpp"
#include "mlrf/param_store.hpp"
#include "mlrf/transformer.hpp"

namespace mlrf {

/// Encoder output as seen by the decoder: the layer stack plus the memory
/// that every cross-attention sublayer reads (fused when encoder-side fusion
/// is active, the top layer otherwise).
struct EncodedSource {
  std::vector<int> src_ids;
  LayerStack stack;
  Tensor memory;
  std::optional<AttentionTrace> trace;
  Shape intermediate_shape;
};

struct ForwardOutput {
  Tensor logits;  // [tgt_len x tgt_vocab]
  LayerStack decoder_stack;
  std::optional<AttentionTrace> decoder_trace;
  Shape decoder_intermediate_shape;
};

/// Transformer encoder-decoder with optional fusion on either side.
///
/// Parameters live in the owned ParamStore; the model keeps bound handles
/// into it, so in-place updates of the store are visible immediately.
class Seq2SeqModel {
 public:
  Seq2SeqModel(ModelConfig config, FusionConfig fusion, ParamStore params);

  /// Copies share parameter storage; use clone() for an independent model.
  Seq2SeqModel clone() const;

  const ModelConfig& config() const { return config_; }
  const FusionConfig& fusion() const { return fusion_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }

  EncodedSource encode(std::span<const int> src_ids, const RunContext& ctx) const;

  /// Teacher-forced pass over BOS-shifted target ids.
  ForwardOutput decode(const EncodedSource& source, std::span<const int> tgt_in, const RunContext& ctx) const;

  ForwardOutput forward(std::span<const int> src_ids, std::span<const int> tgt_in, const RunContext& ctx) const;

  /// Log-probabilities of the next token after `prefix` (BOS-first), no tape.
  std::vector<double> next_token_log_probs(const EncodedSource& source, std::span<const int> prefix) const;

 private:
  void bind();

  ModelConfig config_;
  FusionConfig fusion_;
  ParamStore params_;
  TransformerParams core_;
  FusionSite enc_site_;
  FusionSite dec_site_;
};

/// Full parameter declaration list (core plus fusion).
std::vector<ParamSpec> model_layout(const ModelConfig& config, const FusionConfig& fusion);

/// Builds a freshly initialized model.
Seq2SeqModel make_model(const ModelConfig& config, const FusionConfig& fusion, std::uint64_t seed);

/// Returns a model with `fusion` attached: existing parameters are kept and
/// any fusion parameters not already present are initialized from `seed`.
Seq2SeqModel attach_fusion(const Seq2SeqModel& model, const FusionConfig& fusion, std::uint64_t seed);

}  // namespace mlrf
