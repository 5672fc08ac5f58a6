#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mlrf/param_store.hpp"
#include "mlrf/tensor.hpp"
#include "mlrf/transformer.hpp"

namespace mlrf {

enum class FusionSide { none, encoder, decoder, both };
enum class FusionKind { baseline, avg, fnn, self_attention };

std::string to_string(FusionSide side);
std::string to_string(FusionKind kind);
FusionSide parse_fusion_side(const std::string& text);
FusionKind parse_fusion_kind(const std::string& text);

struct FusionConfig {
  FusionSide side = FusionSide::none;
  FusionKind enc_kind = FusionKind::baseline;
  FusionKind dec_kind = FusionKind::baseline;
  int n_hop = 4;
  int d_a = 1024;
  int d_f = 512;
  bool include_embedding = true;
  bool share_w1 = true;
  bool share_layer_embedding = true;

  void validate() const;
  bool encoder_side() const { return side == FusionSide::encoder || side == FusionSide::both; }
  bool decoder_side() const { return side == FusionSide::decoder || side == FusionSide::both; }
  /// Kind applied on the encoder (decoder) side, baseline when that side is off.
  FusionKind encoder_kind() const { return encoder_side() ? enc_kind : FusionKind::baseline; }
  FusionKind decoder_kind() const { return decoder_side() ? dec_kind : FusionKind::baseline; }
  /// Number of stack entries that enter fusion for a depth-`layers` model.
  std::size_t input_layers(int layers) const {
    return static_cast<std::size_t>(layers) + (include_embedding ? 1 : 0);
  }
  bool uses_self_attention() const {
    return encoder_kind() == FusionKind::self_attention || decoder_kind() == FusionKind::self_attention;
  }
  bool operator==(const FusionConfig&) const = default;
};

/// Per-position layer weights of self-attention fusion, laid out
/// [position][hop][layer]. `first_layer` is the stack index of layer column 0
/// (0 when the embedding layer is fused, 1 otherwise).
struct AttentionTrace {
  std::size_t positions = 0;
  std::size_t hops = 0;
  std::size_t layers = 0;
  std::size_t first_layer = 0;
  std::vector<double> weights;

  double at(std::size_t position, std::size_t hop, std::size_t layer) const {
    return weights[(position * hops + hop) * layers + layer];
  }
};

struct FnnFusionParams {
  FeedForwardParams ffn;
  LayerNormParams norm;
};

struct SelfAttentionFusionParams {
  Tensor layer_embedding;   // [n_layers x d]
  std::vector<Tensor> w1;   // one shared [d x d_a] matrix, or one per layer
  Tensor w2;                // [d_a x n_hop]
  FeedForwardParams ffn;    // (n_hop * d) -> d_f -> d
  LayerNormParams norm;
};

struct FusionResult {
  Tensor fused;
  std::optional<AttentionTrace> trace;
  /// Shape of the hop matrix before flattening ([seq x n_hop x d]); empty for
  /// non-attention kinds.
  Shape intermediate_shape;
};

/// The entries of `stack` that participate in fusion.
LayerStack fusion_input(const LayerStack& stack, bool include_embedding);

/// Top layer, untouched.
Tensor fuse_baseline(const LayerStack& stack);
/// Mean over the given layers followed by layer norm.
Tensor fuse_avg(const LayerStack& layers, const LayerNormParams& norm);
/// Feature-axis concat, one hidden relu layer of width d_f, projection back
/// to d, layer norm.
Tensor fuse_fnn(const LayerStack& layers, const FnnFusionParams& params);
/// Multi-hop attention over the layer axis with layer embeddings added.
FusionResult fuse_self_attention(const LayerStack& layers, const SelfAttentionFusionParams& params,
                                 std::size_t first_layer = 0);

/// Parameter declarations for every active fusion site.
std::vector<ParamSpec> fusion_layout(const ModelConfig& model, const FusionConfig& fusion);

/// Closed-form count of the parameters a fusion site of `kind` adds (layer
/// embedding excluded, see layer_embedding_parameters).
///   baseline: 0
///   avg:      2d
///   fnn:      n*d*d_f + d_f + d_f*d + d + 2d
///   sa:       w1 + d_a*n_hop + n_hop*d*d_f + d_f + d_f*d + d + 2d,
///             w1 = d*d_a when shared, n*d*d_a otherwise
/// with n = number of fused layers.
std::size_t fusion_site_parameters(FusionKind kind, const ModelConfig& model, const FusionConfig& fusion);
/// n*d per layer-embedding table; one table when shared, otherwise one per
/// self-attention site.
std::size_t layer_embedding_parameters(const ModelConfig& model, const FusionConfig& fusion);

/// One bound fusion site ("enc" or "dec").
class FusionSite {
 public:
  FusionSite() = default;
  static FusionSite bind(const ParamStore& store, const ModelConfig& model, const FusionConfig& fusion,
                         const std::string& site);

  FusionKind kind() const { return kind_; }
  FusionResult apply(const LayerStack& stack) const;

 private:
  FusionKind kind_ = FusionKind::baseline;
  bool include_embedding_ = true;
  LayerNormParams norm_;
  FnnFusionParams fnn_;
  SelfAttentionFusionParams sa_;
};

}  // namespace mlrf
