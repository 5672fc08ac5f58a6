#include "mlrf/fusion.hpp"

#include <sstream>

#include "mlrf/errors.hpp"
#include "mlrf/ops.hpp"

namespace mlrf {

std::string to_string(FusionSide side) {
  switch (side) {
    case FusionSide::none: return "none";
    case FusionSide::encoder: return "encoder";
    case FusionSide::decoder: return "decoder";
    case FusionSide::both: return "both";
  }
  return "none";
}

std::string to_string(FusionKind kind) {
  switch (kind) {
    case FusionKind::baseline: return "baseline";
    case FusionKind::avg: return "avg";
    case FusionKind::fnn: return "fnn";
    case FusionKind::self_attention: return "self_attention";
  }
  return "baseline";
}

FusionSide parse_fusion_side(const std::string& text) {
  if (text == "none") return FusionSide::none;
  if (text == "encoder") return FusionSide::encoder;
  if (text == "decoder") return FusionSide::decoder;
  if (text == "both") return FusionSide::both;
  throw ConfigError("unknown fusion side '" + text + "' (expected none|encoder|decoder|both)");
}

FusionKind parse_fusion_kind(const std::string& text) {
  if (text == "baseline") return FusionKind::baseline;
  if (text == "avg") return FusionKind::avg;
  if (text == "fnn") return FusionKind::fnn;
  if (text == "self_attention" || text == "sa") return FusionKind::self_attention;
  throw ConfigError("unknown fusion kind '" + text + "' (expected baseline|avg|fnn|self_attention)");
}

void FusionConfig::validate() const {
  std::vector<std::string> problems;
  if (n_hop < 1) problems.push_back("n_hop must be >= 1");
  if (d_a < 1) problems.push_back("d_a must be >= 1");
  if (d_f < 1) problems.push_back("d_f must be >= 1");
  if (problems.empty()) return;
  std::ostringstream msg;
  msg << "invalid fusion config:";
  for (const auto& p : problems) msg << ' ' << p << ';';
  throw ConfigError(msg.str());
}

LayerStack fusion_input(const LayerStack& stack, bool include_embedding) {
  if (stack.size() == 0) throw ContractError("fusion needs a non-empty layer stack");
  if (include_embedding) return stack;
  if (stack.size() < 2) throw ContractError("fusion without the embedding layer needs at least one stacked layer");
  return LayerStack{{stack.reps.begin() + 1, stack.reps.end()}};
}

Tensor fuse_baseline(const LayerStack& stack) {
  if (stack.size() == 0) throw ContractError("fusion needs a non-empty layer stack");
  return stack.top();
}

Tensor fuse_avg(const LayerStack& layers, const LayerNormParams& norm) {
  if (layers.size() == 0) throw ContractError("fusion needs a non-empty layer stack");
  Tensor total = layers[0];
  for (std::size_t l = 1; l < layers.size(); ++l) total = add(total, layers[l]);
  const Tensor mean = scale(total, 1.0 / static_cast<double>(layers.size()));
  return layer_norm(mean, norm.gain, norm.bias);
}

Tensor fuse_fnn(const LayerStack& layers, const FnnFusionParams& params) {
  if (layers.size() == 0) throw ContractError("fusion needs a non-empty layer stack");
  const Tensor joined = layers.size() == 1 ? layers[0] : concat(layers.reps, 1);
  return layer_norm(feed_forward(joined, params.ffn), params.norm.gain, params.norm.bias);
}

FusionResult fuse_self_attention(const LayerStack& layers, const SelfAttentionFusionParams& params,
                                 std::size_t first_layer) {
  const std::size_t n = layers.size();
  if (n == 0) throw ContractError("fusion needs a non-empty layer stack");
  if (params.layer_embedding.dim(0) != n) {
    throw DimensionError("layer embedding has " + std::to_string(params.layer_embedding.dim(0)) +
                         " rows but fusion input has " + std::to_string(n) + " layers");
  }
  if (params.w1.size() != 1 && params.w1.size() != n) {
    throw DimensionError("expected a shared W1 or one per fused layer");
  }
  const std::size_t seq = layers[0].dim(0), d = layers[0].dim(1);
  const std::size_t d_a = params.w1.front().dim(1);
  const std::size_t hops = params.w2.dim(1);

  // z~^l = z^l + E^l, and hidden energies tanh(z~^l W1) per layer.
  std::vector<Tensor> tagged, hidden;
  tagged.reserve(n);
  hidden.reserve(n);
  for (std::size_t l = 0; l < n; ++l) {
    tagged.push_back(add_row(layers[l], slice(params.layer_embedding, 0, l, 1)));
    const Tensor& w1 = params.w1.size() == 1 ? params.w1.front() : params.w1[l];
    hidden.push_back(tanh(matmul(tagged.back(), w1)));
  }
  // [seq x n*d_a] -> [seq*n x d_a] keeps rows ordered (position, layer).
  const Tensor hidden_rows = reshape(n == 1 ? hidden[0] : concat(hidden, 1), {seq * n, d_a});
  const Tensor energies = reshape(matmul(hidden_rows, params.w2), {seq, n, hops});
  const Tensor weights = softmax(transpose(energies), 2);  // [seq x hops x n]

  const Tensor stacked = reshape(n == 1 ? tagged[0] : concat(tagged, 1), {seq, n, d});
  const Tensor hop_matrix = bmm(weights, stacked);  // [seq x hops x d]
  const Tensor flat = reshape(hop_matrix, {seq, hops * d});
  const Tensor fused = layer_norm(feed_forward(flat, params.ffn), params.norm.gain, params.norm.bias);

  AttentionTrace trace;
  trace.positions = seq;
  trace.hops = hops;
  trace.layers = n;
  trace.first_layer = first_layer;
  trace.weights.assign(weights.values().begin(), weights.values().end());
  return {fused, std::move(trace), hop_matrix.shape()};
}

namespace {

std::string layer_embedding_name(const FusionConfig& fusion, const std::string& site) {
  return fusion.share_layer_embedding ? "fusion.layer_embedding" : "fusion." + site + ".layer_embedding";
}

void declare_site(std::vector<ParamSpec>& out, FusionKind kind, const ModelConfig& model,
                  const FusionConfig& fusion, const std::string& site) {
  const auto d = static_cast<std::size_t>(model.d);
  const auto d_f = static_cast<std::size_t>(fusion.d_f);
  const auto d_a = static_cast<std::size_t>(fusion.d_a);
  const auto hops = static_cast<std::size_t>(fusion.n_hop);
  const std::size_t n = fusion.input_layers(model.layers);
  const std::string p = "fusion." + site;
  switch (kind) {
    case FusionKind::baseline:
      return;
    case FusionKind::avg:
      declare_layer_norm(out, p + ".norm", d);
      return;
    case FusionKind::fnn:
      declare_linear(out, p + ".ffn.inner", n * d, d_f);
      declare_linear(out, p + ".ffn.outer", d_f, d);
      declare_layer_norm(out, p + ".norm", d);
      return;
    case FusionKind::self_attention:
      if (fusion.share_w1) {
        declare_linear(out, p + ".w1", d, d_a, false);
      } else {
        for (std::size_t l = 0; l < n; ++l) declare_linear(out, p + ".w1.layer" + std::to_string(l), d, d_a, false);
      }
      declare_linear(out, p + ".w2", d_a, hops, false);
      declare_linear(out, p + ".ffn.inner", hops * d, d_f);
      declare_linear(out, p + ".ffn.outer", d_f, d);
      declare_layer_norm(out, p + ".norm", d);
      return;
  }
}

}  // namespace

std::vector<ParamSpec> fusion_layout(const ModelConfig& model, const FusionConfig& fusion) {
  std::vector<ParamSpec> out;
  const auto d = static_cast<std::size_t>(model.d);
  const std::size_t n = fusion.input_layers(model.layers);
  const bool enc_sa = fusion.encoder_kind() == FusionKind::self_attention;
  const bool dec_sa = fusion.decoder_kind() == FusionKind::self_attention;
  if (fusion.share_layer_embedding && (enc_sa || dec_sa)) {
    out.push_back({layer_embedding_name(fusion, ""), {n, d}, InitKind::layer_embedding, n});
  }
  if (fusion.encoder_side()) {
    if (enc_sa && !fusion.share_layer_embedding) {
      out.push_back({layer_embedding_name(fusion, "enc"), {n, d}, InitKind::layer_embedding, n});
    }
    declare_site(out, fusion.enc_kind, model, fusion, "enc");
  }
  if (fusion.decoder_side()) {
    if (dec_sa && !fusion.share_layer_embedding) {
      out.push_back({layer_embedding_name(fusion, "dec"), {n, d}, InitKind::layer_embedding, n});
    }
    declare_site(out, fusion.dec_kind, model, fusion, "dec");
  }
  return out;
}

std::size_t fusion_site_parameters(FusionKind kind, const ModelConfig& model, const FusionConfig& fusion) {
  const auto d = static_cast<std::size_t>(model.d);
  const auto d_f = static_cast<std::size_t>(fusion.d_f);
  const auto d_a = static_cast<std::size_t>(fusion.d_a);
  const auto hops = static_cast<std::size_t>(fusion.n_hop);
  const std::size_t n = fusion.input_layers(model.layers);
  switch (kind) {
    case FusionKind::baseline: return 0;
    case FusionKind::avg: return 2 * d;
    case FusionKind::fnn: return n * d * d_f + d_f + d_f * d + d + 2 * d;
    case FusionKind::self_attention: {
      const std::size_t w1 = fusion.share_w1 ? d * d_a : n * d * d_a;
      return w1 + d_a * hops + hops * d * d_f + d_f + d_f * d + d + 2 * d;
    }
  }
  return 0;
}

std::size_t layer_embedding_parameters(const ModelConfig& model, const FusionConfig& fusion) {
  const std::size_t table = fusion.input_layers(model.layers) * static_cast<std::size_t>(model.d);
  const int sites = (fusion.encoder_kind() == FusionKind::self_attention ? 1 : 0) +
                    (fusion.decoder_kind() == FusionKind::self_attention ? 1 : 0);
  if (sites == 0) return 0;
  return fusion.share_layer_embedding ? table : table * static_cast<std::size_t>(sites);
}

FusionSite FusionSite::bind(const ParamStore& store, const ModelConfig& model, const FusionConfig& fusion,
                            const std::string& site) {
  FusionSite s;
  s.kind_ = site == "enc" ? fusion.encoder_kind() : fusion.decoder_kind();
  s.include_embedding_ = fusion.include_embedding;
  const std::string p = "fusion." + site;
  switch (s.kind_) {
    case FusionKind::baseline:
      break;
    case FusionKind::avg:
      s.norm_ = bind_layer_norm(store, p + ".norm");
      break;
    case FusionKind::fnn:
      s.fnn_ = {{bind_linear(store, p + ".ffn.inner"), bind_linear(store, p + ".ffn.outer")},
                bind_layer_norm(store, p + ".norm")};
      break;
    case FusionKind::self_attention: {
      s.sa_.layer_embedding = store.get(layer_embedding_name(fusion, site));
      if (fusion.share_w1) {
        s.sa_.w1.push_back(store.get(p + ".w1.w"));
      } else {
        const std::size_t n = fusion.input_layers(model.layers);
        for (std::size_t l = 0; l < n; ++l) s.sa_.w1.push_back(store.get(p + ".w1.layer" + std::to_string(l) + ".w"));
      }
      s.sa_.w2 = store.get(p + ".w2.w");
      s.sa_.ffn = {bind_linear(store, p + ".ffn.inner"), bind_linear(store, p + ".ffn.outer")};
      s.sa_.norm = bind_layer_norm(store, p + ".norm");
      break;
    }
  }
  return s;
}

FusionResult FusionSite::apply(const LayerStack& stack) const {
  switch (kind_) {
    case FusionKind::baseline:
      return {fuse_baseline(stack), std::nullopt, {}};
    case FusionKind::avg:
      return {fuse_avg(fusion_input(stack, include_embedding_), norm_), std::nullopt, {}};
    case FusionKind::fnn:
      return {fuse_fnn(fusion_input(stack, include_embedding_), fnn_), std::nullopt, {}};
    case FusionKind::self_attention:
      return fuse_self_attention(fusion_input(stack, include_embedding_), sa_, include_embedding_ ? 0 : 1);
  }
  return {fuse_baseline(stack), std::nullopt, {}};
}

}  // namespace mlrf
