#include "mlrf/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

#include "mlrf/errors.hpp"
#include "mlrf/log.hpp"

namespace mlrf {

void ModelConfig::validate() const {
  std::vector<std::string> problems;
  if (layers < 1) problems.push_back("layers must be >= 1");
  if (d < 2) problems.push_back("d must be >= 2");
  if (d % 2 != 0) problems.push_back("d must be even (sinusoidal positions)");
  if (d_ff < 1) problems.push_back("d_ff must be >= 1");
  if (heads < 1) problems.push_back("heads must be >= 1");
  else if (d % heads != 0) problems.push_back("d must be divisible by heads");
  if (src_vocab < 1) problems.push_back("src_vocab must be >= 1");
  if (tgt_vocab < 1) problems.push_back("tgt_vocab must be >= 1");
  if (max_len < 1) problems.push_back("max_len must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) problems.push_back("dropout must lie in [0, 1)");
  if (problems.empty()) return;
  std::ostringstream msg;
  msg << "invalid model config:";
  for (const auto& p : problems) msg << ' ' << p << ';';
  throw ConfigError(msg.str());
}

AttentionMask::AttentionMask(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> allowed)
    : rows_(rows), cols_(cols), allowed_(std::move(allowed)) {
  if (allowed_.size() != rows_ * cols_) throw DimensionError("attention mask size does not match its shape");
}

AttentionMask AttentionMask::causal(std::size_t n) {
  std::vector<std::uint8_t> allowed(n * n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c <= r; ++c) allowed[r * n + c] = 1;
  }
  return AttentionMask(n, n, std::move(allowed));
}

AttentionMask AttentionMask::key_padding(std::size_t rows, std::span<const int> key_ids) {
  const std::size_t cols = key_ids.size();
  std::vector<std::uint8_t> allowed(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) allowed[r * cols + c] = key_ids[c] != kPadId;
  }
  return AttentionMask(rows, cols, std::move(allowed));
}

AttentionMask AttentionMask::both(const AttentionMask& a, const AttentionMask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("cannot combine masks of different shape");
  std::vector<std::uint8_t> allowed(a.allowed_.size());
  for (std::size_t i = 0; i < allowed.size(); ++i) allowed[i] = a.allowed_[i] && b.allowed_[i];
  return AttentionMask(a.rows(), a.cols(), std::move(allowed));
}

bool AttentionMask::has_fully_masked_row() const {
  for (std::size_t r = 0; r < rows_; ++r) {
    bool any = false;
    for (std::size_t c = 0; c < cols_ && !any; ++c) any = allowed_[r * cols_ + c] != 0;
    if (!any) return true;
  }
  return false;
}

Tensor RunContext::drop(const Tensor& x) const {
  if (!train || dropout == 0.0) return x;
  if (!rng) throw ContractError("training forward pass needs an RNG for dropout");
  return mlrf::dropout(x, dropout, *rng);
}

LinearParams bind_linear(const ParamStore& store, const std::string& prefix) {
  return {store.get(prefix + ".w"), store.get(prefix + ".b")};
}

LayerNormParams bind_layer_norm(const ParamStore& store, const std::string& prefix) {
  return {store.get(prefix + ".gain"), store.get(prefix + ".bias")};
}

void declare_linear(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t in, std::size_t out_dim,
                    bool with_bias) {
  out.push_back({prefix + ".w", {in, out_dim}, InitKind::fan_in_uniform, in});
  if (with_bias) out.push_back({prefix + ".b", {out_dim}, InitKind::fan_in_uniform, in});
}

void declare_layer_norm(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d) {
  out.push_back({prefix + ".gain", {d}, InitKind::norm_gain, d});
  out.push_back({prefix + ".bias", {d}, InitKind::norm_bias, d});
}

namespace {

void declare_attention(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d) {
  for (const char* part : {".query", ".key", ".value", ".output"}) declare_linear(out, prefix + part, d, d);
}

void declare_ffn(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d, std::size_t d_ff) {
  declare_linear(out, prefix + ".inner", d, d_ff);
  declare_linear(out, prefix + ".outer", d_ff, d);
}

AttentionParams bind_attention(const ParamStore& store, const std::string& prefix) {
  return {bind_linear(store, prefix + ".query"), bind_linear(store, prefix + ".key"),
          bind_linear(store, prefix + ".value"), bind_linear(store, prefix + ".output")};
}

FeedForwardParams bind_ffn(const ParamStore& store, const std::string& prefix) {
  return {bind_linear(store, prefix + ".inner"), bind_linear(store, prefix + ".outer")};
}

std::string layer_prefix(const char* side, int l) { return std::string(side) + ".layer" + std::to_string(l); }

Tensor embed_with_positions(const Tensor& table, std::span<const int> ids, const ModelConfig& config,
                            const RunContext& ctx) {
  if (ids.empty()) throw DimensionError("cannot embed an empty sequence");
  if (ids.size() > static_cast<std::size_t>(config.max_len)) {
    throw DimensionError("sequence of length " + std::to_string(ids.size()) + " exceeds max_len " +
                         std::to_string(config.max_len));
  }
  Tensor x = add(embedding_lookup(table, ids), positional_encoding(ids.size(), static_cast<std::size_t>(config.d)));
  return ctx.drop(x);
}

}  // namespace

std::vector<ParamSpec> transformer_layout(const ModelConfig& config) {
  const auto d = static_cast<std::size_t>(config.d);
  const auto d_ff = static_cast<std::size_t>(config.d_ff);
  std::vector<ParamSpec> out;
  out.push_back({"src_embed.table", {static_cast<std::size_t>(config.src_vocab), d}, InitKind::word_embedding, d});
  out.push_back({"tgt_embed.table", {static_cast<std::size_t>(config.tgt_vocab), d}, InitKind::word_embedding, d});
  for (int l = 1; l <= config.layers; ++l) {
    const std::string p = layer_prefix("encoder", l);
    declare_attention(out, p + ".self_attn", d);
    declare_layer_norm(out, p + ".ln1", d);
    declare_ffn(out, p + ".ffn", d, d_ff);
    declare_layer_norm(out, p + ".ln2", d);
  }
  for (int l = 1; l <= config.layers; ++l) {
    const std::string p = layer_prefix("decoder", l);
    declare_attention(out, p + ".self_attn", d);
    declare_layer_norm(out, p + ".ln1", d);
    declare_attention(out, p + ".cross_attn", d);
    declare_layer_norm(out, p + ".ln2", d);
    declare_ffn(out, p + ".ffn", d, d_ff);
    declare_layer_norm(out, p + ".ln3", d);
  }
  declare_linear(out, "output", d, static_cast<std::size_t>(config.tgt_vocab));
  return out;
}

TransformerParams TransformerParams::bind(const ParamStore& store, const ModelConfig& config) {
  TransformerParams p;
  p.src_embed = store.get("src_embed.table");
  p.tgt_embed = store.get("tgt_embed.table");
  for (int l = 1; l <= config.layers; ++l) {
    const std::string e = layer_prefix("encoder", l);
    p.encoder.push_back({bind_attention(store, e + ".self_attn"), bind_layer_norm(store, e + ".ln1"),
                         bind_ffn(store, e + ".ffn"), bind_layer_norm(store, e + ".ln2")});
  }
  for (int l = 1; l <= config.layers; ++l) {
    const std::string dp = layer_prefix("decoder", l);
    p.decoder.push_back({bind_attention(store, dp + ".self_attn"), bind_layer_norm(store, dp + ".ln1"),
                         bind_attention(store, dp + ".cross_attn"), bind_layer_norm(store, dp + ".ln2"),
                         bind_ffn(store, dp + ".ffn"), bind_layer_norm(store, dp + ".ln3")});
  }
  p.output = bind_linear(store, "output");
  return p;
}

Tensor positional_encoding(std::size_t seq_len, std::size_t d) {
  if (d == 0 || d % 2 != 0) throw ConfigError("positional encoding needs an even width, got " + std::to_string(d));
  std::vector<double> pe(seq_len * d);
  for (std::size_t pos = 0; pos < seq_len; ++pos) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
      pe[pos * d + 2 * i] = std::sin(angle);
      pe[pos * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor({seq_len, d}, std::move(pe));
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask* mask,
                            const AttentionParams& params, std::size_t heads, std::vector<Tensor>* weights_out) {
  const std::size_t d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || k.dim(0) != v.dim(0)) {
    throw DimensionError("attention inputs disagree: q " + shape_to_string(q.shape()) + ", k " +
                         shape_to_string(k.shape()) + ", v " + shape_to_string(v.shape()));
  }
  if (heads == 0 || d % heads != 0) throw ConfigError("model width must be divisible by the head count");
  const std::size_t len_q = q.dim(0), len_k = k.dim(0);
  if (mask) {
    if (mask->rows() != len_q || mask->cols() != len_k) {
      throw DimensionError("attention mask is " + std::to_string(mask->rows()) + "x" + std::to_string(mask->cols()) +
                           " but scores are " + std::to_string(len_q) + "x" + std::to_string(len_k));
    }
    if (log::enabled(log::Level::debug) && mask->has_fully_masked_row()) {
      log::debug("attention mask hides every key for some query; weights fall back to uniform");
    }
  }

  const Tensor qp = linear(q, params.query.w, params.query.b);
  const Tensor kp = linear(k, params.key.w, params.key.b);
  const Tensor vp = linear(v, params.value.w, params.value.b);
  const std::size_t dk = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));

  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = heads == 1 ? qp : slice(qp, 1, h * dk, dk);
    const Tensor kh = heads == 1 ? kp : slice(kp, 1, h * dk, dk);
    const Tensor vh = heads == 1 ? vp : slice(vp, 1, h * dk, dk);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (mask) scores = mask_fill(scores, mask->allowed(), kMaskPenalty);
    const Tensor weights = softmax(scores, 1);
    if (weights_out) weights_out->push_back(weights);
    head_out.push_back(matmul(weights, vh));
  }
  const Tensor joined = heads == 1 ? head_out.front() : concat(head_out, 1);
  return linear(joined, params.output.w, params.output.b);
}

Tensor feed_forward(const Tensor& x, const FeedForwardParams& params) {
  return linear(relu(linear(x, params.inner.w, params.inner.b)), params.outer.w, params.outer.b);
}

Tensor encoder_layer(const Tensor& x, const AttentionMask* self_mask, const EncoderLayerParams& params,
                     std::size_t heads, const RunContext& ctx) {
  const Tensor att = multi_head_attention(x, x, x, self_mask, params.self_attn, heads);
  const Tensor h = layer_norm(add(x, ctx.drop(att)), params.ln1.gain, params.ln1.bias);
  return layer_norm(add(h, ctx.drop(feed_forward(h, params.ffn))), params.ln2.gain, params.ln2.bias);
}

Tensor decoder_layer(const Tensor& z, const Tensor& memory, const AttentionMask& causal_mask,
                     const AttentionMask* memory_mask, const DecoderLayerParams& params, std::size_t heads,
                     const RunContext& ctx) {
  const Tensor self_att = multi_head_attention(z, z, z, &causal_mask, params.self_attn, heads);
  const Tensor a = layer_norm(add(z, ctx.drop(self_att)), params.ln1.gain, params.ln1.bias);
  const Tensor cross = multi_head_attention(a, memory, memory, memory_mask, params.cross_attn, heads);
  const Tensor b = layer_norm(add(a, ctx.drop(cross)), params.ln2.gain, params.ln2.bias);
  return layer_norm(add(b, ctx.drop(feed_forward(b, params.ffn))), params.ln3.gain, params.ln3.bias);
}

LayerStack encode(std::span<const int> src_ids, const ModelConfig& config, const TransformerParams& params,
                  const RunContext& ctx) {
  LayerStack stack;
  stack.reps.push_back(embed_with_positions(params.src_embed, src_ids, config, ctx));
  const bool padded = std::find(src_ids.begin(), src_ids.end(), kPadId) != src_ids.end();
  std::optional<AttentionMask> mask;
  if (padded) mask = AttentionMask::key_padding(src_ids.size(), src_ids);
  const auto heads = static_cast<std::size_t>(config.heads);
  for (const auto& layer : params.encoder) {
    stack.reps.push_back(encoder_layer(stack.top(), mask ? &*mask : nullptr, layer, heads, ctx));
  }
  return stack;
}

LayerStack decode_teacher_forced(std::span<const int> tgt_ids, const Tensor& memory, const ModelConfig& config,
                                 const TransformerParams& params, const RunContext& ctx,
                                 const AttentionMask* memory_mask) {
  LayerStack stack;
  stack.reps.push_back(embed_with_positions(params.tgt_embed, tgt_ids, config, ctx));
  const AttentionMask causal = AttentionMask::causal(tgt_ids.size());
  const auto heads = static_cast<std::size_t>(config.heads);
  for (const auto& layer : params.decoder) {
    stack.reps.push_back(decoder_layer(stack.top(), memory, causal, memory_mask, layer, heads, ctx));
  }
  return stack;
}

}  // namespace mlrf
