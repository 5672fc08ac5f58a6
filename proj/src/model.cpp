#include "mlrf/model.hpp"

#include "mlrf/errors.hpp"
#include "mlrf/log.hpp"
#include "mlrf/training.hpp"

namespace mlrf {

Seq2SeqModel::Seq2SeqModel(ModelConfig config, FusionConfig fusion, ParamStore params)
    : config_(config), fusion_(fusion), params_(std::move(params)) {
  config_.validate();
  fusion_.validate();
  if (fusion_.side == FusionSide::both && fusion_.enc_kind == FusionKind::baseline &&
      fusion_.dec_kind == FusionKind::baseline) {
    log::warn("fusion side=both with baseline on both sides is the plain model");
  }
  for (const auto& spec : model_layout(config_, fusion_)) {
    if (!params_.contains(spec.name)) throw ConfigError("parameter store is missing " + spec.name);
    if (params_.get(spec.name).shape() != spec.shape) {
      throw ConfigError("parameter " + spec.name + " has shape " + shape_to_string(params_.get(spec.name).shape()) +
                        " but the configuration needs " + shape_to_string(spec.shape));
    }
  }
  bind();
}

void Seq2SeqModel::bind() {
  core_ = TransformerParams::bind(params_, config_);
  enc_site_ = FusionSite::bind(params_, config_, fusion_, "enc");
  dec_site_ = FusionSite::bind(params_, config_, fusion_, "dec");
}

Seq2SeqModel Seq2SeqModel::clone() const { return Seq2SeqModel(config_, fusion_, params_.clone()); }

EncodedSource Seq2SeqModel::encode(std::span<const int> src_ids, const RunContext& ctx) const {
  EncodedSource out;
  out.src_ids.assign(src_ids.begin(), src_ids.end());
  out.stack = mlrf::encode(src_ids, config_, core_, ctx);
  FusionResult fused = enc_site_.apply(out.stack);
  out.memory = fused.fused;
  out.trace = std::move(fused.trace);
  out.intermediate_shape = std::move(fused.intermediate_shape);
  return out;
}

ForwardOutput Seq2SeqModel::decode(const EncodedSource& source, std::span<const int> tgt_in,
                                   const RunContext& ctx) const {
  std::optional<AttentionMask> memory_mask;
  if (std::find(source.src_ids.begin(), source.src_ids.end(), kPadId) != source.src_ids.end()) {
    memory_mask = AttentionMask::key_padding(tgt_in.size(), source.src_ids);
  }
  ForwardOutput out;
  out.decoder_stack =
      decode_teacher_forced(tgt_in, source.memory, config_, core_, ctx, memory_mask ? &*memory_mask : nullptr);
  FusionResult fused = dec_site_.apply(out.decoder_stack);
  out.logits = linear(fused.fused, core_.output.w, core_.output.b);
  out.decoder_trace = std::move(fused.trace);
  out.decoder_intermediate_shape = std::move(fused.intermediate_shape);
  return out;
}

ForwardOutput Seq2SeqModel::forward(std::span<const int> src_ids, std::span<const int> tgt_in,
                                    const RunContext& ctx) const {
  return decode(encode(src_ids, ctx), tgt_in, ctx);
}

std::vector<double> Seq2SeqModel::next_token_log_probs(const EncodedSource& source,
                                                       std::span<const int> prefix) const {
  NoGradGuard no_grad;
  const ForwardOutput out = decode(source, prefix, RunContext{});
  const std::size_t vocab = out.logits.dim(1);
  return log_softmax_row(out.logits.values().subspan((prefix.size() - 1) * vocab, vocab));
}

std::vector<ParamSpec> model_layout(const ModelConfig& config, const FusionConfig& fusion) {
  auto specs = transformer_layout(config);
  auto extra = fusion_layout(config, fusion);
  specs.insert(specs.end(), extra.begin(), extra.end());
  return specs;
}

Seq2SeqModel make_model(const ModelConfig& config, const FusionConfig& fusion, std::uint64_t seed) {
  config.validate();
  fusion.validate();
  return Seq2SeqModel(config, fusion, init_parameters(config, fusion, seed));
}

Seq2SeqModel attach_fusion(const Seq2SeqModel& model, const FusionConfig& fusion, std::uint64_t seed) {
  fusion.validate();
  const ParamStore existing = model.params().clone();
  ParamStore params;
  std::vector<ParamSpec> missing;
  for (const auto& spec : model_layout(model.config(), fusion)) {
    if (existing.contains(spec.name) && existing.get(spec.name).shape() == spec.shape) {
      params.add(spec.name, existing.get(spec.name));
    } else {
      missing.push_back(spec);
    }
  }
  ParamStore fresh = materialize_parameters(missing, seed);
  for (auto& [name, tensor] : fresh) params.add(name, tensor);
  return Seq2SeqModel(model.config(), fusion, std::move(params));
}

}  // namespace mlrf
