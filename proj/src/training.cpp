#include "mlrf/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "mlrf/errors.hpp"
#include "mlrf/log.hpp"

namespace mlrf {

namespace {

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::mt19937_64 keyed_rng(std::uint64_t seed, std::uint64_t key) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (warmup_steps < 1) problems.push_back("warmup_steps must be >= 1");
  if (!(beta1 > 0.0 && beta1 < 1.0)) problems.push_back("beta1 must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) problems.push_back("beta2 must lie in (0, 1)");
  if (!(epsilon > 0.0)) problems.push_back("epsilon must be positive");
  if (epochs_phase1 < 0 || epochs_phase2 < 0) problems.push_back("epoch counts must be >= 0");
  if (batch_phase1 < 1 || batch_phase2 < 1) problems.push_back("batch sizes must be >= 1");
  if (!(restart_lr > 0.0)) problems.push_back("restart_lr must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) problems.push_back("dropout must lie in [0, 1)");
  if (d < 1) problems.push_back("d must be >= 1");
  if (clip_norm < 0.0) problems.push_back("clip_norm must be >= 0");
  if (max_steps < 0) problems.push_back("max_steps must be >= 0");
  if (log_every < 1) problems.push_back("log_every must be >= 1");
  if (checkpoint_every < 0) problems.push_back("checkpoint_every must be >= 0");
  if (problems.empty()) return;
  std::ostringstream msg;
  msg << "invalid training config:";
  for (const auto& p : problems) msg << ' ' << p << ';';
  throw ConfigError(msg.str());
}

ParamStore materialize_parameters(const std::vector<ParamSpec>& specs, std::uint64_t seed) {
  ParamStore store;
  for (const auto& spec : specs) {
    std::vector<double> values(shape_numel(spec.shape));
    auto rng = keyed_rng(seed, fnv1a(spec.name));
    switch (spec.init) {
      case InitKind::word_embedding: {
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(spec.fan_in)));
        for (auto& v : values) v = dist(rng);
        break;
      }
      case InitKind::layer_embedding: {
        std::uniform_real_distribution<double> dist(-0.1, 0.1);
        for (auto& v : values) v = dist(rng);
        break;
      }
      case InitKind::norm_gain:
        std::fill(values.begin(), values.end(), 1.0);
        break;
      case InitKind::norm_bias:
        std::fill(values.begin(), values.end(), 0.0);
        break;
      case InitKind::fan_in_uniform: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : values) v = dist(rng);
        break;
      }
    }
    store.add(spec.name, Tensor(spec.shape, std::move(values), true));
  }
  return store;
}

ParamStore init_parameters(const ModelConfig& model, const FusionConfig& fusion, std::uint64_t seed) {
  return materialize_parameters(model_layout(model, fusion), seed);
}

std::size_t count_parameters(const ParamStore& params) { return params.count_scalars(); }

double lr_schedule(long t, int d, int warmup_steps) {
  if (t < 1) throw ContractError("learning-rate schedule is defined for steps t >= 1");
  if (d < 1 || warmup_steps < 1) throw ContractError("learning-rate schedule needs positive d and warmup");
  const auto td = static_cast<double>(t);
  return std::pow(static_cast<double>(d), -0.5) *
         std::min(std::pow(td, -0.5), td * std::pow(static_cast<double>(warmup_steps), -1.5));
}

OptimizerState make_optimizer_state(const ParamStore& params) {
  OptimizerState state;
  for (const auto& [name, t] : params) {
    state.first_moment.emplace(name, std::vector<double>(t.numel(), 0.0));
    state.second_moment.emplace(name, std::vector<double>(t.numel(), 0.0));
  }
  return state;
}

double next_learning_rate(const OptimizerState& state, const TrainConfig& config) {
  if (state.phase == OptimizerPhase::restarted) return config.restart_lr;
  return lr_schedule(state.step + 1, config.d, config.warmup_steps);
}

void adam_step(ParamStore& params, OptimizerState& state, double lr, const TrainConfig& config) {
  for (const auto& [name, t] : params) {
    auto m = state.first_moment.find(name);
    auto v = state.second_moment.find(name);
    if (m == state.first_moment.end() || v == state.second_moment.end() || m->second.size() != t.numel() ||
        v->second.size() != t.numel()) {
      throw DimensionError("optimizer state does not match parameter " + name + " " + shape_to_string(t.shape()));
    }
  }
  ++state.step;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (auto& [name, t] : params) {
    auto& m = state.first_moment.at(name);
    auto& v = state.second_moment.at(name);
    auto values = t.values();
    const auto g = t.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      values[i] -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

void restart_adam(OptimizerState& state) {
  if (state.phase == OptimizerPhase::restarted) throw ContractError("Adam has already been restarted");
  for (auto& [name, m] : state.first_moment) std::fill(m.begin(), m.end(), 0.0);
  for (auto& [name, v] : state.second_moment) std::fill(v.begin(), v.end(), 0.0);
  state.step = 0;
  state.phase = OptimizerPhase::restarted;
}

double clip_gradients(ParamStore& params, double max_norm) {
  double total = 0.0;
  for (const auto& [name, t] : params) {
    for (double g : t.grad()) total += g * g;
  }
  const double norm = std::sqrt(total);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [name, t] : params) {
      for (double& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

BatchLoss batch_loss(const Seq2SeqModel& model, const Batch& batch, const RunContext& ctx) {
  std::vector<Tensor> logits;
  logits.reserve(batch.size);
  for (std::size_t b = 0; b < batch.size; ++b) {
    logits.push_back(model.forward(batch.src_row(b), batch.tgt_in_row(b), ctx).logits);
  }
  const Tensor all = batch.size == 1 ? logits.front() : concat(logits, 0);
  BatchLoss out;
  out.loss = cross_entropy(all, batch.tgt_out, kPadId);
  const std::size_t vocab = all.dim(1);
  const auto lv = all.values();
  for (std::size_t r = 0; r < batch.tgt_out.size(); ++r) {
    if (batch.tgt_out[r] == kPadId) continue;
    const auto row = lv.subspan(r * vocab, vocab);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    ++out.tokens;
    if (best == batch.tgt_out[r]) ++out.correct;
  }
  return out;
}

StepMetrics train_step(Seq2SeqModel& model, const Batch& batch, const TrainConfig& config, OptimizerState& state,
                       std::mt19937_64& rng) {
  model.params().zero_grad();
  const RunContext ctx{true, config.dropout, &rng};
  BatchLoss bl = batch_loss(model, batch, ctx);
  bl.loss.backward();
  if (config.clip_norm > 0.0) clip_gradients(model.params(), config.clip_norm);
  StepMetrics m;
  m.lr = next_learning_rate(state, config);
  adam_step(model.params(), state, m.lr, config);
  m.loss = bl.loss.item();
  m.tokens = bl.tokens;
  m.correct = bl.correct;
  return m;
}

EpochMetrics train_epoch(Seq2SeqModel& model, const std::vector<Batch>& batches, const TrainConfig& config,
                         OptimizerState& state, std::mt19937_64& rng) {
  if (batches.empty()) throw ContractError("cannot train an epoch on an empty dataset");
  EpochMetrics out;
  double loss_total = 0.0;
  std::size_t tokens = 0, correct = 0;
  for (const auto& batch : batches) {
    const StepMetrics m = train_step(model, batch, config, state, rng);
    loss_total += m.loss;
    tokens += m.tokens;
    correct += m.correct;
    ++out.steps;
  }
  out.mean_loss = loss_total / static_cast<double>(out.steps);
  out.token_accuracy = tokens ? static_cast<double>(correct) / static_cast<double>(tokens) : 0.0;
  return out;
}

double evaluate_token_accuracy(const Seq2SeqModel& model, const std::vector<Batch>& batches) {
  NoGradGuard no_grad;
  std::size_t tokens = 0, correct = 0;
  for (const auto& batch : batches) {
    const BatchLoss bl = batch_loss(model, batch, RunContext{});
    tokens += bl.tokens;
    correct += bl.correct;
  }
  return tokens ? static_cast<double>(correct) / static_cast<double>(tokens)
                : std::numeric_limits<double>::quiet_NaN();
}

Trainer::Trainer(Seq2SeqModel& model, TrainConfig config, const ParallelCorpus& train, const Vocabulary& src_vocab,
                 const Vocabulary& tgt_vocab, const ParallelCorpus* valid)
    : model_(model),
      config_(config),
      train_(train),
      src_vocab_(src_vocab),
      tgt_vocab_(tgt_vocab),
      optimizer_(make_optimizer_state(model.params())),
      rng_(config.seed),
      last_valid_acc_(std::numeric_limits<double>::quiet_NaN()) {
  config_.validate();
  if (train_.empty()) throw ContractError("cannot train on an empty dataset");
  if (valid && !valid->empty()) {
    BatchOptions opts;
    opts.batch_size = static_cast<std::size_t>(config_.batch_phase1);
    opts.bucket_by_length = false;
    valid_batches_ = make_batches(*valid, src_vocab_, tgt_vocab_, opts);
  }
}

const std::vector<Batch>& Trainer::epoch_batches() {
  if (cached_phase_ != progress_.phase || cached_epoch_ != progress_.epoch) {
    BatchOptions opts;
    opts.batch_size = static_cast<std::size_t>(progress_.phase == 1 ? config_.batch_phase1 : config_.batch_phase2);
    opts.shuffle_seed = config_.seed * 1000003ULL + static_cast<std::uint64_t>(progress_.phase) * 7919ULL +
                        static_cast<std::uint64_t>(progress_.epoch);
    batches_ = make_batches(train_, src_vocab_, tgt_vocab_, opts);
    cached_phase_ = progress_.phase;
    cached_epoch_ = progress_.epoch;
  }
  return batches_;
}

void Trainer::advance() {
  // Resolve phase boundaries before the next step.
  if (config_.max_steps > 0 && progress_.global_step >= config_.max_steps) {
    progress_.finished = true;
    return;
  }
  if (progress_.phase == 1 && progress_.epoch >= config_.epochs_phase1) {
    if (config_.epochs_phase2 == 0) {
      progress_.finished = true;
      return;
    }
    restart_adam(optimizer_);
    progress_.phase = 2;
    progress_.epoch = 0;
    progress_.batch_index = 0;
    log::info("restarted Adam at step " + std::to_string(progress_.global_step));
  }
  if (progress_.phase == 2 && progress_.epoch >= config_.epochs_phase2) progress_.finished = true;
}

std::optional<StepMetrics> Trainer::step() {
  advance();
  if (progress_.finished) return std::nullopt;
  const auto& batches = epoch_batches();
  const StepMetrics m = train_step(model_, batches[progress_.batch_index], config_, optimizer_, rng_);
  ++progress_.global_step;
  if (++progress_.batch_index >= batches.size()) {
    ++progress_.epoch;
    progress_.batch_index = 0;
  }
  losses_.push_back(m.loss);
  advance();
  return m;
}

double Trainer::validate() const {
  if (valid_batches_.empty()) return std::numeric_limits<double>::quiet_NaN();
  return evaluate_token_accuracy(model_, valid_batches_);
}

void Trainer::run(long stop_after, const std::function<void(const MetricRecord&)>& on_log,
                  const std::function<void(const Trainer&)>& on_checkpoint) {
  long taken = 0;
  while (!finished() && (stop_after < 0 || taken < stop_after)) {
    const auto m = step();
    if (!m) break;
    ++taken;
    window_loss_ += m->loss;
    window_tokens_ += m->tokens;
    window_correct_ += m->correct;
    ++window_steps_;
    const long s = progress_.global_step;
    if (s % config_.log_every == 0 || finished()) {
      last_valid_acc_ = validate();
      MetricRecord rec;
      rec.step = s;
      rec.phase = optimizer_.phase == OptimizerPhase::restarted ? 2 : 1;
      rec.lr = m->lr;
      rec.loss = window_loss_ / static_cast<double>(window_steps_);
      rec.train_acc = window_tokens_ ? static_cast<double>(window_correct_) / static_cast<double>(window_tokens_) : 0.0;
      rec.valid_acc = last_valid_acc_;
      if (on_log) on_log(rec);
      window_loss_ = 0.0;
      window_tokens_ = window_correct_ = 0;
      window_steps_ = 0;
    }
    if (on_checkpoint && config_.checkpoint_every > 0 && s % config_.checkpoint_every == 0) on_checkpoint(*this);
  }
}

void Trainer::restore(const TrainerProgress& progress, OptimizerState optimizer, const std::mt19937_64& rng) {
  for (const auto& [name, t] : model_.params()) {
    auto it = optimizer.first_moment.find(name);
    if (it == optimizer.first_moment.end() || it->second.size() != t.numel()) {
      throw ConfigError("optimizer state does not match model parameter " + name);
    }
  }
  progress_ = progress;
  optimizer_ = std::move(optimizer);
  rng_ = rng;
  cached_epoch_ = -1;
}

}  // namespace mlrf
