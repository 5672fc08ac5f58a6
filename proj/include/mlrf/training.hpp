#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mlrf/data.hpp"
#include "mlrf/model.hpp"
#include "mlrf/param_store.hpp"

namespace mlrf {

struct TrainConfig {
  int warmup_steps = 16000;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  int epochs_phase1 = 40;
  int epochs_phase2 = 20;
  int batch_phase1 = 80;
  int batch_phase2 = 32;
  double restart_lr = 5e-5;
  double dropout = 0.1;
  std::uint64_t seed = 1;
  /// Width used by the learning-rate schedule (normally the model width).
  int d = 256;
  /// Global gradient-norm clip; 0 disables clipping.
  double clip_norm = 0.0;
  /// Stop after this many optimizer steps in total; 0 means no limit.
  long max_steps = 0;
  int log_every = 100;
  /// Write a checkpoint every this many steps; 0 only at the end.
  int checkpoint_every = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

enum class OptimizerPhase { warmup_schedule, restarted };

struct OptimizerState {
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
  long step = 0;
  OptimizerPhase phase = OptimizerPhase::warmup_schedule;
};

/// Draws every declared parameter by its init class from an RNG keyed on
/// (seed, name), so a parameter's values do not depend on which other
/// parameters exist.
ParamStore materialize_parameters(const std::vector<ParamSpec>& specs, std::uint64_t seed);
ParamStore init_parameters(const ModelConfig& model, const FusionConfig& fusion, std::uint64_t seed);

std::size_t count_parameters(const ParamStore& params);

/// d^-0.5 * min(t^-0.5, t * warmup^-1.5); throws ContractError for t < 1.
double lr_schedule(long t, int d, int warmup_steps = 16000);

OptimizerState make_optimizer_state(const ParamStore& params);

/// Rate applied by the next adam_step: the warmup schedule before a
/// restart, the constant restart_lr after it.
double next_learning_rate(const OptimizerState& state, const TrainConfig& config);

/// One bias-corrected Adam update from the accumulated gradients.
void adam_step(ParamStore& params, OptimizerState& state, double lr, const TrainConfig& config);

/// Zeroes the moments and step counter and switches to the constant
/// restart rate. A second restart is a ContractError.
void restart_adam(OptimizerState& state);

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_gradients(ParamStore& params, double max_norm);

struct BatchLoss {
  Tensor loss;
  std::size_t tokens = 0;
  std::size_t correct = 0;
};

/// Teacher-forced mean cross-entropy over every non-pad target of the batch,
/// plus argmax token accuracy counts.
BatchLoss batch_loss(const Seq2SeqModel& model, const Batch& batch, const RunContext& ctx);

struct StepMetrics {
  double loss = 0.0;
  double lr = 0.0;
  std::size_t tokens = 0;
  std::size_t correct = 0;
};

/// zero_grad, forward, backward, optional clip, adam_step.
StepMetrics train_step(Seq2SeqModel& model, const Batch& batch, const TrainConfig& config, OptimizerState& state,
                       std::mt19937_64& rng);

struct EpochMetrics {
  double mean_loss = 0.0;
  double token_accuracy = 0.0;
  long steps = 0;
};

EpochMetrics train_epoch(Seq2SeqModel& model, const std::vector<Batch>& batches, const TrainConfig& config,
                         OptimizerState& state, std::mt19937_64& rng);

/// Teacher-forced token accuracy (argmax == target over non-pad positions).
double evaluate_token_accuracy(const Seq2SeqModel& model, const std::vector<Batch>& batches);

struct MetricRecord {
  long step = 0;
  int phase = 1;
  double lr = 0.0;
  double loss = 0.0;
  double train_acc = 0.0;
  double valid_acc = 0.0;  // NaN when no validation data
};

/// Position of a two-phase run; enough to resume it exactly.
struct TrainerProgress {
  long global_step = 0;
  int phase = 1;
  int epoch = 0;              // epochs completed in the current phase
  std::size_t batch_index = 0;  // batches completed in the current epoch
  bool finished = false;
};

/// Runs the two-phase recipe: phase 1 on the warmup schedule with
/// batch_phase1, then restart_adam and phase 2 at restart_lr with
/// batch_phase2. Epoch order is reshuffled from (seed, phase, epoch).
class Trainer {
 public:
  Trainer(Seq2SeqModel& model, TrainConfig config, const ParallelCorpus& train, const Vocabulary& src_vocab,
          const Vocabulary& tgt_vocab, const ParallelCorpus* valid = nullptr);

  /// Performs one optimizer step; returns nullopt when training is complete.
  std::optional<StepMetrics> step();

  /// Steps until finished or `stop_after` more steps, calling `on_log` every
  /// log_every steps (and at the final step).
  void run(long stop_after = -1, const std::function<void(const MetricRecord&)>& on_log = {},
           const std::function<void(const Trainer&)>& on_checkpoint = {});

  bool finished() const { return progress_.finished; }
  const TrainerProgress& progress() const { return progress_; }
  const OptimizerState& optimizer() const { return optimizer_; }
  const std::mt19937_64& rng() const { return rng_; }
  const TrainConfig& config() const { return config_; }
  double last_valid_accuracy() const { return last_valid_acc_; }
  const std::vector<double>& loss_history() const { return losses_; }

  /// Restores a saved position (used by checkpoint resume).
  void restore(const TrainerProgress& progress, OptimizerState optimizer, const std::mt19937_64& rng);

  /// Token accuracy on the validation corpus (NaN without one).
  double validate() const;

 private:
  const std::vector<Batch>& epoch_batches();
  void advance();

  Seq2SeqModel& model_;
  TrainConfig config_;
  const ParallelCorpus& train_;
  const Vocabulary& src_vocab_;
  const Vocabulary& tgt_vocab_;
  std::vector<Batch> valid_batches_;
  OptimizerState optimizer_;
  std::mt19937_64 rng_;
  TrainerProgress progress_;
  std::vector<Batch> batches_;
  int cached_phase_ = 0;
  int cached_epoch_ = -1;
  double window_loss_ = 0.0;
  std::size_t window_tokens_ = 0, window_correct_ = 0;
  long window_steps_ = 0;
  double last_valid_acc_;
  std::vector<double> losses_;
};

}  // namespace mlrf
