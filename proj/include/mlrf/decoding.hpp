#pragma once

#include <span>
#include <vector>

#include "mlrf/model.hpp"
#include "mlrf/special_ids.hpp"

namespace mlrf {

/// Source of next-token log-probabilities for a BOS-first prefix.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::vector<double> log_probs(std::span<const int> prefix) const = 0;
};

/// Scores prefixes with a model for one already-encoded source sentence.
class ModelScorer : public StepScorer {
 public:
  ModelScorer(const Seq2SeqModel& model, std::span<const int> src_ids);
  std::vector<double> log_probs(std::span<const int> prefix) const override;

 private:
  const Seq2SeqModel& model_;
  EncodedSource source_;
};

struct Hypothesis {
  std::vector<int> tokens;  // BOS first
  double log_prob = 0.0;
  bool finished = false;
  double score = 0.0;  // length-normalized, filled in by beam_search

  /// Generated length (tokens after BOS, EOS included).
  std::size_t length() const { return tokens.empty() ? 0 : tokens.size() - 1; }
};

struct BeamConfig {
  int width = 8;
  double length_alpha = 1.6;
  int max_len = 100;
  int eos_id = kEosId;

  void validate() const;
  bool operator==(const BeamConfig&) const = default;
};

/// logprob / length^alpha.
double length_normalized_score(double log_prob, std::size_t length, double alpha);

/// Appends the argmax token (lowest id on ties) until EOS or `max_len`
/// generated tokens. Returns the generated ids without BOS.
std::vector<int> greedy_decode(const StepScorer& scorer, int max_len, int eos_id = kEosId);
std::vector<int> greedy_decode(const Seq2SeqModel& model, std::span<const int> src_ids, int max_len);

/// Beam search ranked by length-normalized score, best first.
///
/// Each live hypothesis proposes its top-`width` tokens; the best `width`
/// candidates by cumulative log-probability survive. Candidates ending in
/// EOS move to the finished pool and the live beam is refilled from the
/// remaining candidates. Search stops once the pool holds `width`
/// hypotheses, nothing is live, or `max_len` tokens have been generated
/// (live hypotheses are then returned unfinished).
std::vector<Hypothesis> beam_search(const StepScorer& scorer, const BeamConfig& config);
std::vector<Hypothesis> beam_search(const Seq2SeqModel& model, std::span<const int> src_ids,
                                    const BeamConfig& config);

/// Generated ids of a hypothesis with BOS and a trailing EOS removed.
std::vector<int> strip_special(const Hypothesis& hyp, int eos_id = kEosId);

}  // namespace mlrf
