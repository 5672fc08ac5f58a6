#include "mlrf/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mlrf/errors.hpp"

namespace mlrf {

ModelScorer::ModelScorer(const Seq2SeqModel& model, std::span<const int> src_ids)
    : model_(model), source_([&] {
        NoGradGuard no_grad;
        return model.encode(src_ids, RunContext{});
      }()) {}

std::vector<double> ModelScorer::log_probs(std::span<const int> prefix) const {
  return model_.next_token_log_probs(source_, prefix);
}

void BeamConfig::validate() const {
  if (width < 1) throw ConfigError("beam width must be >= 1, got " + std::to_string(width));
  if (max_len < 1) throw ConfigError("decode max_len must be >= 1");
}

double length_normalized_score(double log_prob, std::size_t length, double alpha) {
  if (alpha == 0.0 || length == 0) return log_prob;
  return log_prob / std::pow(static_cast<double>(length), alpha);
}

namespace {

// Indices of the k largest entries, larger value first, lower index on ties.
std::vector<int> top_k(const std::vector<double>& values, std::size_t k) {
  std::vector<int> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](int a, int b) {
    const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
    return values[ua] > values[ub] || (values[ua] == values[ub] && a < b);
  });
  idx.resize(k);
  return idx;
}

}  // namespace

std::vector<int> greedy_decode(const StepScorer& scorer, int max_len, int eos_id) {
  std::vector<int> prefix{kBosId};
  for (int step = 0; step < max_len; ++step) {
    const auto lp = scorer.log_probs(prefix);
    const int best = top_k(lp, 1).front();
    prefix.push_back(best);
    if (best == eos_id) break;
  }
  return {prefix.begin() + 1, prefix.end()};
}

std::vector<int> greedy_decode(const Seq2SeqModel& model, std::span<const int> src_ids, int max_len) {
  return greedy_decode(ModelScorer(model, src_ids), max_len);
}

std::vector<Hypothesis> beam_search(const StepScorer& scorer, const BeamConfig& config) {
  config.validate();
  const auto width = static_cast<std::size_t>(config.width);
  std::vector<Hypothesis> live{Hypothesis{{kBosId}, 0.0, false, 0.0}};
  std::vector<Hypothesis> finished;

  struct Candidate {
    std::size_t parent;
    int token;
    double log_prob;
  };

  for (int step = 0; step < config.max_len && !live.empty() && finished.size() < width; ++step) {
    std::vector<Candidate> candidates;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const auto lp = scorer.log_probs(live[h].tokens);
      for (int tok : top_k(lp, width)) {
        candidates.push_back({h, tok, live[h].log_prob + lp[static_cast<std::size_t>(tok)]});
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.log_prob > b.log_prob; });
    std::vector<Hypothesis> next;
    for (const auto& c : candidates) {
      if (next.size() >= width) break;
      Hypothesis hyp{live[c.parent].tokens, c.log_prob, c.token == config.eos_id, 0.0};
      hyp.tokens.push_back(c.token);
      if (hyp.finished) {
        if (finished.size() < width) finished.push_back(std::move(hyp));
      } else {
        next.push_back(std::move(hyp));
      }
    }
    live = std::move(next);
  }

  std::vector<Hypothesis> results = std::move(finished);
  for (auto& h : live) results.push_back(std::move(h));
  for (auto& h : results) h.score = length_normalized_score(h.log_prob, h.length(), config.length_alpha);
  std::stable_sort(results.begin(), results.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
  return results;
}

std::vector<Hypothesis> beam_search(const Seq2SeqModel& model, std::span<const int> src_ids,
                                    const BeamConfig& config) {
  config.validate();
  return beam_search(ModelScorer(model, src_ids), config);
}

std::vector<int> strip_special(const Hypothesis& hyp, int eos_id) {
  std::vector<int> out(hyp.tokens.begin() + (hyp.tokens.empty() ? 0 : 1), hyp.tokens.end());
  if (!out.empty() && out.back() == eos_id) out.pop_back();
  return out;
}

}  // namespace mlrf
