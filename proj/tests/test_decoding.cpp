#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "mlrf/decoding.hpp"
#include "mlrf/errors.hpp"
#include "mlrf/training.hpp"

using namespace mlrf;

namespace {

/// Next-token distributions drawn from a seeded table keyed on the prefix.
class TableScorer : public StepScorer {
 public:
  TableScorer(int vocab, std::uint64_t seed, double sharpness = 2.0)
      : vocab_(vocab), seed_(seed), sharpness_(sharpness) {}

  std::vector<double> log_probs(std::span<const int> prefix) const override {
    std::uint64_t key = seed_;
    for (int t : prefix) key = key * 1099511628211ULL + static_cast<std::uint64_t>(t) + 1;
    std::mt19937_64 rng(key);
    std::normal_distribution<double> n(0.0, sharpness_);
    std::vector<double> logits(static_cast<std::size_t>(vocab_));
    for (auto& l : logits) l = n(rng);
    return normalize(logits);
  }

  static std::vector<double> normalize(std::vector<double> logits) {
    double mx = -1e300, z = 0;
    for (double l : logits) mx = std::max(mx, l);
    for (double l : logits) z += std::exp(l - mx);
    for (auto& l : logits) l -= mx + std::log(z);
    return logits;
  }

 private:
  int vocab_;
  std::uint64_t seed_;
  double sharpness_;
};

struct Best {
  std::vector<int> tokens;
  double score = -1e300;
};

// Every hypothesis beam search can return: EOS-terminated sequences up to
// max_len tokens and unfinished sequences of exactly max_len tokens.
void exhaustive(const StepScorer& scorer, std::vector<int>& prefix, double lp, const BeamConfig& cfg, Best& best) {
  const auto generated = prefix.size() - 1;
  const bool ended = generated > 0 && prefix.back() == cfg.eos_id;
  if (ended || generated == static_cast<std::size_t>(cfg.max_len)) {
    const double s = length_normalized_score(lp, generated, cfg.length_alpha);
    if (s > best.score) best = {prefix, s};
    return;
  }
  const auto probs = scorer.log_probs(prefix);
  for (int t = 0; t < static_cast<int>(probs.size()); ++t) {
    prefix.push_back(t);
    exhaustive(scorer, prefix, lp + probs[static_cast<std::size_t>(t)], cfg, best);
    prefix.pop_back();
  }
}

Best exhaustive_best(const StepScorer& scorer, const BeamConfig& cfg) {
  Best best;
  std::vector<int> prefix{kBosId};
  exhaustive(scorer, prefix, 0.0, cfg, best);
  return best;
}

}  // namespace

TEST(LengthNormalization, PowerForm) {
  EXPECT_DOUBLE_EQ(length_normalized_score(-6.0, 4, 0.0), -6.0);
  EXPECT_DOUBLE_EQ(length_normalized_score(-6.0, 4, 1.0), -1.5);
  EXPECT_NEAR(length_normalized_score(-6.0, 4, 1.6), -6.0 / std::pow(4.0, 1.6), 1e-15);
}

TEST(BeamConfig, RejectsZeroWidth) {
  BeamConfig c;
  c.width = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(BeamSearch, ExactWhenWidthCoversAllPrefixes) {
  // V=4, three steps: width V^2 keeps every surviving prefix.
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const TableScorer scorer(4, seed);
    for (double alpha : {0.0, 0.6, 1.6}) {
      BeamConfig cfg;
      cfg.width = 16;
      cfg.max_len = 3;
      cfg.length_alpha = alpha;
      cfg.eos_id = 2;
      const auto hyps = beam_search(scorer, cfg);
      const Best oracle = exhaustive_best(scorer, cfg);
      ASSERT_FALSE(hyps.empty());
      EXPECT_EQ(hyps.front().tokens, oracle.tokens) << "seed " << seed << " alpha " << alpha;
      EXPECT_NEAR(hyps.front().score, oracle.score, 1e-12);
    }
  }
}

TEST(BeamSearch, WiderBeamNeverScoresWorseOnRandomTables) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const TableScorer scorer(6, seed, 1.0);
    BeamConfig narrow;
    narrow.width = 1;
    narrow.length_alpha = 0.0;
    narrow.max_len = 4;
    BeamConfig wide = narrow;
    wide.width = 6 * 6 * 6;
    const double n = beam_search(scorer, narrow).front().score;
    const double w = beam_search(scorer, wide).front().score;
    EXPECT_GE(w, n - 1e-12);
  }
}

TEST(BeamSearch, WidthOneWithoutNormalizationIsGreedy) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const TableScorer scorer(7, seed);
    BeamConfig cfg;
    cfg.width = 1;
    cfg.length_alpha = 0.0;
    cfg.max_len = 6;
    const auto beam = beam_search(scorer, cfg);
    const auto greedy = greedy_decode(scorer, cfg.max_len);
    std::vector<int> generated(beam.front().tokens.begin() + 1, beam.front().tokens.end());
    EXPECT_EQ(generated, greedy) << "seed " << seed;
  }
}

TEST(BeamSearch, ResultsSortedAndFinishedEndWithEos) {
  const TableScorer scorer(5, 3);
  BeamConfig cfg;
  cfg.width = 4;
  cfg.max_len = 5;
  const auto hyps = beam_search(scorer, cfg);
  for (std::size_t i = 1; i < hyps.size(); ++i) EXPECT_GE(hyps[i - 1].score, hyps[i].score);
  for (const auto& h : hyps) {
    EXPECT_EQ(h.tokens.front(), kBosId);
    if (h.finished) EXPECT_EQ(h.tokens.back(), kEosId);
    else EXPECT_EQ(h.length(), 5u);
  }
}

TEST(BeamSearch, StripSpecialRemovesBosAndEos) {
  Hypothesis h{{kBosId, 7, 8, kEosId}, -1.0, true, 0.0};
  EXPECT_EQ(strip_special(h), (std::vector<int>{7, 8}));
  Hypothesis open{{kBosId, 7, 8}, -1.0, false, 0.0};
  EXPECT_EQ(strip_special(open), (std::vector<int>{7, 8}));
}

TEST(BeamSearch, ModelOverloadAgreesWithScorer) {
  ModelConfig m;
  m.layers = 1;
  m.d = 8;
  m.d_ff = 16;
  m.heads = 2;
  m.src_vocab = 10;
  m.tgt_vocab = 10;
  const Seq2SeqModel model = make_model(m, FusionConfig{}, 4);
  const std::vector<int> src = {4, 5, 6};
  BeamConfig cfg;
  cfg.width = 3;
  cfg.max_len = 6;
  const auto a = beam_search(model, src, cfg);
  const auto b = beam_search(ModelScorer(model, src), cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].tokens, b[i].tokens);
  cfg.width = 1;
  cfg.length_alpha = 0.0;
  const auto beam1 = strip_special(beam_search(model, src, cfg).front());
  auto greedy = greedy_decode(model, src, cfg.max_len);
  if (!greedy.empty() && greedy.back() == kEosId) greedy.pop_back();
  EXPECT_EQ(beam1, greedy);
}
