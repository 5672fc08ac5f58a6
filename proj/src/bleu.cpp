#include "mlrf/bleu.hpp"

#include <cmath>
#include <map>

#include "mlrf/errors.hpp"

namespace mlrf {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const Sentence& s, std::size_t n) {
  NgramCounts counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    ++counts[std::vector<std::string>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                      s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

BleuResult corpus_bleu(std::span<const Sentence> hypotheses, std::span<const Sentence> references) {
  if (hypotheses.size() != references.size()) {
    throw DimensionError("BLEU needs one reference per hypothesis: " + std::to_string(hypotheses.size()) +
                         " hypotheses vs " + std::to_string(references.size()) + " references");
  }
  std::array<std::size_t, 4> matched{}, total{};
  BleuResult out;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    out.hypothesis_length += hypotheses[i].size();
    out.reference_length += references[i].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hyp = count_ngrams(hypotheses[i], n);
      const auto ref = count_ngrams(references[i], n);
      for (const auto& [gram, count] : hyp) {
        auto it = ref.find(gram);
        matched[n - 1] += it == ref.end() ? 0 : std::min(count, it->second);
        total[n - 1] += count;
      }
    }
  }
  double log_sum = 0.0;
  bool zero = out.hypothesis_length == 0;
  for (std::size_t n = 0; n < 4; ++n) {
    out.precisions[n] = total[n] ? static_cast<double>(matched[n]) / static_cast<double>(total[n]) : 0.0;
    if (out.precisions[n] == 0.0) zero = true;
    else log_sum += std::log(out.precisions[n]);
  }
  if (out.hypothesis_length == 0) {
    out.brevity_penalty = 0.0;
  } else if (out.hypothesis_length > out.reference_length) {
    out.brevity_penalty = 1.0;
  } else {
    out.brevity_penalty = std::exp(1.0 - static_cast<double>(out.reference_length) /
                                             static_cast<double>(out.hypothesis_length));
  }
  out.score = zero ? 0.0 : 100.0 * out.brevity_penalty * std::exp(log_sum / 4.0);
  return out;
}

}  // namespace mlrf
