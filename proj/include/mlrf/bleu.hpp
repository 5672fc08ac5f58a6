#pragma once

#include <array>
#include <span>

#include "mlrf/data.hpp"

namespace mlrf {

struct BleuResult {
  double score = 0.0;  // [0, 100]
  std::array<double, 4> precisions{};  // modified n-gram precisions, n = 1..4
  double brevity_penalty = 0.0;
  std::size_t hypothesis_length = 0;
  std::size_t reference_length = 0;
};

/// Corpus-level BLEU-4 with a single reference per line and no smoothing:
/// 100 * BP * exp(mean log p_n), BP = exp(1 - r/c) when c <= r. Tokens are
/// compared as-is. Throws DimensionError when the corpora differ in length.
BleuResult corpus_bleu(std::span<const Sentence> hypotheses, std::span<const Sentence> references);

}  // namespace mlrf
