#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mlrf/special_ids.hpp"

namespace mlrf {

using Sentence = std::vector<std::string>;

/// Whitespace tokenization.
Sentence tokenize(const std::string& line);
std::string join_tokens(const Sentence& tokens);

/// Token <-> id map. Ids 0..3 are PAD, BOS, EOS, UNK; regular tokens start at 4.
class Vocabulary {
 public:
  Vocabulary();

  /// Frequency-ranked (ties lexicographic) over whitespace tokens of `lines`,
  /// keeping at most `max_size` ids in total including the reserved ones.
  static Vocabulary build(std::span<const std::string> lines, std::size_t max_size);
  static Vocabulary build(std::span<const Sentence> sentences, std::size_t max_size);
  /// Regular tokens in id order (the id of tokens[i] is i + 4).
  static Vocabulary from_tokens(std::span<const std::string> tokens);

  /// One regular token per line; line number == id - 4.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  /// Regular tokens only, in id order.
  std::vector<std::string> regular_tokens() const;

  std::vector<int> encode(const Sentence& tokens) const;
  /// Tokens for ids, skipping PAD/BOS and stopping at the first EOS.
  Sentence decode(std::span<const int> ids) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct SentencePair {
  Sentence src;
  Sentence tgt;
  bool operator==(const SentencePair&) const = default;
};

using ParallelCorpus = std::vector<SentencePair>;

/// Reads two aligned files (one sentence per line). Pairs where either side
/// has more than `max_len` tokens are dropped. Throws IngestionError when
/// the line counts differ.
ParallelCorpus load_parallel_text(const std::filesystem::path& src_path, const std::filesystem::path& tgt_path,
                                  std::size_t max_len);

enum class SyntheticTask { copy, reverse };
SyntheticTask parse_synthetic_task(const std::string& text);
std::string to_string(SyntheticTask task);

struct SyntheticTaskSpec {
  SyntheticTask task = SyntheticTask::copy;
  int alphabet = 20;
  int min_len = 3;
  int max_len = 10;
  int samples = 2000;
  std::uint64_t seed = 1;
};

/// Symbol `i` of a synthetic alphabet ("a".."z", then "s26", "s27", ...).
std::string synthetic_symbol(int i);

ParallelCorpus generate_synthetic(const SyntheticTaskSpec& spec);

/// Rows are PAD-padded to the longest sentence in the batch. tgt_in starts
/// with BOS, tgt_out ends with EOS; tgt_in[1:] == tgt_out[:-1].
struct Batch {
  std::size_t size = 0;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  std::vector<int> src_ids;  // size * src_len
  std::vector<int> tgt_in;   // size * tgt_len
  std::vector<int> tgt_out;  // size * tgt_len

  std::span<const int> src_row(std::size_t b) const { return {src_ids.data() + b * src_len, src_len}; }
  std::span<const int> tgt_in_row(std::size_t b) const { return {tgt_in.data() + b * tgt_len, tgt_len}; }
  std::span<const int> tgt_out_row(std::size_t b) const { return {tgt_out.data() + b * tgt_len, tgt_len}; }
  /// 1 where the id is not PAD.
  std::vector<std::uint8_t> src_mask() const;
  std::vector<std::uint8_t> tgt_mask() const;
};

struct BatchOptions {
  std::size_t batch_size = 80;
  /// Shuffle order with this seed; keep corpus order when absent.
  std::optional<std::uint64_t> shuffle_seed;
  /// Sort by length inside windows of `bucket_window` batches to limit padding.
  bool bucket_by_length = true;
  std::size_t bucket_window = 8;
};

/// Builds one batch from explicit pairs (no shuffling).
Batch make_batch(std::span<const SentencePair> pairs, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab);

std::vector<Batch> make_batches(const ParallelCorpus& corpus, const Vocabulary& src_vocab,
                                const Vocabulary& tgt_vocab, const BatchOptions& options);

}  // namespace mlrf
