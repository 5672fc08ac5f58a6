#include "mlrf/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "mlrf/errors.hpp"
#include "mlrf/log.hpp"

namespace mlrf {

namespace {
const std::vector<std::string> kReservedTokens = {"<pad>", "<s>", "</s>", "<unk>"};

bool is_reserved(const std::string& token) {
  return std::find(kReservedTokens.begin(), kReservedTokens.end(), token) != kReservedTokens.end();
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}
}  // namespace

Sentence tokenize(const std::string& line) {
  Sentence out;
  std::istringstream in(line);
  std::string token;
  while (in >> token) out.push_back(std::move(token));
  return out;
}

std::string join_tokens(const Sentence& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (std::size_t i = 0; i < kReservedTokens.size(); ++i) {
    tokens_.push_back(kReservedTokens[i]);
    ids_.emplace(kReservedTokens[i], static_cast<int>(i));
  }
}

Vocabulary Vocabulary::build(std::span<const Sentence> sentences, std::size_t max_size) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences) {
    for (const auto& t : s) {
      if (!is_reserved(t)) ++counts[t];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // std::map iteration is already lexicographic, so a stable sort keeps ties in that order.
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t room = max_size > kNumReserved ? max_size - kNumReserved : 0;
  if (ranked.size() > room) ranked.resize(room);
  std::vector<std::string> tokens;
  tokens.reserve(ranked.size());
  for (auto& [token, count] : ranked) tokens.push_back(token);
  return from_tokens(tokens);
}

Vocabulary Vocabulary::build(std::span<const std::string> lines, std::size_t max_size) {
  std::vector<Sentence> sentences;
  sentences.reserve(lines.size());
  for (const auto& line : lines) sentences.push_back(tokenize(line));
  return build(std::span<const Sentence>(sentences), max_size);
}

Vocabulary Vocabulary::from_tokens(std::span<const std::string> tokens) {
  Vocabulary v;
  for (const auto& t : tokens) {
    if (is_reserved(t) || v.ids_.count(t)) throw ContractError("duplicate or reserved vocabulary token: " + t);
    v.ids_.emplace(t, static_cast<int>(v.tokens_.size()));
    v.tokens_.push_back(t);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return from_tokens(lines);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  for (std::size_t i = kNumReserved; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocabulary::regular_tokens() const {
  return {tokens_.begin() + kNumReserved, tokens_.end()};
}

std::vector<int> Vocabulary::encode(const Sentence& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

Sentence Vocabulary::decode(std::span<const int> ids) const {
  Sentence out;
  for (int id : ids) {
    if (id == kEosId) break;
    if (id == kPadId || id == kBosId) continue;
    out.push_back(token(id));
  }
  return out;
}

ParallelCorpus load_parallel_text(const std::filesystem::path& src_path, const std::filesystem::path& tgt_path,
                                  std::size_t max_len) {
  const auto src = read_lines(src_path);
  const auto tgt = read_lines(tgt_path);
  if (src.size() != tgt.size()) {
    throw IngestionError(src_path.string() + " has " + std::to_string(src.size()) + " lines but " +
                         tgt_path.string() + " has " + std::to_string(tgt.size()) + "; first unpaired line is " +
                         std::to_string(std::min(src.size(), tgt.size()) + 1));
  }
  if (src.empty()) log::warn("parallel corpus " + src_path.string() + " is empty");
  ParallelCorpus corpus;
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    SentencePair pair{tokenize(src[i]), tokenize(tgt[i])};
    if (pair.src.size() > max_len || pair.tgt.size() > max_len) {
      ++dropped;
      continue;
    }
    corpus.push_back(std::move(pair));
  }
  if (dropped) log::info("dropped " + std::to_string(dropped) + " pairs longer than " + std::to_string(max_len));
  return corpus;
}

SyntheticTask parse_synthetic_task(const std::string& text) {
  if (text == "copy") return SyntheticTask::copy;
  if (text == "reverse") return SyntheticTask::reverse;
  throw ConfigError("unknown synthetic task '" + text + "' (expected copy|reverse)");
}

std::string to_string(SyntheticTask task) { return task == SyntheticTask::copy ? "copy" : "reverse"; }

std::string synthetic_symbol(int i) {
  if (i < 26) return std::string(1, static_cast<char>('a' + i));
  return "s" + std::to_string(i);
}

ParallelCorpus generate_synthetic(const SyntheticTaskSpec& spec) {
  if (spec.alphabet < 1 || spec.min_len < 1 || spec.max_len < spec.min_len || spec.samples < 0) {
    throw ConfigError("synthetic task needs alphabet >= 1 and 1 <= min_len <= max_len");
  }
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> length(spec.min_len, spec.max_len);
  std::uniform_int_distribution<int> symbol(0, spec.alphabet - 1);
  ParallelCorpus corpus;
  corpus.reserve(static_cast<std::size_t>(spec.samples));
  for (int n = 0; n < spec.samples; ++n) {
    Sentence src(static_cast<std::size_t>(length(rng)));
    for (auto& t : src) t = synthetic_symbol(symbol(rng));
    Sentence tgt = src;
    if (spec.task == SyntheticTask::reverse) std::reverse(tgt.begin(), tgt.end());
    corpus.push_back({std::move(src), std::move(tgt)});
  }
  return corpus;
}

std::vector<std::uint8_t> Batch::src_mask() const {
  std::vector<std::uint8_t> m(src_ids.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = src_ids[i] != kPadId;
  return m;
}

std::vector<std::uint8_t> Batch::tgt_mask() const {
  std::vector<std::uint8_t> m(tgt_out.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = tgt_out[i] != kPadId;
  return m;
}

Batch make_batch(std::span<const SentencePair> pairs, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab) {
  if (pairs.empty()) throw ContractError("cannot build an empty batch");
  Batch b;
  b.size = pairs.size();
  for (const auto& p : pairs) {
    if (p.src.empty()) throw ContractError("source sentence is empty");
    b.src_len = std::max(b.src_len, p.src.size());
    b.tgt_len = std::max(b.tgt_len, p.tgt.size() + 1);
  }
  b.src_ids.assign(b.size * b.src_len, kPadId);
  b.tgt_in.assign(b.size * b.tgt_len, kPadId);
  b.tgt_out.assign(b.size * b.tgt_len, kPadId);
  for (std::size_t r = 0; r < b.size; ++r) {
    const auto src = src_vocab.encode(pairs[r].src);
    const auto tgt = tgt_vocab.encode(pairs[r].tgt);
    std::copy(src.begin(), src.end(), b.src_ids.begin() + static_cast<std::ptrdiff_t>(r * b.src_len));
    int* in = b.tgt_in.data() + r * b.tgt_len;
    int* out = b.tgt_out.data() + r * b.tgt_len;
    in[0] = kBosId;
    for (std::size_t j = 0; j < tgt.size(); ++j) {
      in[j + 1] = tgt[j];
      out[j] = tgt[j];
    }
    out[tgt.size()] = kEosId;
  }
  return b;
}

std::vector<Batch> make_batches(const ParallelCorpus& corpus, const Vocabulary& src_vocab,
                                const Vocabulary& tgt_vocab, const BatchOptions& options) {
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(options.shuffle_seed.value_or(0));
  if (options.shuffle_seed) std::shuffle(order.begin(), order.end(), rng);

  if (options.bucket_by_length) {
    const std::size_t window = options.batch_size * std::max<std::size_t>(1, options.bucket_window);
    for (std::size_t start = 0; start < order.size(); start += window) {
      auto first = order.begin() + static_cast<std::ptrdiff_t>(start);
      auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + window));
      std::stable_sort(first, last, [&](std::size_t a, std::size_t b) {
        return std::pair(corpus[a].src.size(), corpus[a].tgt.size()) <
               std::pair(corpus[b].src.size(), corpus[b].tgt.size());
      });
    }
  }

  std::vector<Batch> batches;
  std::vector<SentencePair> chunk;
  for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
    chunk.clear();
    for (std::size_t i = start; i < std::min(order.size(), start + options.batch_size); ++i) {
      chunk.push_back(corpus[order[i]]);
    }
    batches.push_back(make_batch(chunk, src_vocab, tgt_vocab));
  }
  if (options.shuffle_seed && options.bucket_by_length) std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

}  // namespace mlrf
