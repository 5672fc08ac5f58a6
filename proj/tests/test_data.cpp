#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mlrf/data.hpp"
#include "mlrf/errors.hpp"

using namespace mlrf;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& content) {
  const auto dir = std::filesystem::temp_directory_path() / "mlrf_data_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / name;
  std::ofstream(path) << content;
  return path;
}

}  // namespace

TEST(Tokenize, SplitsOnAnyWhitespace) {
  EXPECT_EQ(tokenize("  a \tb  c\n"), (Sentence{"a", "b", "c"}));
  EXPECT_TRUE(tokenize("   ").empty());
  EXPECT_EQ(join_tokens({"x", "y"}), "x y");
}

TEST(Vocabulary, ReservedIdsComeFirst) {
  const Vocabulary v;
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.token(kPadId), "<pad>");
  EXPECT_EQ(v.token(kBosId), "<s>");
  EXPECT_EQ(v.token(kEosId), "</s>");
  EXPECT_EQ(v.token(kUnkId), "<unk>");
}

TEST(Vocabulary, FrequencyOrderWithLexicographicTies) {
  const std::vector<std::string> lines = {"a a b", "c b d", "a"};
  const Vocabulary v = Vocabulary::build(std::span<const std::string>(lines), 100);
  EXPECT_EQ(v.regular_tokens(), (std::vector<std::string>{"a", "b", "c", "d"}));
  EXPECT_LT(v.id("a"), v.id("b"));
}

TEST(Vocabulary, TruncationCountsReservedIds) {
  const std::vector<std::string> lines = {"a a a b b c"};
  const Vocabulary v = Vocabulary::build(std::span<const std::string>(lines), 6);
  EXPECT_EQ(v.size(), 6u);
  EXPECT_EQ(v.id("c"), kUnkId);
}

TEST(Vocabulary, UnknownTokensMapToUnkAndRoundTrip) {
  const std::vector<std::string> lines = {"the cat sat"};
  const Vocabulary v = Vocabulary::build(std::span<const std::string>(lines), 100);
  EXPECT_EQ(v.id("dog"), kUnkId);
  for (int i = 0; i < static_cast<int>(v.size()); ++i) EXPECT_EQ(v.id(v.token(i)), i);
  const Sentence s = {"the", "cat", "sat"};
  EXPECT_EQ(v.decode(v.encode(s)), s);
  std::vector<int> with_specials = {kBosId, v.id("cat"), kEosId, v.id("sat")};
  EXPECT_EQ(v.decode(with_specials), (Sentence{"cat"}));
  EXPECT_THROW(v.token(99), IndexError);
}

TEST(Vocabulary, FileRoundTrip) {
  const std::vector<std::string> lines = {"x y y z"};
  const Vocabulary v = Vocabulary::build(std::span<const std::string>(lines), 100);
  const auto path = temp_file("vocab.txt", "");
  v.save(path);
  EXPECT_EQ(Vocabulary::load(path), v);
  std::ifstream in(path);
  std::string first;
  std::getline(in, first);
  EXPECT_EQ(first, "y");
}

TEST(ParallelText, LoadsAndFiltersByLength) {
  std::string long_line;
  for (int i = 0; i < 51; ++i) long_line += "w ";
  const auto src = temp_file("s.txt", "a b\n" + long_line + "\nc\n");
  const auto tgt = temp_file("t.txt", "x\ny\nz w\n");
  const ParallelCorpus corpus = load_parallel_text(src, tgt, 50);
  ASSERT_EQ(corpus.size(), 2u);
  EXPECT_EQ(corpus[1].src, (Sentence{"c"}));
  EXPECT_EQ(corpus[1].tgt, (Sentence{"z", "w"}));
}

TEST(ParallelText, MismatchedLineCountsNameTheLines) {
  const auto src = temp_file("s2.txt", "a\nb\nc\n");
  const auto tgt = temp_file("t2.txt", "x\ny\n");
  try {
    load_parallel_text(src, tgt, 50);
    FAIL();
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
  }
}

TEST(ParallelText, EmptyFilesGiveEmptyCorpus) {
  const auto src = temp_file("s3.txt", "");
  const auto tgt = temp_file("t3.txt", "");
  EXPECT_TRUE(load_parallel_text(src, tgt, 50).empty());
}

TEST(Synthetic, CopyAndReverseAreDeterministic) {
  SyntheticTaskSpec spec;
  spec.samples = 50;
  spec.seed = 9;
  const ParallelCorpus a = generate_synthetic(spec);
  EXPECT_EQ(a, generate_synthetic(spec));
  for (const auto& p : a) {
    EXPECT_EQ(p.src, p.tgt);
    EXPECT_GE(p.src.size(), 3u);
    EXPECT_LE(p.src.size(), 10u);
  }
  spec.task = SyntheticTask::reverse;
  for (const auto& p : generate_synthetic(spec)) EXPECT_EQ(p.tgt, Sentence(p.src.rbegin(), p.src.rend()));
  EXPECT_EQ(synthetic_symbol(0), "a");
  EXPECT_EQ(synthetic_symbol(25), "z");
  EXPECT_EQ(synthetic_symbol(26), "s26");
}

TEST(Batches, SizesFollowBatchSize) {
  SyntheticTaskSpec spec;
  spec.samples = 10;
  const ParallelCorpus corpus = generate_synthetic(spec);
  const Vocabulary v = Vocabulary::build(std::span<const std::string>(std::vector<std::string>{
                                             "a b c d e f g h i j k l m n o p q r s t"}),
                                         100);
  BatchOptions opts;
  opts.batch_size = 4;
  const auto batches = make_batches(corpus, v, v, opts);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].size, 4u);
  EXPECT_EQ(batches[1].size, 4u);
  EXPECT_EQ(batches[2].size, 2u);
}

TEST(Batches, TeacherForcingLayoutAndMasks) {
  const ParallelCorpus corpus = {{{"a", "b", "c"}, {"x", "y"}}, {{"a"}, {"x", "y", "y", "x"}}};
  const std::vector<std::string> lines = {"a b c x y"};
  const Vocabulary v = Vocabulary::build(std::span<const std::string>(lines), 100);
  const Batch b = make_batch(corpus, v, v);
  EXPECT_EQ(b.src_len, 3u);
  EXPECT_EQ(b.tgt_len, 5u);
  for (std::size_t r = 0; r < b.size; ++r) {
    const auto in = b.tgt_in_row(r), out = b.tgt_out_row(r);
    EXPECT_EQ(in[0], kBosId);
    const std::size_t n = corpus[r].tgt.size();
    EXPECT_EQ(out[n], kEosId);
    for (std::size_t j = 1; j <= n; ++j) EXPECT_EQ(in[j], out[j - 1]);
    for (std::size_t j = n + 1; j < b.tgt_len; ++j) {
      EXPECT_EQ(out[j], kPadId);
      EXPECT_EQ(in[j], kPadId);
    }
    EXPECT_EQ(std::count(out.begin(), out.end(), kEosId), 1);
  }
  const auto mask = b.src_mask();
  for (std::size_t i = 0; i < mask.size(); ++i) EXPECT_EQ(mask[i] != 0, b.src_ids[i] != kPadId);
  const auto tmask = b.tgt_mask();
  for (std::size_t i = 0; i < tmask.size(); ++i) EXPECT_EQ(tmask[i] != 0, b.tgt_out[i] != kPadId);
}

TEST(Batches, ShuffleIsSeededAndCoversCorpus) {
  SyntheticTaskSpec spec;
  spec.samples = 37;
  const ParallelCorpus corpus = generate_synthetic(spec);
  const std::vector<std::string> lines = {"a b c d e f g h i j k l m n o p q r s t"};
  const Vocabulary v = Vocabulary::build(std::span<const std::string>(lines), 100);
  BatchOptions opts;
  opts.batch_size = 5;
  opts.shuffle_seed = 3;
  const auto a = make_batches(corpus, v, v, opts);
  const auto b = make_batches(corpus, v, v, opts);
  ASSERT_EQ(a.size(), b.size());
  std::size_t rows = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].src_ids, b[i].src_ids);
    rows += a[i].size;
  }
  EXPECT_EQ(rows, 37u);
  opts.shuffle_seed = 4;
  const auto c = make_batches(corpus, v, v, opts);
  bool differs = false;
  for (std::size_t i = 0; i < a.size() && i < c.size(); ++i) differs = differs || a[i].src_ids != c[i].src_ids;
  EXPECT_TRUE(differs);
}
