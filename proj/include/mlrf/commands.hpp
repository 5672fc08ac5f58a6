#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mlrf/checkpoint.hpp"
#include "mlrf/config.hpp"
#include "mlrf/data.hpp"
#include "mlrf/decoding.hpp"
#include "mlrf/model.hpp"
#include "mlrf/training.hpp"

namespace mlrf {

/// Training and validation text plus the vocabularies built from it.
struct PreparedData {
  ParallelCorpus train;
  ParallelCorpus valid;
  Vocabulary src_vocab;
  Vocabulary tgt_vocab;
};

/// Loads or generates the corpora named by `config.data`. Synthetic
/// validation pairs never repeat a training source. Zero model vocabulary
/// sizes in `config` are replaced by the built vocabulary sizes.
PreparedData prepare_data(RunConfig& config);

// ---- metrics file -----------------------------------------------------------

/// Tab-separated, header `step phase lr loss train_acc valid_acc`, one row per
/// logging step. A missing validation accuracy is written as `nan`.
void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricRecord& record);
std::vector<MetricRecord> read_metrics(const std::filesystem::path& path);

// ---- train ------------------------------------------------------------------

struct TrainOptions {
  std::filesystem::path config_path;
  std::filesystem::path out_dir;
  std::optional<std::uint64_t> seed;
  /// Continue from out_dir/last.ckpt when it exists.
  bool resume = false;
  /// Stop (and checkpoint) after this many steps in this invocation; -1 runs to completion.
  long stop_after = -1;
};

struct TrainSummary {
  long steps = 0;
  bool finished = false;
  double valid_accuracy = 0.0;
  double best_valid_accuracy = 0.0;
  std::size_t metric_rows = 0;
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
};

/// Writes last.ckpt, best.ckpt (highest validation accuracy at a logging
/// step), metrics.tsv, src.vocab, tgt.vocab and report.txt into out_dir.
TrainSummary cmd_train(const TrainOptions& options);
TrainSummary train_run(RunConfig config, const TrainOptions& options);

// ---- translate / evaluate ---------------------------------------------------

/// Beam search per line; `width == 1 && alpha == 0` is plain greedy search.
std::vector<std::string> translate_lines(const Seq2SeqModel& model, const Vocabulary& src_vocab,
                                         const Vocabulary& tgt_vocab, const std::vector<std::string>& lines,
                                         const BeamConfig& beam);

struct DecodeFlags {
  std::optional<int> beam;
  std::optional<double> alpha;
  std::optional<int> max_len;

  BeamConfig apply(BeamConfig base) const;
};

/// Returns the number of lines written.
std::size_t cmd_translate(const std::filesystem::path& checkpoint, const std::filesystem::path& input,
                          const std::filesystem::path& output, const DecodeFlags& flags);

struct EvaluationResult {
  double bleu = 0.0;
  double token_accuracy = 0.0;
  double exact_match = 0.0;
  std::size_t sentences = 0;
};

EvaluationResult evaluate_model(const Seq2SeqModel& model, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                                const ParallelCorpus& corpus, const BeamConfig& beam);
EvaluationResult cmd_evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& src,
                              const std::filesystem::path& ref, const DecodeFlags& flags);

// ---- attention export -------------------------------------------------------

struct AttentionRow {
  std::size_t sentence_id = 0;
  std::string side;  // enc | dec
  std::size_t position = 0;
  std::string token;
  std::size_t hop = 0;
  std::size_t layer = 0;  // stack index, 0 is the embedding layer
  double weight = 0.0;

  bool operator==(const AttentionRow&) const = default;
};

/// Decodes each input line and records the fusion weights of every
/// self-attention site. Encoder rows are labeled with source tokens, decoder
/// rows with the token predicted at that position.
std::vector<AttentionRow> collect_attention(const Seq2SeqModel& model, const Vocabulary& src_vocab,
                                            const Vocabulary& tgt_vocab, const std::vector<std::string>& lines,
                                            const BeamConfig& beam);

/// Columns: sentence_id side position token hop layer weight (tab separated).
void write_attention_trace(const std::vector<AttentionRow>& rows, const std::filesystem::path& path);
std::vector<AttentionRow> read_attention_trace(const std::filesystem::path& path);

/// Throws ConfigError when the checkpoint has no self-attention fusion.
std::size_t cmd_export_attention(const std::filesystem::path& checkpoint, const std::filesystem::path& input,
                                 const std::filesystem::path& output, const DecodeFlags& flags);

// ---- parameter count --------------------------------------------------------

struct ParamBreakdown {
  std::size_t embeddings = 0;
  std::size_t encoder = 0;
  std::size_t decoder = 0;
  std::size_t fusion = 0;
  std::size_t output = 0;
  std::size_t total = 0;
};

ParamBreakdown param_breakdown(const ModelConfig& model, const FusionConfig& fusion);
ParamBreakdown cmd_param_count(const std::filesystem::path& config_path);
std::string format_param_breakdown(const ParamBreakdown& breakdown);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::vector<std::string>& lines, const std::filesystem::path& path);

}  // namespace mlrf
