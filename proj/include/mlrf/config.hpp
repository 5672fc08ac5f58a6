#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mlrf/data.hpp"
#include "mlrf/decoding.hpp"
#include "mlrf/fusion.hpp"
#include "mlrf/training.hpp"
#include "mlrf/transformer.hpp"

namespace mlrf {

inline constexpr int kConfigSchemaVersion = 1;

/// Where training text comes from.
struct DataConfig {
  std::string source = "synthetic";  // synthetic | files
  SyntheticTask task = SyntheticTask::copy;
  int alphabet = 20;
  int min_len = 3;
  int max_len = 10;
  int train_samples = 2000;
  int valid_samples = 200;
  std::uint64_t seed = 1;
  std::string train_src, train_tgt, valid_src, valid_tgt;
  /// Pairs with a side longer than this are dropped when reading files.
  int filter_len = 50;
  /// Upper bound on vocabulary size (reserved ids included).
  int max_vocab = 30000;

  bool operator==(const DataConfig&) const = default;
};

/// Everything a run needs, as read from a `key = value` config file.
///
/// Keys are dotted (`model.d`, `fusion.side`, `train.warmup_steps`, ...);
/// `#` starts a comment. model.src_vocab / model.tgt_vocab may be 0, in which
/// case training derives them from the data. The schema is versioned by
/// `schema_version`.
struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  ModelConfig model;
  FusionConfig fusion;
  TrainConfig train;
  DataConfig data;
  BeamConfig decode;

  bool operator==(const RunConfig&) const = default;
};

/// Parses config text. Unknown keys and malformed values are collected and
/// reported together in one ConfigError naming every offending key.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical text form: every key, fixed order, round-trip exact.
std::string format_run_config(const RunConfig& config);

}  // namespace mlrf
