#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <string>

#include "mlrf/config.hpp"
#include "mlrf/data.hpp"
#include "mlrf/model.hpp"
#include "mlrf/training.hpp"

namespace mlrf {

inline constexpr int kCheckpointFormatVersion = 1;

/// Self-describing training snapshot.
///
/// On disk: a UTF-8 text header (magic line, format version, byte order,
/// reserved-id layout, the canonical run config, both vocabularies, trainer
/// progress, RNG state and a directory of tensor blocks) terminated by the
/// line `end_header`, followed by the raw tensor blocks in directory order as
/// little-endian IEEE-754 doubles. Parameter blocks are named as in the
/// ParamStore; Adam moments are `adam.m/<name>` and `adam.v/<name>`.
struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  RunConfig config;
  Vocabulary src_vocab;
  Vocabulary tgt_vocab;
  ParamStore params;
  std::optional<OptimizerState> optimizer;
  TrainerProgress progress;
  std::string rng_state;  // textual std::mt19937_64 state; empty when absent
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Model built from the checkpoint's config and tensors.
Seq2SeqModel model_from_checkpoint(const Checkpoint& checkpoint);

/// Copies checkpoint tensors into an existing model. Throws ConfigError when
/// the parameter names or shapes differ from the model's.
void load_parameters_into(const Checkpoint& checkpoint, Seq2SeqModel& model);

std::string rng_to_string(const std::mt19937_64& rng);
std::mt19937_64 rng_from_string(const std::string& text);

}  // namespace mlrf
