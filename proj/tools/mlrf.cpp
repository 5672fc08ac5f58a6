#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mlrf/commands.hpp"
#include "mlrf/errors.hpp"

namespace {

void add_decode_flags(CLI::App* cmd, mlrf::DecodeFlags& flags) {
  cmd->add_option("--beam", flags.beam, "Beam width (default from the checkpoint config)");
  cmd->add_option("--alpha", flags.alpha, "Length normalization exponent");
  cmd->add_option("--max-len", flags.max_len, "Maximum generated length");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer with multi-layer representation fusion"};
  app.require_subcommand(1);

  mlrf::TrainOptions train;
  std::optional<std::uint64_t> seed;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", train.config_path, "Run config")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train.out_dir, "Output directory")->required();
  train_cmd->add_option("--seed", seed, "Override train.seed");
  train_cmd->add_flag("--resume", train.resume, "Continue from <out>/last.ckpt");
  train_cmd->add_option("--stop-after", train.stop_after, "Stop after this many steps");

  std::string checkpoint, input, output, reference;
  mlrf::DecodeFlags flags;

  auto* translate_cmd = app.add_subcommand("translate", "Translate a file line by line");
  translate_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  translate_cmd->add_option("--input", input)->required()->check(CLI::ExistingFile);
  translate_cmd->add_option("--out", output)->required();
  add_decode_flags(translate_cmd, flags);

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Report BLEU and token accuracy");
  evaluate_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--input", input, "Source sentences")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--ref", reference, "Reference translations")->required()->check(CLI::ExistingFile);
  add_decode_flags(evaluate_cmd, flags);

  auto* export_cmd = app.add_subcommand("export-attention", "Write fusion attention weights as TSV");
  export_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--input", input)->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--out", output)->required();
  add_decode_flags(export_cmd, flags);

  std::string count_config;
  auto* count_cmd = app.add_subcommand("param-count", "Count parameters per module");
  count_cmd->add_option("--config", count_config)->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) {
      train.seed = seed;
      const auto s = mlrf::cmd_train(train);
      std::printf("steps\t%ld\nvalid_token_accuracy\t%.6f\nmetrics_rows\t%zu\n", s.steps, s.valid_accuracy,
                  s.metric_rows);
    } else if (translate_cmd->parsed()) {
      mlrf::cmd_translate(checkpoint, input, output, flags);
    } else if (evaluate_cmd->parsed()) {
      const auto r = mlrf::cmd_evaluate(checkpoint, input, reference, flags);
      std::printf("bleu\t%.4f\ntoken_accuracy\t%.6f\nexact_match\t%.6f\nsentences\t%zu\n", r.bleu,
                  r.token_accuracy, r.exact_match, r.sentences);
    } else if (export_cmd->parsed()) {
      mlrf::cmd_export_attention(checkpoint, input, output, flags);
    } else if (count_cmd->parsed()) {
      std::cout << mlrf::format_param_breakdown(mlrf::cmd_param_count(count_config));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
