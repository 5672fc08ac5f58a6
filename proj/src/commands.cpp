#include "mlrf/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "mlrf/bleu.hpp"
#include "mlrf/errors.hpp"
#include "mlrf/log.hpp"

namespace mlrf {

namespace {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& text) {
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  const double v = std::stod(text, &used);
  if (used != text.size()) throw IngestionError("not a number: " + text);
  return v;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

Sentence sources_of(const SentencePair& p) { return p.src; }

Checkpoint snapshot(const RunConfig& config, const PreparedData& data, const Seq2SeqModel& model,
                    const Trainer& trainer) {
  Checkpoint ck;
  ck.config = config;
  ck.src_vocab = data.src_vocab;
  ck.tgt_vocab = data.tgt_vocab;
  ck.params = model.params().clone();
  ck.optimizer = trainer.optimizer();
  ck.progress = trainer.progress();
  ck.rng_state = rng_to_string(trainer.rng());
  return ck;
}

struct LoadedModel {
  Checkpoint checkpoint;
  Seq2SeqModel model;
};

LoadedModel load_model(const std::filesystem::path& path) {
  Checkpoint ck = load_checkpoint(path);
  Seq2SeqModel model = model_from_checkpoint(ck);
  return {std::move(ck), std::move(model)};
}

}  // namespace

PreparedData prepare_data(RunConfig& config) {
  PreparedData out;
  const DataConfig& d = config.data;
  if (d.source == "synthetic") {
    SyntheticTaskSpec spec;
    spec.task = d.task;
    spec.alphabet = d.alphabet;
    spec.min_len = d.min_len;
    spec.max_len = d.max_len;
    spec.samples = d.train_samples;
    spec.seed = d.seed;
    out.train = generate_synthetic(spec);

    std::set<Sentence> seen;
    std::transform(out.train.begin(), out.train.end(), std::inserter(seen, seen.end()), sources_of);
    spec.seed = d.seed + 0x9E3779B97F4A7C15ULL;
    spec.samples = std::max(1, d.valid_samples) * 4;
    for (int attempt = 0; attempt < 8 && static_cast<int>(out.valid.size()) < d.valid_samples; ++attempt) {
      out.valid.clear();
      for (auto& pair : generate_synthetic(spec)) {
        if (static_cast<int>(out.valid.size()) == d.valid_samples) break;
        if (seen.contains(pair.src)) continue;
        out.valid.push_back(std::move(pair));
      }
      spec.samples *= 4;
    }
    if (static_cast<int>(out.valid.size()) < d.valid_samples) {
      log::warn("only " + std::to_string(out.valid.size()) + " held-out synthetic pairs could be generated");
    }
  } else if (d.source == "files") {
    out.train = load_parallel_text(d.train_src, d.train_tgt, static_cast<std::size_t>(d.filter_len));
    if (!d.valid_src.empty()) {
      out.valid = load_parallel_text(d.valid_src, d.valid_tgt, static_cast<std::size_t>(d.filter_len));
    }
  } else {
    throw ConfigError("data.source must be synthetic or files, got " + d.source);
  }

  std::vector<Sentence> src_side, tgt_side;
  for (const auto& p : out.train) {
    src_side.push_back(p.src);
    tgt_side.push_back(p.tgt);
  }
  const auto cap = [&](int model_size) {
    const auto limit = static_cast<std::size_t>(d.max_vocab);
    return model_size > 0 ? std::min(limit, static_cast<std::size_t>(model_size)) : limit;
  };
  out.src_vocab = Vocabulary::build(std::span<const Sentence>(src_side), cap(config.model.src_vocab));
  out.tgt_vocab = Vocabulary::build(std::span<const Sentence>(tgt_side), cap(config.model.tgt_vocab));
  if (config.model.src_vocab == 0) config.model.src_vocab = static_cast<int>(out.src_vocab.size());
  if (config.model.tgt_vocab == 0) config.model.tgt_vocab = static_cast<int>(out.tgt_vocab.size());
  return out;
}

void write_metrics_header(std::ostream& out) { out << "step\tphase\tlr\tloss\ttrain_acc\tvalid_acc\n"; }

void write_metrics_row(std::ostream& out, const MetricRecord& r) {
  out << r.step << '\t' << r.phase << '\t' << format_double(r.lr) << '\t' << format_double(r.loss) << '\t'
      << format_double(r.train_acc) << '\t' << format_double(r.valid_acc) << '\n';
}

std::vector<MetricRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open metrics file " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<MetricRecord> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 6) {
      throw IngestionError(path.string() + ":" + std::to_string(line_no) + ": expected 6 columns");
    }
    MetricRecord r;
    r.step = std::stol(f[0]);
    r.phase = std::stoi(f[1]);
    r.lr = parse_double(f[2]);
    r.loss = parse_double(f[3]);
    r.train_acc = parse_double(f[4]);
    r.valid_acc = parse_double(f[5]);
    rows.push_back(r);
  }
  return rows;
}

TrainSummary cmd_train(const TrainOptions& options) {
  return train_run(load_run_config(options.config_path), options);
}

TrainSummary train_run(RunConfig config, const TrainOptions& options) {
  if (options.seed) config.train.seed = *options.seed;
  std::filesystem::create_directories(options.out_dir);
  const auto last_path = options.out_dir / "last.ckpt";
  const auto best_path = options.out_dir / "best.ckpt";
  const auto metrics_path = options.out_dir / "metrics.tsv";

  PreparedData data = prepare_data(config);
  config.model.validate();
  config.fusion.validate();

  std::optional<Checkpoint> resumed;
  if (options.resume && std::filesystem::exists(last_path)) {
    resumed = load_checkpoint(last_path);
    if (!(resumed->config == config)) {
      throw ConfigError("cannot resume: " + last_path.string() + " was written with a different configuration");
    }
    if (!(resumed->src_vocab == data.src_vocab) || !(resumed->tgt_vocab == data.tgt_vocab)) {
      throw ConfigError("cannot resume: vocabularies in " + last_path.string() + " differ from the data");
    }
  }

  Seq2SeqModel model = resumed ? model_from_checkpoint(*resumed)
                               : make_model(config.model, config.fusion, config.train.seed);
  Trainer trainer(model, config.train, data.train, data.src_vocab, data.tgt_vocab,
                  data.valid.empty() ? nullptr : &data.valid);

  std::vector<MetricRecord> kept;
  double best = -1.0;
  if (resumed) {
    if (!resumed->optimizer) throw ConfigError("cannot resume: checkpoint has no optimizer state");
    trainer.restore(resumed->progress, *resumed->optimizer, rng_from_string(resumed->rng_state));
    if (std::filesystem::exists(metrics_path)) {
      for (const auto& r : read_metrics(metrics_path)) {
        if (r.step > resumed->progress.global_step) continue;
        kept.push_back(r);
        if (!std::isnan(r.valid_acc)) best = std::max(best, r.valid_acc);
      }
    }
    log::info("resuming at step " + std::to_string(resumed->progress.global_step));
  }

  data.src_vocab.save(options.out_dir / "src.vocab");
  data.tgt_vocab.save(options.out_dir / "tgt.vocab");

  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw IngestionError("cannot write " + metrics_path.string());
  write_metrics_header(metrics);
  for (const auto& r : kept) write_metrics_row(metrics, r);
  std::size_t rows = kept.size();

  TrainSummary summary;
  summary.last_checkpoint = last_path;
  summary.best_checkpoint = best_path;

  const auto on_log = [&](const MetricRecord& r) {
    write_metrics_row(metrics, r);
    metrics.flush();
    ++rows;
    log::info("step " + std::to_string(r.step) + " loss " + format_double(r.loss) + " valid_acc " +
              format_double(r.valid_acc));
    const double score = std::isnan(r.valid_acc) ? r.train_acc : r.valid_acc;
    if (score > best) {
      best = score;
      save_checkpoint(snapshot(config, data, model, trainer), best_path);
    }
  };
  const auto on_checkpoint = [&](const Trainer& t) { save_checkpoint(snapshot(config, data, model, t), last_path); };

  trainer.run(options.stop_after, on_log, on_checkpoint);
  save_checkpoint(snapshot(config, data, model, trainer), last_path);
  if (!std::filesystem::exists(best_path)) save_checkpoint(snapshot(config, data, model, trainer), best_path);

  summary.steps = trainer.progress().global_step;
  summary.finished = trainer.finished();
  summary.valid_accuracy = trainer.validate();
  summary.best_valid_accuracy = best;
  summary.metric_rows = rows;

  std::ofstream report(options.out_dir / "report.txt", std::ios::trunc);
  report << "steps\t" << summary.steps << '\n'
         << "finished\t" << (summary.finished ? "yes" : "no") << '\n'
         << "valid_token_accuracy\t" << format_double(summary.valid_accuracy) << '\n'
         << "best_logged_accuracy\t" << format_double(best) << '\n'
         << "parameters\t" << count_parameters(model.params()) << '\n';
  return summary;
}

BeamConfig DecodeFlags::apply(BeamConfig base) const {
  if (beam) base.width = *beam;
  if (alpha) base.length_alpha = *alpha;
  if (max_len) base.max_len = *max_len;
  base.validate();
  return base;
}

std::vector<std::string> translate_lines(const Seq2SeqModel& model, const Vocabulary& src_vocab,
                                         const Vocabulary& tgt_vocab, const std::vector<std::string>& lines,
                                         const BeamConfig& beam) {
  std::vector<std::string> out;
  out.reserve(lines.size());
  for (const auto& line : lines) {
    const auto ids = src_vocab.encode(tokenize(line));
    if (ids.empty()) {
      out.emplace_back();
      continue;
    }
    const auto hyps = beam_search(model, ids, beam);
    const auto best = strip_special(hyps.front(), beam.eos_id);
    out.push_back(join_tokens(tgt_vocab.decode(best)));
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void write_lines(const std::vector<std::string>& lines, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestionError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

std::size_t cmd_translate(const std::filesystem::path& checkpoint, const std::filesystem::path& input,
                          const std::filesystem::path& output, const DecodeFlags& flags) {
  const auto loaded = load_model(checkpoint);
  const BeamConfig beam = flags.apply(loaded.checkpoint.config.decode);
  const auto lines = read_lines(input);
  write_lines(translate_lines(loaded.model, loaded.checkpoint.src_vocab, loaded.checkpoint.tgt_vocab, lines, beam),
              output);
  return lines.size();
}

EvaluationResult evaluate_model(const Seq2SeqModel& model, const Vocabulary& src_vocab, const Vocabulary& tgt_vocab,
                                const ParallelCorpus& corpus, const BeamConfig& beam) {
  EvaluationResult result;
  result.sentences = corpus.size();
  if (corpus.empty()) return result;
  std::vector<std::string> lines;
  for (const auto& p : corpus) lines.push_back(join_tokens(p.src));
  const auto outputs = translate_lines(model, src_vocab, tgt_vocab, lines, beam);
  std::vector<Sentence> hyps, refs;
  std::size_t exact = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    hyps.push_back(tokenize(outputs[i]));
    refs.push_back(corpus[i].tgt);
    exact += hyps.back() == refs.back();
  }
  result.bleu = corpus_bleu(hyps, refs).score;
  result.exact_match = static_cast<double>(exact) / static_cast<double>(corpus.size());
  BatchOptions opts;
  opts.batch_size = 32;
  opts.bucket_by_length = false;
  ParallelCorpus scored;
  std::copy_if(corpus.begin(), corpus.end(), std::back_inserter(scored),
               [](const SentencePair& p) { return !p.src.empty(); });
  result.token_accuracy = scored.empty() ? std::numeric_limits<double>::quiet_NaN()
                                         : evaluate_token_accuracy(model, make_batches(scored, src_vocab, tgt_vocab, opts));
  return result;
}

EvaluationResult cmd_evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& src,
                              const std::filesystem::path& ref, const DecodeFlags& flags) {
  const auto loaded = load_model(checkpoint);
  const auto src_lines = read_lines(src);
  const auto ref_lines = read_lines(ref);
  if (src_lines.size() != ref_lines.size()) {
    throw DimensionError("source has " + std::to_string(src_lines.size()) + " lines but reference has " +
                         std::to_string(ref_lines.size()));
  }
  ParallelCorpus corpus;
  for (std::size_t i = 0; i < src_lines.size(); ++i) corpus.push_back({tokenize(src_lines[i]), tokenize(ref_lines[i])});
  return evaluate_model(loaded.model, loaded.checkpoint.src_vocab, loaded.checkpoint.tgt_vocab, corpus,
                        flags.apply(loaded.checkpoint.config.decode));
}

std::vector<AttentionRow> collect_attention(const Seq2SeqModel& model, const Vocabulary& src_vocab,
                                            const Vocabulary& tgt_vocab, const std::vector<std::string>& lines,
                                            const BeamConfig& beam) {
  if (!model.fusion().uses_self_attention()) {
    throw ConfigError("attention export needs self-attention fusion on the encoder or decoder side");
  }
  std::vector<AttentionRow> rows;
  const auto emit = [&](std::size_t sid, const char* side, const AttentionTrace& trace,
                        const std::vector<std::string>& tokens) {
    for (std::size_t p = 0; p < trace.positions; ++p) {
      for (std::size_t h = 0; h < trace.hops; ++h) {
        for (std::size_t l = 0; l < trace.layers; ++l) {
          rows.push_back({sid, side, p, tokens[p], h, trace.first_layer + l, trace.at(p, h, l)});
        }
      }
    }
  };
  const RunContext ctx;
  NoGradGuard no_grad;
  for (std::size_t sid = 0; sid < lines.size(); ++sid) {
    const Sentence src = tokenize(lines[sid]);
    if (src.empty()) continue;
    const auto src_ids = src_vocab.encode(src);
    const EncodedSource encoded = model.encode(src_ids, ctx);
    if (encoded.trace) {
      std::vector<std::string> labels;
      for (int id : src_ids) labels.push_back(src_vocab.token(id));
      emit(sid, "enc", *encoded.trace, labels);
    }
    if (model.fusion().decoder_kind() == FusionKind::self_attention) {
      const auto hyps = beam_search(model, src_ids, beam);
      std::vector<int> tgt_in = {kBosId};
      const auto body = strip_special(hyps.front(), beam.eos_id);
      tgt_in.insert(tgt_in.end(), body.begin(), body.end());
      const ForwardOutput fwd = model.decode(encoded, tgt_in, ctx);
      std::vector<std::string> labels;
      for (std::size_t j = 1; j < tgt_in.size(); ++j) labels.push_back(tgt_vocab.token(tgt_in[j]));
      labels.push_back(tgt_vocab.token(kEosId));
      emit(sid, "dec", *fwd.decoder_trace, labels);
    }
  }
  return rows;
}

void write_attention_trace(const std::vector<AttentionRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << "sentence_id\tside\tposition\ttoken\thop\tlayer\tweight\n";
  for (const auto& r : rows) {
    out << r.sentence_id << '\t' << r.side << '\t' << r.position << '\t' << r.token << '\t' << r.hop << '\t'
        << r.layer << '\t' << format_double(r.weight) << '\n';
  }
}

std::vector<AttentionRow> read_attention_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open attention trace " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<AttentionRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 7) {
      throw IngestionError(path.string() + ":" + std::to_string(line_no) + ": expected 7 columns");
    }
    AttentionRow r;
    r.sentence_id = std::stoul(f[0]);
    r.side = f[1];
    r.position = std::stoul(f[2]);
    r.token = f[3];
    r.hop = std::stoul(f[4]);
    r.layer = std::stoul(f[5]);
    r.weight = parse_double(f[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::size_t cmd_export_attention(const std::filesystem::path& checkpoint, const std::filesystem::path& input,
                                 const std::filesystem::path& output, const DecodeFlags& flags) {
  const auto loaded = load_model(checkpoint);
  const auto rows = collect_attention(loaded.model, loaded.checkpoint.src_vocab, loaded.checkpoint.tgt_vocab,
                                      read_lines(input), flags.apply(loaded.checkpoint.config.decode));
  write_attention_trace(rows, output);
  return rows.size();
}

ParamBreakdown param_breakdown(const ModelConfig& model, const FusionConfig& fusion) {
  ParamBreakdown b;
  for (const auto& spec : model_layout(model, fusion)) {
    const std::size_t n = shape_numel(spec.shape);
    const std::string& name = spec.name;
    if (name.starts_with("src_embed.") || name.starts_with("tgt_embed.")) b.embeddings += n;
    else if (name.starts_with("encoder.")) b.encoder += n;
    else if (name.starts_with("decoder.")) b.decoder += n;
    else if (name.starts_with("fusion.")) b.fusion += n;
    else b.output += n;
    b.total += n;
  }
  return b;
}

ParamBreakdown cmd_param_count(const std::filesystem::path& config_path) {
  RunConfig config = load_run_config(config_path);
  if (config.model.src_vocab == 0 || config.model.tgt_vocab == 0) prepare_data(config);
  return param_breakdown(config.model, config.fusion);
}

std::string format_param_breakdown(const ParamBreakdown& b) {
  std::ostringstream out;
  out << "embeddings\t" << b.embeddings << '\n'
      << "encoder\t" << b.encoder << '\n'
      << "decoder\t" << b.decoder << '\n'
      << "fusion\t" << b.fusion << '\n'
      << "output\t" << b.output << '\n'
      << "total\t" << b.total << '\n';
  return out.str();
}

}  // namespace mlrf
