#include "mlrf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mlrf/errors.hpp"

namespace mlrf {

namespace {

constexpr const char* kMagic = "MLRF-CHECKPOINT";

struct Block {
  std::string name;
  Shape shape;
  std::span<const double> data;
};

void write_doubles(std::ostream& out, std::span<const double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 8));
  } else {
    for (double v : values) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      char bytes[8];
      for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
      out.write(bytes, 8);
    }
  }
}

void read_doubles(std::istream& in, std::span<double> values) {
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * 8));
  if (!in) throw IngestionError("checkpoint ends inside a tensor block");
  if constexpr (std::endian::native != std::endian::little) {
    for (double& v : values) {
      std::uint64_t raw;
      std::memcpy(&raw, &v, 8);
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= ((raw >> (8 * i)) & 0xFF) << (8 * (7 - i));
      v = std::bit_cast<double>(bits);
    }
  }
}

std::string expect_line(std::istream& in, const std::string& what) {
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("checkpoint header truncated while reading " + what);
  return line;
}

template <typename T>
T field(std::istringstream& in, const std::string& what) {
  T value{};
  if (!(in >> value)) throw IngestionError("malformed checkpoint header field: " + what);
  return value;
}

std::vector<std::string> read_tokens(std::istream& in, const std::string& label) {
  std::istringstream head(expect_line(in, label));
  if (field<std::string>(head, label) != label) throw IngestionError("expected checkpoint section " + label);
  const auto count = field<std::size_t>(head, label);
  std::vector<std::string> tokens;
  tokens.reserve(count);
  for (std::size_t i = 0; i < count; ++i) tokens.push_back(expect_line(in, label));
  return tokens;
}

}  // namespace

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

std::mt19937_64 rng_from_string(const std::string& text) {
  std::mt19937_64 rng;
  std::istringstream in(text);
  in >> rng;
  if (!in) throw IngestionError("malformed RNG state in checkpoint");
  return rng;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::vector<Block> blocks;
  for (const auto& [name, t] : ck.params) blocks.push_back({name, t.shape(), t.values()});
  if (ck.optimizer) {
    for (const auto& [name, t] : ck.params) {
      const auto& m = ck.optimizer->first_moment.at(name);
      blocks.push_back({"adam.m/" + name, t.shape(), m});
    }
    for (const auto& [name, t] : ck.params) {
      const auto& v = ck.optimizer->second_moment.at(name);
      blocks.push_back({"adam.v/" + name, t.shape(), v});
    }
  }

  std::ostringstream header;
  header << kMagic << '\n';
  header << "format_version " << ck.format_version << '\n';
  header << "byte_order little-endian\n";
  header << "reserved_ids <pad>=0 <s>=1 </s>=2 <unk>=3\n";
  const std::string config_text = format_run_config(ck.config);
  const auto config_lines = static_cast<std::size_t>(std::count(config_text.begin(), config_text.end(), '\n'));
  header << "config " << config_lines << '\n' << config_text;
  const auto src = ck.src_vocab.regular_tokens();
  header << "src_vocab " << src.size() << '\n';
  for (const auto& t : src) header << t << '\n';
  const auto tgt = ck.tgt_vocab.regular_tokens();
  header << "tgt_vocab " << tgt.size() << '\n';
  for (const auto& t : tgt) header << t << '\n';
  header << "progress " << ck.progress.global_step << ' ' << ck.progress.phase << ' ' << ck.progress.epoch << ' '
         << ck.progress.batch_index << ' ' << (ck.progress.finished ? 1 : 0) << '\n';
  if (ck.optimizer) {
    header << "optimizer 1 " << ck.optimizer->step << ' '
           << (ck.optimizer->phase == OptimizerPhase::restarted ? "restarted" : "warmup_schedule") << '\n';
  } else {
    header << "optimizer 0 0 warmup_schedule\n";
  }
  header << "rng " << (ck.rng_state.empty() ? "-" : ck.rng_state) << '\n';
  header << "tensors " << blocks.size() << '\n';
  for (const auto& b : blocks) {
    header << b.name << ' ' << b.shape.size();
    for (auto s : b.shape) header << ' ' << s;
    header << '\n';
  }
  header << "end_header\n";

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError("cannot write checkpoint " + path.string());
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& b : blocks) write_doubles(out, b.data);
    if (!out) throw IngestionError("failed while writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint " + path.string());
  if (expect_line(in, "magic") != kMagic) throw IngestionError(path.string() + " is not an mlrf checkpoint");
  Checkpoint ck;
  {
    std::istringstream line(expect_line(in, "format_version"));
    field<std::string>(line, "format_version");
    ck.format_version = field<int>(line, "format_version");
    if (ck.format_version != kCheckpointFormatVersion) {
      throw IngestionError("unsupported checkpoint format version " + std::to_string(ck.format_version));
    }
  }
  if (expect_line(in, "byte_order") != "byte_order little-endian") throw IngestionError("unknown checkpoint byte order");
  expect_line(in, "reserved_ids");
  {
    std::istringstream line(expect_line(in, "config"));
    field<std::string>(line, "config");
    const auto n = field<std::size_t>(line, "config");
    std::string text;
    for (std::size_t i = 0; i < n; ++i) text += expect_line(in, "config") + '\n';
    ck.config = parse_run_config(text);
  }
  ck.src_vocab = Vocabulary::from_tokens(read_tokens(in, "src_vocab"));
  ck.tgt_vocab = Vocabulary::from_tokens(read_tokens(in, "tgt_vocab"));
  {
    std::istringstream line(expect_line(in, "progress"));
    field<std::string>(line, "progress");
    ck.progress.global_step = field<long>(line, "progress");
    ck.progress.phase = field<int>(line, "progress");
    ck.progress.epoch = field<int>(line, "progress");
    ck.progress.batch_index = field<std::size_t>(line, "progress");
    ck.progress.finished = field<int>(line, "progress") != 0;
  }
  bool has_optimizer = false;
  OptimizerState opt;
  {
    std::istringstream line(expect_line(in, "optimizer"));
    field<std::string>(line, "optimizer");
    has_optimizer = field<int>(line, "optimizer") != 0;
    opt.step = field<long>(line, "optimizer");
    opt.phase = field<std::string>(line, "optimizer") == "restarted" ? OptimizerPhase::restarted
                                                                      : OptimizerPhase::warmup_schedule;
  }
  {
    const std::string line = expect_line(in, "rng");
    if (!line.starts_with("rng ")) throw IngestionError("expected rng line in checkpoint");
    ck.rng_state = line.substr(4);
    if (ck.rng_state == "-") ck.rng_state.clear();
  }
  std::vector<std::pair<std::string, Shape>> directory;
  {
    std::istringstream line(expect_line(in, "tensors"));
    field<std::string>(line, "tensors");
    const auto n = field<std::size_t>(line, "tensors");
    for (std::size_t i = 0; i < n; ++i) {
      std::istringstream entry(expect_line(in, "tensor directory"));
      const auto name = field<std::string>(entry, "tensor name");
      const auto rank = field<std::size_t>(entry, "tensor rank");
      Shape shape(rank);
      for (auto& s : shape) s = field<std::size_t>(entry, "tensor dims");
      directory.emplace_back(name, std::move(shape));
    }
  }
  if (expect_line(in, "end_header") != "end_header") throw IngestionError("checkpoint header is not terminated");

  for (const auto& [name, shape] : directory) {
    std::vector<double> values(shape_numel(shape));
    read_doubles(in, values);
    if (name.starts_with("adam.m/")) {
      opt.first_moment.emplace(name.substr(7), std::move(values));
    } else if (name.starts_with("adam.v/")) {
      opt.second_moment.emplace(name.substr(7), std::move(values));
    } else {
      ck.params.add(name, Tensor(shape, std::move(values), true));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IngestionError("trailing bytes after checkpoint tensors");
  if (has_optimizer) ck.optimizer = std::move(opt);
  return ck;
}

Seq2SeqModel model_from_checkpoint(const Checkpoint& checkpoint) {
  return Seq2SeqModel(checkpoint.config.model, checkpoint.config.fusion, checkpoint.params.clone());
}

void load_parameters_into(const Checkpoint& checkpoint, Seq2SeqModel& model) {
  auto& params = model.params();
  if (checkpoint.params.size() != params.size()) {
    throw ConfigError("checkpoint has " + std::to_string(checkpoint.params.size()) + " tensors but the model has " +
                      std::to_string(params.size()));
  }
  for (const auto& [name, t] : checkpoint.params) {
    if (!params.contains(name)) throw ConfigError("checkpoint tensor " + name + " is not part of the model");
    if (params.get(name).shape() != t.shape()) {
      throw ConfigError("checkpoint tensor " + name + " has shape " + shape_to_string(t.shape()) +
                        " but the model expects " + shape_to_string(params.get(name).shape()));
    }
  }
  for (const auto& [name, t] : checkpoint.params) {
    auto dst = params.get(name).values();
    std::copy(t.values().begin(), t.values().end(), dst.begin());
  }
}

}  // namespace mlrf
