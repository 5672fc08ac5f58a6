#include "mlrf/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "mlrf/errors.hpp"

namespace mlrf {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int parse_int(const std::string& v) {
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected an integer, got '" + v + "'");
  return out;
}

long parse_long(const std::string& v) {
  long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected an unsigned integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw ConfigError("");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected true|false, got '" + v + "'");
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Field>
Key int_key(std::string name, Field field) {
  return {std::move(name), [field](RunConfig& c, const std::string& v) { field(c) = parse_int(v); },
          [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
}

template <typename Field>
Key long_key(std::string name, Field field) {
  return {std::move(name), [field](RunConfig& c, const std::string& v) { field(c) = parse_long(v); },
          [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
}

template <typename Field>
Key u64_key(std::string name, Field field) {
  return {std::move(name), [field](RunConfig& c, const std::string& v) { field(c) = parse_u64(v); },
          [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
}

template <typename Field>
Key double_key(std::string name, Field field) {
  return {std::move(name), [field](RunConfig& c, const std::string& v) { field(c) = parse_double(v); },
          [field](const RunConfig& c) { return format_double(field(const_cast<RunConfig&>(c))); }};
}

template <typename Field>
Key bool_key(std::string name, Field field) {
  return {std::move(name), [field](RunConfig& c, const std::string& v) { field(c) = parse_bool(v); },
          [field](const RunConfig& c) { return std::string(field(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Field>
Key string_key(std::string name, Field field) {
  return {std::move(name), [field](RunConfig& c, const std::string& v) { field(c) = v; },
          [field](const RunConfig& c) { return field(const_cast<RunConfig&>(c)); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      int_key("schema_version", [](RunConfig& c) -> int& { return c.schema_version; }),
      int_key("model.layers", [](RunConfig& c) -> int& { return c.model.layers; }),
      int_key("model.d", [](RunConfig& c) -> int& { return c.model.d; }),
      int_key("model.d_ff", [](RunConfig& c) -> int& { return c.model.d_ff; }),
      int_key("model.heads", [](RunConfig& c) -> int& { return c.model.heads; }),
      int_key("model.src_vocab", [](RunConfig& c) -> int& { return c.model.src_vocab; }),
      int_key("model.tgt_vocab", [](RunConfig& c) -> int& { return c.model.tgt_vocab; }),
      int_key("model.max_len", [](RunConfig& c) -> int& { return c.model.max_len; }),
      double_key("model.dropout", [](RunConfig& c) -> double& { return c.model.dropout; }),
      Key{"fusion.side", [](RunConfig& c, const std::string& v) { c.fusion.side = parse_fusion_side(v); },
          [](const RunConfig& c) { return to_string(c.fusion.side); }},
      Key{"fusion.enc_kind", [](RunConfig& c, const std::string& v) { c.fusion.enc_kind = parse_fusion_kind(v); },
          [](const RunConfig& c) { return to_string(c.fusion.enc_kind); }},
      Key{"fusion.dec_kind", [](RunConfig& c, const std::string& v) { c.fusion.dec_kind = parse_fusion_kind(v); },
          [](const RunConfig& c) { return to_string(c.fusion.dec_kind); }},
      int_key("fusion.n_hop", [](RunConfig& c) -> int& { return c.fusion.n_hop; }),
      int_key("fusion.d_a", [](RunConfig& c) -> int& { return c.fusion.d_a; }),
      int_key("fusion.d_f", [](RunConfig& c) -> int& { return c.fusion.d_f; }),
      bool_key("fusion.include_embedding", [](RunConfig& c) -> bool& { return c.fusion.include_embedding; }),
      bool_key("fusion.share_w1", [](RunConfig& c) -> bool& { return c.fusion.share_w1; }),
      bool_key("fusion.share_layer_embedding", [](RunConfig& c) -> bool& { return c.fusion.share_layer_embedding; }),
      int_key("train.warmup_steps", [](RunConfig& c) -> int& { return c.train.warmup_steps; }),
      double_key("train.beta1", [](RunConfig& c) -> double& { return c.train.beta1; }),
      double_key("train.beta2", [](RunConfig& c) -> double& { return c.train.beta2; }),
      double_key("train.epsilon", [](RunConfig& c) -> double& { return c.train.epsilon; }),
      int_key("train.epochs_phase1", [](RunConfig& c) -> int& { return c.train.epochs_phase1; }),
      int_key("train.epochs_phase2", [](RunConfig& c) -> int& { return c.train.epochs_phase2; }),
      int_key("train.batch_phase1", [](RunConfig& c) -> int& { return c.train.batch_phase1; }),
      int_key("train.batch_phase2", [](RunConfig& c) -> int& { return c.train.batch_phase2; }),
      double_key("train.restart_lr", [](RunConfig& c) -> double& { return c.train.restart_lr; }),
      u64_key("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; }),
      double_key("train.clip_norm", [](RunConfig& c) -> double& { return c.train.clip_norm; }),
      long_key("train.max_steps", [](RunConfig& c) -> long& { return c.train.max_steps; }),
      int_key("train.log_every", [](RunConfig& c) -> int& { return c.train.log_every; }),
      int_key("train.checkpoint_every", [](RunConfig& c) -> int& { return c.train.checkpoint_every; }),
      string_key("data.source", [](RunConfig& c) -> std::string& { return c.data.source; }),
      Key{"data.task", [](RunConfig& c, const std::string& v) { c.data.task = parse_synthetic_task(v); },
          [](const RunConfig& c) { return to_string(c.data.task); }},
      int_key("data.alphabet", [](RunConfig& c) -> int& { return c.data.alphabet; }),
      int_key("data.min_len", [](RunConfig& c) -> int& { return c.data.min_len; }),
      int_key("data.max_len", [](RunConfig& c) -> int& { return c.data.max_len; }),
      int_key("data.train_samples", [](RunConfig& c) -> int& { return c.data.train_samples; }),
      int_key("data.valid_samples", [](RunConfig& c) -> int& { return c.data.valid_samples; }),
      u64_key("data.seed", [](RunConfig& c) -> std::uint64_t& { return c.data.seed; }),
      string_key("data.train_src", [](RunConfig& c) -> std::string& { return c.data.train_src; }),
      string_key("data.train_tgt", [](RunConfig& c) -> std::string& { return c.data.train_tgt; }),
      string_key("data.valid_src", [](RunConfig& c) -> std::string& { return c.data.valid_src; }),
      string_key("data.valid_tgt", [](RunConfig& c) -> std::string& { return c.data.valid_tgt; }),
      int_key("data.filter_len", [](RunConfig& c) -> int& { return c.data.filter_len; }),
      int_key("data.max_vocab", [](RunConfig& c) -> int& { return c.data.max_vocab; }),
      int_key("decode.beam", [](RunConfig& c) -> int& { return c.decode.width; }),
      double_key("decode.alpha", [](RunConfig& c) -> double& { return c.decode.length_alpha; }),
      int_key("decode.max_len", [](RunConfig& c) -> int& { return c.decode.max_len; }),
  };
  return table;
}

void check_semantics(const RunConfig& c, std::vector<std::string>& problems) {
  auto check = [&](const char* key, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      problems.push_back(std::string(key) + ": " + e.what());
    }
  };
  if (c.schema_version != kConfigSchemaVersion) {
    problems.push_back("schema_version: unsupported version " + std::to_string(c.schema_version));
  }
  check("model.*", [&] {
    ModelConfig m = c.model;
    if (m.src_vocab == 0) m.src_vocab = 1;  // derived from data later
    if (m.tgt_vocab == 0) m.tgt_vocab = 1;
    m.validate();
  });
  check("fusion.*", [&] { c.fusion.validate(); });
  check("train.*", [&] {
    TrainConfig t = c.train;
    t.d = c.model.d > 0 ? c.model.d : 1;
    t.validate();
  });
  check("decode.*", [&] { c.decode.validate(); });
  if (c.data.source != "synthetic" && c.data.source != "files") {
    problems.push_back("data.source: expected synthetic|files, got '" + c.data.source + "'");
  }
  if (c.data.source == "files" && (c.data.train_src.empty() || c.data.train_tgt.empty())) {
    problems.push_back("data.train_src/data.train_tgt: required when data.source = files");
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig config;
  std::vector<std::string> problems;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back("line " + std::to_string(line_no) + ": expected 'key = value'");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = keys();
    auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return k.name == key; });
    if (it == table.end()) {
      problems.push_back(key + ": unknown key");
      continue;
    }
    if (!seen.insert(key).second) {
      problems.push_back(key + ": given more than once");
      continue;
    }
    try {
      it->set(config, value);
    } catch (const std::exception& e) {
      problems.push_back(key + ": " + e.what());
    }
  }
  config.train.dropout = config.model.dropout;
  config.train.d = config.model.d;
  if (problems.empty()) check_semantics(config, problems);
  if (!problems.empty()) {
    std::ostringstream msg;
    msg << "invalid config (" << problems.size() << " problem" << (problems.size() == 1 ? "" : "s") << "):";
    for (const auto& p : problems) msg << "\n  " << p;
    throw ConfigError(msg.str());
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

std::string format_run_config(const RunConfig& config) {
  std::ostringstream out;
  for (const auto& key : keys()) out << key.name << " = " << key.get(config) << '\n';
  return out.str();
}

}  // namespace mlrf
