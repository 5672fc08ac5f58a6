#include "mlrf/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <string>

namespace mlrf::log {

namespace {

Level parse_env() {
  const char* raw = std::getenv("MLRF_LOG_LEVEL");
  if (!raw) return Level::warn;
  const std::string v(raw);
  if (v == "error") return Level::error;
  if (v == "info") return Level::info;
  if (v == "debug") return Level::debug;
  return Level::warn;
}

std::atomic<int>& current() {
  static std::atomic<int> level{static_cast<int>(parse_env())};
  return level;
}

constexpr const char* kNames[] = {"error", "warn", "info", "debug"};

}  // namespace

Level threshold() { return static_cast<Level>(current().load()); }
void set_threshold(Level level) { current().store(static_cast<int>(level)); }
bool enabled(Level level) { return static_cast<int>(level) <= current().load(); }

void write(Level level, std::string_view message) {
  if (!enabled(level)) return;
  std::cerr << "[mlrf " << kNames[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace mlrf::log
