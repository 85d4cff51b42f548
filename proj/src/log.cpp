#include "deta/log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace deta::log {

Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("DETA_LOG");
    const std::string v = env ? env : "";
    if (v == "error") return Level::error;
    if (v == "info") return Level::info;
    if (v == "debug") return Level::debug;
    return Level::warn;
  }();
  return level;
}

void write(Level level, std::string_view message) {
  if (level > threshold()) return;
  static std::mutex mu;
  static constexpr const char* names[] = {"error", "warn", "info", "debug"};
  std::lock_guard lock(mu);
  std::cerr << "[deta " << names[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace deta::log
