#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gs2d/errors.hpp"

namespace gs2d {

inline constexpr const char* kToolVersion = "1.0.0";

inline std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Reproducibility sidecar written next to every command output: resolved
/// configuration, seed, input hashes, and per-phase wall-clock timings.
struct RunManifest {
  nlohmann::json doc;

  explicit RunManifest(const std::string& command) {
    doc["tool"] = "gs2d";
    doc["version"] = kToolVersion;
    doc["command"] = command;
  }

  void set_input(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    nlohmann::json e;
    e["path"] = path;
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(fnv1a(bytes)));
    e["fnv1a64"] = hex;
    doc["inputs"].push_back(e);
  }

  void add_timing(const std::string& phase, double seconds) {
    doc["timings_seconds"][phase] = seconds;
  }

  void write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << doc.dump(2) << "\n";
  }
};

/// Accumulates wall-clock time into a manifest phase on destruction.
class PhaseTimer {
 public:
  PhaseTimer(RunManifest& m, std::string phase)
      : manifest_(m), phase_(std::move(phase)),
        start_(std::chrono::steady_clock::now()) {}
  ~PhaseTimer() {
    const auto end = std::chrono::steady_clock::now();
    manifest_.add_timing(
        phase_, std::chrono::duration<double>(end - start_).count());
  }

 private:
  RunManifest& manifest_;
  std::string phase_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace gs2d
