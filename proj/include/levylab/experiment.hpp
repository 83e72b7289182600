#pragma once

// Manifest-driven runs, bundles on disk, and bit-for-bit replay.
//
// A bundle directory holds manifest.json (the manifest plus the master seed),
// one CSV per table, summary.json with every verdict, and run_info.json with
// facts that may legitimately differ between replays (worker count).  Replay
// compares everything except run_info.json byte for byte.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace levylab {

struct Table {
  std::string name;  // file stem
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::string to_csv() const;
};

// %.17g, so tables round-trip doubles exactly.
std::string format_real(double v);

struct RunManifest {
  std::string kind;  // superposition | limit | filter_robustness | diagnostics
  nlohmann::json config;
  std::optional<std::uint64_t> seed;

  static RunManifest from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  // Every problem found, without running anything.
  std::vector<std::string> validation_errors() const;
  // Throws ConfigError listing all validation errors.
  void validate() const;
};

RunManifest load_manifest(const std::string& path);

struct Bundle {
  RunManifest manifest;
  std::uint64_t seed = 0;
  std::vector<Table> tables;
  nlohmann::json summary;
  bool pass = false;
};

Bundle run_manifest(const RunManifest& m, std::uint64_t seed, int workers);

void write_bundle(const Bundle& b, const std::string& dir, int workers);

struct ReplayReport {
  bool identical = true;
  bool pass = false;  // verdict of the re-run
  std::vector<std::string> diffs;
};

// Re-runs the bundle's manifest and seed with the given worker count.
ReplayReport replay_bundle(const std::string& dir, int workers);

}  // namespace levylab
