#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace cavsim {

using Json = nlohmann::ordered_json;

/// One pass/fail item. Informational checks are reported but never fail a run.
struct Check {
  std::string id;
  std::string description;
  bool passed = false;
  bool informational = false;
  std::string detail;
};

struct OutputFile {
  std::string name;  // relative to the output directory
  std::string content;
};

struct RunResult {
  std::string experiment;
  Json config;  // fully resolved
  std::uint64_t seed = 0;
  double wall_seconds = 0;
  std::vector<OutputFile> files;
  std::vector<Check> checks;
  Json summary = Json::object();

  /// True when every non-informational check passed.
  bool passed() const;
};

const std::vector<std::string>& experiment_names();

/// Built-in defaults; configs/default.json is the annotated copy.
Json default_config();

/// Reads a commented JSON config or a run manifest (its resolved config is
/// used). Throws Io or Schema.
Json load_config_file(const std::string& path);

/// Merges a partial config onto the defaults and applies the named
/// profile's overrides. Unknown keys throw Schema with the key path.
Json resolve_config(const Json& user, const std::string& profile = "");

struct ConfigReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

/// Schema and physical-range validation. Never throws; every problem is a
/// violation naming its field path.
ConfigReport validate_config(const Json& user);
ConfigReport validate_config_file(const std::string& path);

/// Runs a recipe on a resolved config. With check set, the acceptance
/// checks for that recipe are evaluated and attached.
RunResult run_experiment(const std::string& name, const Json& config, bool check);

/// Manifest JSON: resolved config, versions, seed, wall clock and per-file
/// SHA-256 checksums.
Json run_manifest(const RunResult& result);

/// Writes every output file and manifest.json into dir (created if needed).
void write_run(const RunResult& result, const std::string& dir);

}  // namespace cavsim
