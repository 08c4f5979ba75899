#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "dgen/text.hpp"

namespace dgen {

/// Everything needed to rerun a CLI invocation. Written before the work
/// starts with input digests, and rewritten at the end with output digests.
struct RunManifest {
  std::string subcommand;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  std::map<std::string, std::string> digests;  // path -> FNV-1a 64 hex
  bool complete = false;
};

inline RunManifest make_manifest(std::string subcommand, std::uint64_t seed, nlohmann::json config,
                                 std::map<std::string, std::string> inputs,
                                 std::map<std::string, std::string> outputs) {
  RunManifest m;
  m.subcommand = std::move(subcommand);
  m.seed = seed;
  m.config = std::move(config);
  m.inputs = std::move(inputs);
  m.outputs = std::move(outputs);
  return m;
}

inline nlohmann::json manifest_to_json(const RunManifest& m) {
  return {{"format", "dgen-manifest"}, {"version", 1},           {"subcommand", m.subcommand},
          {"seed", m.seed},            {"config", m.config},     {"inputs", m.inputs},
          {"outputs", m.outputs},      {"digests", m.digests},   {"complete", m.complete}};
}

/// Records digests of every existing regular file named among the inputs
/// (complete = false) or the outputs too (complete = true).
inline void refresh_digests(RunManifest& m, bool include_outputs) {
  auto add = [&](const std::map<std::string, std::string>& paths) {
    for (const auto& [name, path] : paths) {
      std::error_code ec;
      if (!path.empty() && std::filesystem::is_regular_file(path, ec)) m.digests[path] = file_digest(path);
    }
  };
  add(m.inputs);
  if (include_outputs) add(m.outputs);
}

inline void write_manifest(const std::string& path, const RunManifest& m) {
  write_file(path, manifest_to_json(m).dump(2) + '\n');
}

}  // namespace dgen
