#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

namespace ckd::cli {

/// Git blob id: SHA-1 of "blob <size>\0" followed by the content.
std::string git_blob_sha1(const std::string& content);
std::string git_blob_sha1_file(const std::filesystem::path& path);

/// UTC, ISO 8601, second resolution.
std::string utc_now();

struct RunManifest {
  std::string command;
  nlohmann::ordered_json flags;
  std::filesystem::path config_path;
  nlohmann::ordered_json resolved;  // config after defaults are applied
  std::vector<std::filesystem::path> inputs;  // checkpoints and tables read by the run
  std::string started_at;
  std::string finished_at;

  /// Hashes the config, the inputs and every file under `out_dir`, then
  /// writes out_dir/manifest.json.
  void write(const std::filesystem::path& out_dir) const;
};

}  // namespace ckd::cli
