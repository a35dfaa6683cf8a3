#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace xsl::manifest {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kFileName = "manifest.json";

std::string sha256_hex(const std::string& bytes);
std::string digest_file(const std::filesystem::path& path);
// Digest of a directory: sorted relative paths with their file digests.
std::string digest_path(const std::filesystem::path& path);

struct Artifact {
  std::string path;
  std::string sha256;
};

struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  std::string config_hash;  // sha256 of the effective configuration text
  std::vector<Artifact> inputs;
  std::vector<Artifact> outputs;
  std::uint64_t seed = 0;
  std::string version = kVersion;
  std::string started;  // UTC, ISO 8601
  std::string finished;

  void add_input(const std::filesystem::path& p);
  // Every regular file under `dir` except the manifest itself; a plain file is listed alone.
  void add_outputs(const std::filesystem::path& dir);

  std::string to_json() const;
};

std::string utc_now();

// Writes `<dir>/manifest.json`.
void write_manifest(const RunManifest& manifest, const std::filesystem::path& dir);

}  // namespace xsl::manifest
