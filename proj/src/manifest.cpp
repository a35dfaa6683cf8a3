#include "xsl/manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <ctime>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "xsl/error.hpp"

namespace xsl::manifest {

namespace fs = std::filesystem;

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
      throw Error(ErrorCode::kIo, "sha256 init failed");
    }
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const char* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }

  std::string hex() {
    unsigned char out[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, out, &len);
    static const char* digits = "0123456789abcdef";
    std::string s;
    for (unsigned int i = 0; i < len; ++i) {
      s += digits[out[i] >> 4];
      s += digits[out[i] & 15];
    }
    return s;
  }

 private:
  EVP_MD_CTX* ctx_;
};

std::vector<fs::path> files_under(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string digest_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  Sha256 h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

std::string digest_path(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::kIo, "no such path " + path.string());
  if (!fs::is_directory(path)) return digest_file(path);
  std::string listing;
  for (const auto& f : files_under(path)) {
    listing += fs::relative(f, path).generic_string() + " " + digest_file(f) + "\n";
  }
  return sha256_hex(listing);
}

void RunManifest::add_input(const fs::path& p) { inputs.push_back({p.string(), digest_path(p)}); }

void RunManifest::add_outputs(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    outputs.push_back({dir.string(), digest_file(dir)});
    return;
  }
  for (const auto& f : files_under(dir)) {
    if (f.filename() == kFileName && f.parent_path() == dir) continue;
    outputs.push_back({fs::relative(f, dir).generic_string(), digest_file(f)});
  }
}

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["arguments"] = arguments;
  j["config_hash"] = config_hash;
  auto list = [](const std::vector<Artifact>& v) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (const auto& x : v) a.push_back({{"path", x.path}, {"sha256", x.sha256}});
    return a;
  };
  j["inputs"] = list(inputs);
  j["outputs"] = list(outputs);
  j["seed"] = seed;
  j["version"] = version;
  j["started"] = started;
  j["finished"] = finished;
  return j.dump(1) + "\n";
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const RunManifest& manifest, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / kFileName, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write manifest in " + dir.string());
  out << manifest.to_json();
}

}  // namespace xsl::manifest
