#include "manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include "ckd/util/error.hpp"

namespace ckd::cli {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

std::string git_blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) && EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("SHA-1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string git_blob_sha1_file(const std::filesystem::path& path) { return git_blob_sha1(read_file(path)); }

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RunManifest::write(const std::filesystem::path& out_dir) const {
  namespace fs = std::filesystem;
  using Json = nlohmann::ordered_json;
  Json j;
  j["command"] = command;
  j["flags"] = flags;
  j["config"] = {{"path", config_path.string()}, {"sha1", git_blob_sha1_file(config_path)}};
  j["resolved"] = resolved;
  Json in = Json::array();
  for (const auto& p : inputs) in.push_back({{"path", p.string()}, {"sha1", git_blob_sha1_file(p)}});
  j["inputs"] = in;
  j["started_at"] = started_at;
  j["finished_at"] = finished_at;

  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(out_dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Json outs = Json::array();
  for (const auto& p : files) {
    outs.push_back({{"path", fs::relative(p, out_dir).generic_string()}, {"sha1", git_blob_sha1_file(p)}});
  }
  j["outputs"] = outs;

  std::ofstream os(out_dir / "manifest.json", std::ios::binary);
  os << j.dump(2) << "\n";
  if (!os) throw Error("cannot write " + (out_dir / "manifest.json").string());
}

}  // namespace ckd::cli
