#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "json.hpp"

#include "dprobe/error.hpp"
#include "dprobe/weights_io.hpp"

namespace dprobe {

// SHA-1 of "blob <size>\0<content>", the id git gives the same file.
inline std::string git_blob_sha1(const std::vector<std::uint8_t>& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::runtime_error("EVP_MD_CTX_new failed");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("SHA-1 digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

// {path: hash} for a file, or for every regular file under a directory (sorted).
inline nlohmann::json hash_inputs(const std::filesystem::path& p) {
  nlohmann::json out = nlohmann::json::object();
  if (std::filesystem::is_regular_file(p)) {
    out[p.generic_string()] = git_blob_sha1(detail::read_file_bytes(p));
  } else if (std::filesystem::is_directory(p)) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(p))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out[f.generic_string()] = git_blob_sha1(detail::read_file_bytes(f));
  } else {
    throw LoadError(LoadErrorKind::missing_file, p.string());
  }
  return out;
}

// What a run needs to be repeated: the subcommand, the complete option set in config
// file syntax, and content hashes of everything it read.
struct Manifest {
  std::string command;
  std::string config;  // key=value lines
  nlohmann::json inputs = nlohmann::json::object();
  nlohmann::json outputs = nlohmann::json::object();
};

inline void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  const nlohmann::json j{{"tool", "dprobe"},
                         {"format", 1},
                         {"command", m.command},
                         {"config", m.config},
                         {"inputs", m.inputs},
                         {"outputs", m.outputs}};
  const std::string text = j.dump(2) + "\n";
  detail::write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
    if (j.value("tool", "") != "dprobe") throw LoadError(LoadErrorKind::bad_magic, path.string() + ": not a manifest");
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config").get<std::string>();
    m.inputs = j.value("inputs", nlohmann::json::object());
    m.outputs = j.value("outputs", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadErrorKind::corrupt, path.string() + ": " + e.what());
  }
  return m;
}

}  // namespace dprobe
