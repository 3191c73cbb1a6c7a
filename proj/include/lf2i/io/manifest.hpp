#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "lf2i/io/csv.hpp"

namespace lf2i::io {

inline std::string to_hex(const unsigned char* data, std::size_t n) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(2 * n, '0');
  for (std::size_t i = 0; i < n; ++i) {
    out[2 * i] = kHex[data[i] >> 4];
    out[2 * i + 1] = kHex[data[i] & 0xF];
  }
  return out;
}

inline std::string sha256(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1)
    throw std::runtime_error("sha256: digest failed");
  return to_hex(md.data(), len);
}

inline std::string sha256_file(const std::filesystem::path& path) { return sha256(read_text(path.string())); }

struct StageRecord {
  std::string name;
  std::map<std::string, std::string> outputs;  // relative path -> sha256
};

/// Run manifest: config hash, seed and per-stage output hashes. Stages are
/// appended in completion order.
class Manifest {
 public:
  Manifest() = default;
  Manifest(std::string config_hash, std::uint64_t seed) : config_hash_(std::move(config_hash)), seed_(seed) {}

  const std::string& config_hash() const noexcept { return config_hash_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<StageRecord>& stages() const noexcept { return stages_; }

  /// Hash the listed files under `root` and record the stage, replacing any
  /// earlier record of the same name.
  void record(const std::filesystem::path& root, const std::string& stage, const std::vector<std::string>& files) {
    StageRecord rec{stage, {}};
    for (const auto& f : files) rec.outputs[f] = sha256_file(root / f);
    std::erase_if(stages_, [&](const StageRecord& s) { return s.name == stage; });
    stages_.push_back(std::move(rec));
  }

  /// A stage is complete when recorded and every output still hashes to the
  /// recorded value.
  bool complete(const std::filesystem::path& root, const std::string& stage) const {
    for (const auto& s : stages_) {
      if (s.name != stage) continue;
      for (const auto& [file, hash] : s.outputs) {
        if (!std::filesystem::exists(root / file)) return false;
        if (sha256_file(root / file) != hash) return false;
      }
      return true;
    }
    return false;
  }

  std::vector<std::string> missing_stages(const std::filesystem::path& root,
                                          const std::vector<std::string>& expected) const {
    std::vector<std::string> out;
    for (const auto& s : expected)
      if (!complete(root, s)) out.push_back(s);
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json st = nlohmann::json::array();
    for (const auto& s : stages_) st.push_back({{"name", s.name}, {"outputs", s.outputs}});
    return {{"config_sha256", config_hash_}, {"seed", seed_}, {"stages", st}};
  }

  static Manifest from_json(const nlohmann::json& j) {
    Manifest m(j.at("config_sha256").get<std::string>(), j.at("seed").get<std::uint64_t>());
    for (const auto& s : j.at("stages"))
      m.stages_.push_back({s.at("name").get<std::string>(), s.at("outputs").get<std::map<std::string, std::string>>()});
    return m;
  }

  void save(const std::filesystem::path& path) const {
    write_file(path.string(), [&](std::ostream& os) { os << to_json().dump(2) << '\n'; });
  }

  static Manifest load(const std::filesystem::path& path) {
    return from_json(nlohmann::json::parse(read_text(path.string())));
  }

 private:
  std::string config_hash_;
  std::uint64_t seed_ = 0;
  std::vector<StageRecord> stages_;
};

}  // namespace lf2i::io
