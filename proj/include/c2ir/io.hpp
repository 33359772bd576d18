#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2ir/errors.hpp"
#include "c2ir/tensor.hpp"

namespace c2ir {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---- FNV-1a 64-bit, used for artifact fingerprints and config hashes ----

class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void update(std::span<const double> v) { update(v.data(), v.size() * sizeof(double)); }
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::uint64_t value() const { return h_; }

  std::string hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    std::uint64_t h = h_;
    for (int i = 15; i >= 0; --i) {
      out[static_cast<std::size_t>(i)] = digits[h & 0xf];
      h >>= 4;
    }
    return out;
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string hash_string(const std::string& s) {
  Fnv1a h;
  h.update(s);
  return h.hex();
}

// ---- raw little-endian blobs ----

inline void write_doubles(const fs::path& path, std::span<const double> v) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!f) throw ConfigError("write failed: " + path.string());
}

inline Vec read_doubles(const fs::path& path, std::size_t expected) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingArtifactError("missing blob: " + path.string());
  Vec v(expected);
  f.read(reinterpret_cast<char*>(v.data()),
         static_cast<std::streamsize>(expected * sizeof(double)));
  if (f.gcount() != static_cast<std::streamsize>(expected * sizeof(double)))
    throw MissingArtifactError("truncated blob: " + path.string());
  return v;
}

inline void write_i32(const fs::path& path, std::span<const int> v) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot open for writing: " + path.string());
  for (int x : v) {
    auto u = static_cast<std::int32_t>(x);
    f.write(reinterpret_cast<const char*>(&u), sizeof(u));
  }
  if (!f) throw ConfigError("write failed: " + path.string());
}

inline std::vector<int> read_i32(const fs::path& path, std::size_t expected) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingArtifactError("missing blob: " + path.string());
  std::vector<int> v(expected);
  for (auto& x : v) {
    std::int32_t u = 0;
    f.read(reinterpret_cast<char*>(&u), sizeof(u));
    x = u;
  }
  if (!f) throw MissingArtifactError("truncated blob: " + path.string());
  return v;
}

// ---- JSON manifests (two-space dump; object keys are sorted by nlohmann) ----

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("cannot open for writing: " + path.string());
  f << j.dump(2) << '\n';
}

inline json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifactError("missing manifest: " + path.string());
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace c2ir
