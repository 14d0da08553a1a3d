#pragma once

// File formats: BTF1 tensors, 8-bit PGM mask images, key=value config files.
//
// BTF1 layout (little endian):
//   "BTF1" | u32 dtype (1 real64, 2 complex128) | u32 ndim | u64 dims[ndim]
//   | float64 payload (complex as re, im pairs) | u32 CRC32 of everything before

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "beamlearn/tensor.hpp"

namespace beamlearn::io {

/// Malformed file content: bad magic, truncation, CRC mismatch, bad values.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes, const std::string& what = "tensor");

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

/// Binary PGM of a (T, F) mask with values round(255 * clamp(m, 0, 1)).
/// Columns are frames; the top row is the highest frequency.
void write_pgm(const std::filesystem::path& path, const Tensor& mask);

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};
Image read_pgm(const std::filesystem::path& path);

/// Flat key=value settings. '#' starts a comment; blank lines are skipped.
class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "config");
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::string get(const std::string& key, const std::string& fallback) const;
  double get(const std::string& key, double fallback) const;
  long long get(const std::string& key, long long fallback) const;
  int get(const std::string& key, int fallback) const;
  bool get(const std::string& key, bool fallback) const;

  /// Keys never read through get(); lets callers reject typos.
  std::vector<std::string> unused() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::string origin_;
  mutable std::map<std::string, bool> read_;
};

/// Raised by Config for unparsable lines or values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::uint32_t crc32(const std::uint8_t* data, std::size_t n);

}  // namespace beamlearn::io
