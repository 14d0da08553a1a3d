#include "beamlearn/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "BTF1 IO assumes a little-endian host");

namespace beamlearn::io {

namespace {

constexpr char kMagic[4] = {'B', 'T', 'F', '1'};

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <class T>
T take(const std::vector<std::uint8_t>& in, std::size_t& pos, const std::string& what) {
  if (in.size() < pos + sizeof(T)) throw FormatError(what + ": truncated header");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f), {});
}

void dump(const std::filesystem::path& path, const std::uint8_t* data, std::size_t n) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
  f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!f) throw std::runtime_error(path.string() + ": write failed");
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::uint32_t crc32(const std::uint8_t* data, std::size_t n) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = ::crc32(c, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dtype()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put<std::uint64_t>(out, d);
  const std::uint8_t* p;
  std::size_t n;
  if (t.is_complex()) {
    p = reinterpret_cast<const std::uint8_t*>(t.complex_data().data());
    n = t.size() * sizeof(cplx);
  } else {
    p = reinterpret_cast<const std::uint8_t*>(t.real_data().data());
    n = t.size() * sizeof(double);
  }
  out.insert(out.end(), p, p + n);
  put<std::uint32_t>(out, crc32(out.data(), out.size()));
  return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& in, const std::string& what) {
  if (in.size() < 4 || std::memcmp(in.data(), kMagic, 4) != 0) throw FormatError(what + ": not a BTF1 file");
  std::size_t pos = 4;
  const auto code = take<std::uint32_t>(in, pos, what);
  if (code != 1 && code != 2) throw FormatError(what + ": unknown dtype code " + std::to_string(code));
  const auto ndim = take<std::uint32_t>(in, pos, what);
  if (ndim > 16) throw FormatError(what + ": implausible rank " + std::to_string(ndim));
  Shape shape(ndim);
  std::size_t count = 1;
  for (auto& d : shape) {
    d = static_cast<std::size_t>(take<std::uint64_t>(in, pos, what));
    if (d != 0 && count > (std::size_t{1} << 40) / d) throw FormatError(what + ": implausible dimensions");
    count *= d;
  }
  const DType dtype = static_cast<DType>(code);
  const std::size_t payload = count * (dtype == DType::complex128 ? sizeof(cplx) : sizeof(double));
  if (in.size() != pos + payload + 4)
    throw FormatError(what + ": payload length " + std::to_string(in.size() - std::min(in.size(), pos + 4)) +
                      " does not match dimensions " + to_string(shape));
  std::uint32_t stored;
  std::memcpy(&stored, in.data() + pos + payload, 4);
  if (stored != crc32(in.data(), pos + payload)) throw FormatError(what + ": CRC mismatch");
  Tensor t(dtype, shape);
  if (dtype == DType::complex128)
    std::memcpy(t.complex_data().data(), in.data() + pos, payload);
  else
    std::memcpy(t.real_data().data(), in.data() + pos, payload);
  return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  auto bytes = encode_tensor(t);
  dump(path, bytes.data(), bytes.size());
}

Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(slurp(path), path.string()); }

void write_pgm(const std::filesystem::path& path, const Tensor& mask) {
  require_dtype(mask, DType::real64, "write_pgm mask");
  require_rank(mask, 2, "write_pgm mask");
  const std::size_t T = mask.dim(0), F = mask.dim(1);
  std::string header = "P5\n" + std::to_string(T) + " " + std::to_string(F) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  auto m = mask.real_data();
  for (std::size_t r = 0; r < F; ++r) {
    const std::size_t f = F - 1 - r;
    for (std::size_t t = 0; t < T; ++t) {
      const double v = std::clamp(m[t * F + f], 0.0, 1.0);
      out.push_back(static_cast<std::uint8_t>(std::lround(255.0 * v)));
    }
  }
  dump(path, out.data(), out.size());
}

Image read_pgm(const std::filesystem::path& path) {
  auto in = slurp(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < in.size()) {
      if (in[pos] == '#') {
        while (pos < in.size() && in[pos] != '\n') ++pos;
      } else if (std::isspace(in[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string s;
    while (pos < in.size() && !std::isspace(in[pos])) s += static_cast<char>(in[pos++]);
    return s;
  };
  if (token() != "P5") throw FormatError(path.string() + ": not a binary PGM");
  Image img;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw FormatError(path.string() + ": only 8-bit PGM is supported");
  } catch (const std::logic_error&) {
    throw FormatError(path.string() + ": malformed PGM header");
  }
  ++pos;
  if (in.size() - pos != img.width * img.height) throw FormatError(path.string() + ": truncated PGM payload");
  img.pixels.assign(in.begin() + static_cast<std::ptrdiff_t>(pos), in.end());
  return img;
}

Config Config::parse(const std::string& text, const std::string& origin) {
  Config c;
  c.origin_ = origin;
  std::istringstream is(text);
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(n) + ": expected key = value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(n) + ": empty key");
    c.values_[key] = trim(line.substr(eq + 1));
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(path.string() + ": cannot open config");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path.string());
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
  read_[key] = true;
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get(const std::string& key, double fallback) const {
  read_[key] = true;
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": " + key + " expects a number, got '" + it->second + "'");
  }
}

long long Config::get(const std::string& key, long long fallback) const {
  read_[key] = true;
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  long long v = 0;
  const auto& s = it->second;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError(origin_ + ": " + key + " expects an integer, got '" + s + "'");
  return v;
}

int Config::get(const std::string& key, int fallback) const {
  return static_cast<int>(get(key, static_cast<long long>(fallback)));
}

bool Config::get(const std::string& key, bool fallback) const {
  read_[key] = true;
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const auto& s = it->second;
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(origin_ + ": " + key + " expects a boolean, got '" + s + "'");
}

std::vector<std::string> Config::unused() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_)
    if (!read_.count(k)) out.push_back(k);
  return out;
}

}  // namespace beamlearn::io
