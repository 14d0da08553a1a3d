#include "beamlearn/audio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace beamlearn {

namespace {

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <class T>
T read_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <class T>
void put_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

[[noreturn]] void bad(const std::filesystem::path& path, const std::string& why) {
  throw std::runtime_error(path.string() + ": " + why);
}

}  // namespace

void AudioClip::validate() const {
  if (sample_rate <= 0) throw std::invalid_argument("audio: sample rate must be positive");
  for (const auto& c : channels)
    if (c.size() != length()) throw std::invalid_argument("audio: channels differ in length");
}

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) bad(path, "cannot open");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 12 || data.compare(0, 4, "RIFF") != 0 || data.compare(8, 4, "WAVE") != 0)
    bad(path, "not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const char* payload = nullptr;
  std::size_t payload_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= data.size()) {
    const std::string id = data.substr(pos, 4);
    std::size_t size = read_le<std::uint32_t>(data.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > data.size()) {
      if (id != "data") bad(path, "truncated chunk '" + id + "'");
      size = data.size() - body;  // tolerate streamed files with a bogus data size
    }
    if (id == "fmt ") {
      if (size < 16) bad(path, "short fmt chunk");
      format = read_le<std::uint16_t>(data.data() + body);
      channels = read_le<std::uint16_t>(data.data() + body + 2);
      rate = read_le<std::uint32_t>(data.data() + body + 4);
      bits = read_le<std::uint16_t>(data.data() + body + 14);
      if (format == kFormatExtensible) {
        if (size < 40) bad(path, "short extensible fmt chunk");
        format = read_le<std::uint16_t>(data.data() + body + 24);
      }
    } else if (id == "data") {
      payload = data.data() + body;
      payload_size = size;
    }
    pos = body + size + (size & 1);
  }
  if (channels == 0 || rate == 0) bad(path, "missing fmt chunk");
  if (!payload) bad(path, "missing data chunk");
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32)
    bad(path, "unsupported sample format (code " + std::to_string(format) + ", " + std::to_string(bits) + " bits)");

  const std::size_t bytes = bits / 8;
  const std::size_t frames = payload_size / (bytes * channels);
  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.channels.assign(channels, std::vector<double>(frames));
  for (std::size_t n = 0; n < frames; ++n)
    for (std::size_t c = 0; c < channels; ++c) {
      const char* p = payload + (n * channels + c) * bytes;
      clip.channels[c][n] = pcm16 ? read_le<std::int16_t>(p) / 32768.0 : static_cast<double>(read_le<float>(p));
    }
  return clip;
}

AudioClip read_wav_set(std::span<const std::filesystem::path> paths) {
  if (paths.empty()) throw std::invalid_argument("read_wav_set: no files");
  AudioClip out;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    AudioClip c = read_wav(paths[i]);
    if (i == 0) out.sample_rate = c.sample_rate;
    if (c.sample_rate != out.sample_rate) bad(paths[i], "sample rate differs from " + paths[0].string());
    if (i > 0 && c.length() != out.length()) bad(paths[i], "length differs from " + paths[0].string());
    for (auto& ch : c.channels) out.channels.push_back(std::move(ch));
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip, SampleFormat format) {
  clip.validate();
  if (clip.channel_count() == 0) throw std::invalid_argument("write_wav: clip has no channels");
  const std::uint16_t channels = static_cast<std::uint16_t>(clip.channel_count());
  const std::uint16_t bits = format == SampleFormat::pcm16 ? 16 : 32;
  const std::uint32_t block = channels * bits / 8;
  const std::uint32_t data_size = static_cast<std::uint32_t>(clip.length() * block);

  std::string out;
  out.reserve(44 + data_size);
  out += "RIFF";
  put_le<std::uint32_t>(out, 36 + data_size);
  out += "WAVEfmt ";
  put_le<std::uint32_t>(out, 16);
  put_le<std::uint16_t>(out, format == SampleFormat::pcm16 ? kFormatPcm : kFormatFloat);
  put_le<std::uint16_t>(out, channels);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate) * block);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(block));
  put_le<std::uint16_t>(out, bits);
  out += "data";
  put_le<std::uint32_t>(out, data_size);
  for (std::size_t n = 0; n < clip.length(); ++n)
    for (std::size_t c = 0; c < channels; ++c) {
      const double v = clip.channels[c][n];
      if (format == SampleFormat::pcm16) {
        const double s = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
        put_le<std::int16_t>(out, static_cast<std::int16_t>(s));
      } else {
        put_le<float>(out, static_cast<float>(v));
      }
    }

  std::ofstream f(path, std::ios::binary);
  if (!f) bad(path, "cannot open for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) bad(path, "write failed");
}

}  // namespace beamlearn
