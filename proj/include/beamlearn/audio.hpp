#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace beamlearn {

/// Multichannel audio; every channel has the same length.
struct AudioClip {
  int sample_rate = 16000;
  std::vector<std::vector<double>> channels;

  std::size_t channel_count() const { return channels.size(); }
  std::size_t length() const { return channels.empty() ? 0 : channels.front().size(); }
  /// Throws std::invalid_argument on ragged channels or a bad sample rate.
  void validate() const;
};

enum class SampleFormat { pcm16, float32 };

/// RIFF WAV reader: 16-bit PCM, 32-bit float, WAVE_FORMAT_EXTENSIBLE of either.
AudioClip read_wav(const std::filesystem::path& path);
/// Reads one mono (or multichannel) file per entry and stacks all channels.
AudioClip read_wav_set(std::span<const std::filesystem::path> paths);
void write_wav(const std::filesystem::path& path, const AudioClip& clip, SampleFormat format = SampleFormat::float32);

}  // namespace beamlearn
