#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vqss::core {

struct WavData {
  std::vector<double> samples;  // mono, multi-channel inputs downmixed by channel mean
  int sample_rate = 0;
  int source_channels = 1;
};

// Reads a RIFF/WAVE file. Accepts 16-bit PCM and 32-bit float payloads;
// anything else throws std::runtime_error with the offending format.
WavData read_wav(const std::string& path);

// 16-bit PCM writer; samples are clamped to [-1, 1) and rounded.
void write_wav_pcm16(const std::string& path, const std::vector<double>& samples, int sample_rate);

// 32-bit float writer (IEEE float format tag 3).
void write_wav_float32(const std::string& path, const std::vector<double>& samples, int sample_rate);

}  // namespace vqss::core
