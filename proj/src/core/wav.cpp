#include "core/wav.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace vqss::core {

namespace {

uint32_t rd_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t rd_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void wr_u32(std::ofstream& f, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                  static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

void wr_u16(std::ofstream& f, uint16_t v) {
  uint8_t b[2] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8)};
  f.write(reinterpret_cast<const char*>(b), 2);
}

void write_header(std::ofstream& f, uint16_t format, uint16_t bits, int sample_rate,
                  uint32_t data_bytes) {
  const uint16_t channels = 1;
  const uint32_t byte_rate = static_cast<uint32_t>(sample_rate) * channels * bits / 8;
  f.write("RIFF", 4);
  wr_u32(f, 36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  wr_u32(f, 16);
  wr_u16(f, format);
  wr_u16(f, channels);
  wr_u32(f, static_cast<uint32_t>(sample_rate));
  wr_u32(f, byte_rate);
  wr_u16(f, static_cast<uint16_t>(channels * bits / 8));
  wr_u16(f, bits);
  f.write("data", 4);
  wr_u32(f, data_bytes);
}

}  // namespace

WavData read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open WAV file: " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("not a RIFF/WAVE file: " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  const uint8_t* data = nullptr;
  uint32_t data_len = 0;

  size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const char* id = reinterpret_cast<const char*>(buf.data() + pos);
    const uint32_t len = rd_u32(buf.data() + pos + 4);
    const uint8_t* body = buf.data() + pos + 8;
    if (pos + 8 + len > buf.size()) break;
    if (std::memcmp(id, "fmt ", 4) == 0 && len >= 16) {
      format = rd_u16(body);
      channels = rd_u16(body + 2);
      sample_rate = rd_u32(body + 4);
      bits = rd_u16(body + 14);
      if (format == 0xFFFE && len >= 40) format = rd_u16(body + 24);  // extensible
    } else if (std::memcmp(id, "data", 4) == 0) {
      data = body;
      data_len = len;
    }
    pos += 8 + len + (len & 1);
  }
  if (!data || channels == 0) throw std::runtime_error("WAV file has no data chunk: " + path);

  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32)
    throw std::runtime_error("unsupported WAV format in " + path + " (format tag " +
                             std::to_string(format) + ", " + std::to_string(bits) +
                             " bits); expected 16-bit PCM or 32-bit float");

  const uint32_t bytes_per_sample = bits / 8;
  const uint32_t frame_bytes = bytes_per_sample * channels;
  const uint32_t frames = data_len / frame_bytes;

  WavData out;
  out.sample_rate = static_cast<int>(sample_rate);
  out.source_channels = channels;
  out.samples.resize(frames);
  const double ch_inv = 1.0 / channels;
  for (uint32_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (uint16_t c = 0; c < channels; ++c) {
      const uint8_t* s = data + i * frame_bytes + c * bytes_per_sample;
      if (pcm16) {
        int16_t v;
        std::memcpy(&v, s, 2);
        acc += static_cast<double>(v) / 32768.0;
      } else {
        float v;
        std::memcpy(&v, s, 4);
        acc += static_cast<double>(v);
      }
    }
    out.samples[i] = acc * ch_inv;
  }
  return out;
}

void write_wav_pcm16(const std::string& path, const std::vector<double>& samples, int sample_rate) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write WAV file: " + path);
  write_header(f, 1, 16, sample_rate, static_cast<uint32_t>(samples.size() * 2));
  for (double x : samples) {
    double v = std::lround(x * 32767.0);
    if (v > 32767.0) v = 32767.0;
    if (v < -32768.0) v = -32768.0;
    const int16_t s = static_cast<int16_t>(v);
    f.write(reinterpret_cast<const char*>(&s), 2);
  }
  if (!f) throw std::runtime_error("short write on WAV file: " + path);
}

void write_wav_float32(const std::string& path, const std::vector<double>& samples, int sample_rate) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write WAV file: " + path);
  write_header(f, 3, 32, sample_rate, static_cast<uint32_t>(samples.size() * 4));
  for (double x : samples) {
    const float v = static_cast<float>(x);
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  if (!f) throw std::runtime_error("short write on WAV file: " + path);
}

}  // namespace vqss::core
