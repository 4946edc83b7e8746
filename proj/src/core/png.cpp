#include "core/png.hpp"

#include <fstream>
#include <stdexcept>

namespace vqss::core {

namespace {

uint32_t crc32_table_entry(uint32_t i) {
  uint32_t c = i;
  for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
  return c;
}

uint32_t crc32(const uint8_t* data, size_t len, uint32_t crc = 0xffffffffu) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) table[i] = crc32_table_entry(i);
    init = true;
  }
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return crc;
}

void push_u32be(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

void write_chunk(std::ofstream& f, const char type[4], const std::vector<uint8_t>& body) {
  std::vector<uint8_t> head;
  push_u32be(head, static_cast<uint32_t>(body.size()));
  f.write(reinterpret_cast<const char*>(head.data()), 4);
  uint8_t t[4] = {static_cast<uint8_t>(type[0]), static_cast<uint8_t>(type[1]),
                  static_cast<uint8_t>(type[2]), static_cast<uint8_t>(type[3])};
  uint32_t crc = crc32(t, 4);
  crc = crc32(body.data(), body.size(), crc);
  f.write(reinterpret_cast<const char*>(t), 4);
  f.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  std::vector<uint8_t> tail;
  push_u32be(tail, crc ^ 0xffffffffu);
  f.write(reinterpret_cast<const char*>(tail.data()), 4);
}

// zlib stream with stored (uncompressed) deflate blocks
std::vector<uint8_t> zlib_store(const std::vector<uint8_t>& raw) {
  std::vector<uint8_t> out;
  out.push_back(0x78);
  out.push_back(0x01);
  size_t pos = 0;
  const size_t block = 65535;
  while (pos < raw.size() || raw.empty()) {
    const size_t n = raw.size() - pos < block ? raw.size() - pos : block;
    const bool last = pos + n >= raw.size();
    out.push_back(last ? 1 : 0);
    out.push_back(static_cast<uint8_t>(n & 0xff));
    out.push_back(static_cast<uint8_t>(n >> 8));
    out.push_back(static_cast<uint8_t>(~n & 0xff));
    out.push_back(static_cast<uint8_t>((~n >> 8) & 0xff));
    out.insert(out.end(), raw.begin() + static_cast<long>(pos), raw.begin() + static_cast<long>(pos + n));
    pos += n;
    if (last) break;
  }
  uint32_t a = 1, b = 0;
  for (uint8_t byte : raw) {
    a = (a + byte) % 65521;
    b = (b + a) % 65521;
  }
  push_u32be(out, (b << 16) | a);
  return out;
}

void write_png(const std::string& path, int width, int height, int channels,
               const std::vector<uint8_t>& pixels) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("write_png: empty image");
  if (pixels.size() != static_cast<size_t>(width) * height * channels)
    throw std::invalid_argument("write_png: pixel buffer size mismatch");

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write PNG file: " + path);
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  f.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<uint8_t> ihdr;
  push_u32be(ihdr, static_cast<uint32_t>(width));
  push_u32be(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);                                  // bit depth
  ihdr.push_back(channels == 1 ? 0 : 2);              // gray or truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  write_chunk(f, "IHDR", ihdr);

  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(height) * (1 + static_cast<size_t>(width) * channels));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: none
    const uint8_t* row = pixels.data() + static_cast<size_t>(y) * width * channels;
    raw.insert(raw.end(), row, row + static_cast<size_t>(width) * channels);
  }
  write_chunk(f, "IDAT", zlib_store(raw));
  write_chunk(f, "IEND", {});
  if (!f) throw std::runtime_error("short write on PNG file: " + path);
}

}  // namespace

void write_png_gray8(const std::string& path, int width, int height,
                     const std::vector<uint8_t>& pixels) {
  write_png(path, width, height, 1, pixels);
}

void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& pixels) {
  write_png(path, width, height, 3, pixels);
}

}  // namespace vqss::core
