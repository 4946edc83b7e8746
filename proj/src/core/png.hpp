#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vqss::core {

// Minimal PNG writer (zlib "stored" blocks, no compression). Enough for the
// report images this project emits without pulling in libpng.
void write_png_gray8(const std::string& path, int width, int height,
                     const std::vector<uint8_t>& pixels);

void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& pixels);  // 3 bytes per pixel

}  // namespace vqss::core
