#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace icicle {

// Minimal binary netpbm support: P6 (8-bit RGB) and P5 (8-bit gray),
// maxval 255. Loaders throw on bad magic or truncated payloads.

struct PnmImage {
    std::size_t width = 0, height = 0, channels = 1;  // 1 = PGM, 3 = PPM
    std::vector<std::uint8_t> pixels;                 // row-major, interleaved
};

void save_ppm(const std::string& path, const PnmImage& img, const std::string& comment = "");
void save_pgm(const std::string& path, const PnmImage& img, const std::string& comment = "");
PnmImage load_pnm(const std::string& path);

}  // namespace icicle
