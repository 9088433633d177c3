#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dcelanm {

/// 8-bit interleaved image, row-major. channels is 1 (gray) or 3 (RGB).
struct ImageU8 {
    int64_t width = 0;
    int64_t height = 0;
    int64_t channels = 0;
    std::vector<uint8_t> pixels;
};

/// Minimal PNG reader: 8-bit gray / RGB / RGBA (alpha dropped), non-interlaced.
/// All five scanline filters are handled. Throws DataError otherwise.
ImageU8 read_png(const std::string& path);

/// Writes 8-bit gray or RGB, non-interlaced, filter 0 scanlines.
void write_png(const std::string& path, const ImageU8& img);

}  // namespace dcelanm
