#pragma once

// Minimal PNG reading and writing: 8-bit grayscale (labels) and 8-bit RGB
// (images). Reading expands palettes, narrows 16-bit, and strips alpha so the
// result is always 1 or 3 interleaved 8-bit channels.

#include <cstdint>
#include <string>
#include <vector>

#include "mfm/common.hpp"

namespace mfm::png {

struct Image {
    int h = 0, w = 0, channels = 0;    // channels: 1 (gray) or 3 (RGB)
    std::vector<std::uint8_t> data;    // row-major, interleaved
};

Image read(const std::string& path);
void write_rgb8(const std::string& path, const std::vector<std::uint8_t>& rgb, int h, int w);
void write_gray8(const std::string& path, const std::vector<std::uint8_t>& gray, int h, int w);

}  // namespace mfm::png
