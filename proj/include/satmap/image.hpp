#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace satmap {

using Color = std::array<uint8_t, 3>;

// Interleaved row-major 8-bit raster (1 or 3 channels).
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<uint8_t> data;

  Image() = default;
  Image(int h, int w, int c, uint8_t fill = 0)
      : height(h), width(w), channels(c),
        data(static_cast<size_t>(h) * w * c, fill) {}

  uint8_t& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }

  void set_pixel(int y, int x, const Color& col) {
    for (int c = 0; c < channels && c < 3; ++c) at(y, x, c) = col[c];
  }

  bool in_bounds(int y, int x) const {
    return y >= 0 && y < height && x >= 0 && x < width;
  }

  bool operator==(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels &&
           data == o.data;
  }
};

// PNG IO (fixed encoder settings, so identical images produce identical files).
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

}  // namespace satmap
