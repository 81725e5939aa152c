#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mvprior {

/// Binary mask, row-major. 0 = background, nonzero = foreground.
struct Mask {
    int w = 0;
    int h = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(int w_, int h_) : w(w_), h(h_), data(static_cast<size_t>(w_) * h_, 0) {}

    std::uint8_t at(int x, int y) const { return data[static_cast<size_t>(y) * w + x]; }
    std::uint8_t& at(int x, int y) { return data[static_cast<size_t>(y) * w + x]; }
    bool inside(int x, int y) const { return x >= 0 && x < w && y >= 0 && y < h; }
    int count_foreground() const;
    bool empty_mask() const { return count_foreground() == 0; }
};

/// Interleaved RGB image with float channels in [0, 1], row-major.
struct Image {
    int w = 0;
    int h = 0;
    int c = 3;
    std::vector<float> data;

    Image() = default;
    Image(int w_, int h_, int c_ = 3)
        : w(w_), h(h_), c(c_), data(static_cast<size_t>(w_) * h_ * c_, 0.0f) {}

    float at(int x, int y, int ch) const {
        return data[(static_cast<size_t>(y) * w + x) * c + ch];
    }
    float& at(int x, int y, int ch) {
        return data[(static_cast<size_t>(y) * w + x) * c + ch];
    }
};

// PGM (P5) masks: 0 = background, 255 = foreground.
void write_pgm(const std::string& path, const Mask& mask);
Mask read_pgm(const std::string& path);

// PPM (P6) images, 8-bit per channel.
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

}  // namespace mvprior
