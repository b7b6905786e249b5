#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "val/errors.hpp"

namespace val {

// H x W x 3 interleaved RGB in [0,1]. Renders quantize every channel to n/255
// so images survive byte-exact persistence.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;  // h*w*3, row-major, RGB interleaved

    Image() = default;
    Image(int h, int w) : height(h), width(w), pixels(static_cast<size_t>(h) * w * 3, 0.0) {}

    double& at(int y, int x, int c) { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    std::int64_t size() const { return static_cast<std::int64_t>(pixels.size()); }
};

// Binary PPM (P6), 8-bit.
void write_ppm(const Image& img, const std::string& path);

// Tiles images left to right, top to bottom into a rows x cols grid with a
// 1-pixel separator. All tiles must share dimensions.
Image tile_grid(const std::vector<Image>& tiles, int cols);

// Bilinear sample of the rectangle [y0,y0+h) x [x0,x0+w) resized to (out_h, out_w).
// With the full rectangle and equal sizes this is an exact copy.
Image resize_bilinear(const Image& src, double y0, double x0, double h, double w, int out_h, int out_w);

// Channel-wise clamp to [0,1].
void clamp01(Image& img);

// Quantize all channels to multiples of 1/255 (what an 8-bit sensor would see).
void quantize255(Image& img);

std::vector<std::uint8_t> to_bytes(const Image& img);
Image from_bytes(int h, int w, const std::vector<std::uint8_t>& bytes);

}  // namespace val
