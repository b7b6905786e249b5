#include "val/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace val {

void write_ppm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError(LoadError::Kind::Io, "write_ppm: cannot open " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    const auto bytes = to_bytes(img);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image tile_grid(const std::vector<Image>& tiles, int cols) {
    if (tiles.empty()) throw ContractError("tile_grid: no tiles");
    const int th = tiles[0].height, tw = tiles[0].width;
    for (const auto& t : tiles)
        if (t.height != th || t.width != tw) throw ShapeError("tile_grid: tile size mismatch");
    const int rows = (static_cast<int>(tiles.size()) + cols - 1) / cols;
    Image out(rows * th + (rows - 1), cols * tw + (cols - 1));
    std::fill(out.pixels.begin(), out.pixels.end(), 1.0);
    for (size_t i = 0; i < tiles.size(); ++i) {
        const int r = static_cast<int>(i) / cols, c = static_cast<int>(i) % cols;
        const int oy = r * (th + 1), ox = c * (tw + 1);
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x)
                for (int ch = 0; ch < 3; ++ch) out.at(oy + y, ox + x, ch) = tiles[i].at(y, x, ch);
    }
    return out;
}

Image resize_bilinear(const Image& src, double y0, double x0, double h, double w, int out_h, int out_w) {
    Image out(out_h, out_w);
    const double sy = h / out_h;
    const double sx = w / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        // map output pixel centers onto source coordinates
        const double fy = y0 + (oy + 0.5) * sy - 0.5;
        const int iy = static_cast<int>(std::floor(fy));
        const double wy = fy - iy;
        const int y_lo = std::clamp(iy, 0, src.height - 1);
        const int y_hi = std::clamp(iy + 1, 0, src.height - 1);
        for (int ox = 0; ox < out_w; ++ox) {
            const double fx = x0 + (ox + 0.5) * sx - 0.5;
            const int ix = static_cast<int>(std::floor(fx));
            const double wx = fx - ix;
            const int x_lo = std::clamp(ix, 0, src.width - 1);
            const int x_hi = std::clamp(ix + 1, 0, src.width - 1);
            for (int c = 0; c < 3; ++c) {
                const double top = src.at(y_lo, x_lo, c) * (1.0 - wx) + src.at(y_lo, x_hi, c) * wx;
                const double bot = src.at(y_hi, x_lo, c) * (1.0 - wx) + src.at(y_hi, x_hi, c) * wx;
                out.at(oy, ox, c) = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

void clamp01(Image& img) {
    for (auto& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
}

void quantize255(Image& img) {
    for (auto& v : img.pixels) {
        const int q = static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        v = q / 255.0;
    }
}

std::vector<std::uint8_t> to_bytes(const Image& img) {
    std::vector<std::uint8_t> bytes(img.pixels.size());
    for (size_t i = 0; i < img.pixels.size(); ++i)
        bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
    return bytes;
}

Image from_bytes(int h, int w, const std::vector<std::uint8_t>& bytes) {
    if (static_cast<size_t>(h) * w * 3 != bytes.size()) throw ShapeError("from_bytes: byte count mismatch");
    Image img(h, w);
    for (size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / 255.0;
    return img;
}

}  // namespace val
