#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "crystal/errors.hpp"

namespace crystal {

// Dense H x W x 3 pixel grid with values in [0, 1], row-major, channel last.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(int h, int w, double fill = 0.0) : height(h), width(w) {
        if (h <= 0 || w <= 0) throw DimensionError("image extents must be positive");
        pixels.assign(static_cast<size_t>(h) * w * 3, fill);
    }

    static constexpr int channels = 3;

    double& at(int y, int x, int c) { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }

    size_t value_count() const { return pixels.size(); }

    bool same_pixels(const Image& other) const {
        return height == other.height && width == other.width && pixels == other.pixels;
    }

    void clamp_to_unit() {
        for (double& v : pixels) v = std::clamp(v, 0.0, 1.0);
    }
};

inline Image mid_gray(int h, int w) { return Image(h, w, 0.5); }

}  // namespace crystal
