#pragma once

#include <vector>

#include "ovd/geometry.hpp"

namespace ovd {

// Feature planes per synthetic image. Identity-bearing content lives in the
// per-channel means, so crops of the same object at different scales or
// offsets pool to the same direction in channel space.
inline constexpr int kImageChannels = 32;

// Synthetic image: kImageChannels float planes on an H x W grid,
// channel-planar layout.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;  // size kImageChannels * height * width

    static Image zeros(int w, int h) {
        Image img;
        img.width = w;
        img.height = h;
        img.data.assign(static_cast<std::size_t>(kImageChannels) * w * h, 0.0);
        return img;
    }

    double& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }

    Box full_box() const { return Box{0.0, 0.0, static_cast<double>(width), static_cast<double>(height)}; }
};

// Bilinear resize to (new_w, new_h); boxes on the source map by scaling.
Image resize_bilinear(const Image& src, int new_w, int new_h);

}  // namespace ovd
