#pragma once

#include <string>
#include <vector>

#include "ovd/embedding.hpp"
#include "ovd/image.hpp"

namespace ovd {

// A painted rectangle: per-cell additive values over the box, one value per
// channel and grid cell. The paint grid divides the box the same way the
// encoder's pooling grid does, so pooling the exact box reads each painted
// cell back up to background noise.
inline constexpr int kPatchGrid = 4;

struct PatchSpec {
    Box box;
    Vec cells;  // kImageChannels * kPatchGrid^2 values, channel-major
};

// Deterministic drawing program for one image. Serializes to a single-line
// string so dataset manifests stay self-contained text.
struct ImageSpec {
    int width = 0;
    int height = 0;
    double noise = 0.0;      // background Gaussian noise std
    std::uint64_t noise_seed = 0;
    std::vector<PatchSpec> patches;
};

std::string encode_image_spec(const ImageSpec& spec);
ImageSpec parse_image_spec(const std::string& text);

// Same drawing program at another resolution: dimensions and patch boxes
// multiplied by `factor` (cell values unchanged), noise field re-drawn at the
// new size. Boxes in the original coordinates map by the same factor.
ImageSpec scale_image_spec(const ImageSpec& spec, double factor);

// Renders the program: seeded noise background, then additive patches.
Image render_image_spec(const ImageSpec& spec);
Image render_source(const std::string& source);

Image resize_bilinear(const Image& src, int new_w, int new_h);

}  // namespace ovd
