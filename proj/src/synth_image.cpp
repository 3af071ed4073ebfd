#include "ovd/synth_image.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ovd/encoders.hpp"
#include "ovd/errors.hpp"
#include "ovd/io.hpp"
#include "ovd/rng.hpp"

namespace ovd {
namespace {

constexpr int kCells = kPatchGrid;

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(cur);
    return parts;
}

}  // namespace

std::string encode_image_spec(const ImageSpec& spec) {
    std::ostringstream os;
    os << "v1;w=" << spec.width << ";h=" << spec.height << ";noise=" << format_double(spec.noise)
       << ";nseed=" << spec.noise_seed;
    for (const PatchSpec& p : spec.patches) {
        os << ";patch=" << format_double(p.box.x1) << ',' << format_double(p.box.y1) << ','
           << format_double(p.box.x2) << ',' << format_double(p.box.y2);
        for (double v : p.cells) os << ',' << format_double(v);
    }
    return os.str();
}

ImageSpec parse_image_spec(const std::string& text) {
    const std::vector<std::string> fields = split_on(text, ';');
    if (fields.empty() || fields[0] != "v1") {
        throw InvalidSpecError("image spec: unknown version tag");
    }
    ImageSpec spec;
    try {
        for (std::size_t i = 1; i < fields.size(); ++i) {
            const std::string& f = fields[i];
            const std::size_t eq = f.find('=');
            if (eq == std::string::npos) throw InvalidSpecError("image spec: field without '='");
            const std::string key = f.substr(0, eq);
            const std::string val = f.substr(eq + 1);
            if (key == "w") {
                spec.width = std::stoi(val);
            } else if (key == "h") {
                spec.height = std::stoi(val);
            } else if (key == "noise") {
                spec.noise = std::stod(val);
            } else if (key == "nseed") {
                spec.noise_seed = std::stoull(val);
            } else if (key == "patch") {
                const std::vector<std::string> nums = split_on(val, ',');
                const std::size_t want = static_cast<std::size_t>(kImageChannels) * kCells * kCells;
                if (nums.size() != 4 + want) {
                    throw InvalidSpecError("image spec: patch needs 4 box coords plus one value per channel cell");
                }
                PatchSpec p;
                p.box = Box{std::stod(nums[0]), std::stod(nums[1]), std::stod(nums[2]), std::stod(nums[3])};
                if (!p.box.valid()) throw InvalidSpecError("image spec: degenerate patch box");
                p.cells.reserve(want);
                for (std::size_t k = 4; k < nums.size(); ++k) p.cells.push_back(std::stod(nums[k]));
                spec.patches.push_back(std::move(p));
            } else {
                throw InvalidSpecError("image spec: unknown field '" + key + "'");
            }
        }
    } catch (const InvalidSpecError&) {
        throw;
    } catch (const std::exception& e) {
        throw InvalidSpecError(std::string("image spec: ") + e.what());
    }
    if (spec.width < 1 || spec.height < 1) throw InvalidSpecError("image spec: missing dimensions");
    return spec;
}

Image render_image_spec(const ImageSpec& spec) {
    Image img = Image::zeros(spec.width, spec.height);
    if (spec.noise > 0.0) {
        Rng rng(spec.noise_seed);
        for (double& v : img.data) v = rng.normal(0.0, spec.noise);
    }
    for (const PatchSpec& p : spec.patches) {
        const Box b = p.box.clipped(spec.width, spec.height);
        if (!b.valid()) continue;
        const double cw = p.box.width() / kCells;
        const double ch = p.box.height() / kCells;
        const int x0 = static_cast<int>(std::floor(b.x1));
        const int x1 = static_cast<int>(std::ceil(b.x2));
        const int y0 = static_cast<int>(std::floor(b.y1));
        const int y1 = static_cast<int>(std::ceil(b.y2));
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                const double px = x + 0.5;
                const double py = y + 0.5;
                if (px < b.x1 || px >= b.x2 || py < b.y1 || py >= b.y2) continue;
                // Cell assignment mirrors the pooling grid of the unclipped box.
                const int gx = std::clamp(static_cast<int>((px - p.box.x1) / cw), 0, kCells - 1);
                const int gy = std::clamp(static_cast<int>((py - p.box.y1) / ch), 0, kCells - 1);
                for (int c = 0; c < kImageChannels; ++c) {
                    img.at(c, y, x) += p.cells[(static_cast<std::size_t>(c) * kCells + gy) * kCells + gx];
                }
            }
        }
    }
    return img;
}

Image render_source(const std::string& source) { return render_image_spec(parse_image_spec(source)); }

ImageSpec scale_image_spec(const ImageSpec& spec, double factor) {
    if (!(factor > 0.0)) throw InvalidSpecError("scale_image_spec: factor must be positive");
    ImageSpec out = spec;
    out.width = std::max(8, static_cast<int>(std::lround(spec.width * factor)));
    out.height = std::max(8, static_cast<int>(std::lround(spec.height * factor)));
    for (PatchSpec& p : out.patches) p.box = p.box.scaled(factor);
    return out;
}

Image resize_bilinear(const Image& src, int new_w, int new_h) {
    if (new_w < 1 || new_h < 1) throw InvalidSpecError("resize: target dimensions must be positive");
    Image out = Image::zeros(new_w, new_h);
    const double sx = static_cast<double>(src.width) / new_w;
    const double sy = static_cast<double>(src.height) / new_h;
    for (int y = 0; y < new_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < new_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < kImageChannels; ++c) {
                const double top = (1.0 - wx) * src.at(c, y0, x0) + wx * src.at(c, y0, x1);
                const double bot = (1.0 - wx) * src.at(c, y1, x0) + wx * src.at(c, y1, x1);
                out.at(c, y, x) = (1.0 - wy) * top + wy * bot;
            }
        }
    }
    return out;
}

}  // namespace ovd
