#include "ovd/detector.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <unordered_map>

#include "ovd/encoders.hpp"
#include "ovd/io.hpp"
#include "ovd/synth_image.hpp"

namespace ovd {
namespace {

constexpr char kCheckpointMagic[8] = {'O', 'V', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr int kFeatureStride = 4;  // two stride-2 convs

struct ConvDims {
    int in_c, in_h, in_w;
    int out_c, out_h, out_w;
    int k, stride, pad;
};

ConvDims conv_dims(int in_c, int in_h, int in_w, int out_c, int k, int stride, int pad) {
    ConvDims d{in_c, in_h, in_w, out_c, 0, 0, k, stride, pad};
    d.out_h = (in_h + 2 * pad - k) / stride + 1;
    d.out_w = (in_w + 2 * pad - k) / stride + 1;
    return d;
}

Vec conv_tanh_forward(const Vec& in, const ConvDims& d, const Vec& w, const Vec& b) {
    Vec out(static_cast<std::size_t>(d.out_c) * d.out_h * d.out_w);
    for (int oc = 0; oc < d.out_c; ++oc) {
        for (int oy = 0; oy < d.out_h; ++oy) {
            for (int ox = 0; ox < d.out_w; ++ox) {
                double acc = b[static_cast<std::size_t>(oc)];
                for (int ic = 0; ic < d.in_c; ++ic) {
                    for (int ky = 0; ky < d.k; ++ky) {
                        const int iy = oy * d.stride - d.pad + ky;
                        if (iy < 0 || iy >= d.in_h) continue;
                        for (int kx = 0; kx < d.k; ++kx) {
                            const int ix = ox * d.stride - d.pad + kx;
                            if (ix < 0 || ix >= d.in_w) continue;
                            acc += w[((static_cast<std::size_t>(oc) * d.in_c + ic) * d.k + ky) * d.k + kx] *
                                   in[(static_cast<std::size_t>(ic) * d.in_h + iy) * d.in_w + ix];
                        }
                    }
                }
                out[(static_cast<std::size_t>(oc) * d.out_h + oy) * d.out_w + ox] = std::tanh(acc);
            }
        }
    }
    return out;
}

// g_pre is the gradient at the pre-activation (tanh factor already applied).
void conv_backward(const Vec& in, const ConvDims& d, const Vec& w, const Vec& g_pre, Vec* g_in,
                   Vec& g_w, Vec& g_b) {
    g_w.assign(w.size(), 0.0);
    g_b.assign(static_cast<std::size_t>(d.out_c), 0.0);
    if (g_in) g_in->assign(in.size(), 0.0);
    for (int oc = 0; oc < d.out_c; ++oc) {
        for (int oy = 0; oy < d.out_h; ++oy) {
            for (int ox = 0; ox < d.out_w; ++ox) {
                const double g = g_pre[(static_cast<std::size_t>(oc) * d.out_h + oy) * d.out_w + ox];
                if (g == 0.0) continue;
                g_b[static_cast<std::size_t>(oc)] += g;
                for (int ic = 0; ic < d.in_c; ++ic) {
                    for (int ky = 0; ky < d.k; ++ky) {
                        const int iy = oy * d.stride - d.pad + ky;
                        if (iy < 0 || iy >= d.in_h) continue;
                        for (int kx = 0; kx < d.k; ++kx) {
                            const int ix = ox * d.stride - d.pad + kx;
                            if (ix < 0 || ix >= d.in_w) continue;
                            const std::size_t wi =
                                ((static_cast<std::size_t>(oc) * d.in_c + ic) * d.k + ky) * d.k + kx;
                            const std::size_t ii =
                                (static_cast<std::size_t>(ic) * d.in_h + iy) * d.in_w + ix;
                            g_w[wi] += g * in[ii];
                            if (g_in) (*g_in)[ii] += g * w[wi];
                        }
                    }
                }
            }
        }
    }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Numerically stable binary cross-entropy on a logit.
double bce_with_logit(double logit, double target) {
    return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

double anchor_center(int cell) { return cell * kFeatureStride + 2.0; }

Box anchor_box(int ax, int ay, double size) {
    const double cx = anchor_center(ax);
    const double cy = anchor_center(ay);
    return Box{cx - size / 2.0, cy - size / 2.0, cx + size / 2.0, cy + size / 2.0};
}

// Anchor heads read mean conv features over five regions of the anchor box:
// the interior plus left/right/top/bottom strips of a surrounding ring.
// Interior-vs-ring contrast separates a tight box from a fragment inside a
// larger object or an oversized box; the per-side strips tell the box head
// which way the fit is off. A single-cell readout carries neither signal
// once the cell sits well inside a uniform object.
constexpr int kAnchorRegions = 5;
constexpr double kRingFrac = 0.35;  // strip width relative to box size

struct RegionSpan {
    int y0, y1, x0, x1;  // half-open feature-cell ranges
    bool empty() const { return y1 <= y0 || x1 <= x0; }
    int count() const { return empty() ? 0 : (y1 - y0) * (x1 - x0); }
};

// Feature cells whose centers land in the pixel interval [p1, p2).
void pixel_span(double p1, double p2, int limit, int& lo, int& hi) {
    lo = std::clamp(static_cast<int>(std::ceil(p1 / kFeatureStride - 0.5)), 0, limit);
    hi = std::clamp(static_cast<int>(std::ceil(p2 / kFeatureStride - 0.5)), lo, limit);
}

std::array<RegionSpan, kAnchorRegions> anchor_regions(const Box& ab, int fh, int fw) {
    const double mx = kRingFrac * ab.width();
    const double my = kRingFrac * ab.height();
    int iy0, iy1, ix0, ix1, oy0, oy1, ox0, ox1;
    pixel_span(ab.y1, ab.y2, fh, iy0, iy1);
    pixel_span(ab.x1, ab.x2, fw, ix0, ix1);
    pixel_span(ab.y1 - my, ab.y2 + my, fh, oy0, oy1);
    pixel_span(ab.x1 - mx, ab.x2 + mx, fw, ox0, ox1);
    return {RegionSpan{iy0, iy1, ix0, ix1},   // interior
            RegionSpan{oy0, oy1, ox0, ix0},   // left strip, full ring height
            RegionSpan{oy0, oy1, ix1, ox1},   // right strip
            RegionSpan{oy0, iy0, ix0, ix1},   // top strip, interior width
            RegionSpan{iy1, oy1, ix0, ix1}};  // bottom strip
}

struct FeatSums {
    int h = 0, w = 0;
    Vec s;  // per channel, (h+1) x (w+1) prefix sums over f2

    double mean(int c, const RegionSpan& r) const {
        if (r.empty()) return 0.0;
        const double* p = s.data() + static_cast<std::size_t>(c) * (h + 1) * (w + 1);
        const std::size_t row1 = static_cast<std::size_t>(r.y1) * (w + 1);
        const std::size_t row0 = static_cast<std::size_t>(r.y0) * (w + 1);
        return (p[row1 + r.x1] - p[row0 + r.x1] - p[row1 + r.x0] + p[row0 + r.x0]) / r.count();
    }
};

// Prefix sums over the conv planes followed by the aux planes.
FeatSums feat_sums(const BackboneFeatures& f, int c2) {
    FeatSums fs;
    fs.h = f.f2_h;
    fs.w = f.f2_w;
    const int nch = c2 + kAuxFeaturePlanes;
    const std::size_t stride = static_cast<std::size_t>(fs.h + 1) * (fs.w + 1);
    fs.s.assign(static_cast<std::size_t>(nch) * stride, 0.0);
    for (int c = 0; c < nch; ++c) {
        const double* plane = c < c2
                                  ? f.f2.data() + static_cast<std::size_t>(c) * fs.h * fs.w
                                  : f.aux.data() + static_cast<std::size_t>(c - c2) * fs.h * fs.w;
        double* out = fs.s.data() + static_cast<std::size_t>(c) * stride;
        for (int y = 0; y < fs.h; ++y) {
            double row = 0.0;
            for (int x = 0; x < fs.w; ++x) {
                row += plane[static_cast<std::size_t>(y) * fs.w + x];
                out[static_cast<std::size_t>(y + 1) * (fs.w + 1) + (x + 1)] =
                    out[static_cast<std::size_t>(y) * (fs.w + 1) + (x + 1)] + row;
            }
        }
    }
    return fs;
}

// `r` holds kAnchorRegions * nch slots, region-major; nch counts conv plus
// aux planes, matching the FeatSums layout.
void region_features(const FeatSums& fs, int nch, const std::array<RegionSpan, kAnchorRegions>& spans,
                     double* r) {
    for (int k = 0; k < kAnchorRegions; ++k) {
        for (int c = 0; c < nch; ++c) r[static_cast<std::size_t>(k) * nch + c] = fs.mean(c, spans[k]);
    }
}

// Graded objectness target: 0 below IoU 0.25, 1 above 0.85, linear between.
// Binary targets saturate every decent hit at the same score and leave the
// proposal order among them to noise; a graded target makes objectness an
// overlap estimate that ranks tighter boxes higher.
double objectness_target(double iou_val) { return std::clamp((iou_val - 0.25) / 0.6, 0.0, 1.0); }

// Box pixel statistics for the ROI shortcut, unit-normalized: direction
// alone carries identity, and at unit scale the conv path meets the
// projection on equal footing instead of being drowned by pattern amplitude.
Vec box_stats(const Image& img, const Box& b) {
    Vec stats = ToyImageEncoder::pool_stats(img, b);
    const double n = l2_norm(stats);
    if (n > 1e-12) {
        for (double& s : stats) s /= n;
    }
    return stats;
}

struct RoiPool {
    Vec pooled;                             // (grid*grid) x (c2 + aux), cell-major
    std::vector<std::vector<int>> members;  // flat f2 cell indices per grid cell
};

// Pools the conv planes followed by the parameter-free aux planes.
RoiPool roi_pool(const BackboneFeatures& f, int c2, int grid, const Box& box) {
    double fx1 = std::clamp(box.x1 / kFeatureStride, 0.0, static_cast<double>(f.f2_w));
    double fx2 = std::clamp(box.x2 / kFeatureStride, 0.0, static_cast<double>(f.f2_w));
    double fy1 = std::clamp(box.y1 / kFeatureStride, 0.0, static_cast<double>(f.f2_h));
    double fy2 = std::clamp(box.y2 / kFeatureStride, 0.0, static_cast<double>(f.f2_h));
    if (fx2 - fx1 < 1e-9) {  // sub-cell box: snap to one feature column
        fx1 = std::clamp(fx1 - 0.5, 0.0, static_cast<double>(f.f2_w - 1));
        fx2 = fx1 + 1.0;
    }
    if (fy2 - fy1 < 1e-9) {
        fy1 = std::clamp(fy1 - 0.5, 0.0, static_cast<double>(f.f2_h - 1));
        fy2 = fy1 + 1.0;
    }
    const double cw = (fx2 - fx1) / grid;
    const double ch = (fy2 - fy1) / grid;

    const int nch = c2 + kAuxFeaturePlanes;
    RoiPool rp;
    rp.pooled.assign(static_cast<std::size_t>(grid) * grid * nch, 0.0);
    rp.members.resize(static_cast<std::size_t>(grid) * grid);
    for (int gy = 0; gy < grid; ++gy) {
        for (int gx = 0; gx < grid; ++gx) {
            const double rx1 = fx1 + gx * cw;
            const double rx2 = fx1 + (gx + 1) * cw;
            const double ry1 = fy1 + gy * ch;
            const double ry2 = fy1 + (gy + 1) * ch;
            auto& mem = rp.members[static_cast<std::size_t>(gy) * grid + gx];
            for (int fy = static_cast<int>(std::floor(ry1)); fy < static_cast<int>(std::ceil(ry2)); ++fy) {
                if (fy < 0 || fy >= f.f2_h) continue;
                const double pcy = fy + 0.5;
                if (pcy < ry1 || pcy >= ry2) continue;
                for (int fx = static_cast<int>(std::floor(rx1)); fx < static_cast<int>(std::ceil(rx2)); ++fx) {
                    if (fx < 0 || fx >= f.f2_w) continue;
                    const double pcx = fx + 0.5;
                    if (pcx < rx1 || pcx >= rx2) continue;
                    mem.push_back(fy * f.f2_w + fx);
                }
            }
            if (mem.empty()) {  // nearest feature cell keeps every grid cell backed
                const int fy = std::clamp(static_cast<int>((ry1 + ry2) / 2.0), 0, f.f2_h - 1);
                const int fx = std::clamp(static_cast<int>((rx1 + rx2) / 2.0), 0, f.f2_w - 1);
                mem.push_back(fy * f.f2_w + fx);
            }
            const double inv = 1.0 / static_cast<double>(mem.size());
            const std::size_t plane = static_cast<std::size_t>(f.f2_h) * f.f2_w;
            for (int c = 0; c < nch; ++c) {
                const double* src = c < c2 ? f.f2.data() + static_cast<std::size_t>(c) * plane
                                           : f.aux.data() + static_cast<std::size_t>(c - c2) * plane;
                double acc = 0.0;
                for (int m : mem) acc += src[m];
                rp.pooled[(static_cast<std::size_t>(gy) * grid + gx) * nch + c] = acc * inv;
            }
        }
    }
    return rp;
}

Vec random_block(Rng& rng, std::size_t n, double scale) {
    Vec v(n);
    for (double& x : v) x = rng.normal(0.0, scale);
    return v;
}

void write_block(std::ostream& os, const std::string& name, const Vec& v) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, v.size());
    write_f64_block(os, v);
}

Vec read_block(std::istream& is, const std::string& want, const std::string& path) {
    const std::uint32_t len = read_u32(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (name != want) throw IoError(path + ": expected block '" + want + "', found '" + name + "'");
    const std::uint64_t count = read_u64(is);
    return read_f64_block(is, count);
}

}  // namespace

std::uint64_t DetectorModel::parameter_checksum() const {
    std::uint64_t h = fnv1a64_vec(conv1_w);
    h = fnv1a64_vec(conv1_b, h);
    h = fnv1a64_vec(conv2_w, h);
    h = fnv1a64_vec(conv2_b, h);
    h = fnv1a64_vec(rpn_obj_w, h);
    h = fnv1a64_vec(rpn_obj_b, h);
    h = fnv1a64_vec(rpn_box_w, h);
    h = fnv1a64_vec(rpn_box_b, h);
    h = fnv1a64_vec(roi_w, h);
    return fnv1a64_vec(roi_skip, h);
}

std::uint64_t DetectorModel::category_matrix_checksum() const {
    std::uint64_t h = fnv1a64(&category_matrix.num_categories, sizeof(category_matrix.num_categories));
    h = fnv1a64(&category_matrix.dim, sizeof(category_matrix.dim), h);
    return fnv1a64_vec(category_matrix.rows, h);
}

DetectorModel init_detector_model(const DetectorConfig& cfg, const CategoryEmbeddingMatrix& matrix,
                                  const ClassifierConfig& classifier, const Vec& skip_init,
                                  std::uint64_t seed) {
    if (matrix.num_categories == 0 || matrix.dim == 0) {
        throw InvalidSpecError("init_detector_model: empty category matrix");
    }
    const std::size_t stat_dim = ToyImageEncoder::stat_dim();
    if (skip_init.size() != matrix.dim * stat_dim) {
        throw DimensionMismatchError("init_detector_model: shortcut init must be D x 48");
    }
    if (cfg.anchor_sizes.empty()) throw InvalidSpecError("init_detector_model: no anchor sizes");

    DetectorModel m;
    m.conv1_channels = cfg.conv1_channels;
    m.conv2_channels = cfg.conv2_channels;
    m.anchor_sizes = cfg.anchor_sizes;
    m.roi_grid = cfg.roi_grid;
    m.category_matrix = matrix;
    m.classifier = classifier;
    m.max_proposals = cfg.max_proposals;
    m.rpn_nms_iou = cfg.rpn_nms_iou;
    m.delta_clamp = cfg.delta_clamp;

    Rng rng(Rng::mix(seed, 0x64657463));
    const std::size_t c1 = static_cast<std::size_t>(cfg.conv1_channels);
    const std::size_t c2 = static_cast<std::size_t>(cfg.conv2_channels);
    m.conv1_w = random_block(rng, c1 * kImageChannels * 5 * 5, 1.0 / std::sqrt(kImageChannels * 25.0));
    m.conv1_b = random_block(rng, c1, 0.01);
    m.conv2_w = random_block(rng, c2 * c1 * 3 * 3, 1.0 / std::sqrt(static_cast<double>(c1) * 9.0));
    m.conv2_b = random_block(rng, c2, 0.01);

    // Zero-initialized heads: initial proposals equal the anchors and all
    // objectness starts at 0.5, which keeps the untrained model well defined.
    const std::size_t A = m.anchor_sizes.size();
    const std::size_t nch = c2 + kAuxFeaturePlanes;
    m.rpn_obj_w.assign(A * kAnchorRegions * nch, 0.0);
    m.rpn_obj_b.assign(A, 0.0);
    m.rpn_box_w.assign(4 * A * kAnchorRegions * nch, 0.0);
    m.rpn_box_b.assign(4 * A, 0.0);

    const std::size_t pooled_dim = nch * static_cast<std::size_t>(cfg.roi_grid) * cfg.roi_grid;
    m.roi_w = random_block(rng, matrix.dim * pooled_dim, 0.03 / std::sqrt(static_cast<double>(pooled_dim)));
    m.roi_skip = skip_init;
    return m;
}

BackboneFeatures run_backbone(const Image& img, const DetectorModel& model) {
    BackboneFeatures f;
    f.image_w = img.width;
    f.image_h = img.height;
    const ConvDims d1 = conv_dims(kImageChannels, img.height, img.width, model.conv1_channels, 5, 2, 2);
    f.f1 = conv_tanh_forward(img.data, d1, model.conv1_w, model.conv1_b);
    f.f1_h = d1.out_h;
    f.f1_w = d1.out_w;
    const ConvDims d2 = conv_dims(model.conv1_channels, d1.out_h, d1.out_w, model.conv2_channels, 3, 2, 1);
    f.f2 = conv_tanh_forward(f.f1, d2, model.conv2_w, model.conv2_b);
    f.f2_h = d2.out_h;
    f.f2_w = d2.out_w;

    // Plane 0: RMS of the raw channels over each feature cell's pixel block.
    // Plane 1: spatial gradient magnitude of plane 0, which outlines objects
    // regardless of the pattern painted inside them.
    const std::size_t plane = static_cast<std::size_t>(f.f2_h) * f.f2_w;
    f.aux.assign(static_cast<std::size_t>(kAuxFeaturePlanes) * plane, 0.0);
    for (int fy = 0; fy < f.f2_h; ++fy) {
        for (int fx = 0; fx < f.f2_w; ++fx) {
            double acc = 0.0;
            std::size_t count = 0;
            for (int y = fy * kFeatureStride; y < (fy + 1) * kFeatureStride && y < img.height; ++y) {
                for (int x = fx * kFeatureStride; x < (fx + 1) * kFeatureStride && x < img.width; ++x) {
                    for (int c = 0; c < kImageChannels; ++c) {
                        const double v = img.at(c, y, x);
                        acc += v * v;
                    }
                    count += static_cast<std::size_t>(kImageChannels);
                }
            }
            f.aux[static_cast<std::size_t>(fy) * f.f2_w + fx] =
                count == 0 ? 0.0 : std::sqrt(acc / static_cast<double>(count));
        }
    }
    for (int fy = 0; fy < f.f2_h; ++fy) {
        for (int fx = 0; fx < f.f2_w; ++fx) {
            const auto e = [&](int y, int x) {
                y = std::clamp(y, 0, f.f2_h - 1);
                x = std::clamp(x, 0, f.f2_w - 1);
                return f.aux[static_cast<std::size_t>(y) * f.f2_w + x];
            };
            const double gx = 0.5 * (e(fy, fx + 1) - e(fy, fx - 1));
            const double gy = 0.5 * (e(fy + 1, fx) - e(fy - 1, fx));
            f.aux[plane + static_cast<std::size_t>(fy) * f.f2_w + fx] = std::sqrt(gx * gx + gy * gy);
        }
    }
    return f;
}

std::vector<std::size_t> greedy_nms(const std::vector<Box>& boxes,
                                    const std::vector<std::size_t>& order, double iou_thresh) {
    std::vector<std::size_t> kept;
    for (std::size_t i : order) {
        bool suppressed = false;
        for (std::size_t k : kept) {
            if (iou(boxes[i], boxes[k]) > iou_thresh) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(i);
    }
    return kept;
}

std::vector<Proposal> propose_from_features(const BackboneFeatures& feats, const DetectorModel& model) {
    const int A = static_cast<int>(model.num_anchors());
    const int c2 = model.conv2_channels;
    const int nch = c2 + kAuxFeaturePlanes;
    const FeatSums sums = feat_sums(feats, c2);
    const std::size_t R = static_cast<std::size_t>(kAnchorRegions) * nch;

    std::vector<Box> boxes;
    std::vector<double> scores;
    Vec r(R);
    for (int ay = 0; ay < feats.f2_h; ++ay) {
        for (int ax = 0; ax < feats.f2_w; ++ax) {
            for (int a = 0; a < A; ++a) {
                const double s = model.anchor_sizes[static_cast<std::size_t>(a)];
                region_features(sums, nch, anchor_regions(anchor_box(ax, ay, s), feats.f2_h, feats.f2_w),
                                r.data());
                double delta[4];
                for (int k = 0; k < 4; ++k) delta[k] = model.rpn_box_b[static_cast<std::size_t>(a) * 4 + k];
                for (std::size_t j = 0; j < R; ++j) {
                    for (int k = 0; k < 4; ++k) {
                        delta[k] += model.rpn_box_w[(static_cast<std::size_t>(a) * 4 + k) * R + j] * r[j];
                    }
                }
                const double cx = anchor_center(ax) + delta[0] * s;
                const double cy = anchor_center(ay) + delta[1] * s;
                const double w = s * std::exp(std::clamp(delta[2], -model.delta_clamp, model.delta_clamp));
                const double h = s * std::exp(std::clamp(delta[3], -model.delta_clamp, model.delta_clamp));
                const Box b = Box{cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0}.clipped(
                    feats.image_w, feats.image_h);
                if (!b.valid() || b.width() < 2.0 || b.height() < 2.0) continue;
                // Score the box the head actually emits, not the anchor it
                // came from: the readout grades whatever geometry it is given.
                region_features(sums, nch, anchor_regions(b, feats.f2_h, feats.f2_w), r.data());
                double o = model.rpn_obj_b[static_cast<std::size_t>(a)];
                for (std::size_t j = 0; j < R; ++j) {
                    o += model.rpn_obj_w[static_cast<std::size_t>(a) * R + j] * r[j];
                }
                boxes.push_back(b);
                scores.push_back(sigmoid(o));
            }
        }
    }

    std::vector<std::size_t> order(boxes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const std::vector<std::size_t> kept = greedy_nms(boxes, order, model.rpn_nms_iou);

    std::vector<Proposal> out;
    out.reserve(std::min<std::size_t>(kept.size(), static_cast<std::size_t>(model.max_proposals)));
    for (std::size_t i : kept) {
        if (out.size() >= static_cast<std::size_t>(model.max_proposals)) break;
        out.push_back(Proposal{boxes[i], scores[i]});
    }
    return out;
}

std::vector<Proposal> propose(const Image& img, const DetectorModel& model) {
    return propose_from_features(run_backbone(img, model), model);
}

RoIFeature extract_roi_from_features(const BackboneFeatures& feats, const Image& img, const Box& box,
                                     const DetectorModel& model) {
    if (!box.valid()) throw InvalidBoxError("extract_roi: degenerate box");
    const Box b = box.clipped(img.width, img.height);
    if (!b.valid()) throw InvalidBoxError("extract_roi: box outside the image");
    const RoiPool rp = roi_pool(feats, model.conv2_channels, model.roi_grid, b);
    const Vec stats = box_stats(img, b);
    const std::size_t D = model.embed_dim();
    const std::size_t J = rp.pooled.size();
    Vec pre(D, 0.0);
    for (std::size_t d = 0; d < D; ++d) {
        double acc = 0.0;
        const double* wr = model.roi_w.data() + d * J;
        for (std::size_t j = 0; j < J; ++j) acc += wr[j] * rp.pooled[j];
        const double* ws = model.roi_skip.data() + d * stats.size();
        for (std::size_t s = 0; s < stats.size(); ++s) acc += ws[s] * stats[s];
        pre[d] = acc;
    }
    return l2_normalize(pre);
}

RoIFeature extract_roi(const Image& img, const Box& box, const DetectorModel& model) {
    return extract_roi_from_features(run_backbone(img, model), img, box, model);
}

Vec classify_roi(const RoIFeature& v, const DetectorModel& model) {
    return classifier_scores(v, model.category_matrix, model.classifier);
}

std::vector<Detection> infer(const Image& img, const DetectorModel& model, double score_threshold,
                             double nms_iou) {
    const BackboneFeatures feats = run_backbone(img, model);
    const std::vector<Proposal> props = propose_from_features(feats, model);

    struct Cand {
        Box box;
        int cat;
        double conf;
        double obj;
        std::size_t pidx;
    };
    std::vector<Cand> cands;
    for (std::size_t p = 0; p < props.size(); ++p) {
        RoIFeature v;
        try {
            v = extract_roi_from_features(feats, img, props[p].box, model);
        } catch (const ZeroVectorError&) {
            continue;  // featureless box, nothing to classify
        }
        const Vec scores = classify_roi(v, model);
        for (std::size_t c = 0; c < scores.size(); ++c) {
            if (scores[c] >= score_threshold) {
                cands.push_back(Cand{props[p].box, static_cast<int>(c), scores[c], props[p].objectness, p});
            }
        }
    }

    std::vector<Detection> out;
    const std::size_t C = model.category_matrix.num_categories;
    for (std::size_t c = 0; c < C; ++c) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < cands.size(); ++i) {
            if (cands[i].cat == static_cast<int>(c)) idx.push_back(i);
        }
        if (idx.empty()) continue;
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return cands[a].conf > cands[b].conf; });
        std::vector<Box> boxes;
        boxes.reserve(idx.size());
        for (std::size_t i : idx) boxes.push_back(cands[i].box);
        std::vector<std::size_t> local(idx.size());
        for (std::size_t i = 0; i < local.size(); ++i) local[i] = i;
        for (std::size_t k : greedy_nms(boxes, local, nms_iou)) {
            const Cand& cd = cands[idx[k]];
            out.push_back(Detection{cd.box, cd.cat, cd.conf, cd.obj});
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.category_id < b.category_id;
    });
    return out;
}

DetectorTrainState init_train_state(const DetectorModel& m) {
    DetectorTrainState s;
    s.conv1_w.assign(m.conv1_w.size(), 0.0);
    s.conv1_b.assign(m.conv1_b.size(), 0.0);
    s.conv2_w.assign(m.conv2_w.size(), 0.0);
    s.conv2_b.assign(m.conv2_b.size(), 0.0);
    s.rpn_obj_w.assign(m.rpn_obj_w.size(), 0.0);
    s.rpn_obj_b.assign(m.rpn_obj_b.size(), 0.0);
    s.rpn_box_w.assign(m.rpn_box_w.size(), 0.0);
    s.rpn_box_b.assign(m.rpn_box_b.size(), 0.0);
    s.roi_w.assign(m.roi_w.size(), 0.0);
    s.roi_skip.assign(m.roi_skip.size(), 0.0);
    return s;
}

namespace {

struct RoiSample {
    Box box;
    int gt_cat = -1;
    bool positive = false;
};

double max_iou_vs(const Box& b, const std::vector<Annotation>& anns) {
    double best = 0.0;
    for (const Annotation& a : anns) best = std::max(best, iou(b, a.box));
    return best;
}

std::vector<RoiSample> sample_rois(const ImageRecord& rec, const DetectorConfig& cfg, Rng& rng) {
    std::vector<RoiSample> samples;
    const double W = rec.width;
    const double H = rec.height;
    for (const Annotation& ann : rec.annotations) {
        samples.push_back(RoiSample{ann.box, ann.category_id, true});
        const double w = ann.box.width();
        const double h = ann.box.height();
        for (int j = 0; j < cfg.roi_jitter_pos; ++j) {
            bool placed = false;
            for (int attempt = 0; attempt < 10 && !placed; ++attempt) {
                const double sx = rng.uniform(0.85, 1.15);
                const double sy = rng.uniform(0.85, 1.15);
                const double dx = rng.uniform(-0.15, 0.15) * w;
                const double dy = rng.uniform(-0.15, 0.15) * h;
                const double cw = w * sx;
                const double ch = h * sy;
                const Box c = Box{ann.box.cx() + dx - cw / 2.0, ann.box.cy() + dy - ch / 2.0,
                                  ann.box.cx() + dx + cw / 2.0, ann.box.cy() + dy + ch / 2.0}
                                  .clipped(W, H);
                if (c.valid() && iou(c, ann.box) >= 0.5) {
                    samples.push_back(RoiSample{c, ann.category_id, true});
                    placed = true;
                }
            }
            if (!placed) samples.push_back(RoiSample{ann.box, ann.category_id, true});
        }
        for (int j = 0; j < cfg.roi_jitter_neg; ++j) {
            for (int attempt = 0; attempt < 10; ++attempt) {
                const double dx = rng.uniform(0.6, 1.1) * w * (rng.uniform() < 0.5 ? -1.0 : 1.0);
                const double dy = rng.uniform(0.6, 1.1) * h * (rng.uniform() < 0.5 ? -1.0 : 1.0);
                const Box c =
                    Box{ann.box.x1 + dx, ann.box.y1 + dy, ann.box.x2 + dx, ann.box.y2 + dy}.clipped(W, H);
                if (c.valid() && c.width() >= 4.0 && c.height() >= 4.0 &&
                    max_iou_vs(c, rec.annotations) < cfg.anchor_neg_iou) {
                    samples.push_back(RoiSample{c, -1, false});
                    break;
                }
            }
        }
        // Badly framed negatives overlap the object but miss its extent:
        // inner fragments and oversized or offset boxes. Without them every
        // box touching an object scores like the object itself.
        for (int j = 0; j < cfg.roi_hard_neg; ++j) {
            for (int attempt = 0; attempt < 10; ++attempt) {
                Box c;
                if (rng.uniform() < 0.5) {
                    const double cw = w * rng.uniform(0.35, 0.6);
                    const double ch = h * rng.uniform(0.35, 0.6);
                    const double x1 = ann.box.x1 + rng.uniform(0.0, w - cw);
                    const double y1 = ann.box.y1 + rng.uniform(0.0, h - ch);
                    c = Box{x1, y1, x1 + cw, y1 + ch};
                } else {
                    const double s = rng.uniform(1.4, 2.2);
                    const double cw = w * s;
                    const double ch = h * s;
                    const double dx = rng.uniform(-0.3, 0.3) * w;
                    const double dy = rng.uniform(-0.3, 0.3) * h;
                    c = Box{ann.box.cx() + dx - cw / 2.0, ann.box.cy() + dy - ch / 2.0,
                            ann.box.cx() + dx + cw / 2.0, ann.box.cy() + dy + ch / 2.0};
                }
                c = c.clipped(W, H);
                if (!c.valid() || c.width() < 4.0 || c.height() < 4.0) continue;
                const double v = max_iou_vs(c, rec.annotations);
                if (v > 0.05 && v < cfg.anchor_pos_iou) {
                    samples.push_back(RoiSample{c, -1, false});
                    break;
                }
            }
        }
    }
    const double hi = std::max(12.0, 0.5 * std::min(W, H));
    for (int j = 0; j < cfg.roi_random_neg; ++j) {
        for (int attempt = 0; attempt < 10; ++attempt) {
            const double w = rng.uniform(10.0, hi);
            const double h = rng.uniform(10.0, hi);
            const double x1 = rng.uniform(0.0, std::max(1.0, W - w));
            const double y1 = rng.uniform(0.0, std::max(1.0, H - h));
            const Box c = Box{x1, y1, x1 + w, y1 + h}.clipped(W, H);
            if (c.valid() && max_iou_vs(c, rec.annotations) < cfg.anchor_neg_iou) {
                samples.push_back(RoiSample{c, -1, false});
                break;
            }
        }
    }
    return samples;
}

void detector_train_step(const ImageRecord& rec, const Image& img, DetectorModel& m,
                         DetectorTrainState& st, const DetectorConfig& cfg, Rng& rng) {
    const BackboneFeatures feats = run_backbone(img, m);
    const int A = static_cast<int>(m.num_anchors());
    const int c2 = m.conv2_channels;
    const std::size_t plane = static_cast<std::size_t>(feats.f2_h) * feats.f2_w;
    const std::size_t total_anchors = plane * A;

    // Anchor matching.
    std::vector<double> best_iou(total_anchors, 0.0);
    std::vector<int> best_gt(total_anchors, -1);
    std::vector<std::size_t> gt_best_anchor(rec.annotations.size(), 0);
    std::vector<double> gt_best_iou(rec.annotations.size(), 0.0);
    for (std::size_t idx = 0; idx < total_anchors; ++idx) {
        const std::size_t cell = idx / A;
        const int a = static_cast<int>(idx % A);
        const int ay = static_cast<int>(cell) / feats.f2_w;
        const int ax = static_cast<int>(cell) % feats.f2_w;
        const Box ab = anchor_box(ax, ay, m.anchor_sizes[static_cast<std::size_t>(a)]);
        for (std::size_t g = 0; g < rec.annotations.size(); ++g) {
            const double i = iou(ab, rec.annotations[g].box);
            if (i > best_iou[idx]) {
                best_iou[idx] = i;
                best_gt[idx] = static_cast<int>(g);
            }
            if (i > gt_best_iou[g]) {
                gt_best_iou[g] = i;
                gt_best_anchor[g] = idx;
            }
        }
    }
    std::vector<char> is_pos(total_anchors, 0);
    for (std::size_t idx = 0; idx < total_anchors; ++idx) {
        if (best_iou[idx] >= cfg.anchor_pos_iou) is_pos[idx] = 1;
    }
    for (std::size_t g = 0; g < rec.annotations.size(); ++g) {
        if (gt_best_iou[g] > 0.0) {
            is_pos[gt_best_anchor[g]] = 1;
            if (best_gt[gt_best_anchor[g]] < 0) best_gt[gt_best_anchor[g]] = static_cast<int>(g);
        }
    }
    std::vector<std::size_t> pos, neg, mid;
    for (std::size_t idx = 0; idx < total_anchors; ++idx) {
        if (is_pos[idx]) {
            pos.push_back(idx);
        } else if (best_iou[idx] < cfg.anchor_neg_iou) {
            neg.push_back(idx);
        } else {
            mid.push_back(idx);
        }
    }
    rng.shuffle(pos);
    rng.shuffle(neg);
    rng.shuffle(mid);
    if (pos.size() > static_cast<std::size_t>(cfg.anchor_pos_samples)) {
        pos.resize(static_cast<std::size_t>(cfg.anchor_pos_samples));
    }
    if (neg.size() > static_cast<std::size_t>(cfg.anchor_neg_samples)) {
        neg.resize(static_cast<std::size_t>(cfg.anchor_neg_samples));
    }
    if (mid.size() > static_cast<std::size_t>(cfg.anchor_mid_samples)) {
        mid.resize(static_cast<std::size_t>(cfg.anchor_mid_samples));
    }

    double loss = 0.0;
    Vec g_f2(feats.f2.size(), 0.0);
    Vec g_obj_w(m.rpn_obj_w.size(), 0.0), g_obj_b(m.rpn_obj_b.size(), 0.0);
    Vec g_box_w(m.rpn_box_w.size(), 0.0), g_box_b(m.rpn_box_b.size(), 0.0);

    const FeatSums sums = feat_sums(feats, c2);
    const std::size_t R = static_cast<std::size_t>(kAnchorRegions) * c2;
    Vec r(R);
    std::array<RegionSpan, kAnchorRegions> spans;
    const auto anchor_readout = [&](std::size_t idx) {
        const std::size_t cell = idx / A;
        const int a = static_cast<int>(idx % A);
        const int ay = static_cast<int>(cell) / feats.f2_w;
        const int ax = static_cast<int>(cell) % feats.f2_w;
        const Box ab = anchor_box(ax, ay, m.anchor_sizes[static_cast<std::size_t>(a)]);
        spans = anchor_regions(ab, feats.f2_h, feats.f2_w);
        region_features(sums, c2, spans, r.data());
    };
    // Mean-pool gradient: spread evenly over the region's feature cells.
    const auto spread = [&](const RegionSpan& sp, int c, double g) {
        if (sp.empty() || g == 0.0) return;
        const double per = g / sp.count();
        for (int y = sp.y0; y < sp.y1; ++y) {
            double* row = g_f2.data() + static_cast<std::size_t>(c) * plane +
                          static_cast<std::size_t>(y) * feats.f2_w;
            for (int x = sp.x0; x < sp.x1; ++x) row[x] += per;
        }
    };

    // Objectness BCE over the sampled anchors, graded by overlap.
    const double n_obj = static_cast<double>(pos.size() + neg.size() + mid.size());
    auto obj_term = [&](std::size_t idx, double target) {
        anchor_readout(idx);
        const std::size_t a = idx % A;
        double o = m.rpn_obj_b[a];
        for (std::size_t j = 0; j < R; ++j) o += m.rpn_obj_w[a * R + j] * r[j];
        loss += bce_with_logit(o, target) / n_obj;
        const double dldo = (sigmoid(o) - target) / n_obj;
        g_obj_b[a] += dldo;
        for (int k = 0; k < kAnchorRegions; ++k) {
            for (int c = 0; c < c2; ++c) {
                const std::size_t j = static_cast<std::size_t>(k) * c2 + c;
                g_obj_w[a * R + j] += dldo * r[j];
                spread(spans[static_cast<std::size_t>(k)], c, dldo * m.rpn_obj_w[a * R + j]);
            }
        }
    };
    if (n_obj > 0.0) {
        for (std::size_t idx : pos) obj_term(idx, objectness_target(best_iou[idx]));
        for (std::size_t idx : mid) obj_term(idx, objectness_target(best_iou[idx]));
        for (std::size_t idx : neg) obj_term(idx, 0.0);
    }

    // L1 box regression on the positive anchors.
    if (!pos.empty()) {
        const double denom = 4.0 * static_cast<double>(pos.size());
        for (std::size_t idx : pos) {
            const int g = best_gt[idx];
            if (g < 0) continue;
            anchor_readout(idx);
            const std::size_t cell = idx / A;
            const std::size_t a = idx % A;
            const int ay = static_cast<int>(cell) / feats.f2_w;
            const int ax = static_cast<int>(cell) % feats.f2_w;
            const double s = m.anchor_sizes[a];
            const Box& gt = rec.annotations[static_cast<std::size_t>(g)].box;
            const double tgt[4] = {(gt.cx() - anchor_center(ax)) / s, (gt.cy() - anchor_center(ay)) / s,
                                   std::log(gt.width() / s), std::log(gt.height() / s)};
            for (int k = 0; k < 4; ++k) {
                double t = m.rpn_box_b[a * 4 + k];
                for (std::size_t j = 0; j < R; ++j) t += m.rpn_box_w[(a * 4 + k) * R + j] * r[j];
                const double diff = t - tgt[k];
                loss += std::abs(diff) / denom;
                const double dldt = (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0)) / denom;
                g_box_b[a * 4 + k] += dldt;
                for (int kr = 0; kr < kAnchorRegions; ++kr) {
                    for (int c = 0; c < c2; ++c) {
                        const std::size_t j = static_cast<std::size_t>(kr) * c2 + c;
                        g_box_w[(a * 4 + k) * R + j] += dldt * r[j];
                        spread(spans[static_cast<std::size_t>(kr)], c, dldt * m.rpn_box_w[(a * 4 + k) * R + j]);
                    }
                }
            }
        }
    }

    // Per-category BCE alignment of ROI features against the frozen matrix.
    const std::vector<RoiSample> samples = sample_rois(rec, cfg, rng);
    const std::size_t C = m.category_matrix.num_categories;
    const std::size_t D = m.embed_dim();
    Vec g_roi_w(m.roi_w.size(), 0.0), g_roi_skip(m.roi_skip.size(), 0.0);
    if (!samples.empty()) {
        const double n_roi = static_cast<double>(samples.size() * C);
        const double eps = m.classifier.temperature;
        for (const RoiSample& s : samples) {
            const Box b = s.box.clipped(img.width, img.height);
            if (!b.valid()) continue;
            const RoiPool rp = roi_pool(feats, c2, m.roi_grid, b);
            const Vec stats = box_stats(img, b);
            Vec pre(D, 0.0);
            const std::size_t J = rp.pooled.size();
            for (std::size_t d = 0; d < D; ++d) {
                double acc = 0.0;
                const double* wr = m.roi_w.data() + d * J;
                for (std::size_t j = 0; j < J; ++j) acc += wr[j] * rp.pooled[j];
                const double* ws = m.roi_skip.data() + d * stats.size();
                for (std::size_t k = 0; k < stats.size(); ++k) acc += ws[k] * stats[k];
                pre[d] = acc;
            }
            const double norm = l2_norm(pre);
            if (norm < 1e-12) continue;
            Vec v(D);
            for (std::size_t d = 0; d < D; ++d) v[d] = pre[d] / norm;

            Vec g_v(D, 0.0);
            for (std::size_t c = 0; c < C; ++c) {
                const double* row = m.category_matrix.row(c);
                double cosv = 0.0;
                for (std::size_t d = 0; d < D; ++d) cosv += v[d] * row[d];
                const double logit = cosv / eps;
                const double target = (s.positive && s.gt_cat == static_cast<int>(c)) ? 1.0 : 0.0;
                loss += bce_with_logit(logit, target) / n_roi;
                const double dldl = (sigmoid(logit) - target) / n_roi;
                const double coef = dldl / eps;
                for (std::size_t d = 0; d < D; ++d) g_v[d] += coef * row[d];
            }
            double vg = 0.0;
            for (std::size_t d = 0; d < D; ++d) vg += v[d] * g_v[d];
            Vec g_pre(D);
            for (std::size_t d = 0; d < D; ++d) g_pre[d] = (g_v[d] - v[d] * vg) / norm;

            Vec g_pooled(J, 0.0);
            for (std::size_t d = 0; d < D; ++d) {
                const double gp = g_pre[d];
                if (gp == 0.0) continue;
                double* grw = g_roi_w.data() + d * J;
                for (std::size_t j = 0; j < J; ++j) grw[j] += gp * rp.pooled[j];
                double* grs = g_roi_skip.data() + d * stats.size();
                for (std::size_t k = 0; k < stats.size(); ++k) grs[k] += gp * stats[k];
                const double* wr = m.roi_w.data() + d * J;
                for (std::size_t j = 0; j < J; ++j) g_pooled[j] += gp * wr[j];
            }
            for (int cell = 0; cell < m.roi_grid * m.roi_grid; ++cell) {
                const auto& mem = rp.members[static_cast<std::size_t>(cell)];
                const double inv = 1.0 / static_cast<double>(mem.size());
                for (int c = 0; c < c2; ++c) {
                    const double gc = g_pooled[static_cast<std::size_t>(cell) * c2 + c] * inv;
                    for (int fidx : mem) g_f2[static_cast<std::size_t>(c) * plane + fidx] += gc;
                }
            }
        }
    }

    if (!std::isfinite(loss)) {
        throw NonFiniteLossError("train_detector: non-finite loss on image " + std::to_string(rec.id));
    }

    // Backbone backward.
    Vec g_pre2(feats.f2.size());
    for (std::size_t i = 0; i < g_pre2.size(); ++i) {
        g_pre2[i] = g_f2[i] * (1.0 - feats.f2[i] * feats.f2[i]);
    }
    const ConvDims d1 = conv_dims(kImageChannels, img.height, img.width, m.conv1_channels, 5, 2, 2);
    const ConvDims d2 = conv_dims(m.conv1_channels, d1.out_h, d1.out_w, m.conv2_channels, 3, 2, 1);
    Vec g_f1, g_w2, g_b2;
    conv_backward(feats.f1, d2, m.conv2_w, g_pre2, &g_f1, g_w2, g_b2);
    for (std::size_t i = 0; i < g_f1.size(); ++i) g_f1[i] *= 1.0 - feats.f1[i] * feats.f1[i];
    Vec g_w1, g_b1;
    conv_backward(img.data, d1, m.conv1_w, g_f1, nullptr, g_w1, g_b1);

    const auto sgd = [&](Vec& p, Vec& vel, const Vec& g) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double grad = g[i] + cfg.weight_decay * p[i];
            vel[i] = cfg.momentum * vel[i] - cfg.learning_rate * grad;
            p[i] += vel[i];
        }
    };
    sgd(m.conv1_w, st.conv1_w, g_w1);
    sgd(m.conv1_b, st.conv1_b, g_b1);
    sgd(m.conv2_w, st.conv2_w, g_w2);
    sgd(m.conv2_b, st.conv2_b, g_b2);
    sgd(m.roi_w, st.roi_w, g_roi_w);
    sgd(m.roi_skip, st.roi_skip, g_roi_skip);
    if (m.rpn_classifier_trainable) {
        sgd(m.rpn_obj_w, st.rpn_obj_w, g_obj_w);
        sgd(m.rpn_obj_b, st.rpn_obj_b, g_obj_b);
    }
    if (m.box_head_trainable) {
        sgd(m.rpn_box_w, st.rpn_box_w, g_box_w);
        sgd(m.rpn_box_b, st.rpn_box_b, g_box_b);
    }
}

}  // namespace

void train_detector_epochs(const std::vector<ImageRecord>& base, const std::vector<ImageRecord>& extra,
                           int mix_base, int mix_extra, DetectorModel& model,
                           DetectorTrainState& state, const DetectorConfig& cfg, int epoch_begin,
                           int epoch_count, std::uint64_t seed) {
    if (mix_base < 1 || mix_extra < 0) throw InvalidSpecError("train_detector: bad mixing ratio");
    std::unordered_map<const ImageRecord*, Image> cache;
    const auto rendered = [&](const ImageRecord* rec) -> const Image& {
        auto it = cache.find(rec);
        if (it == cache.end()) it = cache.emplace(rec, render_source(rec->source)).first;
        return it->second;
    };

    for (int e = 0; e < epoch_count; ++e) {
        const int epoch = epoch_begin + e;
        Rng rng(Rng::mix(seed, 0x65706f63 + static_cast<std::uint64_t>(epoch)));
        std::vector<std::size_t> base_order(base.size());
        for (std::size_t i = 0; i < base_order.size(); ++i) base_order[i] = i;
        rng.shuffle(base_order);
        std::vector<std::size_t> extra_order;
        if (!extra.empty()) {
            extra_order.resize(extra.size());
            for (std::size_t i = 0; i < extra_order.size(); ++i) extra_order[i] = i;
            rng.shuffle(extra_order);
        }

        std::vector<const ImageRecord*> seq;
        if (extra.empty()) {
            for (std::size_t i : base_order) seq.push_back(&base[i]);
        } else {
            std::size_t bi = 0, xi = 0;
            while (bi < base_order.size()) {
                for (int k = 0; k < mix_base && bi < base_order.size(); ++k) {
                    seq.push_back(&base[base_order[bi++]]);
                }
                for (int k = 0; k < mix_extra; ++k) {
                    seq.push_back(&extra[extra_order[xi % extra_order.size()]]);
                    ++xi;
                }
            }
        }
        for (const ImageRecord* rec : seq) detector_train_step(*rec, rendered(rec), model, state, cfg, rng);
    }
}

void train_detector(const DatasetManifest& manifest, DetectorModel& model, const DetectorConfig& cfg,
                    int epochs, std::uint64_t seed) {
    DetectorTrainState state = init_train_state(model);
    train_detector_epochs(manifest.records, {}, 1, 1, model, state, cfg, 0, epochs, seed);
}

namespace {

void write_model_payload(std::ostream& os, const DetectorModel& m) {
    write_u32(os, static_cast<std::uint32_t>(m.conv1_channels));
    write_u32(os, static_cast<std::uint32_t>(m.conv2_channels));
    write_u32(os, static_cast<std::uint32_t>(m.roi_grid));
    write_u32(os, static_cast<std::uint32_t>(m.anchor_sizes.size()));
    write_f64_block(os, m.anchor_sizes);
    write_u32(os, static_cast<std::uint32_t>(m.max_proposals));
    write_f64(os, m.rpn_nms_iou);
    write_f64(os, m.delta_clamp);
    write_u32(os, m.rpn_classifier_trainable ? 1 : 0);
    write_u32(os, m.box_head_trainable ? 1 : 0);
    write_f64(os, m.classifier.temperature);
    write_u32(os, m.classifier.mode == ClassifierMode::kSigmoid ? 1 : 0);
    write_u64(os, m.category_matrix.num_categories);
    write_u64(os, m.category_matrix.dim);
    write_f64_block(os, m.category_matrix.rows);
    write_block(os, "conv1_w", m.conv1_w);
    write_block(os, "conv1_b", m.conv1_b);
    write_block(os, "conv2_w", m.conv2_w);
    write_block(os, "conv2_b", m.conv2_b);
    write_block(os, "rpn_obj_w", m.rpn_obj_w);
    write_block(os, "rpn_obj_b", m.rpn_obj_b);
    write_block(os, "rpn_box_w", m.rpn_box_w);
    write_block(os, "rpn_box_b", m.rpn_box_b);
    write_block(os, "roi_w", m.roi_w);
    write_block(os, "roi_skip", m.roi_skip);
}

DetectorModel read_model_payload(std::istream& is, const std::string& path) {
    DetectorModel m;
    m.conv1_channels = static_cast<int>(read_u32(is));
    m.conv2_channels = static_cast<int>(read_u32(is));
    m.roi_grid = static_cast<int>(read_u32(is));
    const std::uint32_t A = read_u32(is);
    m.anchor_sizes = read_f64_block(is, A);
    m.max_proposals = static_cast<int>(read_u32(is));
    m.rpn_nms_iou = read_f64(is);
    m.delta_clamp = read_f64(is);
    m.rpn_classifier_trainable = read_u32(is) != 0;
    m.box_head_trainable = read_u32(is) != 0;
    m.classifier.temperature = read_f64(is);
    m.classifier.mode = read_u32(is) != 0 ? ClassifierMode::kSigmoid : ClassifierMode::kSoftmax;
    m.category_matrix.num_categories = read_u64(is);
    m.category_matrix.dim = read_u64(is);
    m.category_matrix.rows = read_f64_block(is, m.category_matrix.num_categories * m.category_matrix.dim);
    m.conv1_w = read_block(is, "conv1_w", path);
    m.conv1_b = read_block(is, "conv1_b", path);
    m.conv2_w = read_block(is, "conv2_w", path);
    m.conv2_b = read_block(is, "conv2_b", path);
    m.rpn_obj_w = read_block(is, "rpn_obj_w", path);
    m.rpn_obj_b = read_block(is, "rpn_obj_b", path);
    m.rpn_box_w = read_block(is, "rpn_box_w", path);
    m.rpn_box_b = read_block(is, "rpn_box_b", path);
    m.roi_w = read_block(is, "roi_w", path);
    m.roi_skip = read_block(is, "roi_skip", path);
    return m;
}

const char* const kStateNames[10] = {"vel_conv1_w", "vel_conv1_b", "vel_conv2_w", "vel_conv2_b",
                                     "vel_rpn_obj_w", "vel_rpn_obj_b", "vel_rpn_box_w",
                                     "vel_rpn_box_b", "vel_roi_w", "vel_roi_skip"};

std::array<Vec*, 10> state_fields(DetectorTrainState& s) {
    return {&s.conv1_w, &s.conv1_b, &s.conv2_w, &s.conv2_b, &s.rpn_obj_w,
            &s.rpn_obj_b, &s.rpn_box_w, &s.rpn_box_b, &s.roi_w, &s.roi_skip};
}

}  // namespace

void save_checkpoint(const DetectorModel& m, const std::string& path) {
    auto os = open_out(path, true);
    write_magic(os, kCheckpointMagic);
    write_model_payload(os, m);
    write_u32(os, 0);
    if (!os) throw IoError("failed writing checkpoint to " + path);
}

void save_train_checkpoint(const DetectorModel& m, const DetectorTrainState& state,
                           const std::string& path) {
    auto os = open_out(path, true);
    write_magic(os, kCheckpointMagic);
    write_model_payload(os, m);
    write_u32(os, 1);
    auto fields = state_fields(const_cast<DetectorTrainState&>(state));
    for (int i = 0; i < 10; ++i) write_block(os, kStateNames[i], *fields[i]);
    if (!os) throw IoError("failed writing checkpoint to " + path);
}

DetectorModel load_checkpoint(const std::string& path) {
    auto is = open_in(path, true);
    expect_magic(is, kCheckpointMagic, path);
    DetectorModel m = read_model_payload(is, path);
    if (read_u32(is) != 0) {
        for (int i = 0; i < 10; ++i) read_block(is, kStateNames[i], path);
    }
    if (!is) throw IoError("failed reading checkpoint from " + path);
    return m;
}

bool load_train_checkpoint(const std::string& path, DetectorModel* model, DetectorTrainState* state) {
    auto is = open_in(path, true);
    expect_magic(is, kCheckpointMagic, path);
    *model = read_model_payload(is, path);
    const bool has_state = read_u32(is) != 0;
    if (has_state) {
        auto fields = state_fields(*state);
        for (int i = 0; i < 10; ++i) *fields[i] = read_block(is, kStateNames[i], path);
    } else {
        *state = init_train_state(*model);
    }
    if (!is) throw IoError("failed reading checkpoint from " + path);
    return has_state;
}

}  // namespace ovd
