#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ovd/dataset.hpp"
#include "ovd/embedding.hpp"
#include "ovd/image.hpp"
#include "ovd/rng.hpp"

namespace ovd {

struct Proposal {
    Box box;
    double objectness = 0.0;
};

using RoIFeature = UnitEmbedding;

struct Detection {
    Box box;
    int category_id = 0;
    double confidence = 0.0;
    double objectness = 0.0;
};

struct DetectorConfig {
    int conv1_channels = 12;
    int conv2_channels = 16;
    std::vector<double> anchor_sizes = {20.0, 32.0, 48.0};
    int max_proposals = 1000;
    double rpn_nms_iou = 0.7;
    int roi_grid = 3;

    double learning_rate = 0.02;
    double momentum = 0.9;
    double weight_decay = 1e-4;

    double anchor_pos_iou = 0.5;
    double anchor_neg_iou = 0.3;
    int anchor_pos_samples = 32;
    int anchor_neg_samples = 32;
    int anchor_mid_samples = 16;  // anchors between the two IoU bands

    int roi_jitter_pos = 2;   // jittered positives per annotation
    int roi_jitter_neg = 2;   // disjoint near-miss negatives per annotation
    int roi_hard_neg = 3;     // badly framed overlap negatives per annotation
    int roi_random_neg = 4;   // random negatives per image
    double delta_clamp = 2.0; // cap on log-size deltas at decode time
};

// Two tanh conv layers (stride 4 overall), class-agnostic proposal heads
// over dense square anchors, and an ROI head that projects pooled features
// plus a raw pixel-pooling shortcut to the embedding space. Each anchor head
// reads mean conv features over five regions tied to the anchor box: its
// interior and four flanking strips of a surrounding ring. Interior-vs-ring
// contrast carries framing quality and the per-side strips carry the offset
// toward a better fit; a single-cell readout sees neither once the cell sits
// well inside an object. Objectness trains against a graded overlap target
// and is scored at the decoded box, so proposal order tracks how well each
// emitted box frames an object rather than saturating on every hit.
// The ROI shortcut is initialized from the frozen
// image encoder's weights, the desk analogue of starting the backbone from a
// pretrained vision model; training refines it on base categories while its
// behavior off the base subspace carries over to unseen ones.
struct DetectorModel {
    int conv1_channels = 0;
    int conv2_channels = 0;
    Vec conv1_w, conv1_b;  // c1 x kImageChannels x 5 x 5
    Vec conv2_w, conv2_b;  // c2 x c1 x 3 x 3

    std::vector<double> anchor_sizes;
    Vec rpn_obj_w, rpn_obj_b;  // A x (5 * (c2 + aux)); A
    Vec rpn_box_w, rpn_box_b;  // 4A x (5 * (c2 + aux)); 4A

    int roi_grid = 3;
    Vec roi_w;     // D x ((c2 + aux) * grid * grid)
    Vec roi_skip;  // D x stat_dim

    CategoryEmbeddingMatrix category_matrix;  // frozen during training
    ClassifierConfig classifier;

    bool rpn_classifier_trainable = true;
    bool box_head_trainable = true;

    int max_proposals = 1000;
    double rpn_nms_iou = 0.7;
    double delta_clamp = 2.0;

    std::size_t embed_dim() const { return category_matrix.dim; }
    std::size_t num_anchors() const { return anchor_sizes.size(); }
    std::uint64_t parameter_checksum() const;
    std::uint64_t category_matrix_checksum() const;
};

// `skip_init` is the image encoder's weight matrix (D x stat_dim).
DetectorModel init_detector_model(const DetectorConfig& cfg, const CategoryEmbeddingMatrix& matrix,
                                  const ClassifierConfig& classifier, const Vec& skip_init,
                                  std::uint64_t seed);

// Parameter-free planes appended to the conv features: local pixel energy
// and its spatial gradient. Uniform objects make every interior feature look
// alike, so learned filters carry little framing signal; the energy gradient
// marks object boundaries independently of the pattern painted inside, which
// lets the heads judge framing for categories never seen in training.
inline constexpr int kAuxFeaturePlanes = 2;

struct BackboneFeatures {
    int image_w = 0, image_h = 0;
    int f1_w = 0, f1_h = 0;
    int f2_w = 0, f2_h = 0;
    Vec f1;   // c1 x f1_h x f1_w, post-activation
    Vec f2;   // c2 x f2_h x f2_w, post-activation
    Vec aux;  // kAuxFeaturePlanes x f2_h x f2_w, no gradient path
};

BackboneFeatures run_backbone(const Image& img, const DetectorModel& model);

// Scored class-agnostic proposals: decoded anchor deltas, clipped, greedy NMS
// at rpn_nms_iou, sorted by descending objectness, at most max_proposals.
std::vector<Proposal> propose_from_features(const BackboneFeatures& feats, const DetectorModel& model);
std::vector<Proposal> propose(const Image& img, const DetectorModel& model);

// Pooled conv features over the box plus the pixel shortcut, projected to the
// embedding dimension and l2-normalized. Errors: InvalidBox; ZeroVector.
RoIFeature extract_roi_from_features(const BackboneFeatures& feats, const Image& img, const Box& box,
                                     const DetectorModel& model);
RoIFeature extract_roi(const Image& img, const Box& box, const DetectorModel& model);

// Per-category scores under the model's frozen matrix and classifier mode.
Vec classify_roi(const RoIFeature& v, const DetectorModel& model);

// propose -> extract_roi -> classify_roi, thresholded, per-class greedy NMS.
// Result sorted by descending confidence.
std::vector<Detection> infer(const Image& img, const DetectorModel& model, double score_threshold,
                             double nms_iou);

// Greedy class-agnostic NMS over candidates given in priority order; returns
// indices of kept entries, in order.
std::vector<std::size_t> greedy_nms(const std::vector<Box>& boxes,
                                    const std::vector<std::size_t>& order, double iou_thresh);

// SGD momentum buffers; persists across phases so training schedules compose
// exactly (running a+b epochs equals running a then b on the same state).
struct DetectorTrainState {
    Vec conv1_w, conv1_b, conv2_w, conv2_b;
    Vec rpn_obj_w, rpn_obj_b, rpn_box_w, rpn_box_b;
    Vec roi_w, roi_skip;
};

DetectorTrainState init_train_state(const DetectorModel& model);

// One pass per epoch over the base images (shuffled), each interleaved with
// `mix_extra` extra images per `mix_base` base images when extra is nonempty.
// Objectness BCE + L1 box regression on sampled anchors, per-category BCE ROI
// alignment against the frozen matrix. Epoch indices [epoch_begin,
// epoch_begin + epoch_count) seed the shuffles, so schedules compose.
// Errors: NonFiniteLoss aborts.
void train_detector_epochs(const std::vector<ImageRecord>& base, const std::vector<ImageRecord>& extra,
                           int mix_base, int mix_extra, DetectorModel& model,
                           DetectorTrainState& state, const DetectorConfig& cfg, int epoch_begin,
                           int epoch_count, std::uint64_t seed);

void train_detector(const DatasetManifest& manifest, DetectorModel& model, const DetectorConfig& cfg,
                    int epochs, std::uint64_t seed);

// Checkpoints hold the full model including the frozen category matrix.
// The train variant appends the momentum buffers so a later stage can resume
// mid-schedule and reproduce an uninterrupted run bitwise.
void save_checkpoint(const DetectorModel& model, const std::string& path);
void save_train_checkpoint(const DetectorModel& model, const DetectorTrainState& state,
                           const std::string& path);
DetectorModel load_checkpoint(const std::string& path);  // discards any momentum blocks

// Returns whether the file carried momentum state; without it *state is
// zero-initialized.
bool load_train_checkpoint(const std::string& path, DetectorModel* model, DetectorTrainState* state);

}  // namespace ovd
