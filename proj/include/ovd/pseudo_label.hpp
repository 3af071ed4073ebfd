#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ovd/corpus.hpp"
#include "ovd/dataset.hpp"
#include "ovd/detector.hpp"

namespace ovd {

enum class BoxGenStrategy { kWholeImage, kMaxSize, kMaxObjScore, kMaxPredScore };

std::string strategy_name(BoxGenStrategy s);
BoxGenStrategy strategy_from_name(const std::string& s);

// The single training label distilled from one candidate image.
struct PseudoBox {
    int record_id = 0;
    Box box;
    int category_id = 0;
    double confidence = 0.0;
    BoxGenStrategy strategy = BoxGenStrategy::kMaxPredScore;
};

struct PseudoLabelConfig {
    int top_k = 20;
    double scale_a_min = 160.0;  // short-side ranges; A is the smaller one
    double scale_a_max = 360.0;
    double scale_b_min = 360.0;
    double scale_b_max = 800.0;
    std::uint64_t seed = 1;
};

struct SelfTrainSchedule {
    int phase1_epochs = 6;  // base annotations only
    int phase2_epochs = 6;  // base plus pseudo-labeled candidates
    int mix_base = 1;       // per-step interleave ratio in phase 2
    int mix_pseudo = 1;
    bool rpn_classifier_trainable = true;
    bool box_head_trainable = true;
};

// One label per candidate image. whole_image classifies the full frame and
// ignores proposals; the others look at the top_k highest-objectness
// proposals: max_size takes the largest box, max_obj_score the top-ranked
// one (each labeled with its best allowed category), and max_pred_score takes
// the (proposal, category) pair with the globally maximal confidence over
// allowed categories. Ties keep the earlier proposal, then the lower id.
// Errors: InvalidSpec for bad top_k or empty/unknown allowed ids; NoProposals
// when the proposal set is empty (never for whole_image).
PseudoBox generate_pseudo_box(const Image& img, const DetectorModel& model, BoxGenStrategy strategy,
                              int top_k, const std::vector<int>& allowed);

// Renders the candidate at one short-side scale drawn from each range
// (seeded by cfg.seed and record_id), labels both, and returns the
// higher-confidence result mapped back to original coordinates; ties and
// equal confidences resolve toward the smaller scale. Errors: NoProposals
// only if both scales fail; InvalidSpec for unordered ranges.
PseudoBox multiscale_pseudo_box(int record_id, const std::string& source,
                                const std::vector<int>& allowed, const DetectorModel& model,
                                const PseudoLabelConfig& cfg, BoxGenStrategy strategy);

// Record id -> sorted unique ids of the categories whose retrieval included
// it; the label search is restricted to that set.
std::map<int, std::vector<int>> allowed_by_record(const CandidateSet& candidates);

struct PseudoManifestResult {
    DatasetManifest manifest;
    std::vector<std::string> dropped;  // "record_id: reason" per skipped record
};

// Turns labeled candidates into extra training records, re-rendering each at a
// per-record jittered smaller resolution (short side drawn from
// [scale_a_min, scale_b_max], seeded by `seed` and the record id). Boxes that
// degenerate after the rescale drop with a reason. Errors: InvalidSpec when a
// labeled record is missing from the corpus.
PseudoManifestResult build_pseudo_manifest(const std::vector<PseudoBox>& boxes,
                                           const EmbeddingCorpus& corpus,
                                           const PseudoLabelConfig& pl_cfg, std::uint64_t seed);

struct SelfTrainResult {
    std::vector<PseudoBox> pseudo_boxes;       // one per successfully labeled record
    std::vector<std::string> dropped;          // "record_id: reason" per skipped record
    DatasetManifest pseudo_manifest;           // the phase-2 extra training records
};

// Phase 1 trains on base annotations; the phase-1 model then labels every
// candidate record once (allowed set = the categories that retrieved it) and
// phase 2 continues on base plus the labeled candidates, momentum and epoch
// numbering carried across the boundary so an empty candidate set reduces to
// plain training for phase1+phase2 epochs. Candidate images are re-rendered
// at a per-record jittered smaller resolution. Trainability flags from the
// schedule apply to the whole run.
SelfTrainResult self_train(DetectorModel& model, const DatasetManifest& base_manifest,
                           const CandidateSet& candidates, const EmbeddingCorpus& corpus,
                           const SelfTrainSchedule& schedule, const PseudoLabelConfig& pl_cfg,
                           BoxGenStrategy strategy, const DetectorConfig& det_cfg,
                           std::uint64_t seed);

// Line-delimited `record_id,x1,y1,x2,y2,category_id,confidence,strategy`.
void save_pseudo_boxes(const std::vector<PseudoBox>& boxes, const std::string& path);
std::vector<PseudoBox> load_pseudo_boxes(const std::string& path);

}  // namespace ovd
