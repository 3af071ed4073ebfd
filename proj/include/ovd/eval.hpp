#pragma once

#include <map>
#include <string>
#include <vector>

#include "ovd/dataset.hpp"
#include "ovd/detector.hpp"
#include "ovd/embedding.hpp"

namespace ovd {

struct EvalDetection {
    int image_id = 0;
    Box box;
    int category_id = 0;
    double confidence = 0.0;
};

struct EvalGroundTruth {
    int image_id = 0;
    Box box;
    int category_id = 0;
};

struct EvalConfig {
    double score_threshold = 0.05;
    double nms_iou = 0.5;
    int max_per_category_per_image = 300;
};

struct EvalResult {
    double ap = 0.0;        // mean over categories with ground truth
    double ap_base = 0.0;   // mean over base categories with ground truth
    double ap_novel = 0.0;  // mean over novel categories with ground truth
    std::map<int, double> per_category;
    std::size_t num_gt = 0;
    std::size_t num_detections = 0;
};

// 0.50, 0.55, ..., 0.95. Built as (50 + 5i) / 100 so a score equal to a
// threshold compares bitwise equal to it.
std::vector<double> default_iou_thresholds();

// Precision-recall AP for a single category at one IoU threshold. Detections
// are ranked by descending confidence (ties keep input order); each one
// greedily claims the unmatched same-image ground truth with the highest
// IoU >= threshold. 101-point interpolated. Empty ground truth gives 0.
double average_precision(const std::vector<EvalDetection>& dets,
                         const std::vector<EvalGroundTruth>& gts, double iou_threshold);

// Full AP summary over every category that has ground truth, averaged over
// default_iou_thresholds(). Detections for categories without ground truth
// are ignored.
EvalResult evaluate_detections(const std::vector<EvalDetection>& dets,
                               const std::vector<EvalGroundTruth>& gts,
                               const std::vector<CategorySpec>& specs);

// Runs the detector over every manifest image and scores the detections.
// Keeps at most max_per_category_per_image detections per category per image.
EvalResult evaluate_model(const DetectorModel& model, const DatasetManifest& manifest,
                          const std::vector<CategorySpec>& specs, const EvalConfig& cfg);

// Plain "key=value" lines; per-category APs as "category.<id>=<ap>".
void save_eval_result(const EvalResult& result, const std::string& path,
                      const std::string& header_comment = "");
EvalResult load_eval_result(const std::string& path);

}  // namespace ovd
