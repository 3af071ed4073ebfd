#include "ovd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "ovd/errors.hpp"
#include "ovd/io.hpp"
#include "ovd/synth_image.hpp"

namespace ovd {

std::vector<double> default_iou_thresholds() {
    std::vector<double> t;
    t.reserve(10);
    for (int i = 0; i < 10; ++i) t.push_back((50 + 5 * i) / 100.0);
    return t;
}

double average_precision(const std::vector<EvalDetection>& dets,
                         const std::vector<EvalGroundTruth>& gts, double iou_threshold) {
    if (gts.empty()) return 0.0;

    std::unordered_map<int, std::vector<std::size_t>> gt_by_image;
    for (std::size_t g = 0; g < gts.size(); ++g) gt_by_image[gts[g].image_id].push_back(g);

    std::vector<std::size_t> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return dets[a].confidence > dets[b].confidence;
    });

    std::vector<char> matched(gts.size(), 0);
    std::size_t tp = 0, fp = 0;
    std::vector<double> recall, precision;
    recall.reserve(dets.size());
    precision.reserve(dets.size());
    for (std::size_t i : order) {
        const EvalDetection& d = dets[i];
        double best_iou = 0.0;
        std::size_t best_g = gts.size();
        const auto it = gt_by_image.find(d.image_id);
        if (it != gt_by_image.end()) {
            for (std::size_t g : it->second) {
                if (matched[g]) continue;
                const double v = iou(d.box, gts[g].box);
                if (v >= iou_threshold && v > best_iou) {
                    best_iou = v;
                    best_g = g;
                }
            }
        }
        if (best_g < gts.size()) {
            matched[best_g] = 1;
            ++tp;
        } else {
            ++fp;
        }
        recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    }

    // Precision envelope sampled at 101 recall levels.
    std::vector<double> env(precision.size());
    double best = 0.0;
    for (std::size_t k = precision.size(); k-- > 0;) {
        best = std::max(best, precision[k]);
        env[k] = best;
    }
    double ap = 0.0;
    for (int level = 0; level <= 100; ++level) {
        const auto it = std::lower_bound(recall.begin(), recall.end(), level / 100.0);
        if (it != recall.end()) ap += env[static_cast<std::size_t>(it - recall.begin())];
    }
    return ap / 101.0;
}

EvalResult evaluate_detections(const std::vector<EvalDetection>& dets,
                               const std::vector<EvalGroundTruth>& gts,
                               const std::vector<CategorySpec>& specs) {
    std::map<int, std::vector<EvalGroundTruth>> gt_by_cat;
    for (const EvalGroundTruth& g : gts) gt_by_cat[g.category_id].push_back(g);
    std::map<int, std::vector<EvalDetection>> det_by_cat;
    for (const EvalDetection& d : dets) det_by_cat[d.category_id].push_back(d);

    std::map<int, Split> split_of;
    for (const CategorySpec& s : specs) split_of[s.id] = s.split;

    const std::vector<double> thresholds = default_iou_thresholds();
    EvalResult r;
    r.num_gt = gts.size();
    r.num_detections = dets.size();
    double sum = 0.0, sum_base = 0.0, sum_novel = 0.0;
    std::size_t n = 0, n_base = 0, n_novel = 0;
    static const std::vector<EvalDetection> kNoDets;
    for (const auto& [cat, cat_gts] : gt_by_cat) {
        const auto dit = det_by_cat.find(cat);
        const std::vector<EvalDetection>& cat_dets = dit == det_by_cat.end() ? kNoDets : dit->second;
        double acc = 0.0;
        for (double t : thresholds) acc += average_precision(cat_dets, cat_gts, t);
        const double ap = acc / static_cast<double>(thresholds.size());
        r.per_category[cat] = ap;
        sum += ap;
        ++n;
        const auto sit = split_of.find(cat);
        if (sit != split_of.end() && sit->second == Split::kNovel) {
            sum_novel += ap;
            ++n_novel;
        } else {
            sum_base += ap;
            ++n_base;
        }
    }
    r.ap = n ? sum / static_cast<double>(n) : 0.0;
    r.ap_base = n_base ? sum_base / static_cast<double>(n_base) : 0.0;
    r.ap_novel = n_novel ? sum_novel / static_cast<double>(n_novel) : 0.0;
    return r;
}

EvalResult evaluate_model(const DetectorModel& model, const DatasetManifest& manifest,
                          const std::vector<CategorySpec>& specs, const EvalConfig& cfg) {
    std::vector<EvalDetection> dets;
    std::vector<EvalGroundTruth> gts;
    for (const ImageRecord& rec : manifest.records) {
        for (const Annotation& a : rec.annotations) {
            gts.push_back(EvalGroundTruth{rec.id, a.box, a.category_id});
        }
        const Image img = render_source(rec.source);
        std::map<int, int> per_cat;
        for (const Detection& d : infer(img, model, cfg.score_threshold, cfg.nms_iou)) {
            if (++per_cat[d.category_id] > cfg.max_per_category_per_image) continue;
            dets.push_back(EvalDetection{rec.id, d.box, d.category_id, d.confidence});
        }
    }
    return evaluate_detections(dets, gts, specs);
}

void save_eval_result(const EvalResult& r, const std::string& path,
                      const std::string& header_comment) {
    auto os = open_out(path, false);
    if (!header_comment.empty()) os << "# " << header_comment << "\n";
    os << "ap=" << format_double(r.ap) << "\n";
    os << "ap_base=" << format_double(r.ap_base) << "\n";
    os << "ap_novel=" << format_double(r.ap_novel) << "\n";
    os << "num_gt=" << r.num_gt << "\n";
    os << "num_detections=" << r.num_detections << "\n";
    for (const auto& [cat, ap] : r.per_category) {
        os << "category." << cat << "=" << format_double(ap) << "\n";
    }
    if (!os) throw IoError("failed writing eval result to " + path);
}

EvalResult load_eval_result(const std::string& path) {
    auto is = open_in(path, false);
    EvalResult r;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) throw IoError(path + ": malformed line '" + line + "'");
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        try {
            if (key == "ap") {
                r.ap = std::stod(val);
            } else if (key == "ap_base") {
                r.ap_base = std::stod(val);
            } else if (key == "ap_novel") {
                r.ap_novel = std::stod(val);
            } else if (key == "num_gt") {
                r.num_gt = static_cast<std::size_t>(std::stoull(val));
            } else if (key == "num_detections") {
                r.num_detections = static_cast<std::size_t>(std::stoull(val));
            } else if (key.rfind("category.", 0) == 0) {
                r.per_category[std::stoi(key.substr(9))] = std::stod(val);
            } else {
                throw IoError(path + ": unknown key '" + key + "'");
            }
        } catch (const std::logic_error&) {
            throw IoError(path + ": bad number in line '" + line + "'");
        }
    }
    return r;
}

}  // namespace ovd
