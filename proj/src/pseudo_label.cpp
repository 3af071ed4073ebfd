#include "ovd/pseudo_label.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <unordered_map>

#include "ovd/io.hpp"
#include "ovd/rng.hpp"
#include "ovd/synth_image.hpp"

namespace ovd {
namespace {

std::vector<int> checked_allowed(const std::vector<int>& allowed, const DetectorModel& model) {
    if (allowed.empty()) throw InvalidSpecError("generate_pseudo_box: empty allowed category set");
    std::vector<int> out = allowed;
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    for (int c : out) {
        if (c < 0 || static_cast<std::size_t>(c) >= model.category_matrix.num_categories) {
            throw InvalidSpecError("generate_pseudo_box: allowed category " + std::to_string(c) +
                                   " outside the matrix");
        }
    }
    return out;
}

// Best allowed category for one ROI. `allowed` is sorted, so ties keep the
// lower id.
std::pair<int, double> best_allowed(const Vec& scores, const std::vector<int>& allowed) {
    int cat = allowed.front();
    double best = scores[static_cast<std::size_t>(cat)];
    for (std::size_t i = 1; i < allowed.size(); ++i) {
        const double s = scores[static_cast<std::size_t>(allowed[i])];
        if (s > best) {
            best = s;
            cat = allowed[i];
        }
    }
    return {cat, best};
}

}  // namespace

std::string strategy_name(BoxGenStrategy s) {
    switch (s) {
        case BoxGenStrategy::kWholeImage: return "whole_image";
        case BoxGenStrategy::kMaxSize: return "max_size";
        case BoxGenStrategy::kMaxObjScore: return "max_obj_score";
        case BoxGenStrategy::kMaxPredScore: return "max_pred_score";
    }
    throw InvalidSpecError("strategy_name: unknown strategy");
}

BoxGenStrategy strategy_from_name(const std::string& s) {
    if (s == "whole_image") return BoxGenStrategy::kWholeImage;
    if (s == "max_size") return BoxGenStrategy::kMaxSize;
    if (s == "max_obj_score") return BoxGenStrategy::kMaxObjScore;
    if (s == "max_pred_score") return BoxGenStrategy::kMaxPredScore;
    throw ConfigError("unknown box generation strategy '" + s + "'");
}

PseudoBox generate_pseudo_box(const Image& img, const DetectorModel& model, BoxGenStrategy strategy,
                              int top_k, const std::vector<int>& allowed) {
    if (top_k < 1) throw InvalidSpecError("generate_pseudo_box: top_k must be >= 1");
    const std::vector<int> cats = checked_allowed(allowed, model);

    PseudoBox pb;
    pb.strategy = strategy;
    if (strategy == BoxGenStrategy::kWholeImage) {
        const Vec scores = classify_roi(extract_roi(img, img.full_box(), model), model);
        const auto [cat, conf] = best_allowed(scores, cats);
        pb.box = img.full_box();
        pb.category_id = cat;
        pb.confidence = conf;
        return pb;
    }

    const BackboneFeatures feats = run_backbone(img, model);
    const std::vector<Proposal> props = propose_from_features(feats, model);
    if (props.empty()) throw NoProposalsError("generate_pseudo_box: no proposals");
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(top_k), props.size());

    if (strategy == BoxGenStrategy::kMaxPredScore) {
        bool found = false;
        for (std::size_t i = 0; i < k; ++i) {
            const Vec scores =
                classify_roi(extract_roi_from_features(feats, img, props[i].box, model), model);
            const auto [cat, conf] = best_allowed(scores, cats);
            if (!found || conf > pb.confidence) {
                found = true;
                pb.box = props[i].box;
                pb.category_id = cat;
                pb.confidence = conf;
            }
        }
        return pb;
    }

    std::size_t pick = 0;  // max_obj_score: proposals are already objectness-sorted
    if (strategy == BoxGenStrategy::kMaxSize) {
        double best_area = props[0].box.area();
        for (std::size_t i = 1; i < k; ++i) {
            if (props[i].box.area() > best_area) {
                best_area = props[i].box.area();
                pick = i;
            }
        }
    }
    const Vec scores = classify_roi(extract_roi_from_features(feats, img, props[pick].box, model), model);
    const auto [cat, conf] = best_allowed(scores, cats);
    pb.box = props[pick].box;
    pb.category_id = cat;
    pb.confidence = conf;
    return pb;
}

PseudoBox multiscale_pseudo_box(int record_id, const std::string& source,
                                const std::vector<int>& allowed, const DetectorModel& model,
                                const PseudoLabelConfig& cfg, BoxGenStrategy strategy) {
    if (!(0.0 < cfg.scale_a_min && cfg.scale_a_min <= cfg.scale_a_max &&
          cfg.scale_a_max <= cfg.scale_b_min && cfg.scale_b_min <= cfg.scale_b_max)) {
        throw InvalidSpecError("multiscale_pseudo_box: scale ranges must be ordered");
    }
    const ImageSpec spec = parse_image_spec(source);
    const double short_side = static_cast<double>(std::min(spec.width, spec.height));

    Rng rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(record_id)));
    const double target_a = rng.uniform(cfg.scale_a_min, cfg.scale_a_max);
    const double target_b = rng.uniform(cfg.scale_b_min, cfg.scale_b_max);

    const auto at_scale = [&](double target, PseudoBox* out) -> bool {
        const double factor = target / short_side;
        const ImageSpec scaled = scale_image_spec(spec, factor);
        try {
            PseudoBox pb =
                generate_pseudo_box(render_image_spec(scaled), model, strategy, cfg.top_k, allowed);
            pb.box = strategy == BoxGenStrategy::kWholeImage
                         ? Box{0.0, 0.0, static_cast<double>(spec.width),
                               static_cast<double>(spec.height)}
                         : pb.box.scaled(1.0 / factor);
            *out = pb;
            return true;
        } catch (const NoProposalsError&) {
            return false;
        }
    };

    PseudoBox a, b;
    const bool a_ok = at_scale(target_a, &a);
    const bool b_ok = at_scale(target_b, &b);
    if (!a_ok && !b_ok) {
        throw NoProposalsError("multiscale_pseudo_box: no proposals at either scale for record " +
                               std::to_string(record_id));
    }
    PseudoBox pb = a_ok && (!b_ok || a.confidence >= b.confidence) ? a : b;
    pb.record_id = record_id;
    return pb;
}

std::map<int, std::vector<int>> allowed_by_record(const CandidateSet& candidates) {
    std::map<int, std::vector<int>> allowed;
    for (const auto& [cat, list] : candidates.per_category) {
        for (const ScoredRecord& sr : list) allowed[sr.record_id].push_back(cat);
    }
    for (auto& [rec_id, cats] : allowed) {
        std::sort(cats.begin(), cats.end());
        cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
    }
    return allowed;
}

PseudoManifestResult build_pseudo_manifest(const std::vector<PseudoBox>& boxes,
                                           const EmbeddingCorpus& corpus,
                                           const PseudoLabelConfig& pl_cfg, std::uint64_t seed) {
    std::unordered_map<int, const CorpusRecord*> by_id;
    for (const CorpusRecord& rec : corpus.records) by_id[rec.id] = &rec;

    PseudoManifestResult out;
    const std::uint64_t jitter_seed = Rng::mix(seed, 0x6a697474);
    for (const PseudoBox& pb : boxes) {
        const auto it = by_id.find(pb.record_id);
        if (it == by_id.end()) {
            throw InvalidSpecError("build_pseudo_manifest: record " + std::to_string(pb.record_id) +
                                   " missing from the corpus");
        }
        const ImageSpec spec = parse_image_spec(it->second->uri);
        const double short_side = static_cast<double>(std::min(spec.width, spec.height));
        Rng rng(Rng::mix(jitter_seed, static_cast<std::uint64_t>(pb.record_id)));
        const double factor = rng.uniform(pl_cfg.scale_a_min, pl_cfg.scale_b_max) / short_side;
        const ImageSpec scaled = scale_image_spec(spec, factor);
        const Box box = pb.box.scaled(factor).clipped(scaled.width, scaled.height);
        if (!box.valid() || box.width() < 4.0 || box.height() < 4.0) {
            out.dropped.push_back(std::to_string(pb.record_id) +
                                  ": pseudo box degenerate after rescale");
            continue;
        }
        ImageRecord rec;
        rec.id = 100000 + pb.record_id;
        rec.width = scaled.width;
        rec.height = scaled.height;
        rec.source = encode_image_spec(scaled);
        rec.annotations.push_back(Annotation{box, pb.category_id});
        out.manifest.records.push_back(std::move(rec));
    }
    return out;
}

SelfTrainResult self_train(DetectorModel& model, const DatasetManifest& base_manifest,
                           const CandidateSet& candidates, const EmbeddingCorpus& corpus,
                           const SelfTrainSchedule& schedule, const PseudoLabelConfig& pl_cfg,
                           BoxGenStrategy strategy, const DetectorConfig& det_cfg,
                           std::uint64_t seed) {
    if (schedule.phase1_epochs < 0 || schedule.phase2_epochs < 0) {
        throw InvalidSpecError("self_train: negative epoch count");
    }
    if (schedule.mix_base < 1 || schedule.mix_pseudo < 0) {
        throw InvalidSpecError("self_train: bad mixing ratio");
    }
    model.rpn_classifier_trainable = schedule.rpn_classifier_trainable;
    model.box_head_trainable = schedule.box_head_trainable;

    DetectorTrainState state = init_train_state(model);
    train_detector_epochs(base_manifest.records, {}, schedule.mix_base, schedule.mix_pseudo, model,
                          state, det_cfg, 0, schedule.phase1_epochs, seed);

    SelfTrainResult result;
    if (!candidates.empty()) {
        std::unordered_map<int, const CorpusRecord*> by_id;
        for (const CorpusRecord& rec : corpus.records) by_id[rec.id] = &rec;
        for (const auto& [rec_id, cats] : allowed_by_record(candidates)) {
            const auto it = by_id.find(rec_id);
            if (it == by_id.end()) {
                throw InvalidSpecError("self_train: candidate record " + std::to_string(rec_id) +
                                       " missing from the corpus");
            }
            try {
                result.pseudo_boxes.push_back(
                    multiscale_pseudo_box(rec_id, it->second->uri, cats, model, pl_cfg, strategy));
            } catch (const NoProposalsError& e) {
                result.dropped.push_back(std::to_string(rec_id) + ": " + e.what());
            }
        }

        PseudoManifestResult pm = build_pseudo_manifest(result.pseudo_boxes, corpus, pl_cfg, seed);
        result.pseudo_manifest = std::move(pm.manifest);
        result.dropped.insert(result.dropped.end(), pm.dropped.begin(), pm.dropped.end());
    }

    train_detector_epochs(base_manifest.records, result.pseudo_manifest.records, schedule.mix_base,
                          schedule.mix_pseudo, model, state, det_cfg, schedule.phase1_epochs,
                          schedule.phase2_epochs, seed);
    return result;
}

void save_pseudo_boxes(const std::vector<PseudoBox>& boxes, const std::string& path) {
    auto os = open_out(path, false);
    os << "# record_id,x1,y1,x2,y2,category_id,confidence,strategy\n";
    for (const PseudoBox& pb : boxes) {
        os << pb.record_id << ',' << format_double(pb.box.x1) << ',' << format_double(pb.box.y1)
           << ',' << format_double(pb.box.x2) << ',' << format_double(pb.box.y2) << ','
           << pb.category_id << ',' << format_double(pb.confidence) << ','
           << strategy_name(pb.strategy) << "\n";
    }
    if (!os) throw IoError("failed writing pseudo boxes to " + path);
}

std::vector<PseudoBox> load_pseudo_boxes(const std::string& path) {
    auto is = open_in(path, false);
    std::vector<PseudoBox> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 8) throw IoError(path + ": expected 8 fields in '" + line + "'");
        try {
            PseudoBox pb;
            pb.record_id = std::stoi(fields[0]);
            pb.box = Box{std::stod(fields[1]), std::stod(fields[2]), std::stod(fields[3]),
                         std::stod(fields[4])};
            pb.category_id = std::stoi(fields[5]);
            pb.confidence = std::stod(fields[6]);
            pb.strategy = strategy_from_name(fields[7]);
            out.push_back(pb);
        } catch (const std::logic_error&) {
            throw IoError(path + ": bad number in '" + line + "'");
        }
    }
    return out;
}

}  // namespace ovd
