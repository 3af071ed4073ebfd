#include "ovd/config.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <sstream>
#include <variant>
#include <vector>

#include "ovd/io.hpp"

namespace ovd {
namespace {

using FieldRef = std::variant<std::uint64_t*, int*, double*, bool*, std::string*,
                              std::vector<double>*, ClassifierMode*, BoxGenStrategy*>;

struct Field {
    const char* key;
    const char* comment;  // semantic one-liner; nullptr for self-evident keys
    FieldRef ref;
};

// Single source of truth for the config schema; serialize and parse both walk
// this list, and the round-trip property is pinned by tests.
std::vector<Field> schema(RunConfig& c) {
    return {
        {"seed", "master seed; every stage derives its streams from it", &c.seed},
        {"out_dir", "artifact directory for pipeline stages", &c.out_dir},
        {"data_dir", "benchmark data directory; empty means <out_dir>/bench", &c.data_dir},

        {"encoder.embed_dim", "shared text/image embedding width (at most the image channel count)", &c.embed_dim},
        {"encoder.d_tok", "word-vector width inside the text encoder", &c.d_tok},
        {"encoder.mixing_depth", "tanh mixing layers in the text encoder", &c.mixing_depth},
        {"encoder.max_seq_len", nullptr, &c.max_seq_len},

        {"classifier.temperature", "divisor on cosine similarity before the activation",
         &c.classifier.temperature},
        {"classifier.mode", "softmax or sigmoid over category logits", &c.classifier.mode},

        {"rpl.temperature", "softmax temperature while fitting prompt vectors", &c.rpl_temperature},
        {"rpl.epochs", nullptr, &c.rpl.epochs},
        {"rpl.learning_rate", nullptr, &c.rpl.learning_rate},
        {"rpl.momentum", nullptr, &c.rpl.momentum},
        {"rpl.batch_size", nullptr, &c.rpl.batch_size},
        {"rpl.max_crops_per_class", "cap on expanded crops sampled per base category",
         &c.rpl.max_crops_per_class},
        {"rpl.prefix_count", "trainable vectors before the category tokens", &c.rpl.prefix_count},
        {"rpl.suffix_count", "trainable vectors after the category tokens", &c.rpl.suffix_count},
        {"rpl.init_std", nullptr, &c.rpl.init_std},
        {"rpl.refresh_per_epoch", "rebuild the category matrix per epoch instead of per step",
         &c.rpl.refresh_per_epoch},

        {"sourcing.images_per_category", "candidates retrieved per novel category",
         &c.sourcing.images_per_category},
        {"sourcing.iterations", "1 = single pass; 2 = re-learn prompts on retrieved crops",
         &c.sourcing.iterations},
        {"sourcing.base_augment_count", "iteration-2 corpus records appended per base category",
         &c.sourcing.base_augment_count},

        {"pseudo.top_k", "proposals kept (by objectness) before label selection", &c.pseudo.top_k},
        {"pseudo.scale_a_min", "short-side range A for multiscale labeling", &c.pseudo.scale_a_min},
        {"pseudo.scale_a_max", nullptr, &c.pseudo.scale_a_max},
        {"pseudo.scale_b_min", "short-side range B, above range A", &c.pseudo.scale_b_min},
        {"pseudo.scale_b_max", nullptr, &c.pseudo.scale_b_max},
        {"pseudo.box_gen", "whole_image, max_size, max_obj_score or max_pred_score", &c.box_gen},

        {"selftrain.phase1_epochs", "base-only epochs before labeling", &c.selftrain.phase1_epochs},
        {"selftrain.phase2_epochs", "base+pseudo epochs after labeling", &c.selftrain.phase2_epochs},
        {"selftrain.mix_base", "base images per interleave group in phase 2", &c.selftrain.mix_base},
        {"selftrain.mix_pseudo", "pseudo images per interleave group in phase 2",
         &c.selftrain.mix_pseudo},
        {"selftrain.rpn_classifier_trainable", nullptr, &c.selftrain.rpn_classifier_trainable},
        {"selftrain.box_head_trainable", nullptr, &c.selftrain.box_head_trainable},

        {"detector.conv1_channels", nullptr, &c.detector.conv1_channels},
        {"detector.conv2_channels", nullptr, &c.detector.conv2_channels},
        {"detector.anchor_sizes", "square anchor side lengths in pixels", &c.detector.anchor_sizes},
        {"detector.max_proposals", nullptr, &c.detector.max_proposals},
        {"detector.rpn_nms_iou", nullptr, &c.detector.rpn_nms_iou},
        {"detector.roi_grid", "pooling grid per side for ROI features", &c.detector.roi_grid},
        {"detector.learning_rate", nullptr, &c.detector.learning_rate},
        {"detector.momentum", nullptr, &c.detector.momentum},
        {"detector.weight_decay", nullptr, &c.detector.weight_decay},
        {"detector.anchor_pos_iou", "IoU at or above which an anchor is a positive",
         &c.detector.anchor_pos_iou},
        {"detector.anchor_neg_iou", "IoU below which an anchor is a negative",
         &c.detector.anchor_neg_iou},
        {"detector.anchor_pos_samples", nullptr, &c.detector.anchor_pos_samples},
        {"detector.anchor_neg_samples", nullptr, &c.detector.anchor_neg_samples},
        {"detector.anchor_mid_samples", "sampled anchors between the IoU bands",
         &c.detector.anchor_mid_samples},
        {"detector.roi_jitter_pos", "jittered positive ROIs per annotation",
         &c.detector.roi_jitter_pos},
        {"detector.roi_jitter_neg", "near-miss negative ROIs per annotation",
         &c.detector.roi_jitter_neg},
        {"detector.roi_hard_neg", "badly framed overlap negatives per annotation",
         &c.detector.roi_hard_neg},
        {"detector.roi_random_neg", "random negative ROIs per image", &c.detector.roi_random_neg},
        {"detector.delta_clamp", "cap on log-size deltas at proposal decode time",
         &c.detector.delta_clamp},

        {"eval.score_threshold", nullptr, &c.eval.score_threshold},
        {"eval.nms_iou", nullptr, &c.eval.nms_iou},
        {"eval.max_per_category_per_image", nullptr, &c.eval.max_per_category_per_image},

        {"bench.num_base", nullptr, &c.bench.num_base},
        {"bench.num_novel", nullptr, &c.bench.num_novel},
        {"bench.train_images", nullptr, &c.bench.train_images},
        {"bench.eval_images", nullptr, &c.bench.eval_images},
        {"bench.corpus_per_category", nullptr, &c.bench.corpus_per_category},
        {"bench.junk_records", "corpus records with no labeled object", &c.bench.junk_records},
        {"bench.train_image_size", "train/eval image side in pixels", &c.bench.train_image_size},
        {"bench.corpus_image_size", nullptr, &c.bench.corpus_image_size},
        {"bench.noise_sigma", "background noise level", &c.bench.noise_sigma},
        {"bench.pattern_amp", "embedding-space magnitude of category patterns",
         &c.bench.pattern_amp},
        {"bench.ghost_amp", "faint same-pattern copy amplitude, relative", &c.bench.ghost_amp},
        {"bench.ghost_prob", nullptr, &c.bench.ghost_prob},
        {"bench.distractor_prob", "chance of a full-contrast random blob per corpus record",
         &c.bench.distractor_prob},
        {"bench.centricity_min", "object fraction of the corpus image side", &c.bench.centricity_min},
        {"bench.centricity_max", nullptr, &c.bench.centricity_max},
        {"bench.min_self_check", "required nearest-target accuracy of the generated world",
         &c.bench.min_self_check},
    };
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
    throw ConfigError("key '" + key + "': cannot parse '" + value + "' as " + want);
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(value, &pos);
        if (pos != value.size()) bad_value(key, value, "a number");
        return d;
    } catch (const std::logic_error&) {
        bad_value(key, value, "a number");
    }
}

long long parse_ll(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(value, &pos);
        if (pos != value.size()) bad_value(key, value, "an integer");
        return v;
    } catch (const std::logic_error&) {
        bad_value(key, value, "an integer");
    }
}

void assign(const std::string& key, const std::string& value, const FieldRef& ref) {
    std::visit(
        [&](auto* p) {
            using T = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<T, std::uint64_t>) {
                try {
                    std::size_t pos = 0;
                    *p = std::stoull(value, &pos);
                    if (pos != value.size()) bad_value(key, value, "an unsigned integer");
                } catch (const std::logic_error&) {
                    bad_value(key, value, "an unsigned integer");
                }
            } else if constexpr (std::is_same_v<T, int>) {
                const long long v = parse_ll(key, value);
                if (v < INT32_MIN || v > INT32_MAX) bad_value(key, value, "an integer");
                *p = static_cast<int>(v);
            } else if constexpr (std::is_same_v<T, double>) {
                *p = parse_double(key, value);
            } else if constexpr (std::is_same_v<T, bool>) {
                if (value == "true") {
                    *p = true;
                } else if (value == "false") {
                    *p = false;
                } else {
                    bad_value(key, value, "true or false");
                }
            } else if constexpr (std::is_same_v<T, std::string>) {
                *p = value;
            } else if constexpr (std::is_same_v<T, std::vector<double>>) {
                std::vector<double> list;
                std::stringstream ss(value);
                std::string item;
                while (std::getline(ss, item, ',')) list.push_back(parse_double(key, item));
                if (list.empty()) bad_value(key, value, "a comma-separated number list");
                *p = std::move(list);
            } else if constexpr (std::is_same_v<T, ClassifierMode>) {
                if (value == "softmax") {
                    *p = ClassifierMode::kSoftmax;
                } else if (value == "sigmoid") {
                    *p = ClassifierMode::kSigmoid;
                } else {
                    bad_value(key, value, "softmax or sigmoid");
                }
            } else if constexpr (std::is_same_v<T, BoxGenStrategy>) {
                *p = strategy_from_name(value);
            }
        },
        ref);
}

std::string render(const FieldRef& ref) {
    return std::visit(
        [&](auto* p) -> std::string {
            using T = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<T, std::uint64_t>) {
                return std::to_string(*p);
            } else if constexpr (std::is_same_v<T, int>) {
                return std::to_string(*p);
            } else if constexpr (std::is_same_v<T, double>) {
                return format_double(*p);
            } else if constexpr (std::is_same_v<T, bool>) {
                return *p ? "true" : "false";
            } else if constexpr (std::is_same_v<T, std::string>) {
                return *p;
            } else if constexpr (std::is_same_v<T, std::vector<double>>) {
                std::string out;
                for (std::size_t i = 0; i < p->size(); ++i) {
                    if (i) out += ',';
                    out += format_double((*p)[i]);
                }
                return out;
            } else if constexpr (std::is_same_v<T, ClassifierMode>) {
                return *p == ClassifierMode::kSoftmax ? "softmax" : "sigmoid";
            } else if constexpr (std::is_same_v<T, BoxGenStrategy>) {
                return strategy_name(*p);
            }
        },
        ref);
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string section_of(const std::string& key) {
    const std::size_t dot = key.find('.');
    return dot == std::string::npos ? std::string() : key.substr(0, dot);
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    auto fields = schema(cfg);
    std::map<std::string, const Field*> by_key;
    for (const Field& f : fields) by_key[f.key] = &f;

    std::map<std::string, bool> seen;
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = by_key.find(key);
        if (it == by_key.end()) throw ConfigError("unknown key '" + key + "'");
        if (seen[key]) throw ConfigError("duplicate key '" + key + "'");
        seen[key] = true;
        assign(key, value, it->second->ref);
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    auto is = open_in(path, false);
    std::stringstream buf;
    buf << is.rdbuf();
    try {
        return parse_run_config(buf.str());
    } catch (ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::string serialize_run_config(const RunConfig& cfg) {
    RunConfig copy = cfg;  // schema() needs mutable refs; values are read only
    std::string out;
    std::string section;
    bool first = true;
    for (const Field& f : schema(copy)) {
        const std::string sec = section_of(f.key);
        if (!first && sec != section) out += '\n';
        first = false;
        section = sec;
        if (f.comment) {
            out += "# ";
            out += f.comment;
            out += '\n';
        }
        out += f.key;
        out += " = ";
        out += render(f.ref);
        out += '\n';
    }
    return out;
}

std::uint64_t config_hash(const RunConfig& cfg) {
    const std::string s = serialize_run_config(cfg);
    return fnv1a64(s.data(), s.size());
}

void validate_run_config(const RunConfig& cfg) {
    const auto fail = [](const std::string& key, const std::string& why) {
        throw ConfigError("key '" + key + "': " + why);
    };
    if (cfg.out_dir.empty()) fail("out_dir", "must not be empty");
    if (cfg.embed_dim < 8 || cfg.embed_dim > kImageChannels) {
        fail("encoder.embed_dim", "must be in [8, image channel count]");
    }
    if (cfg.d_tok < 4) fail("encoder.d_tok", "must be at least 4");
    if (cfg.mixing_depth < 1 || cfg.mixing_depth > 8) fail("encoder.mixing_depth", "must be in [1, 8]");
    if (cfg.max_seq_len < 8) fail("encoder.max_seq_len", "must be at least 8");
    if (cfg.classifier.temperature <= 0.0) fail("classifier.temperature", "must be positive");
    if (cfg.rpl_temperature <= 0.0) fail("rpl.temperature", "must be positive");
    if (cfg.rpl.epochs < 0) fail("rpl.epochs", "must be non-negative");
    if (cfg.rpl.learning_rate <= 0.0) fail("rpl.learning_rate", "must be positive");
    if (cfg.rpl.momentum < 0.0 || cfg.rpl.momentum >= 1.0) fail("rpl.momentum", "must be in [0, 1)");
    if (cfg.rpl.batch_size < 1) fail("rpl.batch_size", "must be at least 1");
    if (cfg.rpl.max_crops_per_class < 1) fail("rpl.max_crops_per_class", "must be at least 1");
    if (cfg.rpl.prefix_count > 8 || cfg.rpl.suffix_count > 8) {
        fail("rpl.prefix_count", "prompt vector counts above 8 are unsupported");
    }
    if (cfg.rpl.init_std <= 0.0) fail("rpl.init_std", "must be positive");
    if (cfg.sourcing.images_per_category < 1) {
        fail("sourcing.images_per_category", "must be at least 1");
    }
    if (cfg.sourcing.iterations != 1 && cfg.sourcing.iterations != 2) {
        fail("sourcing.iterations", "must be 1 or 2");
    }
    if (cfg.sourcing.base_augment_count < 0) fail("sourcing.base_augment_count", "must be >= 0");
    if (cfg.pseudo.top_k < 1) fail("pseudo.top_k", "must be at least 1");
    if (!(0.0 < cfg.pseudo.scale_a_min && cfg.pseudo.scale_a_min <= cfg.pseudo.scale_a_max &&
          cfg.pseudo.scale_a_max <= cfg.pseudo.scale_b_min &&
          cfg.pseudo.scale_b_min <= cfg.pseudo.scale_b_max)) {
        fail("pseudo.scale_a_min", "scale ranges must satisfy 0 < a_min <= a_max <= b_min <= b_max");
    }
    if (cfg.selftrain.phase1_epochs < 0 || cfg.selftrain.phase2_epochs < 0) {
        fail("selftrain.phase1_epochs", "epoch counts must be non-negative");
    }
    if (cfg.selftrain.mix_base < 1) fail("selftrain.mix_base", "must be at least 1");
    if (cfg.selftrain.mix_pseudo < 0) fail("selftrain.mix_pseudo", "must be non-negative");
    if (cfg.detector.conv1_channels < 1 || cfg.detector.conv2_channels < 1) {
        fail("detector.conv1_channels", "channel counts must be positive");
    }
    if (cfg.detector.anchor_sizes.empty()) fail("detector.anchor_sizes", "must not be empty");
    for (double s : cfg.detector.anchor_sizes) {
        if (s <= 0.0) fail("detector.anchor_sizes", "sizes must be positive");
    }
    if (cfg.detector.max_proposals < 1) fail("detector.max_proposals", "must be at least 1");
    if (cfg.detector.rpn_nms_iou <= 0.0 || cfg.detector.rpn_nms_iou > 1.0) {
        fail("detector.rpn_nms_iou", "must be in (0, 1]");
    }
    if (cfg.detector.roi_grid < 1 || cfg.detector.roi_grid > 8) {
        fail("detector.roi_grid", "must be in [1, 8]");
    }
    if (cfg.detector.learning_rate <= 0.0) fail("detector.learning_rate", "must be positive");
    if (cfg.detector.momentum < 0.0 || cfg.detector.momentum >= 1.0) {
        fail("detector.momentum", "must be in [0, 1)");
    }
    if (cfg.detector.weight_decay < 0.0) fail("detector.weight_decay", "must be non-negative");
    if (cfg.detector.anchor_pos_iou <= cfg.detector.anchor_neg_iou) {
        fail("detector.anchor_pos_iou", "must exceed detector.anchor_neg_iou");
    }
    if (cfg.detector.anchor_pos_samples < 1 || cfg.detector.anchor_neg_samples < 1) {
        fail("detector.anchor_pos_samples", "sample counts must be positive");
    }
    if (cfg.detector.anchor_mid_samples < 0) {
        fail("detector.anchor_mid_samples", "must be non-negative");
    }
    if (cfg.detector.roi_jitter_pos < 0 || cfg.detector.roi_jitter_neg < 0 ||
        cfg.detector.roi_hard_neg < 0 || cfg.detector.roi_random_neg < 0) {
        fail("detector.roi_jitter_pos", "ROI sample counts must be non-negative");
    }
    if (cfg.detector.delta_clamp <= 0.0) fail("detector.delta_clamp", "must be positive");
    if (cfg.eval.score_threshold < 0.0 || cfg.eval.score_threshold >= 1.0) {
        fail("eval.score_threshold", "must be in [0, 1)");
    }
    if (cfg.eval.nms_iou <= 0.0 || cfg.eval.nms_iou > 1.0) fail("eval.nms_iou", "must be in (0, 1]");
    if (cfg.eval.max_per_category_per_image < 1) {
        fail("eval.max_per_category_per_image", "must be at least 1");
    }
    if (cfg.bench.num_base < 2 || cfg.bench.num_novel < 1) {
        fail("bench.num_base", "need at least 2 base and 1 novel category");
    }
    if (cfg.bench.min_self_check <= 0.0 || cfg.bench.min_self_check > 1.0) {
        fail("bench.min_self_check", "must be in (0, 1]");
    }
}

ToyEncoderConfig encoder_config(const RunConfig& cfg, std::size_t vocab_size) {
    ToyEncoderConfig e;
    e.vocab_size = vocab_size;
    e.d_tok = static_cast<std::size_t>(cfg.d_tok);
    e.embed_dim = static_cast<std::size_t>(cfg.embed_dim);
    e.seed = cfg.seed;
    e.mixing_depth = static_cast<std::size_t>(cfg.mixing_depth);
    e.max_seq_len = static_cast<std::size_t>(cfg.max_seq_len);
    return e;
}

}  // namespace ovd
