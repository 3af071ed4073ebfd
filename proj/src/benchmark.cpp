#include "ovd/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "ovd/errors.hpp"
#include "ovd/io.hpp"
#include "ovd/linalg.hpp"
#include "ovd/rng.hpp"
#include "ovd/synth_image.hpp"

namespace ovd {
namespace {

const char* const kTemplateWords[] = {"a", "photo", "of", "which", "is"};

constexpr std::size_t kCellCount = static_cast<std::size_t>(kImageChannels) * kPatchGrid * kPatchGrid;

const char* const kSyllables[] = {
    "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "ka", "ke", "ki", "ko",
    "ku", "la", "le", "li", "lo", "lu", "ma", "me", "mi", "mo", "mu", "na", "ne", "ni",
    "no", "nu", "ra", "re", "ri", "ro", "ru", "sa", "se", "si", "so", "su", "ta", "te",
    "ti", "to", "tu", "va", "ve", "vi", "vo", "vu", "za", "ze", "zi", "zo", "zu"};
constexpr std::size_t kNumSyllables = sizeof(kSyllables) / sizeof(kSyllables[0]);

std::string make_word(Rng& rng, std::set<std::string>& used) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const std::size_t n = 2 + (rng.uniform() < 0.4 ? 1 : 0);
        std::string w;
        for (std::size_t i = 0; i < n; ++i) w += kSyllables[rng.uniform_index(kNumSyllables)];
        if (used.insert(w).second) return w;
    }
    throw InvalidSpecError("generate_benchmark: word space exhausted");
}

bool intersects(const Box& a, const Box& b) {
    return a.x1 < b.x2 && b.x1 < a.x2 && a.y1 < b.y2 && b.y1 < a.y2;
}

// Uniform placement with a 1px margin; assumes w, h fit.
Box place_box(Rng& rng, double w, double h, double size) {
    const double x1 = rng.uniform(1.0, std::max(1.0 + 1e-9, size - w - 1.0));
    const double y1 = rng.uniform(1.0, std::max(1.0 + 1e-9, size - h - 1.0));
    return Box{x1, y1, x1 + w, y1 + h};
}

Vec scaled_cells(const Vec& pattern, double scale) {
    Vec c(pattern.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = pattern[i] * scale;
    return c;
}

void validate(const BenchmarkSpec& s) {
    if (s.num_base < 2 || s.num_novel < 1) {
        throw InvalidSpecError("benchmark: need at least 2 base and 1 novel category");
    }
    if (s.train_images < s.num_base || s.eval_images < s.num_base + s.num_novel) {
        throw InvalidSpecError("benchmark: too few images to cover every category");
    }
    if (s.corpus_per_category < 1 || s.junk_records < 0) {
        throw InvalidSpecError("benchmark: bad corpus sizes");
    }
    if (s.train_image_size < 48 || s.corpus_image_size < 32) {
        throw InvalidSpecError("benchmark: image sizes too small");
    }
    if (s.noise_sigma <= 0.0 || s.pattern_amp <= 0.0) {
        throw InvalidSpecError("benchmark: noise and pattern amplitudes must be positive");
    }
    if (s.ghost_amp <= 0.0 || s.ghost_amp >= 1.0 || s.ghost_prob < 0.0 || s.ghost_prob > 1.0 ||
        s.distractor_prob < 0.0 || s.distractor_prob > 1.0) {
        throw InvalidSpecError("benchmark: ghost/distractor knobs out of range");
    }
    if (s.centricity_min <= 0.0 || s.centricity_min > s.centricity_max || s.centricity_max >= 0.95) {
        throw InvalidSpecError("benchmark: centricity range out of (0, 0.95)");
    }
    if (s.min_self_check <= 0.0 || s.min_self_check > 1.0) {
        throw InvalidSpecError("benchmark: min_self_check out of (0, 1]");
    }
}

BenchmarkData build_world(const BenchmarkSpec& spec, const ToyEncoderConfig& tmpl,
                          std::uint64_t world_seed) {
    Rng rng(world_seed);
    const int num_cats = spec.num_base + spec.num_novel;

    BenchmarkData data;
    std::set<std::string> used;
    for (const char* w : kTemplateWords) used.insert(w);
    data.ctx_pre = make_word(rng, used);
    data.ctx_post = make_word(rng, used);
    for (int c = 0; c < num_cats; ++c) {
        CategorySpec cs;
        cs.id = c;
        cs.name = make_word(rng, used);
        const std::size_t desc_words = 3 + rng.uniform_index(4);
        std::string desc;
        for (std::size_t i = 0; i < desc_words; ++i) {
            if (i) desc += ' ';
            desc += make_word(rng, used);
        }
        cs.description = desc;
        cs.split = c < spec.num_base ? Split::kBase : Split::kNovel;
        data.categories.push_back(cs);
    }

    for (const char* w : kTemplateWords) data.vocab.add(w);
    data.vocab.add(data.ctx_pre);
    data.vocab.add(data.ctx_post);
    for (const CategorySpec& cs : data.categories) {
        data.vocab.add(cs.name);
        for (const std::string& w : split_words(cs.description)) data.vocab.add(w);
    }

    data.enc_cfg = tmpl;
    data.enc_cfg.vocab_size = data.vocab.size();
    const auto text_enc = build_toy_text_encoder(data.enc_cfg);
    const auto img_enc = build_toy_image_encoder(data.enc_cfg);

    // Hidden-phrase targets.
    const std::size_t D = data.enc_cfg.embed_dim;
    data.targets.num_categories = static_cast<std::size_t>(num_cats);
    data.targets.dim = D;
    data.targets.rows.resize(static_cast<std::size_t>(num_cats) * D);
    for (int c = 0; c < num_cats; ++c) {
        TokenSequence seq;
        seq.push_back(DiscreteToken{data.vocab.lookup(data.ctx_pre)});
        seq.push_back(DiscreteToken{data.vocab.lookup(data.categories[c].name)});
        seq.push_back(DiscreteToken{data.vocab.lookup(data.ctx_post)});
        for (int id : tokenize(data.categories[c].description, data.vocab)) {
            seq.push_back(DiscreteToken{id});
        }
        const UnitEmbedding tau = text_enc->encode(seq);
        std::copy(tau.values.begin(), tau.values.end(), data.targets.row(static_cast<std::size_t>(c)));
    }

    // Cell patterns: pooling an exact patch at the encoder grid reads each
    // painted cell back verbatim, so encode(patch) = W_eff * cells where
    // W_eff aggregates the encoder columns lying inside each painted cell.
    // The least-norm solution of W_eff * cells = amp * tau then makes the
    // exact crop embedding point along the category target.
    const Vec& W = img_enc->weight();
    const std::size_t S = ToyImageEncoder::stat_dim();
    const std::size_t G = ToyImageEncoder::kGrid;
    const std::size_t P = kPatchGrid;
    const std::size_t R = G / P;  // encoder cells per painted cell and axis
    const std::size_t C = kImageChannels * P * P;
    Vec w_eff(D * C, 0.0);
    for (std::size_t d = 0; d < D; ++d) {
        for (std::size_t ch = 0; ch < static_cast<std::size_t>(kImageChannels); ++ch) {
            for (std::size_t gy = 0; gy < G; ++gy) {
                for (std::size_t gx = 0; gx < G; ++gx) {
                    const std::size_t cell = (ch * P + gy / R) * P + gx / R;
                    w_eff[d * C + cell] += W[d * S + (ch * G + gy) * G + gx];
                }
            }
        }
    }
    Vec gram(D * D);
    for (std::size_t i = 0; i < D; ++i) {
        for (std::size_t j = 0; j < D; ++j) {
            double acc = 0.0;
            for (std::size_t s = 0; s < C; ++s) acc += w_eff[i * C + s] * w_eff[j * C + s];
            gram[i * D + j] = acc;
        }
    }
    const Vec chol = cholesky_factor(gram, D);
    for (int c = 0; c < num_cats; ++c) {
        Vec b(D);
        const double* tau = data.targets.row(static_cast<std::size_t>(c));
        for (std::size_t i = 0; i < D; ++i) b[i] = spec.pattern_amp * tau[i];
        const Vec y = cholesky_solve(chol, D, b);
        Vec s(C, 0.0);
        for (std::size_t i = 0; i < D; ++i) {
            for (std::size_t st = 0; st < C; ++st) s[st] += w_eff[i * C + st] * y[i];
        }
        data.patterns.push_back(std::move(s));
    }

    // Train and eval images: clean noise plus object patches. Train images
    // carry a single object so padded context crops stay free of neighbors;
    // eval images may hold two.
    const auto make_image = [&](int id, std::uint64_t noise_salt, bool base_only,
                                int forced_cat, bool allow_pair) -> ImageRecord {
        const double S = static_cast<double>(spec.train_image_size);
        ImageSpec img;
        img.width = spec.train_image_size;
        img.height = spec.train_image_size;
        img.noise = spec.noise_sigma;
        img.noise_seed = Rng::mix(world_seed, noise_salt);
        ImageRecord rec;
        rec.id = id;
        rec.width = img.width;
        rec.height = img.height;
        const int nobj = allow_pair && rng.uniform() < 0.5 ? 2 : 1;
        std::vector<Box> placed;
        for (int o = 0; o < nobj; ++o) {
            int cat;
            if (o == 0 && forced_cat >= 0) {
                cat = forced_cat;
            } else {
                cat = static_cast<int>(rng.uniform_index(
                    base_only ? static_cast<std::size_t>(spec.num_base)
                              : static_cast<std::size_t>(num_cats)));
            }
            const double side = rng.uniform(0.25, 0.5) * S;
            const double w = std::max(16.5, side * rng.uniform(0.85, 1.18));
            const double h = std::max(16.5, side * rng.uniform(0.85, 1.18));
            bool done = false;
            for (int attempt = 0; attempt < 20 && !done; ++attempt) {
                const Box b = place_box(rng, w, h, S);
                bool clash = false;
                for (const Box& p : placed) {
                    if (iou(b, p) > 0.15) {
                        clash = true;
                        break;
                    }
                }
                if (clash) continue;
                placed.push_back(b);
                img.patches.push_back(
                    PatchSpec{b, scaled_cells(data.patterns[static_cast<std::size_t>(cat)],
                                              rng.uniform(0.9, 1.1))});
                rec.annotations.push_back(Annotation{b, cat});
                done = true;
            }
        }
        rec.source = encode_image_spec(img);
        return rec;
    };

    for (int i = 0; i < spec.train_images; ++i) {
        const int forced = i < 2 * spec.num_base ? i % spec.num_base : -1;
        data.train_manifest.records.push_back(
            make_image(1000 + i, 10000 + static_cast<std::uint64_t>(i), true, forced, false));
    }
    for (int i = 0; i < spec.eval_images; ++i) {
        const int forced = i < 2 * num_cats ? i % num_cats : -1;
        data.eval_manifest.records.push_back(
            make_image(2000 + i, 20000 + static_cast<std::uint64_t>(i), false, forced, true));
    }

    // Corpus: object-centric records for every category, plus junk. Ghosts
    // are faint copies of the record's own pattern (same direction, low
    // contrast); distractors are full-contrast random directions.
    data.corpus.dim = D;
    int next_id = 1;
    const double CS = static_cast<double>(spec.corpus_image_size);
    const auto add_corpus_record = [&](int hidden, ImageSpec img) {
        CorpusRecord rec;
        rec.id = next_id++;
        rec.hidden_label = hidden;
        rec.uri = encode_image_spec(img);
        rec.embedding = img_enc->encode_image(render_image_spec(img));
        data.corpus.records.push_back(std::move(rec));
    };
    const auto place_clear = [&](Rng& r, double w, double h, const std::vector<Box>& avoid,
                                 Box* out) -> bool {
        if (w + 2.0 >= CS || h + 2.0 >= CS) return false;
        for (int attempt = 0; attempt < 10; ++attempt) {
            const Box b = place_box(r, w, h, CS);
            bool clash = false;
            for (const Box& a : avoid) {
                if (intersects(b, a)) {
                    clash = true;
                    break;
                }
            }
            if (!clash) {
                *out = b;
                return true;
            }
        }
        return false;
    };
    const auto random_direction_cells = [&](double norm) {
        Vec r(kCellCount);
        double n2 = 0.0;
        for (double& v : r) {
            v = rng.normal(0.0, 1.0);
            n2 += v * v;
        }
        const double scale = norm / std::sqrt(std::max(n2, 1e-12));
        for (double& v : r) v *= scale;
        return r;
    };
    for (int c = 0; c < num_cats; ++c) {
        const Vec& pattern = data.patterns[static_cast<std::size_t>(c)];
        double pat_norm = 0.0;
        for (double v : pattern) pat_norm += v * v;
        pat_norm = std::sqrt(pat_norm);
        for (int r = 0; r < spec.corpus_per_category; ++r) {
            ImageSpec img;
            img.width = spec.corpus_image_size;
            img.height = spec.corpus_image_size;
            img.noise = spec.noise_sigma;
            img.noise_seed = Rng::mix(world_seed, 30000 + static_cast<std::uint64_t>(next_id));
            const double f = rng.uniform(spec.centricity_min, spec.centricity_max);
            const double w = std::min(CS - 2.5, f * CS * rng.uniform(0.9, 1.1));
            const double h = std::min(CS - 2.5, f * CS * rng.uniform(0.9, 1.1));
            const Box obj = place_box(rng, w, h, CS);
            img.patches.push_back(PatchSpec{obj, scaled_cells(pattern, rng.uniform(0.9, 1.1))});
            std::vector<Box> avoid{obj};
            if (rng.uniform() < spec.ghost_prob) {
                const double gs = CS * rng.uniform(0.22, 0.28);
                Box gb;
                if (place_clear(rng, gs, gs * rng.uniform(0.9, 1.1), avoid, &gb)) {
                    Vec cells(kCellCount);
                    for (std::size_t i = 0; i < kCellCount; ++i) {
                        cells[i] = pattern[i] * spec.ghost_amp * (1.0 + rng.normal(0.0, 0.05));
                    }
                    img.patches.push_back(PatchSpec{gb, std::move(cells)});
                    avoid.push_back(gb);
                }
            }
            if (rng.uniform() < spec.distractor_prob) {
                const double ds = CS * rng.uniform(0.22, 0.34);
                Box db;
                if (place_clear(rng, ds, ds * rng.uniform(0.9, 1.1), avoid, &db)) {
                    img.patches.push_back(
                        PatchSpec{db, random_direction_cells(pat_norm * rng.uniform(0.9, 1.1))});
                }
            }
            add_corpus_record(c, std::move(img));
        }
    }
    // Junk records reuse the mean pattern norm for distractor contrast.
    double mean_norm = 0.0;
    for (const Vec& p : data.patterns) {
        double n2 = 0.0;
        for (double v : p) n2 += v * v;
        mean_norm += std::sqrt(n2);
    }
    mean_norm /= static_cast<double>(num_cats);
    for (int j = 0; j < spec.junk_records; ++j) {
        ImageSpec img;
        img.width = spec.corpus_image_size;
        img.height = spec.corpus_image_size;
        img.noise = spec.noise_sigma;
        img.noise_seed = Rng::mix(world_seed, 30000 + static_cast<std::uint64_t>(next_id));
        const int blobs = 1 + (rng.uniform() < 0.5 ? 1 : 0);
        std::vector<Box> placed;
        for (int b = 0; b < blobs; ++b) {
            const double ds = CS * rng.uniform(0.22, 0.4);
            Box db;
            if (place_clear(rng, ds, ds * rng.uniform(0.9, 1.1), placed, &db)) {
                placed.push_back(db);
                img.patches.push_back(
                    PatchSpec{db, random_direction_cells(mean_norm * rng.uniform(0.8, 1.2))});
            }
        }
        add_corpus_record(-1, std::move(img));
    }

    DatasetManifest all;
    all.records = data.train_manifest.records;
    all.records.insert(all.records.end(), data.eval_manifest.records.begin(),
                       data.eval_manifest.records.end());
    data.self_check_accuracy = nearest_target_accuracy(all, data.targets, *img_enc);
    return data;
}

}  // namespace

double nearest_target_accuracy(const DatasetManifest& manifest, const CategoryEmbeddingMatrix& targets,
                               const ImageEncoder& img_enc) {
    std::size_t total = 0, hits = 0;
    for (const ImageRecord& rec : manifest.records) {
        if (rec.annotations.empty()) continue;
        const Image img = render_source(rec.source);
        for (const Annotation& ann : rec.annotations) {
            const UnitEmbedding e = img_enc.encode_crop(img, ann.box);
            std::size_t best = 0;
            double best_dot = -2.0;
            for (std::size_t c = 0; c < targets.num_categories; ++c) {
                double d = 0.0;
                const double* row = targets.row(c);
                for (std::size_t i = 0; i < targets.dim; ++i) d += e[i] * row[i];
                if (d > best_dot) {
                    best_dot = d;
                    best = c;
                }
            }
            ++total;
            if (static_cast<int>(best) == ann.category_id) ++hits;
        }
    }
    return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

BenchmarkData generate_benchmark(const BenchmarkSpec& spec, const ToyEncoderConfig& enc_template) {
    validate(spec);
    if (enc_template.embed_dim > static_cast<std::size_t>(kImageChannels)) {
        // The channel-tied encoder map has rank at most kImageChannels, so
        // category targets are only reachable inside that rank.
        throw InvalidSpecError("generate_benchmark: embed_dim exceeds image channel count");
    }
    double last = 0.0;
    for (std::uint64_t attempt = 0; attempt < 5; ++attempt) {
        BenchmarkData data = build_world(spec, enc_template, Rng::mix(spec.seed, 0xbe6c0000 + attempt));
        if (data.self_check_accuracy >= spec.min_self_check) return data;
        last = data.self_check_accuracy;
    }
    throw InvalidSpecError("generate_benchmark: self-check accuracy stuck at " + format_double(last));
}

}  // namespace ovd
