#include "ovd/prompt_learning.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "ovd/io.hpp"
#include "ovd/rng.hpp"
#include "ovd/synth_image.hpp"

namespace ovd {
namespace {

constexpr char kPromptMagic[8] = {'O', 'V', 'D', 'P', 'V', '1'};

void validate_rpl_config(const RPLConfig& cfg) {
    if (cfg.epochs < 1) throw InvalidSpecError("rpl: epochs must be >= 1");
    if (cfg.max_crops_per_class < 1) throw InvalidSpecError("rpl: max_crops_per_class must be >= 1");
    if (cfg.batch_size < 1) throw InvalidSpecError("rpl: batch_size must be >= 1");
    if (cfg.temperature <= 0.0) throw InvalidSpecError("rpl: temperature must be positive");
}

std::vector<CategorySequence> build_sequences(const std::vector<CategorySpec>& specs,
                                              const PromptVectors& prompts, const TextEncoder& enc,
                                              const Vocabulary& vocab) {
    std::vector<CategorySequence> seqs;
    seqs.reserve(specs.size());
    for (const CategorySpec& s : specs) seqs.push_back(category_sequence(s, prompts, enc, vocab));
    return seqs;
}

CategoryEmbeddingMatrix matrix_from_sequences(const std::vector<CategorySequence>& seqs,
                                              const TextEncoder& enc) {
    CategoryEmbeddingMatrix m;
    m.num_categories = seqs.size();
    m.dim = enc.embed_dim();
    m.rows.assign(m.num_categories * m.dim, 0.0);
    for (std::size_t c = 0; c < seqs.size(); ++c) {
        const UnitEmbedding e = enc.encode(seqs[c].seq);
        std::copy(e.values.begin(), e.values.end(), m.row(c));
    }
    return m;
}

}  // namespace

Box expand_box(const Box& box, double image_w, double image_h) {
    if (!box.valid()) throw InvalidBoxError("expand_box: degenerate box");
    if (box.x1 < 0.0 || box.y1 < 0.0 || box.x2 > image_w || box.y2 > image_h) {
        throw InvalidBoxError("expand_box: box outside image bounds");
    }
    const double w = box.width();
    const double h = box.height();
    return Box{box.x1 - w, box.y1 - h, box.x2 + w, box.y2 + h}.clipped(image_w, image_h);
}

std::vector<CropRecord> build_crop_dataset(const DatasetManifest& manifest,
                                           const std::vector<CategorySpec>& specs,
                                           const ImageEncoder& img_enc, const RPLConfig& cfg) {
    validate_rpl_config(cfg);
    std::vector<bool> is_base(specs.size(), false);
    for (const CategorySpec& s : specs) {
        if (s.split == Split::kBase) is_base[static_cast<std::size_t>(s.id)] = true;
    }

    // Candidates per class, in manifest order.
    std::map<int, std::vector<CropRecord>> per_class;
    for (const ImageRecord& rec : manifest.records) {
        Image img;
        bool rendered = false;
        for (const Annotation& ann : rec.annotations) {
            const std::size_t cid = static_cast<std::size_t>(ann.category_id);
            if (cid >= specs.size() || !is_base[cid]) continue;
            if (!rendered) {
                img = render_source(rec.source);
                rendered = true;
            }
            CropRecord crop;
            crop.image_id = rec.id;
            crop.box = expand_box(ann.box, rec.width, rec.height);
            crop.label = ann.category_id;
            crop.embedding = img_enc.encode_crop(img, crop.box);
            per_class[ann.category_id].push_back(std::move(crop));
        }
    }
    if (per_class.empty()) throw EmptyBaseError("build_crop_dataset: no base-category annotations");

    std::vector<CropRecord> out;
    for (auto& [cat, crops] : per_class) {
        const std::size_t cap = static_cast<std::size_t>(cfg.max_crops_per_class);
        if (crops.size() > cap) {
            std::vector<std::size_t> idx(crops.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            Rng rng(Rng::mix(cfg.seed, 0x63726f70 + static_cast<std::uint64_t>(cat)));
            rng.shuffle(idx);
            idx.resize(cap);
            std::sort(idx.begin(), idx.end());
            std::vector<CropRecord> kept;
            kept.reserve(cap);
            for (std::size_t i : idx) kept.push_back(std::move(crops[i]));
            crops = std::move(kept);
        }
        for (CropRecord& c : crops) out.push_back(std::move(c));
    }
    return out;
}

BatchEval eval_prompt_batch(const std::vector<CropRecord>& batch,
                            const std::vector<CategorySpec>& specs, const PromptVectors& prompts,
                            const TextEncoder& text_enc, const Vocabulary& vocab, double temperature,
                            bool want_gradients) {
    if (batch.empty()) throw EmptyBaseError("eval_prompt_batch: empty batch");
    const std::vector<CategorySequence> seqs = build_sequences(specs, prompts, text_enc, vocab);
    const CategoryEmbeddingMatrix matrix = matrix_from_sequences(seqs, text_enc);
    const ClassifierConfig ccfg{temperature, ClassifierMode::kSoftmax};
    const std::size_t C = specs.size();
    const std::size_t D = matrix.dim;

    BatchEval ev;
    Vec row_grads(C * D, 0.0);  // dL/d(matrix row c), summed over the batch
    std::size_t correct = 0;
    for (const CropRecord& crop : batch) {
        if (crop.label < 0 || static_cast<std::size_t>(crop.label) >= C) {
            throw InvalidSpecError("eval_prompt_batch: crop label outside the category list");
        }
        const Vec logits = cosine_logits(crop.embedding, matrix, ccfg);
        const Vec probs = softmax_probs(logits);
        const double p = std::max(probs[static_cast<std::size_t>(crop.label)], 1e-300);
        ev.loss += -std::log(p);
        if (argmax(probs) == static_cast<std::size_t>(crop.label)) ++correct;
        if (want_gradients) {
            for (std::size_t c = 0; c < C; ++c) {
                const double coef =
                    (probs[c] - (static_cast<std::size_t>(crop.label) == c ? 1.0 : 0.0)) / temperature;
                double* g = row_grads.data() + c * D;
                for (std::size_t d = 0; d < D; ++d) g[d] += coef * crop.embedding.values[d];
            }
        }
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    ev.loss *= inv_b;
    ev.accuracy = static_cast<double>(correct) * inv_b;
    if (!std::isfinite(ev.loss)) {
        throw NonFiniteLossError("eval_prompt_batch: non-finite loss " + format_double(ev.loss));
    }
    if (!want_gradients) return ev;

    const std::size_t d_tok = text_enc.token_dim();
    ev.prefix_grad.assign(prompts.prefix_count(), Vec(d_tok, 0.0));
    ev.suffix_grad.assign(prompts.suffix_count(), Vec(d_tok, 0.0));
    for (std::size_t c = 0; c < C; ++c) {
        Vec g_row(matrix.row(c), matrix.row(c) + D);
        for (std::size_t d = 0; d < D; ++d) g_row[d] = row_grads[c * D + d] * inv_b;
        const std::vector<Vec> tok_grads = text_enc.input_gradient(seqs[c].seq, g_row);
        const std::size_t suffix_at = prompts.prefix_count() + seqs[c].name_len;
        for (std::size_t i = 0; i < prompts.prefix_count(); ++i) {
            for (std::size_t d = 0; d < d_tok; ++d) ev.prefix_grad[i][d] += tok_grads[i][d];
        }
        for (std::size_t i = 0; i < prompts.suffix_count(); ++i) {
            for (std::size_t d = 0; d < d_tok; ++d) ev.suffix_grad[i][d] += tok_grads[suffix_at + i][d];
        }
    }
    return ev;
}

RPLResult train_prompts(const std::vector<CropRecord>& crops, const std::vector<CategorySpec>& specs,
                        const TextEncoder& text_enc, const ImageEncoder& img_enc,
                        const Vocabulary& vocab, const RPLConfig& cfg) {
    validate_rpl_config(cfg);
    if (crops.empty()) throw EmptyBaseError("train_prompts: no crops");
    if (img_enc.embed_dim() != text_enc.embed_dim()) {
        throw DimensionMismatchError("train_prompts: encoder embedding dimensions differ");
    }
    for (const CategorySpec& s : specs) {
        if (s.split != Split::kBase) throw InvalidSpecError("train_prompts: specs must be base split");
    }

    RPLResult result;
    const std::size_t d_tok = text_enc.token_dim();
    Rng init_rng(Rng::mix(cfg.seed, 0x696e6974));
    result.prompts.trainable = true;
    result.prompts.prefix.assign(cfg.prefix_count, Vec(d_tok, 0.0));
    result.prompts.suffix.assign(cfg.suffix_count, Vec(d_tok, 0.0));
    for (Vec& v : result.prompts.prefix) {
        for (double& x : v) x = init_rng.normal(0.0, cfg.init_std);
    }
    for (Vec& v : result.prompts.suffix) {
        for (double& x : v) x = init_rng.normal(0.0, cfg.init_std);
    }
    if (result.prompts.empty()) return result;  // nothing to optimize

    std::vector<Vec> vel_prefix(cfg.prefix_count, Vec(d_tok, 0.0));
    std::vector<Vec> vel_suffix(cfg.suffix_count, Vec(d_tok, 0.0));

    std::vector<std::size_t> order(crops.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng epoch_rng(Rng::mix(cfg.seed, 0x65706f00 + static_cast<std::uint64_t>(epoch)));
        epoch_rng.shuffle(order);
        double loss_sum = 0.0;
        double acc_sum = 0.0;

        // Per-epoch refresh evaluates every batch against the epoch-start
        // prompts' matrix; per-step refresh is the exact objective.
        PromptVectors epoch_prompts = result.prompts;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<CropRecord> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(crops[order[i]]);

            const PromptVectors& eval_prompts = cfg.refresh_per_epoch ? epoch_prompts : result.prompts;
            BatchEval ev;
            try {
                ev = eval_prompt_batch(batch, specs, eval_prompts, text_enc, vocab, cfg.temperature, true);
            } catch (const NonFiniteLossError& e) {
                throw NonFiniteLossError("train_prompts: epoch " + std::to_string(epoch) + " batch " +
                                         std::to_string(start / cfg.batch_size) + ": " + e.what());
            }
            loss_sum += ev.loss * static_cast<double>(batch.size());
            acc_sum += ev.accuracy * static_cast<double>(batch.size());

            for (std::size_t i = 0; i < cfg.prefix_count; ++i) {
                for (std::size_t d = 0; d < d_tok; ++d) {
                    vel_prefix[i][d] = cfg.momentum * vel_prefix[i][d] - cfg.learning_rate * ev.prefix_grad[i][d];
                    result.prompts.prefix[i][d] += vel_prefix[i][d];
                }
            }
            for (std::size_t i = 0; i < cfg.suffix_count; ++i) {
                for (std::size_t d = 0; d < d_tok; ++d) {
                    vel_suffix[i][d] = cfg.momentum * vel_suffix[i][d] - cfg.learning_rate * ev.suffix_grad[i][d];
                    result.prompts.suffix[i][d] += vel_suffix[i][d];
                }
            }
        }
        result.history.push_back(EpochStats{epoch, loss_sum / static_cast<double>(crops.size()),
                                            acc_sum / static_cast<double>(crops.size())});
    }
    return result;
}

double gradient_check(const PromptVectors& prompts, const std::vector<CropRecord>& batch,
                      const std::vector<CategorySpec>& specs, const TextEncoder& text_enc,
                      const Vocabulary& vocab, double temperature) {
    const BatchEval ev = eval_prompt_batch(batch, specs, prompts, text_enc, vocab, temperature, true);
    const double step = 1e-4;
    double max_rel = 0.0;

    auto loss_at = [&](const PromptVectors& p) {
        return eval_prompt_batch(batch, specs, p, text_enc, vocab, temperature, false).loss;
    };
    auto check_entry = [&](bool is_prefix, std::size_t i, std::size_t d, double analytic) {
        PromptVectors p = prompts;
        Vec& v = is_prefix ? p.prefix[i] : p.suffix[i];
        const double saved = v[d];
        v[d] = saved + step;
        const double hi = loss_at(p);
        v[d] = saved - step;
        const double lo = loss_at(p);
        const double fd = (hi - lo) / (2.0 * step);
        const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-6});
        max_rel = std::max(max_rel, std::abs(analytic - fd) / denom);
    };

    for (std::size_t i = 0; i < prompts.prefix_count(); ++i) {
        for (std::size_t d = 0; d < prompts.prefix[i].size(); ++d) {
            check_entry(true, i, d, ev.prefix_grad[i][d]);
        }
    }
    for (std::size_t i = 0; i < prompts.suffix_count(); ++i) {
        for (std::size_t d = 0; d < prompts.suffix[i].size(); ++d) {
            check_entry(false, i, d, ev.suffix_grad[i][d]);
        }
    }
    return max_rel;
}

double crop_accuracy(const std::vector<CropRecord>& crops, const std::vector<CategorySpec>& specs,
                     const PromptVectors& prompts, const TextEncoder& text_enc,
                     const Vocabulary& vocab, double temperature) {
    const BatchEval ev = eval_prompt_batch(crops, specs, prompts, text_enc, vocab, temperature, false);
    return ev.accuracy;
}

void save_prompts(const PromptVectors& prompts, const std::string& path) {
    auto os = open_out(path, true);
    write_magic(os, kPromptMagic);
    write_u32(os, prompts.trainable ? 1 : 0);
    write_u64(os, prompts.prefix_count());
    write_u64(os, prompts.suffix_count());
    const std::size_t d_tok = prompts.prefix.empty()
                                  ? (prompts.suffix.empty() ? 0 : prompts.suffix[0].size())
                                  : prompts.prefix[0].size();
    write_u64(os, d_tok);
    for (const Vec& v : prompts.prefix) write_f64_block(os, v);
    for (const Vec& v : prompts.suffix) write_f64_block(os, v);
    if (!os) throw IoError("failed writing prompts to " + path);
}

PromptVectors load_prompts(const std::string& path) {
    auto is = open_in(path, true);
    expect_magic(is, kPromptMagic, path);
    PromptVectors p;
    p.trainable = read_u32(is) != 0;
    const std::size_t j = read_u64(is);
    const std::size_t h = read_u64(is);
    const std::size_t d_tok = read_u64(is);
    p.prefix.reserve(j);
    p.suffix.reserve(h);
    for (std::size_t i = 0; i < j; ++i) p.prefix.push_back(read_f64_block(is, d_tok));
    for (std::size_t i = 0; i < h; ++i) p.suffix.push_back(read_f64_block(is, d_tok));
    if (!is) throw IoError("failed reading prompts from " + path);
    return p;
}

void save_loss_history(const std::vector<EpochStats>& history, const std::string& path) {
    std::ostringstream os;
    os << "# epoch,loss,accuracy\n";
    for (const EpochStats& e : history) {
        os << e.epoch << ',' << format_double(e.loss) << ',' << format_double(e.accuracy) << '\n';
    }
    write_text_file(path, os.str());
}

std::vector<EpochStats> load_loss_history(const std::string& path) {
    std::vector<EpochStats> out;
    std::istringstream is(read_text_file(path));
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        EpochStats e;
        char c1 = 0, c2 = 0;
        if (!(ls >> e.epoch >> c1 >> e.loss >> c2 >> e.accuracy) || c1 != ',' || c2 != ',') {
            throw IoError(path + ": malformed loss-history line: " + line);
        }
        out.push_back(e);
    }
    return out;
}

}  // namespace ovd
