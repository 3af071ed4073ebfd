#include "ovd/encoders.hpp"

#include <algorithm>
#include <cmath>

#include "ovd/io.hpp"
#include "ovd/rng.hpp"

namespace ovd {
namespace {

constexpr char kEncoderMagic[8] = {'O', 'V', 'D', 'E', 'N', 'C', '1'};
constexpr std::uint32_t kKindText = 0;
constexpr std::uint32_t kKindImage = 1;
// Distinct parameter streams for the two encoders sharing one seed.
constexpr std::uint64_t kTextSalt = 0x74657874;
constexpr std::uint64_t kImageSalt = 0x696d6167;

Vec random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
    Vec m(rows * cols);
    for (double& v : m) v = rng.normal(0.0, scale);
    return m;
}

// y = A x, row-major A of shape rows x cols.
void matvec(const Vec& a, std::size_t rows, std::size_t cols, const double* x, double* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = a.data() + r * cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
}

// y = A^T x, row-major A of shape rows x cols; y has cols entries.
void matvec_t(const Vec& a, std::size_t rows, std::size_t cols, const double* x, double* y) {
    std::fill(y, y + cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = a.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) y[c] += row[c] * x[r];
    }
}

void write_encoder_header(std::ostream& os, std::uint32_t kind, const ToyEncoderConfig& cfg) {
    write_magic(os, kEncoderMagic);
    write_u32(os, kind);
    write_u64(os, cfg.vocab_size);
    write_u64(os, cfg.d_tok);
    write_u64(os, cfg.embed_dim);
    write_u64(os, cfg.seed);
    write_u64(os, cfg.mixing_depth);
    write_u64(os, cfg.max_seq_len);
}

ToyEncoderConfig read_encoder_header(std::istream& is, std::uint32_t want_kind, const std::string& what) {
    expect_magic(is, kEncoderMagic, what);
    const std::uint32_t kind = read_u32(is);
    if (kind != want_kind) throw IoError(what + ": wrong encoder kind");
    ToyEncoderConfig cfg;
    cfg.vocab_size = read_u64(is);
    cfg.d_tok = read_u64(is);
    cfg.embed_dim = read_u64(is);
    cfg.seed = read_u64(is);
    cfg.mixing_depth = read_u64(is);
    cfg.max_seq_len = read_u64(is);
    return cfg;
}

}  // namespace

TokenSequence assemble_prompt(const std::vector<Vec>& prefix, const std::vector<int>& cat_tokens,
                              const std::vector<Vec>& suffix, const std::vector<int>& desc_tokens,
                              std::size_t max_seq_len) {
    const std::size_t total = prefix.size() + cat_tokens.size() + suffix.size() + desc_tokens.size();
    if (total > max_seq_len) {
        throw SequenceTooLongError("assemble_prompt: length " + std::to_string(total) +
                                   " exceeds limit " + std::to_string(max_seq_len));
    }
    TokenSequence seq;
    seq.reserve(total);
    for (const Vec& p : prefix) seq.push_back(ContinuousToken{p});
    for (int id : cat_tokens) seq.push_back(DiscreteToken{id});
    for (const Vec& p : suffix) seq.push_back(ContinuousToken{p});
    for (int id : desc_tokens) seq.push_back(DiscreteToken{id});
    return seq;
}

// --- ToyTextEncoder ---------------------------------------------------------

struct ToyTextEncoder::Forward {
    std::vector<Vec> inputs;     // resolved token vectors, one per position
    Vec weights;                 // position weights
    double weight_sum = 0.0;
    std::vector<Vec> layer_out;  // post-tanh output of every mixing layer
    Vec z;                       // projection output before normalization
    double z_norm = 0.0;
    Vec e;                       // final unit embedding
};

ToyTextEncoder::ToyTextEncoder(const ToyEncoderConfig& cfg) : cfg_(cfg) {
    if (cfg_.vocab_size == 0 || cfg_.d_tok == 0 || cfg_.embed_dim == 0 || cfg_.max_seq_len == 0) {
        throw InvalidSpecError("text encoder: configuration sizes must be positive");
    }
    Rng rng(Rng::mix(cfg_.seed, kTextSalt));
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.d_tok));
    table_ = random_matrix(rng, cfg_.vocab_size, cfg_.d_tok, 1.0);
    mix_w_.reserve(cfg_.mixing_depth);
    mix_b_.reserve(cfg_.mixing_depth);
    for (std::size_t l = 0; l < cfg_.mixing_depth; ++l) {
        mix_w_.push_back(random_matrix(rng, cfg_.d_tok, cfg_.d_tok, scale));
        // Zero bias keeps the mixing odd: no shared offset direction leaks
        // into every output, so unrelated phrases stay decorrelated.
        mix_b_.push_back(Vec(cfg_.d_tok, 0.0));
    }
    proj_ = random_matrix(rng, cfg_.embed_dim, cfg_.d_tok, scale);
}

double ToyTextEncoder::position_weight(std::size_t t) {
    return 1.0 + 0.35 * std::cos(0.7 * static_cast<double>(t) + 0.3);
}

ToyTextEncoder::Forward ToyTextEncoder::run_forward(const TokenSequence& seq) const {
    if (seq.empty()) throw InvalidSpecError("text encoder: empty token sequence");
    if (seq.size() > cfg_.max_seq_len) {
        throw SequenceTooLongError("text encoder: sequence length " + std::to_string(seq.size()) +
                                   " exceeds limit " + std::to_string(cfg_.max_seq_len));
    }
    Forward f;
    f.inputs.reserve(seq.size());
    for (const Token& tok : seq) {
        if (const auto* d = std::get_if<DiscreteToken>(&tok)) {
            if (d->id < 0 || static_cast<std::size_t>(d->id) >= cfg_.vocab_size) {
                throw InvalidSpecError("text encoder: token id " + std::to_string(d->id) +
                                       " outside vocabulary of size " + std::to_string(cfg_.vocab_size));
            }
            const double* row = table_.data() + static_cast<std::size_t>(d->id) * cfg_.d_tok;
            f.inputs.emplace_back(row, row + cfg_.d_tok);
        } else {
            const auto& c = std::get<ContinuousToken>(tok);
            if (c.vector.size() != cfg_.d_tok) {
                throw DimensionMismatchError("text encoder: continuous token has dim " +
                                             std::to_string(c.vector.size()) + ", expected " +
                                             std::to_string(cfg_.d_tok));
            }
            f.inputs.push_back(c.vector);
        }
    }

    const std::size_t T = f.inputs.size();
    f.weights.resize(T);
    Vec s(cfg_.d_tok, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        const double w = position_weight(t);
        f.weights[t] = w;
        f.weight_sum += w;
        const Vec& x = f.inputs[t];
        for (std::size_t i = 0; i < cfg_.d_tok; ++i) s[i] += w * x[i];
    }
    for (double& v : s) v /= f.weight_sum;

    Vec h = std::move(s);
    f.layer_out.reserve(cfg_.mixing_depth);
    for (std::size_t l = 0; l < cfg_.mixing_depth; ++l) {
        Vec u(cfg_.d_tok);
        matvec(mix_w_[l], cfg_.d_tok, cfg_.d_tok, h.data(), u.data());
        for (std::size_t i = 0; i < cfg_.d_tok; ++i) u[i] = std::tanh(u[i] + mix_b_[l][i]);
        f.layer_out.push_back(u);
        h = f.layer_out.back();
    }

    f.z.resize(cfg_.embed_dim);
    matvec(proj_, cfg_.embed_dim, cfg_.d_tok, h.data(), f.z.data());
    f.z_norm = l2_norm(f.z);
    f.e = l2_normalize(f.z).values;
    return f;
}

UnitEmbedding ToyTextEncoder::encode(const TokenSequence& seq) const {
    return UnitEmbedding{run_forward(seq).e};
}

std::vector<Vec> ToyTextEncoder::input_gradient(const TokenSequence& seq, const Vec& grad_out) const {
    if (grad_out.size() != cfg_.embed_dim) {
        throw DimensionMismatchError("input_gradient: output gradient has dim " +
                                     std::to_string(grad_out.size()) + ", expected " +
                                     std::to_string(cfg_.embed_dim));
    }
    const Forward f = run_forward(seq);

    // Normalization: e = z/||z||, so dL/dz = (g - e (e.g)) / ||z||.
    double eg = 0.0;
    for (std::size_t i = 0; i < cfg_.embed_dim; ++i) eg += f.e[i] * grad_out[i];
    Vec gz(cfg_.embed_dim);
    for (std::size_t i = 0; i < cfg_.embed_dim; ++i) gz[i] = (grad_out[i] - f.e[i] * eg) / f.z_norm;

    // Projection.
    Vec gh(cfg_.d_tok);
    matvec_t(proj_, cfg_.embed_dim, cfg_.d_tok, gz.data(), gh.data());

    // Mixing layers, last to first: through tanh then the matrix.
    for (std::size_t l = cfg_.mixing_depth; l-- > 0;) {
        const Vec& out = f.layer_out[l];
        Vec gu(cfg_.d_tok);
        for (std::size_t i = 0; i < cfg_.d_tok; ++i) gu[i] = gh[i] * (1.0 - out[i] * out[i]);
        matvec_t(mix_w_[l], cfg_.d_tok, cfg_.d_tok, gu.data(), gh.data());
    }

    // Weighted average distributes the remaining gradient per position.
    std::vector<Vec> grads(seq.size());
    for (std::size_t t = 0; t < seq.size(); ++t) {
        const double c = f.weights[t] / f.weight_sum;
        grads[t].resize(cfg_.d_tok);
        for (std::size_t i = 0; i < cfg_.d_tok; ++i) grads[t][i] = c * gh[i];
    }
    return grads;
}

std::uint64_t ToyTextEncoder::parameter_checksum() const {
    std::uint64_t h = fnv1a64_vec(table_);
    for (std::size_t l = 0; l < cfg_.mixing_depth; ++l) {
        h = fnv1a64_vec(mix_w_[l], h);
        h = fnv1a64_vec(mix_b_[l], h);
    }
    return fnv1a64_vec(proj_, h);
}

void ToyTextEncoder::save(const std::string& path) const {
    auto os = open_out(path, true);
    write_encoder_header(os, kKindText, cfg_);
    write_f64_block(os, table_);
    for (std::size_t l = 0; l < cfg_.mixing_depth; ++l) {
        write_f64_block(os, mix_w_[l]);
        write_f64_block(os, mix_b_[l]);
    }
    write_f64_block(os, proj_);
    if (!os) throw IoError("failed writing text encoder to " + path);
}

std::unique_ptr<ToyTextEncoder> ToyTextEncoder::load(const std::string& path) {
    auto is = open_in(path, true);
    const ToyEncoderConfig cfg = read_encoder_header(is, kKindText, path);
    auto enc = std::make_unique<ToyTextEncoder>(cfg);
    enc->table_ = read_f64_block(is, cfg.vocab_size * cfg.d_tok);
    for (std::size_t l = 0; l < cfg.mixing_depth; ++l) {
        enc->mix_w_[l] = read_f64_block(is, cfg.d_tok * cfg.d_tok);
        enc->mix_b_[l] = read_f64_block(is, cfg.d_tok);
    }
    enc->proj_ = read_f64_block(is, cfg.embed_dim * cfg.d_tok);
    if (!is) throw IoError("failed reading text encoder from " + path);
    return enc;
}

// --- ToyImageEncoder --------------------------------------------------------

ToyImageEncoder::ToyImageEncoder(const ToyEncoderConfig& cfg) : cfg_(cfg) {
    if (cfg_.embed_dim == 0) throw InvalidSpecError("image encoder: embed_dim must be positive");
    if (cfg_.embed_dim > static_cast<std::size_t>(kImageChannels)) {
        throw InvalidSpecError("image encoder: embed_dim exceeds image channel count");
    }
    Rng rng(Rng::mix(cfg_.seed, kImageSalt));
    // One coefficient per (output dim, channel), replicated across grid cells:
    // the projection reads the crop's mean channel signature. Rows are
    // orthonormalized so distinct channel signatures keep their angles in
    // embedding space.
    const std::size_t C = kImageChannels;
    Vec chan = random_matrix(rng, cfg_.embed_dim, C, 1.0);
    for (std::size_t d = 0; d < cfg_.embed_dim; ++d) {
        double* row = chan.data() + d * C;
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t j = 0; j < d; ++j) {
                const double* prev = chan.data() + j * C;
                double dot = 0.0;
                for (std::size_t c = 0; c < C; ++c) dot += row[c] * prev[c];
                for (std::size_t c = 0; c < C; ++c) row[c] -= dot * prev[c];
            }
        }
        double norm = 0.0;
        for (std::size_t c = 0; c < C; ++c) norm += row[c] * row[c];
        norm = std::sqrt(norm);
        if (norm < 1e-9) throw InvalidSpecError("image encoder: projection rows degenerate");
        for (std::size_t c = 0; c < C; ++c) row[c] /= norm;
    }
    weight_.assign(cfg_.embed_dim * stat_dim(), 0.0);
    const double cell_w = 1.0 / (kGrid * kGrid);
    for (std::size_t d = 0; d < cfg_.embed_dim; ++d) {
        for (std::size_t c = 0; c < C; ++c) {
            const double q = chan[d * C + c] * cell_w;
            for (int g = 0; g < kGrid * kGrid; ++g) {
                weight_[d * stat_dim() + c * kGrid * kGrid + g] = q;
            }
        }
    }
}

Vec ToyImageEncoder::pool_stats(const Image& img, const Box& box) {
    const Box b = box.clipped(img.width, img.height);
    if (!b.valid()) throw InvalidBoxError("pool_stats: crop does not overlap the image");
    Vec stats(stat_dim(), 0.0);
    std::vector<double> counts(static_cast<std::size_t>(kGrid) * kGrid, 0.0);
    const double cw = b.width() / kGrid;
    const double ch = b.height() / kGrid;
    const int x0 = static_cast<int>(std::floor(b.x1));
    const int x1 = static_cast<int>(std::ceil(b.x2));
    const int y0 = static_cast<int>(std::floor(b.y1));
    const int y1 = static_cast<int>(std::ceil(b.y2));
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            // Pixels belong to the cell containing their center.
            const double px = x + 0.5;
            const double py = y + 0.5;
            if (px < b.x1 || px >= b.x2 || py < b.y1 || py >= b.y2) continue;
            const int gx = std::min(kGrid - 1, static_cast<int>((px - b.x1) / cw));
            const int gy = std::min(kGrid - 1, static_cast<int>((py - b.y1) / ch));
            counts[static_cast<std::size_t>(gy) * kGrid + gx] += 1.0;
            for (int c = 0; c < kImageChannels; ++c) {
                stats[(static_cast<std::size_t>(c) * kGrid + gy) * kGrid + gx] += img.at(c, y, x);
            }
        }
    }
    for (int gy = 0; gy < kGrid; ++gy) {
        for (int gx = 0; gx < kGrid; ++gx) {
            const double n = counts[static_cast<std::size_t>(gy) * kGrid + gx];
            if (n <= 0.0) continue;
            for (int c = 0; c < kImageChannels; ++c) {
                stats[(static_cast<std::size_t>(c) * kGrid + gy) * kGrid + gx] /= n;
            }
        }
    }
    return stats;
}

UnitEmbedding ToyImageEncoder::encode_crop(const Image& img, const Box& box) const {
    const Vec stats = pool_stats(img, box);
    Vec z(cfg_.embed_dim);
    matvec(weight_, cfg_.embed_dim, stat_dim(), stats.data(), z.data());
    return l2_normalize(z);
}

std::uint64_t ToyImageEncoder::parameter_checksum() const { return fnv1a64_vec(weight_); }

void ToyImageEncoder::save(const std::string& path) const {
    auto os = open_out(path, true);
    write_encoder_header(os, kKindImage, cfg_);
    write_f64_block(os, weight_);
    if (!os) throw IoError("failed writing image encoder to " + path);
}

std::unique_ptr<ToyImageEncoder> ToyImageEncoder::load(const std::string& path) {
    auto is = open_in(path, true);
    const ToyEncoderConfig cfg = read_encoder_header(is, kKindImage, path);
    auto enc = std::make_unique<ToyImageEncoder>(cfg);
    enc->weight_ = read_f64_block(is, cfg.embed_dim * stat_dim());
    if (!is) throw IoError("failed reading image encoder from " + path);
    return enc;
}

std::unique_ptr<ToyTextEncoder> build_toy_text_encoder(const ToyEncoderConfig& cfg) {
    return std::make_unique<ToyTextEncoder>(cfg);
}

std::unique_ptr<ToyImageEncoder> build_toy_image_encoder(const ToyEncoderConfig& cfg) {
    return std::make_unique<ToyImageEncoder>(cfg);
}

// --- category prompts -------------------------------------------------------

CategorySequence category_sequence(const CategorySpec& spec, const PromptVectors& prompts,
                                   const TextEncoder& enc, const Vocabulary& vocab) {
    const std::vector<int> name_tokens = tokenize(spec.name, vocab);
    std::vector<int> desc_tokens = tokenize(spec.description, vocab);
    const std::size_t fixed = prompts.prefix_count() + name_tokens.size() + prompts.suffix_count();
    if (fixed > enc.max_seq_len()) {
        throw SequenceTooLongError("category '" + spec.name +
                                   "': prompt frame alone exceeds the sequence limit");
    }
    // The description is the only part allowed to give way.
    const std::size_t room = enc.max_seq_len() - fixed;
    if (desc_tokens.size() > room) desc_tokens.resize(room);
    CategorySequence cs;
    cs.name_len = name_tokens.size();
    cs.seq = assemble_prompt(prompts.prefix, name_tokens, prompts.suffix, desc_tokens, enc.max_seq_len());
    return cs;
}

UnitEmbedding encode_category(const CategorySpec& spec, const PromptVectors& prompts,
                              const TextEncoder& enc, const Vocabulary& vocab) {
    return enc.encode(category_sequence(spec, prompts, enc, vocab).seq);
}

std::string prompt_variant_name(PromptVariant v) {
    switch (v) {
        case PromptVariant::kNameOnly: return "name_only";
        case PromptVariant::kNameDescription: return "name_description";
        case PromptVariant::kLearned: return "learned";
    }
    throw InvalidSpecError("unknown prompt variant");
}

PromptVariant prompt_variant_from_name(const std::string& s) {
    if (s == "name_only") return PromptVariant::kNameOnly;
    if (s == "name_description") return PromptVariant::kNameDescription;
    if (s == "learned") return PromptVariant::kLearned;
    throw InvalidSpecError("unknown prompt variant: " + s);
}

CategorySpec apply_prompt_variant(const CategorySpec& spec, PromptVariant v) {
    CategorySpec out = spec;
    switch (v) {
        case PromptVariant::kNameOnly:
            out.name = "a photo of " + spec.name;
            out.description.clear();
            break;
        case PromptVariant::kNameDescription:
            out.name = "a photo of " + spec.name;
            out.description = "which is " + spec.description;
            break;
        case PromptVariant::kLearned:
            break;
    }
    return out;
}

CategoryEmbeddingMatrix build_category_matrix(const std::vector<CategorySpec>& specs,
                                              const PromptVectors& prompts, const TextEncoder& enc,
                                              const Vocabulary& vocab, PromptVariant variant) {
    if (specs.empty()) throw InvalidSpecError("category matrix: no categories");
    CategoryEmbeddingMatrix m;
    m.num_categories = specs.size();
    m.dim = enc.embed_dim();
    m.rows.assign(m.num_categories * m.dim, 0.0);
    static const PromptVectors kNoPrompts;
    const bool learned = variant == PromptVariant::kLearned;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (specs[i].id != static_cast<int>(i)) {
            throw InvalidSpecError("category matrix: ids must be dense and ordered from zero");
        }
        const CategorySpec spec = apply_prompt_variant(specs[i], variant);
        const UnitEmbedding e = encode_category(spec, learned ? prompts : kNoPrompts, enc, vocab);
        std::copy(e.values.begin(), e.values.end(), m.row(i));
    }
    return m;
}

}  // namespace ovd
