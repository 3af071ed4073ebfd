#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "ovd/embedding.hpp"
#include "ovd/image.hpp"
#include "ovd/tokenizer.hpp"

namespace ovd {

// A token is either a vocabulary id or a trainable continuous vector of the
// word-embedding dimension d_tok.
struct DiscreteToken {
    int id = 0;
};

struct ContinuousToken {
    Vec vector;
};

using Token = std::variant<DiscreteToken, ContinuousToken>;
using TokenSequence = std::vector<Token>;

// Shared class-agnostic prompt state: j prefix and h suffix vectors.
struct PromptVectors {
    std::vector<Vec> prefix;
    std::vector<Vec> suffix;
    bool trainable = true;

    std::size_t prefix_count() const { return prefix.size(); }
    std::size_t suffix_count() const { return suffix.size(); }
    bool empty() const { return prefix.empty() && suffix.empty(); }
};

// Ordering: [prefix..., category tokens, suffix..., description tokens].
// Errors: SequenceTooLong if the assembled length exceeds max_seq_len.
TokenSequence assemble_prompt(const std::vector<Vec>& prefix, const std::vector<int>& cat_tokens,
                              const std::vector<Vec>& suffix, const std::vector<int>& desc_tokens,
                              std::size_t max_seq_len);

class TextEncoder {
public:
    virtual ~TextEncoder() = default;
    virtual std::size_t embed_dim() const = 0;
    virtual std::size_t token_dim() const = 0;
    virtual std::size_t max_seq_len() const = 0;
    virtual UnitEmbedding encode(const TokenSequence& seq) const = 0;

    // Exact partial derivatives of a scalar loss with respect to every input
    // token vector, given dL/d(output embedding). Entry t is the gradient for
    // position t; discrete positions are returned too (gradient w.r.t. the
    // looked-up table vector) but only continuous positions are trainable.
    virtual std::vector<Vec> input_gradient(const TokenSequence& seq, const Vec& grad_out) const = 0;

    // Checksum over all parameters; training contracts assert it is stable.
    virtual std::uint64_t parameter_checksum() const = 0;
};

class ImageEncoder {
public:
    virtual ~ImageEncoder() = default;
    virtual std::size_t embed_dim() const = 0;
    virtual UnitEmbedding encode_crop(const Image& img, const Box& box) const = 0;
    UnitEmbedding encode_image(const Image& img) const { return encode_crop(img, img.full_box()); }
    virtual std::uint64_t parameter_checksum() const = 0;
};

struct ToyEncoderConfig {
    std::size_t vocab_size = 0;
    std::size_t d_tok = 32;
    std::size_t embed_dim = 32;
    std::uint64_t seed = 1;
    std::size_t mixing_depth = 1;
    std::size_t max_seq_len = 32;
};

// Deterministic toy text encoder: table lookup for discrete tokens,
// pass-through for continuous ones, position-weighted averaging, mixing
// layers of tanh(Wx+b), projection to embed_dim, l2 normalization.
class ToyTextEncoder final : public TextEncoder {
public:
    explicit ToyTextEncoder(const ToyEncoderConfig& cfg);

    std::size_t embed_dim() const override { return cfg_.embed_dim; }
    std::size_t token_dim() const override { return cfg_.d_tok; }
    std::size_t max_seq_len() const override { return cfg_.max_seq_len; }
    UnitEmbedding encode(const TokenSequence& seq) const override;
    std::vector<Vec> input_gradient(const TokenSequence& seq, const Vec& grad_out) const override;
    std::uint64_t parameter_checksum() const override;

    const ToyEncoderConfig& config() const { return cfg_; }
    static double position_weight(std::size_t t);

    void save(const std::string& path) const;
    static std::unique_ptr<ToyTextEncoder> load(const std::string& path);

private:
    struct Forward;
    Forward run_forward(const TokenSequence& seq) const;

    ToyEncoderConfig cfg_;
    Vec table_;                   // vocab_size x d_tok
    std::vector<Vec> mix_w_;      // depth x (d_tok x d_tok)
    std::vector<Vec> mix_b_;      // depth x d_tok
    Vec proj_;                    // embed_dim x d_tok
};

// Deterministic toy image encoder: pools the crop into a fixed cell grid of
// per-channel means and applies a seeded linear map followed by l2
// normalization. The map's coefficient for a stat depends only on its channel,
// so the embedding direction tracks the crop's mean channel signature and is
// stable under changes of crop padding or object scale. Frozen everywhere;
// plays the pretrained visual encoder role.
class ToyImageEncoder final : public ImageEncoder {
public:
    static constexpr int kGrid = 4;  // pooling cells per axis

    explicit ToyImageEncoder(const ToyEncoderConfig& cfg);

    std::size_t embed_dim() const override { return cfg_.embed_dim; }
    UnitEmbedding encode_crop(const Image& img, const Box& box) const override;
    std::uint64_t parameter_checksum() const override;

    static std::size_t stat_dim() { return static_cast<std::size_t>(kImageChannels) * kGrid * kGrid; }
    static Vec pool_stats(const Image& img, const Box& box);
    const Vec& weight() const { return weight_; }  // embed_dim x stat_dim
    const ToyEncoderConfig& config() const { return cfg_; }

    void save(const std::string& path) const;
    static std::unique_ptr<ToyImageEncoder> load(const std::string& path);

private:
    ToyEncoderConfig cfg_;
    Vec weight_;
};

std::unique_ptr<ToyTextEncoder> build_toy_text_encoder(const ToyEncoderConfig& cfg);
std::unique_ptr<ToyImageEncoder> build_toy_image_encoder(const ToyEncoderConfig& cfg);

// Assembled prompt sequence for one category plus the name-token count, which
// locates the trainable positions: prefix at [0, j), suffix at
// [j + name_len, j + name_len + h).
struct CategorySequence {
    TokenSequence seq;
    std::size_t name_len = 0;
};

// Tokenizes name and description and assembles the prompt sequence. The
// description is truncated to fit max_seq_len; name plus prompt vectors alone
// exceeding the limit is an error.
CategorySequence category_sequence(const CategorySpec& spec, const PromptVectors& prompts,
                                   const TextEncoder& enc, const Vocabulary& vocab);

UnitEmbedding encode_category(const CategorySpec& spec, const PromptVectors& prompts,
                              const TextEncoder& enc, const Vocabulary& vocab);

// Classifier construction variants used across the pipeline.
enum class PromptVariant { kNameOnly, kNameDescription, kLearned };

std::string prompt_variant_name(PromptVariant v);
PromptVariant prompt_variant_from_name(const std::string& s);

// Manual template paths rewrite the category text; the learned path keeps it.
CategorySpec apply_prompt_variant(const CategorySpec& spec, PromptVariant v);

CategoryEmbeddingMatrix build_category_matrix(const std::vector<CategorySpec>& specs,
                                              const PromptVectors& prompts,
                                              const TextEncoder& enc, const Vocabulary& vocab,
                                              PromptVariant variant = PromptVariant::kLearned);

}  // namespace ovd
