#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ovd/corpus.hpp"
#include "ovd/dataset.hpp"
#include "ovd/embedding.hpp"
#include "ovd/encoders.hpp"
#include "ovd/tokenizer.hpp"

namespace ovd {

// Knobs for the synthetic detection world. Every category is a painted cell
// pattern whose encoder embedding equals, by construction, the text embedding
// of a hidden phrase (context word + name + context word + description), so
// text-image alignment holds exactly and every downstream claim is testable.
struct BenchmarkSpec {
    int num_base = 5;
    int num_novel = 3;
    int train_images = 48;  // base-only annotations
    int eval_images = 32;   // both splits
    int corpus_per_category = 50;
    int junk_records = 150;  // no labeled object, distractors only

    int train_image_size = 96;  // also eval
    int corpus_image_size = 64;

    double noise_sigma = 0.35;
    double pattern_amp = 6.0;   // embedding-space magnitude of each pattern
    double ghost_amp = 0.25;    // ghost patch amplitude relative to its pattern
    double ghost_prob = 0.6;    // chance a corpus record carries a ghost
    double distractor_prob = 0.7;
    double centricity_min = 0.5;  // object fraction of the corpus image side
    double centricity_max = 0.8;

    double min_self_check = 0.95;
    std::uint64_t seed = 1;
};

struct BenchmarkData {
    std::vector<CategorySpec> categories;  // dense ids, base block then novel
    Vocabulary vocab;
    ToyEncoderConfig enc_cfg;  // template with vocab_size filled in
    std::string ctx_pre, ctx_post;

    CategoryEmbeddingMatrix targets;  // hidden-phrase embeddings, one per id
    std::vector<Vec> patterns;        // cell values per category id

    DatasetManifest train_manifest;
    DatasetManifest eval_manifest;
    EmbeddingCorpus corpus;
    double self_check_accuracy = 0.0;
};

// Fraction of annotations whose exact-box crop embedding is nearest (by
// cosine) to its own category's target embedding.
double nearest_target_accuracy(const DatasetManifest& manifest, const CategoryEmbeddingMatrix& targets,
                               const ImageEncoder& img_enc);

// Deterministic in (spec, enc_template). Retries with re-salted world seeds
// until the nearest-target self-check reaches min_self_check (a few attempts)
// and throws InvalidSpec if it never does. Errors: InvalidSpec.
BenchmarkData generate_benchmark(const BenchmarkSpec& spec, const ToyEncoderConfig& enc_template);

}  // namespace ovd
