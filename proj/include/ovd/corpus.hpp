#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ovd/dataset.hpp"
#include "ovd/encoders.hpp"
#include "ovd/prompt_learning.hpp"

namespace ovd {

// Precomputed-embedding web-image stand-in. `uri` holds the record's
// renderable drawing program so later stages can rasterize it; hidden_label
// exists only in synthetic corpora and is used purely for precision checks.
struct CorpusRecord {
    int id = 0;
    UnitEmbedding embedding;
    std::string uri;
    int hidden_label = -1;
};

struct EmbeddingCorpus {
    std::vector<CorpusRecord> records;
    std::size_t dim = 0;

    bool empty() const { return records.empty(); }
};

struct SourcingConfig {
    int images_per_category = 300;  // N
    int iterations = 1;             // 1 or 2
    int base_augment_count = 200;   // corpus records appended per base class in iteration 2
};

struct ScoredRecord {
    int record_id = 0;
    double similarity = 0.0;
};

// Ranked retrieval lists per retrieving category id.
struct CandidateSet {
    std::map<int, std::vector<ScoredRecord>> per_category;

    bool empty() const { return per_category.empty(); }
};

// Exact top-N by dot product, descending, ties broken by ascending record id.
// Errors: EmptyCorpus; DimensionMismatch.
std::vector<ScoredRecord> retrieve_top_n(const UnitEmbedding& cat_embed, const EmbeddingCorpus& corpus,
                                         int n);

// One retrieval list per novel category; an empty novel list yields an empty
// set. Records may appear under several categories.
CandidateSet source_candidates(const std::vector<CategorySpec>& novel_specs,
                               const PromptVectors& prompts, const TextEncoder& text_enc,
                               const Vocabulary& vocab, const EmbeddingCorpus& corpus,
                               const SourcingConfig& cfg);

struct IterativeSourceResult {
    PromptVectors prompts;
    std::vector<EpochStats> history;  // last training round
    CandidateSet candidates;
};

// Iteration 1: RPL on base crops, then source novel candidates. Iteration 2:
// retrieve corpus records for base categories with the iteration-1 prompts,
// append them to the crop set as embedding-only samples labeled by their
// retrieving category, retrain prompts from scratch with the same seed, and
// source again.
IterativeSourceResult iterative_source(const DatasetManifest& base_manifest,
                                       const std::vector<CategorySpec>& specs,
                                       const EmbeddingCorpus& corpus, const RPLConfig& rpl_cfg,
                                       const SourcingConfig& src_cfg, const TextEncoder& text_enc,
                                       const ImageEncoder& img_enc, const Vocabulary& vocab);

// Mean over categories of the fraction of retrieved records whose hidden
// label equals the retrieving category. Synthetic corpora only.
double candidate_precision(const CandidateSet& candidates, const EmbeddingCorpus& corpus);

// Meta file: header `num_records D`, then `id<TAB>uri<TAB>hidden_label` per
// record; embeddings as a flat little-endian f32 sidecar in record order.
void save_corpus(const EmbeddingCorpus& corpus, const std::string& meta_path,
                 const std::string& embed_path);
EmbeddingCorpus load_corpus(const std::string& meta_path, const std::string& embed_path);

// Line-delimited `category_id,record_id,rank,similarity` (rank is 0-based).
void save_candidates(const CandidateSet& candidates, const std::string& path);
CandidateSet load_candidates(const std::string& path);

}  // namespace ovd
