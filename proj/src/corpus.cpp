#include "ovd/corpus.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>

#include "ovd/io.hpp"

namespace ovd {
namespace {

std::vector<CategorySpec> filter_split(const std::vector<CategorySpec>& specs, Split split) {
    std::vector<CategorySpec> out;
    for (const CategorySpec& s : specs) {
        if (s.split == split) out.push_back(s);
    }
    return out;
}

}  // namespace

std::vector<ScoredRecord> retrieve_top_n(const UnitEmbedding& cat_embed, const EmbeddingCorpus& corpus,
                                         int n) {
    if (corpus.empty()) throw EmptyCorpusError("retrieve_top_n: corpus has no records");
    if (cat_embed.dim() != corpus.dim) {
        throw DimensionMismatchError("retrieve_top_n: embedding dim " + std::to_string(cat_embed.dim()) +
                                     " vs corpus dim " + std::to_string(corpus.dim));
    }
    if (n < 1) throw InvalidSpecError("retrieve_top_n: n must be >= 1");

    std::vector<ScoredRecord> scored;
    scored.reserve(corpus.records.size());
    for (const CorpusRecord& r : corpus.records) {
        scored.push_back(ScoredRecord{r.id, dot(cat_embed.values, r.embedding.values)});
    }
    const auto better = [](const ScoredRecord& a, const ScoredRecord& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.record_id < b.record_id;
    };
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(n), scored.size());
    std::partial_sort(scored.begin(), scored.begin() + keep, scored.end(), better);
    scored.resize(keep);
    return scored;
}

CandidateSet source_candidates(const std::vector<CategorySpec>& novel_specs,
                               const PromptVectors& prompts, const TextEncoder& text_enc,
                               const Vocabulary& vocab, const EmbeddingCorpus& corpus,
                               const SourcingConfig& cfg) {
    CandidateSet out;
    for (const CategorySpec& spec : novel_specs) {
        const UnitEmbedding e = encode_category(spec, prompts, text_enc, vocab);
        out.per_category[spec.id] = retrieve_top_n(e, corpus, cfg.images_per_category);
    }
    return out;
}

IterativeSourceResult iterative_source(const DatasetManifest& base_manifest,
                                       const std::vector<CategorySpec>& specs,
                                       const EmbeddingCorpus& corpus, const RPLConfig& rpl_cfg,
                                       const SourcingConfig& src_cfg, const TextEncoder& text_enc,
                                       const ImageEncoder& img_enc, const Vocabulary& vocab) {
    if (src_cfg.iterations != 1 && src_cfg.iterations != 2) {
        throw InvalidSpecError("iterative_source: iterations must be 1 or 2");
    }
    const std::vector<CategorySpec> base_specs = filter_split(specs, Split::kBase);
    const std::vector<CategorySpec> novel_specs = filter_split(specs, Split::kNovel);

    std::vector<CropRecord> crops = build_crop_dataset(base_manifest, specs, img_enc, rpl_cfg);
    RPLResult round = train_prompts(crops, base_specs, text_enc, img_enc, vocab, rpl_cfg);

    if (src_cfg.iterations == 2) {
        // Pull object-centric corpus samples toward the base classes and
        // retrain from the same seeded start.
        std::unordered_map<int, std::size_t> by_id;
        by_id.reserve(corpus.records.size());
        for (std::size_t i = 0; i < corpus.records.size(); ++i) by_id[corpus.records[i].id] = i;
        for (const CategorySpec& spec : base_specs) {
            const UnitEmbedding e = encode_category(spec, round.prompts, text_enc, vocab);
            for (const ScoredRecord& sr : retrieve_top_n(e, corpus, src_cfg.base_augment_count)) {
                CropRecord crop;
                crop.image_id = -1;
                crop.box = Box{0.0, 0.0, 1.0, 1.0};
                crop.label = spec.id;
                crop.embedding = corpus.records[by_id.at(sr.record_id)].embedding;
                crops.push_back(std::move(crop));
            }
        }
        round = train_prompts(crops, base_specs, text_enc, img_enc, vocab, rpl_cfg);
    }

    IterativeSourceResult result;
    result.prompts = std::move(round.prompts);
    result.history = std::move(round.history);
    result.candidates = source_candidates(novel_specs, result.prompts, text_enc, vocab, corpus, src_cfg);
    return result;
}

double candidate_precision(const CandidateSet& candidates, const EmbeddingCorpus& corpus) {
    if (candidates.empty()) return 0.0;
    std::unordered_map<int, int> label_by_id;
    label_by_id.reserve(corpus.records.size());
    for (const CorpusRecord& r : corpus.records) label_by_id[r.id] = r.hidden_label;
    double sum = 0.0;
    for (const auto& [cat, list] : candidates.per_category) {
        if (list.empty()) continue;
        std::size_t hits = 0;
        for (const ScoredRecord& sr : list) {
            if (label_by_id.at(sr.record_id) == cat) ++hits;
        }
        sum += static_cast<double>(hits) / static_cast<double>(list.size());
    }
    return sum / static_cast<double>(candidates.per_category.size());
}

void save_corpus(const EmbeddingCorpus& corpus, const std::string& meta_path,
                 const std::string& embed_path) {
    std::ostringstream meta;
    meta << corpus.records.size() << ' ' << corpus.dim << '\n';
    for (const CorpusRecord& r : corpus.records) {
        if (r.uri.find('\t') != std::string::npos || r.uri.find('\n') != std::string::npos) {
            throw IoError("save_corpus: uri contains a tab or newline");
        }
        meta << r.id << '\t' << r.uri << '\t' << r.hidden_label << '\n';
    }
    write_text_file(meta_path, meta.str());

    auto os = open_out(embed_path, true);
    for (const CorpusRecord& r : corpus.records) write_f32_block(os, r.embedding.values);
    if (!os) throw IoError("failed writing corpus embeddings to " + embed_path);
}

EmbeddingCorpus load_corpus(const std::string& meta_path, const std::string& embed_path) {
    EmbeddingCorpus corpus;
    std::istringstream is(read_text_file(meta_path));
    std::string header;
    if (!std::getline(is, header)) throw IoError(meta_path + ": empty corpus meta file");
    std::size_t count = 0;
    {
        std::istringstream hs(header);
        if (!(hs >> count >> corpus.dim)) throw IoError(meta_path + ": malformed corpus header");
    }
    auto es = open_in(embed_path, true);
    corpus.records.reserve(count);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const std::size_t t1 = line.find('\t');
        const std::size_t t2 = line.rfind('\t');
        if (t1 == std::string::npos || t2 == t1) {
            throw IoError(meta_path + ": corpus line needs id<TAB>uri<TAB>hidden_label");
        }
        CorpusRecord r;
        try {
            r.id = std::stoi(line.substr(0, t1));
            r.uri = line.substr(t1 + 1, t2 - t1 - 1);
            r.hidden_label = std::stoi(line.substr(t2 + 1));
        } catch (const std::exception& e) {
            throw IoError(meta_path + ": " + e.what());
        }
        r.embedding.values = read_f32_block(es, corpus.dim);
        corpus.records.push_back(std::move(r));
    }
    if (corpus.records.size() != count) {
        throw IoError(meta_path + ": header promises " + std::to_string(count) + " records, found " +
                      std::to_string(corpus.records.size()));
    }
    std::vector<bool> seen;
    for (const CorpusRecord& r : corpus.records) {
        if (r.id < 0) throw IoError(meta_path + ": negative record id");
        if (static_cast<std::size_t>(r.id) >= seen.size()) seen.resize(r.id + 1, false);
        if (seen[static_cast<std::size_t>(r.id)]) throw IoError(meta_path + ": duplicate record id");
        seen[static_cast<std::size_t>(r.id)] = true;
    }
    return corpus;
}

void save_candidates(const CandidateSet& candidates, const std::string& path) {
    std::ostringstream os;
    os << "# category_id,record_id,rank,similarity\n";
    for (const auto& [cat, list] : candidates.per_category) {
        for (std::size_t rank = 0; rank < list.size(); ++rank) {
            os << cat << ',' << list[rank].record_id << ',' << rank << ','
               << format_double(list[rank].similarity) << '\n';
        }
    }
    write_text_file(path, os.str());
}

CandidateSet load_candidates(const std::string& path) {
    CandidateSet out;
    std::istringstream is(read_text_file(path));
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        int cat = 0, rid = 0;
        std::size_t rank = 0;
        double sim = 0.0;
        char c1 = 0, c2 = 0, c3 = 0;
        if (!(ls >> cat >> c1 >> rid >> c2 >> rank >> c3 >> sim) || c1 != ',' || c2 != ',' || c3 != ',') {
            throw IoError(path + ": malformed candidate line: " + line);
        }
        std::vector<ScoredRecord>& list = out.per_category[cat];
        if (list.size() != rank) throw IoError(path + ": candidate ranks out of order");
        list.push_back(ScoredRecord{rid, sim});
    }
    return out;
}

}  // namespace ovd
