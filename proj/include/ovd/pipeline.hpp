#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ovd/config.hpp"

namespace ovd {

// Every stage artifact lives at a fixed name under the run's directories so
// stages can find each other's outputs without passing paths around.
struct RunPaths {
    std::string out_dir;
    std::string data_dir;

    // benchmark data (data_dir)
    std::string vocab;
    std::string categories;
    std::string train_manifest;
    std::string eval_manifest;
    std::string corpus_meta;
    std::string corpus_embed;

    // stage outputs (out_dir)
    std::string config_txt;
    std::string run_manifest;
    std::string prompts;
    std::string loss_history;
    std::string prompts_final;
    std::string matrix;
    std::string candidates;
    std::string pseudo_boxes;
    std::string pseudo_dropped;
    std::string ckpt_phase1;
    std::string ckpt_final;
    std::string eval_report;
};

RunPaths run_paths(const RunConfig& cfg);

// One completed stage: the config hash plus content hashes of what it read
// and wrote. completed_at is informational only and never part of matching.
struct StageRecord {
    std::string stage;
    std::string config_hash;
    std::vector<std::pair<std::string, std::string>> inputs;   // path -> content hash
    std::vector<std::pair<std::string, std::string>> outputs;  // path -> content hash
    std::string completed_at;
};

struct RunManifest {
    std::vector<StageRecord> stages;

    const StageRecord* find(const std::string& stage) const;
};

void save_run_manifest(const RunManifest& manifest, const std::string& path);
RunManifest load_run_manifest(const std::string& path);  // missing file -> empty

// FNV-1a over the raw file bytes, as 16 hex digits. Errors: IoError.
std::string file_hash_hex(const std::string& path);

// Stages validate the config, write its canonical form to config.txt, and
// re-run only when the config hash, any input hash, or any recorded output
// changed; otherwise they are a no-op. A missing input file is a ConfigError.
void cmd_gen_benchmark(const RunConfig& cfg);
void cmd_learn_prompts(const RunConfig& cfg);
void cmd_source(const RunConfig& cfg);
void cmd_pseudo_label(const RunConfig& cfg);
void cmd_self_train(const RunConfig& cfg);
void cmd_evaluate(const RunConfig& cfg);
void cmd_pipeline(const RunConfig& cfg);  // all of the above, in order

}  // namespace ovd
