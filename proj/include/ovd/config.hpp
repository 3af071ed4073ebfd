#pragma once

#include <cstdint>
#include <string>

#include "ovd/benchmark.hpp"
#include "ovd/corpus.hpp"
#include "ovd/detector.hpp"
#include "ovd/embedding.hpp"
#include "ovd/encoders.hpp"
#include "ovd/eval.hpp"
#include "ovd/prompt_learning.hpp"
#include "ovd/pseudo_label.hpp"

namespace ovd {

// Every run-time knob in one aggregate. One `seed` drives every stage; the
// per-module seeds are filled from it when the stage runs, so a config file
// never carries more than one seed.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    std::string data_dir;  // benchmark artifacts; empty means <out_dir>/bench

    int embed_dim = 32;
    int d_tok = 32;
    int mixing_depth = 1;
    int max_seq_len = 32;

    ClassifierConfig classifier;
    double rpl_temperature = 0.01;
    RPLConfig rpl;
    SourcingConfig sourcing;
    PseudoLabelConfig pseudo;
    BoxGenStrategy box_gen = BoxGenStrategy::kMaxPredScore;
    SelfTrainSchedule selftrain;
    DetectorConfig detector;
    EvalConfig eval;
    BenchmarkSpec bench;
};

// Text format: one `key = value` per line, `#` starts a comment, blank lines
// ignored. Unknown or duplicate keys are errors. Values must not contain
// `#` or newlines. Errors: ConfigError.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);  // also IoError

// Canonical form: every key in schema order with its current value, grouped
// by section. parse(serialize(c)) == c, and the canonical bytes define
// config_hash, so equivalent configs hash identically.
std::string serialize_run_config(const RunConfig& cfg);
std::uint64_t config_hash(const RunConfig& cfg);

// Range checks over the whole aggregate. Errors: ConfigError naming the key.
void validate_run_config(const RunConfig& cfg);

ToyEncoderConfig encoder_config(const RunConfig& cfg, std::size_t vocab_size);

}  // namespace ovd
