// Command-line front end: each subcommand runs one pipeline stage against the
// directories named by the config, exchanging data through files only.
#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "ovd/config.hpp"
#include "ovd/errors.hpp"
#include "ovd/pipeline.hpp"
#include "ovd/pseudo_label.hpp"

int main(int argc, char** argv) {
    CLI::App app{"open-vocabulary detection pipeline on synthetic benchmarks"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir;
    std::string box_gen;
    app.add_option("--config", config_path, "run configuration file (defaults apply when omitted)");
    auto* seed_opt = app.add_option("--seed", seed, "override the run seed");
    app.add_option("--out", out_dir, "override the output directory");
    app.add_option("--box-gen", box_gen,
                   "override the pseudo box strategy "
                   "(whole_image|max_size|max_obj_score|max_pred_score)");

    auto* gen = app.add_subcommand("gen-benchmark", "generate the synthetic benchmark data");
    auto* learn = app.add_subcommand("learn-prompts", "train prompt vectors on base annotations");
    auto* source = app.add_subcommand("source", "retrieve candidate images for novel categories");
    auto* pseudo = app.add_subcommand("pseudo-label", "train phase 1 and label the candidates");
    auto* selftrain = app.add_subcommand("self-train", "train phase 2 on base plus pseudo labels");
    auto* evaluate = app.add_subcommand("evaluate", "score the final checkpoint on held-out data");
    auto* pipeline = app.add_subcommand("pipeline", "run every stage in order");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        ovd::RunConfig cfg;
        if (!config_path.empty()) cfg = ovd::load_run_config(config_path);
        if (seed_opt->count() > 0) cfg.seed = seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (!box_gen.empty()) cfg.box_gen = ovd::strategy_from_name(box_gen);

        if (gen->parsed()) ovd::cmd_gen_benchmark(cfg);
        if (learn->parsed()) ovd::cmd_learn_prompts(cfg);
        if (source->parsed()) ovd::cmd_source(cfg);
        if (pseudo->parsed()) ovd::cmd_pseudo_label(cfg);
        if (selftrain->parsed()) ovd::cmd_self_train(cfg);
        if (evaluate->parsed()) ovd::cmd_evaluate(cfg);
        if (pipeline->parsed()) ovd::cmd_pipeline(cfg);
    } catch (const ovd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ovd::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
