#include "ovd/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <unordered_map>

#include "ovd/benchmark.hpp"
#include "ovd/corpus.hpp"
#include "ovd/dataset.hpp"
#include "ovd/detector.hpp"
#include "ovd/encoders.hpp"
#include "ovd/eval.hpp"
#include "ovd/io.hpp"
#include "ovd/prompt_learning.hpp"
#include "ovd/pseudo_label.hpp"

namespace ovd {
namespace {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string now_iso_utc() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
    auto os = open_out(path, false);
    os << text;
    if (!os) throw IoError("failed writing " + path);
}

std::string join_hashes(const std::vector<std::pair<std::string, std::string>>& entries) {
    if (entries.empty()) return "-";
    std::string out;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (i) out += ',';
        out += entries[i].first + '=' + entries[i].second;
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> split_hashes(const std::string& s,
                                                              const std::string& path) {
    std::vector<std::pair<std::string, std::string>> out;
    if (s == "-") return out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const std::size_t eq = item.rfind('=');
        if (eq == std::string::npos) throw IoError(path + ": malformed hash entry '" + item + "'");
        out.emplace_back(item.substr(0, eq), item.substr(eq + 1));
    }
    return out;
}

// Validates, makes the run directories, and drops the canonical config next
// to the outputs so every artifact set records what produced it.
RunPaths prepare(const RunConfig& cfg) {
    validate_run_config(cfg);
    const RunPaths p = run_paths(cfg);
    std::filesystem::create_directories(p.out_dir);
    std::filesystem::create_directories(p.data_dir);
    write_text_file(p.config_txt, serialize_run_config(cfg));
    return p;
}

// Runs `body` unless the manifest shows this stage already completed with the
// same config hash, same input hashes, and intact outputs.
bool run_stage(const RunConfig& cfg, const RunPaths& p, const std::string& stage,
               const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
               const std::function<void()>& body) {
    const std::string cfg_hash = hex64(config_hash(cfg));
    std::vector<std::pair<std::string, std::string>> in_hashes;
    for (const std::string& in : inputs) {
        if (!std::filesystem::exists(in)) throw ConfigError(stage + ": missing input " + in);
        in_hashes.emplace_back(in, file_hash_hex(in));
    }

    RunManifest manifest = load_run_manifest(p.run_manifest);
    if (const StageRecord* rec = manifest.find(stage)) {
        bool fresh = rec->config_hash == cfg_hash && rec->inputs == in_hashes;
        for (std::size_t i = 0; fresh && i < rec->outputs.size(); ++i) {
            const auto& [path, hash] = rec->outputs[i];
            fresh = std::filesystem::exists(path) && file_hash_hex(path) == hash;
        }
        if (fresh) {
            std::cout << "[" << stage << "] up to date\n";
            return false;
        }
    }

    body();

    StageRecord rec;
    rec.stage = stage;
    rec.config_hash = cfg_hash;
    rec.inputs = std::move(in_hashes);
    for (const std::string& out : outputs) rec.outputs.emplace_back(out, file_hash_hex(out));
    rec.completed_at = now_iso_utc();
    bool replaced = false;
    for (StageRecord& existing : manifest.stages) {
        if (existing.stage == stage) {
            existing = rec;
            replaced = true;
        }
    }
    if (!replaced) manifest.stages.push_back(std::move(rec));
    save_run_manifest(manifest, p.run_manifest);
    std::cout << "[" << stage << "] done\n";
    return true;
}

struct World {
    Vocabulary vocab;
    std::vector<CategorySpec> specs;
    std::unique_ptr<ToyTextEncoder> text_enc;
    std::unique_ptr<ToyImageEncoder> img_enc;
};

World load_world(const RunConfig& cfg, const RunPaths& p) {
    World w;
    w.vocab = Vocabulary::load(p.vocab);
    w.specs = load_category_specs(p.categories);
    const ToyEncoderConfig ec = encoder_config(cfg, w.vocab.size());
    w.text_enc = build_toy_text_encoder(ec);
    w.img_enc = build_toy_image_encoder(ec);
    return w;
}

RPLConfig rpl_config(const RunConfig& cfg) {
    RPLConfig rpl = cfg.rpl;
    rpl.temperature = cfg.rpl_temperature;
    rpl.seed = cfg.seed;
    return rpl;
}

PseudoLabelConfig pl_config(const RunConfig& cfg) {
    PseudoLabelConfig pl = cfg.pseudo;
    pl.seed = cfg.seed;
    return pl;
}

}  // namespace

RunPaths run_paths(const RunConfig& cfg) {
    RunPaths p;
    p.out_dir = cfg.out_dir;
    p.data_dir = cfg.data_dir.empty() ? cfg.out_dir + "/bench" : cfg.data_dir;

    p.vocab = p.data_dir + "/vocab.tsv";
    p.categories = p.data_dir + "/categories.tsv";
    p.train_manifest = p.data_dir + "/train_manifest.tsv";
    p.eval_manifest = p.data_dir + "/eval_manifest.tsv";
    p.corpus_meta = p.data_dir + "/corpus.meta";
    p.corpus_embed = p.data_dir + "/corpus.embed";

    p.config_txt = p.out_dir + "/config.txt";
    p.run_manifest = p.out_dir + "/run_manifest.tsv";
    p.prompts = p.out_dir + "/prompts.bin";
    p.loss_history = p.out_dir + "/loss_history.csv";
    p.prompts_final = p.out_dir + "/prompts_final.bin";
    p.matrix = p.out_dir + "/matrix.bin";
    p.candidates = p.out_dir + "/candidates.csv";
    p.pseudo_boxes = p.out_dir + "/pseudo.csv";
    p.pseudo_dropped = p.out_dir + "/pseudo_dropped.log";
    p.ckpt_phase1 = p.out_dir + "/checkpoint_phase1.bin";
    p.ckpt_final = p.out_dir + "/checkpoint_final.bin";
    p.eval_report = p.out_dir + "/eval.txt";
    return p;
}

const StageRecord* RunManifest::find(const std::string& stage) const {
    for (const StageRecord& rec : stages) {
        if (rec.stage == stage) return &rec;
    }
    return nullptr;
}

void save_run_manifest(const RunManifest& manifest, const std::string& path) {
    auto os = open_out(path, false);
    os << "# stage\tconfig_hash\tinputs\toutputs\tcompleted_at\n";
    for (const StageRecord& rec : manifest.stages) {
        os << rec.stage << '\t' << rec.config_hash << '\t' << join_hashes(rec.inputs) << '\t'
           << join_hashes(rec.outputs) << '\t' << rec.completed_at << "\n";
    }
    if (!os) throw IoError("failed writing run manifest to " + path);
}

RunManifest load_run_manifest(const std::string& path) {
    RunManifest manifest;
    if (!std::filesystem::exists(path)) return manifest;
    auto is = open_in(path, false);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, '\t')) fields.push_back(field);
        if (fields.size() != 5) throw IoError(path + ": expected 5 fields in '" + line + "'");
        StageRecord rec;
        rec.stage = fields[0];
        rec.config_hash = fields[1];
        rec.inputs = split_hashes(fields[2], path);
        rec.outputs = split_hashes(fields[3], path);
        rec.completed_at = fields[4];
        manifest.stages.push_back(std::move(rec));
    }
    return manifest;
}

std::string file_hash_hex(const std::string& path) {
    auto is = open_in(path, true);
    std::ostringstream buf;
    buf << is.rdbuf();
    const std::string bytes = buf.str();
    if (!is && !is.eof()) throw IoError("failed reading " + path);
    return hex64(fnv1a64(bytes));
}

void cmd_gen_benchmark(const RunConfig& cfg) {
    const RunPaths p = prepare(cfg);
    run_stage(cfg, p, "gen-benchmark", {},
              {p.vocab, p.categories, p.train_manifest, p.eval_manifest, p.corpus_meta,
               p.corpus_embed},
              [&] {
                  BenchmarkSpec spec = cfg.bench;
                  spec.seed = cfg.seed;
                  const BenchmarkData data = generate_benchmark(spec, encoder_config(cfg, 0));
                  data.vocab.save(p.vocab);
                  save_category_specs(data.categories, p.categories);
                  save_manifest(data.train_manifest, p.train_manifest);
                  save_manifest(data.eval_manifest, p.eval_manifest);
                  save_corpus(data.corpus, p.corpus_meta, p.corpus_embed);
                  std::cout << "[gen-benchmark] categories=" << data.categories.size()
                            << " train=" << data.train_manifest.size()
                            << " eval=" << data.eval_manifest.size()
                            << " corpus=" << data.corpus.records.size()
                            << " self_check=" << format_double(data.self_check_accuracy) << "\n";
              });
}

void cmd_learn_prompts(const RunConfig& cfg) {
    const RunPaths p = prepare(cfg);
    run_stage(cfg, p, "learn-prompts", {p.vocab, p.categories, p.train_manifest},
              {p.prompts, p.loss_history}, [&] {
                  const World w = load_world(cfg, p);
                  const DatasetManifest manifest = load_manifest(p.train_manifest);
                  const RPLConfig rpl = rpl_config(cfg);
                  std::vector<CategorySpec> base_specs;
                  for (const CategorySpec& s : w.specs) {
                      if (s.split == Split::kBase) base_specs.push_back(s);
                  }
                  const auto crops = build_crop_dataset(manifest, w.specs, *w.img_enc, rpl);
                  const RPLResult res =
                      train_prompts(crops, base_specs, *w.text_enc, *w.img_enc, w.vocab, rpl);
                  save_prompts(res.prompts, p.prompts);
                  save_loss_history(res.history, p.loss_history);
                  const EpochStats& last = res.history.back();
                  std::cout << "[learn-prompts] crops=" << crops.size()
                            << " final_loss=" << format_double(last.loss)
                            << " final_accuracy=" << format_double(last.accuracy) << "\n";
              });
}

void cmd_source(const RunConfig& cfg) {
    const RunPaths p = prepare(cfg);
    run_stage(cfg, p, "source",
              {p.vocab, p.categories, p.train_manifest, p.corpus_meta, p.corpus_embed},
              {p.candidates, p.prompts_final, p.matrix}, [&] {
                  const World w = load_world(cfg, p);
                  const DatasetManifest manifest = load_manifest(p.train_manifest);
                  const EmbeddingCorpus corpus = load_corpus(p.corpus_meta, p.corpus_embed);
                  const IterativeSourceResult res =
                      iterative_source(manifest, w.specs, corpus, rpl_config(cfg), cfg.sourcing,
                                       *w.text_enc, *w.img_enc, w.vocab);
                  save_candidates(res.candidates, p.candidates);
                  save_prompts(res.prompts, p.prompts_final);
                  const CategoryEmbeddingMatrix matrix =
                      build_category_matrix(w.specs, res.prompts, *w.text_enc, w.vocab);
                  save_category_matrix(matrix, p.matrix);
                  std::size_t rows = 0;
                  for (const auto& [cat, list] : res.candidates.per_category) rows += list.size();
                  std::cout << "[source] candidate_rows=" << rows << " precision="
                            << format_double(candidate_precision(res.candidates, corpus)) << "\n";
              });
}

void cmd_pseudo_label(const RunConfig& cfg) {
    const RunPaths p = prepare(cfg);
    run_stage(cfg, p, "pseudo-label",
              {p.vocab, p.categories, p.train_manifest, p.corpus_meta, p.corpus_embed,
               p.candidates, p.matrix},
              {p.ckpt_phase1, p.pseudo_boxes, p.pseudo_dropped}, [&] {
                  const World w = load_world(cfg, p);
                  const DatasetManifest manifest = load_manifest(p.train_manifest);
                  const EmbeddingCorpus corpus = load_corpus(p.corpus_meta, p.corpus_embed);
                  const CandidateSet candidates = load_candidates(p.candidates);
                  const CategoryEmbeddingMatrix matrix = load_category_matrix(p.matrix);

                  DetectorModel model = init_detector_model(cfg.detector, matrix, cfg.classifier,
                                                            w.img_enc->weight(), cfg.seed);
                  model.rpn_classifier_trainable = cfg.selftrain.rpn_classifier_trainable;
                  model.box_head_trainable = cfg.selftrain.box_head_trainable;
                  DetectorTrainState state = init_train_state(model);
                  train_detector_epochs(manifest.records, {}, cfg.selftrain.mix_base,
                                        cfg.selftrain.mix_pseudo, model, state, cfg.detector, 0,
                                        cfg.selftrain.phase1_epochs, cfg.seed);

                  std::unordered_map<int, const CorpusRecord*> by_id;
                  for (const CorpusRecord& rec : corpus.records) by_id[rec.id] = &rec;
                  std::vector<PseudoBox> boxes;
                  std::vector<std::string> dropped;
                  const PseudoLabelConfig pl = pl_config(cfg);
                  for (const auto& [rec_id, cats] : allowed_by_record(candidates)) {
                      const auto it = by_id.find(rec_id);
                      if (it == by_id.end()) {
                          throw InvalidSpecError("pseudo-label: candidate record " +
                                                 std::to_string(rec_id) +
                                                 " missing from the corpus");
                      }
                      try {
                          boxes.push_back(multiscale_pseudo_box(rec_id, it->second->uri, cats,
                                                                model, pl, cfg.box_gen));
                      } catch (const NoProposalsError& e) {
                          dropped.push_back(std::to_string(rec_id) + ": " + e.what());
                      }
                  }
                  save_pseudo_boxes(boxes, p.pseudo_boxes);
                  {
                      auto os = open_out(p.pseudo_dropped, false);
                      for (const std::string& d : dropped) os << d << "\n";
                      if (!os) throw IoError("failed writing " + p.pseudo_dropped);
                  }
                  save_train_checkpoint(model, state, p.ckpt_phase1);
                  std::cout << "[pseudo-label] labeled=" << boxes.size()
                            << " dropped=" << dropped.size()
                            << " strategy=" << strategy_name(cfg.box_gen) << "\n";
              });
}

void cmd_self_train(const RunConfig& cfg) {
    const RunPaths p = prepare(cfg);
    run_stage(cfg, p, "self-train",
              {p.train_manifest, p.corpus_meta, p.corpus_embed, p.pseudo_boxes, p.ckpt_phase1},
              {p.ckpt_final}, [&] {
                  const DatasetManifest manifest = load_manifest(p.train_manifest);
                  const EmbeddingCorpus corpus = load_corpus(p.corpus_meta, p.corpus_embed);
                  const std::vector<PseudoBox> boxes = load_pseudo_boxes(p.pseudo_boxes);

                  DetectorModel model;
                  DetectorTrainState state;
                  load_train_checkpoint(p.ckpt_phase1, &model, &state);
                  model.rpn_classifier_trainable = cfg.selftrain.rpn_classifier_trainable;
                  model.box_head_trainable = cfg.selftrain.box_head_trainable;

                  const PseudoManifestResult pm =
                      build_pseudo_manifest(boxes, corpus, pl_config(cfg), cfg.seed);
                  train_detector_epochs(manifest.records, pm.manifest.records,
                                        cfg.selftrain.mix_base, cfg.selftrain.mix_pseudo, model,
                                        state, cfg.detector, cfg.selftrain.phase1_epochs,
                                        cfg.selftrain.phase2_epochs, cfg.seed);
                  save_train_checkpoint(model, state, p.ckpt_final);
                  std::cout << "[self-train] pseudo_records=" << pm.manifest.size()
                            << " rescale_dropped=" << pm.dropped.size() << "\n";
              });
}

void cmd_evaluate(const RunConfig& cfg) {
    const RunPaths p = prepare(cfg);
    run_stage(cfg, p, "evaluate", {p.eval_manifest, p.categories, p.ckpt_final}, {p.eval_report},
              [&] {
                  const std::vector<CategorySpec> specs = load_category_specs(p.categories);
                  const DatasetManifest manifest = load_manifest(p.eval_manifest);
                  const DetectorModel model = load_checkpoint(p.ckpt_final);
                  const EvalResult res = evaluate_model(model, manifest, specs, cfg.eval);
                  save_eval_result(res, p.eval_report, "config_hash=" + hex64(config_hash(cfg)));
                  std::cout << "[evaluate] ap=" << format_double(res.ap)
                            << " ap_base=" << format_double(res.ap_base)
                            << " ap_novel=" << format_double(res.ap_novel) << "\n";
              });
}

void cmd_pipeline(const RunConfig& cfg) {
    cmd_gen_benchmark(cfg);
    cmd_learn_prompts(cfg);
    cmd_source(cfg);
    cmd_pseudo_label(cfg);
    cmd_self_train(cfg);
    cmd_evaluate(cfg);
    const RunPaths p = run_paths(cfg);
    const EvalResult res = load_eval_result(p.eval_report);
    std::cout << "[pipeline] complete ap_novel=" << format_double(res.ap_novel) << "\n";
}

}  // namespace ovd
