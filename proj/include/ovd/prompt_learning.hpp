#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ovd/dataset.hpp"
#include "ovd/encoders.hpp"

namespace ovd {

// Object-centric training sample. The embedding is precomputed through the
// frozen image encoder; corpus-sourced samples carry no pixels (image_id -1).
struct CropRecord {
    int image_id = 0;
    Box box;
    int label = 0;  // base-category id
    UnitEmbedding embedding;
};

struct RPLConfig {
    int epochs = 6;
    double learning_rate = 0.01;
    double momentum = 0.9;
    int batch_size = 16;
    int max_crops_per_class = 200;
    std::size_t prefix_count = 1;  // j
    std::size_t suffix_count = 1;  // h
    double init_std = 0.02;
    double temperature = 0.01;
    bool refresh_per_epoch = false;  // rebuild the category matrix per epoch instead of per step
    std::uint64_t seed = 1;
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct RPLResult {
    PromptVectors prompts;
    std::vector<EpochStats> history;
};

// Pads the box by its own width on each side and its own height on each side
// (tripling both dimensions), then clips to the image.
// Errors: InvalidBox for a degenerate box or one outside the image.
Box expand_box(const Box& box, double image_w, double image_h);

// Collects expanded base-split crops, at most max_crops_per_class per class
// (seeded sample without replacement), embedding each through img_enc.
// Errors: EmptyBase if the manifest holds no base-category annotations.
std::vector<CropRecord> build_crop_dataset(const DatasetManifest& manifest,
                                           const std::vector<CategorySpec>& specs,
                                           const ImageEncoder& img_enc, const RPLConfig& cfg);

// Cross-entropy descent on the prompt vectors only; both encoders stay
// frozen and the category matrix is refreshed from the current prompts.
// Errors: EmptyBase for empty crops; NonFiniteLoss aborts with diagnostics.
RPLResult train_prompts(const std::vector<CropRecord>& crops, const std::vector<CategorySpec>& specs,
                        const TextEncoder& text_enc, const ImageEncoder& img_enc,
                        const Vocabulary& vocab, const RPLConfig& cfg);

// Max relative error between analytic prompt gradients and central finite
// differences (step 1e-4) of the batch loss.
double gradient_check(const PromptVectors& prompts, const std::vector<CropRecord>& batch,
                      const std::vector<CategorySpec>& specs, const TextEncoder& text_enc,
                      const Vocabulary& vocab, double temperature);

// Batch loss and analytic prompt gradients; the seam shared by training,
// gradient_check, and the descent-direction tests.
struct BatchEval {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<Vec> prefix_grad;
    std::vector<Vec> suffix_grad;
};

BatchEval eval_prompt_batch(const std::vector<CropRecord>& batch,
                            const std::vector<CategorySpec>& specs, const PromptVectors& prompts,
                            const TextEncoder& text_enc, const Vocabulary& vocab, double temperature,
                            bool want_gradients);

// Fraction of crops whose argmax category equals their label under the
// matrix built from the given prompts.
double crop_accuracy(const std::vector<CropRecord>& crops, const std::vector<CategorySpec>& specs,
                     const PromptVectors& prompts, const TextEncoder& text_enc,
                     const Vocabulary& vocab, double temperature);

// Prompt blob: magic, trainable flag, j, h, d_tok, row-major f64 vectors.
void save_prompts(const PromptVectors& prompts, const std::string& path);
PromptVectors load_prompts(const std::string& path);

// Line-delimited `epoch,loss,accuracy`.
void save_loss_history(const std::vector<EpochStats>& history, const std::string& path);
std::vector<EpochStats> load_loss_history(const std::string& path);

}  // namespace ovd
