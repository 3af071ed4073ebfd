#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ovd/errors.hpp"

namespace ovd {

using Vec = std::vector<double>;

// L2-normalized vector, the common currency of all similarity computation.
// Constructed only via l2_normalize or from trusted (already-normal) data.
struct UnitEmbedding {
    Vec values;

    std::size_t dim() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
};

enum class Split { kBase, kNovel };

std::string split_name(Split s);
Split split_from_name(const std::string& s);

struct CategorySpec {
    int id = 0;
    std::string name;
    std::string description;  // may be empty (name-only prompt path)
    Split split = Split::kBase;
};

// One unit-norm row per category, ordered by category id.
struct CategoryEmbeddingMatrix {
    std::size_t num_categories = 0;
    std::size_t dim = 0;
    Vec rows;  // row-major, num_categories x dim

    const double* row(std::size_t c) const { return rows.data() + c * dim; }
    double* row(std::size_t c) { return rows.data() + c * dim; }
};

enum class ClassifierMode { kSoftmax, kSigmoid };

struct ClassifierConfig {
    double temperature = 0.01;  // divisor applied to cosine similarities
    ClassifierMode mode = ClassifierMode::kSigmoid;
};

double l2_norm(const Vec& v);
double dot(const Vec& a, const Vec& b);

// Errors: ZeroVector if ||v|| < 1e-12.
UnitEmbedding l2_normalize(const Vec& v);

// logit_x = <v, c_x> / temperature for every category x.
Vec cosine_logits(const UnitEmbedding& v, const CategoryEmbeddingMatrix& cats,
                  const ClassifierConfig& cfg);

// Numerically stable (max-subtracted) softmax; output sums to 1.
Vec softmax_probs(const Vec& logits);

// Elementwise logistic; scores independent across categories.
Vec sigmoid_scores(const Vec& logits);

// Applies the configured activation to cosine logits.
Vec classifier_scores(const UnitEmbedding& v, const CategoryEmbeddingMatrix& cats,
                      const ClassifierConfig& cfg);

std::size_t argmax(const Vec& v);

// --- persistence -----------------------------------------------------------
// Matrix file: text header line "C D\n" followed by C*D little-endian f32.
void save_category_matrix(const CategoryEmbeddingMatrix& m, const std::string& path);
CategoryEmbeddingMatrix load_category_matrix(const std::string& path);

// Category table: line-delimited "id<TAB>name<TAB>description<TAB>split".
void save_category_specs(const std::vector<CategorySpec>& specs, const std::string& path);
std::vector<CategorySpec> load_category_specs(const std::string& path);

}  // namespace ovd
