#include "ovd/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ovd/io.hpp"

namespace ovd {

std::string split_name(Split s) { return s == Split::kBase ? "base" : "novel"; }

Split split_from_name(const std::string& s) {
    if (s == "base") return Split::kBase;
    if (s == "novel") return Split::kNovel;
    throw IoError("unknown split name: " + s);
}

double l2_norm(const Vec& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

UnitEmbedding l2_normalize(const Vec& v) {
    const double n = l2_norm(v);
    if (n < 1e-12) throw ZeroVectorError("l2_normalize: zero vector");
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return UnitEmbedding{std::move(out)};
}

Vec cosine_logits(const UnitEmbedding& v, const CategoryEmbeddingMatrix& cats,
                  const ClassifierConfig& cfg) {
    if (v.dim() != cats.dim)
        throw DimensionMismatchError("cosine_logits: embedding dim " + std::to_string(v.dim()) +
                                     " vs matrix dim " + std::to_string(cats.dim));
    Vec logits(cats.num_categories);
    for (std::size_t c = 0; c < cats.num_categories; ++c) {
        const double* r = cats.row(c);
        double s = 0.0;
        for (std::size_t i = 0; i < cats.dim; ++i) s += v.values[i] * r[i];
        logits[c] = s / cfg.temperature;
    }
    return logits;
}

Vec softmax_probs(const Vec& logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    Vec p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (double& x : p) x /= sum;
    return p;
}

Vec sigmoid_scores(const Vec& logits) {
    Vec s(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) s[i] = 1.0 / (1.0 + std::exp(-logits[i]));
    return s;
}

Vec classifier_scores(const UnitEmbedding& v, const CategoryEmbeddingMatrix& cats,
                      const ClassifierConfig& cfg) {
    const Vec logits = cosine_logits(v, cats, cfg);
    return cfg.mode == ClassifierMode::kSoftmax ? softmax_probs(logits) : sigmoid_scores(logits);
}

std::size_t argmax(const Vec& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

void save_category_matrix(const CategoryEmbeddingMatrix& m, const std::string& path) {
    auto out = open_out(path, true);
    out << m.num_categories << " " << m.dim << "\n";
    write_f32_block(out, m.rows);
    if (!out.good()) throw IoError("write failed: " + path);
}

CategoryEmbeddingMatrix load_category_matrix(const std::string& path) {
    auto in = open_in(path, true);
    CategoryEmbeddingMatrix m;
    std::string header;
    std::getline(in, header);
    std::istringstream hs(header);
    if (!(hs >> m.num_categories >> m.dim)) throw IoError("bad matrix header: " + path);
    m.rows = read_f32_block(in, m.num_categories * m.dim);
    return m;
}

void save_category_specs(const std::vector<CategorySpec>& specs, const std::string& path) {
    auto out = open_out(path);
    out << "# id\tname\tdescription\tsplit\n";
    for (const auto& s : specs) {
        if (s.name.find('\t') != std::string::npos ||
            s.description.find('\t') != std::string::npos)
            throw IoError("category text must not contain tabs");
        out << s.id << "\t" << s.name << "\t" << s.description << "\t" << split_name(s.split)
            << "\n";
    }
    if (!out.good()) throw IoError("write failed: " + path);
}

std::vector<CategorySpec> load_category_specs(const std::string& path) {
    auto in = open_in(path);
    std::vector<CategorySpec> specs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        CategorySpec s;
        std::string field;
        if (!std::getline(ls, field, '\t')) throw IoError("bad category line: " + line);
        s.id = std::stoi(field);
        if (!std::getline(ls, s.name, '\t')) throw IoError("bad category line: " + line);
        if (!std::getline(ls, s.description, '\t')) throw IoError("bad category line: " + line);
        if (!std::getline(ls, field, '\t')) throw IoError("bad category line: " + line);
        s.split = split_from_name(field);
        specs.push_back(std::move(s));
    }
    for (std::size_t i = 0; i < specs.size(); ++i)
        if (specs[i].id != static_cast<int>(i))
            throw IoError("category ids must be contiguous from 0 in " + path);
    return specs;
}

}  // namespace ovd
