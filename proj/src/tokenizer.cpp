#include "ovd/tokenizer.hpp"

#include <cctype>
#include <sstream>

#include "ovd/errors.hpp"
#include "ovd/io.hpp"

namespace ovd {

Vocabulary::Vocabulary() {
    id_to_word_.push_back("<unk>");
    word_to_id_["<unk>"] = kUnknownId;
}

int Vocabulary::add(const std::string& word) {
    auto it = word_to_id_.find(word);
    if (it != word_to_id_.end()) return it->second;
    const int id = static_cast<int>(id_to_word_.size());
    id_to_word_.push_back(word);
    word_to_id_[word] = id;
    return id;
}

int Vocabulary::lookup(const std::string& word) const {
    auto it = word_to_id_.find(word);
    return it == word_to_id_.end() ? kUnknownId : it->second;
}

bool Vocabulary::contains(const std::string& word) const {
    return word_to_id_.find(word) != word_to_id_.end();
}

void Vocabulary::save(const std::string& path) const {
    auto out = open_out(path);
    for (std::size_t id = 0; id < id_to_word_.size(); ++id)
        out << id_to_word_[id] << "\t" << id << "\n";
    if (!out.good()) throw IoError("write failed: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
    auto in = open_in(path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw IoError("bad vocab line: " + line);
        const std::string word = line.substr(0, tab);
        const int id = std::stoi(line.substr(tab + 1));
        if (id == kUnknownId) continue;  // reserved, present from construction
        const int got = v.add(word);
        if (got != id) throw IoError("vocab ids must be dense and ordered in " + path);
    }
    return v;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        const unsigned char u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab) {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) ids.push_back(vocab.lookup(w));
    return ids;
}

}  // namespace ovd
