#pragma once

#include <map>
#include <string>
#include <vector>

namespace ovd {

// Word-level vocabulary with a reserved unknown id. Tokenization is
// lowercased whitespace/punctuation splitting; anything outside [a-z0-9]
// separates words.
class Vocabulary {
public:
    static constexpr int kUnknownId = 0;

    Vocabulary();

    // Adds a word if absent, returns its id. Words are stored lowercased.
    int add(const std::string& word);
    int lookup(const std::string& word) const;  // kUnknownId if absent
    bool contains(const std::string& word) const;
    std::size_t size() const { return id_to_word_.size(); }
    const std::string& word(int id) const { return id_to_word_.at(static_cast<std::size_t>(id)); }

    void save(const std::string& path) const;  // line-delimited "token<TAB>id"
    static Vocabulary load(const std::string& path);

private:
    std::map<std::string, int> word_to_id_;
    std::vector<std::string> id_to_word_;
};

std::vector<std::string> split_words(const std::string& text);

// Deterministic: lowercase, split on non-alphanumeric, map via vocabulary.
std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab);

}  // namespace ovd
