#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "clear/error.hpp"

namespace clear {

// Word-level toy tokenizer: whitespace split, one id per vocabulary entry.
// Reserved entries sit at fixed indices so conflict markers stay atomic.
class Tokenizer {
  public:
    static constexpr int kUnk = 0;
    static constexpr int kEos = 1;
    static constexpr int kConflictOpen = 2;
    static constexpr int kConflictClose = 3;
    static constexpr const char* kUnkText = "<unk>";
    static constexpr const char* kEosText = "<eos>";
    static constexpr const char* kConflictOpenText = "<conflict>";
    static constexpr const char* kConflictCloseText = "</conflict>";

    Tokenizer();  // reserved entries only

    // Builds a vocabulary from whitespace tokens of the given texts, sorted
    // for determinism, after the reserved entries.
    static Tokenizer from_texts(const std::vector<std::string>& texts,
                                size_t max_vocab = 0);
    static Tokenizer from_vocab(const std::vector<std::string>& vocab);

    static Tokenizer load(const std::string& path);
    void save(const std::string& path) const;

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;
    const std::string& token_text(int id) const;

    int id_of(const std::string& token) const;  // kUnk when absent
    size_t vocab_size() const { return vocab_.size(); }
    const std::vector<std::string>& vocab() const { return vocab_; }

  private:
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, int> index_;

    void rebuild_index();
};

}  // namespace clear
