#include "clear/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace clear {

Tokenizer::Tokenizer() {
    vocab_ = {kUnkText, kEosText, kConflictOpenText, kConflictCloseText};
    rebuild_index();
}

void Tokenizer::rebuild_index() {
    index_.clear();
    for (size_t i = 0; i < vocab_.size(); ++i) index_[vocab_[i]] = static_cast<int>(i);
}

Tokenizer Tokenizer::from_texts(const std::vector<std::string>& texts, size_t max_vocab) {
    std::set<std::string> words;
    for (const auto& text : texts) {
        std::istringstream ss(text);
        std::string w;
        while (ss >> w) words.insert(w);
    }
    Tokenizer tok;
    for (const auto& w : words) {
        if (tok.index_.count(w)) continue;
        if (max_vocab != 0 && tok.vocab_.size() >= max_vocab) break;
        tok.vocab_.push_back(w);
    }
    tok.rebuild_index();
    return tok;
}

Tokenizer Tokenizer::from_vocab(const std::vector<std::string>& vocab) {
    if (vocab.size() < 4 || vocab[0] != kUnkText || vocab[1] != kEosText ||
        vocab[2] != kConflictOpenText || vocab[3] != kConflictCloseText)
        throw Error(ErrorKind::contract,
                    "vocabulary must start with the four reserved entries");
    Tokenizer tok;
    tok.vocab_ = vocab;
    tok.rebuild_index();
    if (tok.index_.size() != vocab.size())
        throw Error(ErrorKind::contract, "vocabulary has duplicate entries");
    return tok;
}

Tokenizer Tokenizer::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::config, "cannot open vocabulary file: " + path);
    std::vector<std::string> vocab;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) vocab.push_back(line);
    }
    return from_vocab(vocab);
}

void Tokenizer::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::config, "cannot write vocabulary file: " + path);
    for (const auto& w : vocab_) out << w << "\n";
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> ids;
    std::istringstream ss(text);
    std::string w;
    while (ss >> w) ids.push_back(id_of(w));
    return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (!out.empty()) out += " ";
        out += token_text(id);
    }
    return out;
}

const std::string& Tokenizer::token_text(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= vocab_.size())
        throw Error(ErrorKind::contract, "token id " + std::to_string(id) +
                                             " out of range (vocab " +
                                             std::to_string(vocab_.size()) + ")");
    return vocab_[static_cast<size_t>(id)];
}

int Tokenizer::id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

}  // namespace clear
