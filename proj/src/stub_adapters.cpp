#include "clear/stub_adapters.hpp"

#include <sstream>

#include "clear/rng.hpp"

namespace clear {

std::string normalize_whitespace(const std::string& s) {
    std::istringstream ss(s);
    std::string w, out;
    while (ss >> w) {
        if (!out.empty()) out += " ";
        out += w;
    }
    return out;
}

EchoStubAdapter::EchoStubAdapter(std::map<std::string, std::string> memory, size_t dim)
    : dim_(dim) {
    std::vector<std::string> texts = {"question: context: answer:"};
    for (const auto& [q, a] : memory) {
        texts.push_back(q);
        texts.push_back(a);
        memory_[normalize_whitespace(q)] = a;
    }
    tokenizer_ = Tokenizer::from_texts(texts);
}

ForwardTrace EchoStubAdapter::forward(const std::vector<int>& token_ids) const {
    if (token_ids.empty()) throw Error(ErrorKind::contract, "forward: empty input");
    for (int id : token_ids)
        if (id < 0 || static_cast<size_t>(id) >= tokenizer_.vocab_size())
            throw Error(ErrorKind::contract, "token id out of vocabulary");
    size_t T = token_ids.size();
    ForwardTrace trace;
    trace.logits = Mat(T, tokenizer_.vocab_size());
    trace.hidden.assign(2, Mat(T, dim_));
    for (size_t t = 0; t < T; ++t) {
        uint64_t state = 0x5eed0000u + static_cast<uint64_t>(token_ids[t]);
        for (size_t j = 0; j < dim_; ++j) {
            double u = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
            trace.hidden[1](t, j) = 2.0 * u - 1.0;
        }
    }
    trace.attention.assign(1, std::vector<Mat>(1, Mat(T, T)));
    Mat& A = trace.attention[0][0];
    for (size_t i = 0; i < T; ++i)
        for (size_t j = 0; j <= i; ++j) A(i, j) = 1.0 / static_cast<double>(i + 1);
    return trace;
}

std::vector<int> EchoStubAdapter::generate_greedy(const std::vector<int>& prompt_ids,
                                                  size_t max_new) const {
    if (prompt_ids.empty())
        throw Error(ErrorKind::contract, "generate_greedy: empty prompt");
    if (max_new == 0) return prompt_ids;
    std::string prompt = tokenizer_.decode(prompt_ids);
    std::string question;
    size_t q_at = prompt.rfind("question:");
    if (q_at != std::string::npos) {
        size_t begin = q_at + std::string("question:").size();
        size_t end = prompt.find("context:", begin);
        if (end == std::string::npos) end = prompt.find("answer:", begin);
        if (end == std::string::npos) end = prompt.size();
        question = normalize_whitespace(prompt.substr(begin, end - begin));
    }
    std::vector<int> out = prompt_ids;
    auto it = memory_.find(question);
    if (it != memory_.end()) {
        std::vector<int> ans = tokenizer_.encode(it->second);
        size_t take = std::min(ans.size(), max_new);
        out.insert(out.end(), ans.begin(), ans.begin() + static_cast<std::ptrdiff_t>(take));
    }
    if (out.size() - prompt_ids.size() < max_new) out.push_back(Tokenizer::kEos);
    return out;
}

}  // namespace clear
