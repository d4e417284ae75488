#pragma once

#include <map>
#include <string>

#include "clear/model_adapter.hpp"

namespace clear {

// Test/harness adapter that ignores context and always answers from a fixed
// question -> answer memory (its "parametric knowledge"). Prompts must carry
// the question between "question:" and "context:" scaffold tokens.
class EchoStubAdapter : public ModelAdapter {
  public:
    explicit EchoStubAdapter(std::map<std::string, std::string> memory, size_t dim = 8);

    const Tokenizer& tokenizer() const override { return tokenizer_; }
    size_t model_dim() const override { return dim_; }
    size_t num_layers() const override { return 1; }
    size_t max_seq_len() const override { return 4096; }

    // Uniform causal attention, hash-derived hidden states, zero logits.
    ForwardTrace forward(const std::vector<int>& token_ids) const override;

    std::vector<int> generate_greedy(const std::vector<int>& prompt_ids,
                                     size_t max_new) const override;

  private:
    std::map<std::string, std::string> memory_;  // normalized question -> answer
    Tokenizer tokenizer_;
    size_t dim_;
};

// Collapses runs of whitespace to single spaces and trims; used to key stub
// memory by question text.
std::string normalize_whitespace(const std::string& s);

}  // namespace clear
