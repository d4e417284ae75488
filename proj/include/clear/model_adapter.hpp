#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "clear/error.hpp"
#include "clear/tokenizer.hpp"

namespace clear {

// Dense row-major matrix of doubles. Training runs in double so analytic
// gradients can be checked against finite differences tightly.
struct Mat {
    size_t rows = 0, cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(size_t r, size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& operator()(size_t i, size_t j) { return a[i * cols + j]; }
    double operator()(size_t i, size_t j) const { return a[i * cols + j]; }
    size_t size() const { return a.size(); }
    void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

enum class Pooling { last_token, mean };

struct HiddenState {
    std::vector<double> values;  // length d_M
    int layer = 0;
    Pooling pooling = Pooling::last_token;
};

// Full forward trace: logits, residual stream per layer (embedding output
// included), and per-layer per-head row-stochastic causal attention.
struct ForwardTrace {
    Mat logits;                               // seq x vocab
    std::vector<Mat> hidden;                  // layers+1 entries, each seq x d_M
    std::vector<std::vector<Mat>> attention;  // [layer][head], each seq x seq

    size_t seq_len() const { return logits.rows; }
    // Throws on violated invariants (row sums, causal zeros, hidden count).
    void check_invariants(size_t expected_layers) const;
};

// Which attention tensors feed the guidance loss: the listed layers (empty ->
// final layer only), averaged over all heads.
struct AttentionAggregation {
    std::vector<int> layers;

    std::vector<int> resolve(size_t num_layers) const;
};

// Mean attention matrix over the aggregation's layers and heads.
Mat aggregate_attention(const ForwardTrace& trace, const AttentionAggregation& agg);

// Uniform abstraction over a causal LM: tokenization, forward traces, greedy
// generation. Inference on a frozen adapter is safe for concurrent callers.
class ModelAdapter {
  public:
    virtual ~ModelAdapter() = default;

    virtual const Tokenizer& tokenizer() const = 0;
    virtual size_t model_dim() const = 0;
    virtual size_t num_layers() const = 0;
    virtual size_t max_seq_len() const = 0;

    virtual ForwardTrace forward(const std::vector<int>& token_ids) const = 0;

    // Greedy decode at temperature 0: argmax logit per step, ties broken by
    // lowest token id; stops at <eos> or after max_new tokens.
    virtual std::vector<int> generate_greedy(const std::vector<int>& prompt_ids,
                                             size_t max_new) const;

    // layer -1 means the final block's output (before unembedding).
    HiddenState hidden_state_of(const std::string& text, int layer, Pooling pooling) const;
};

// Shape / stochasticity / determinism checks every backend must pass.
void check_adapter_contract(const ModelAdapter& adapter);

}  // namespace clear
