#include "clear/model_adapter.hpp"

#include <algorithm>
#include <cmath>

namespace clear {

void ForwardTrace::check_invariants(size_t expected_layers) const {
    if (hidden.size() != expected_layers + 1)
        throw Error(ErrorKind::contract,
                    "trace has " + std::to_string(hidden.size()) + " hidden states, want " +
                        std::to_string(expected_layers + 1));
    if (attention.size() != expected_layers)
        throw Error(ErrorKind::contract, "trace attention layer count mismatch");
    size_t T = logits.rows;
    for (size_t l = 0; l < attention.size(); ++l) {
        for (size_t h = 0; h < attention[l].size(); ++h) {
            const Mat& A = attention[l][h];
            if (A.rows != T || A.cols != T)
                throw Error(ErrorKind::contract, "attention matrix shape mismatch");
            for (size_t i = 0; i < T; ++i) {
                double sum = 0.0;
                for (size_t j = 0; j < T; ++j) {
                    double v = A(i, j);
                    if (j > i && v != 0.0)
                        throw Error(ErrorKind::contract,
                                    "attention is not strictly causal at layer " +
                                        std::to_string(l));
                    if (!(v >= 0.0) || !std::isfinite(v))
                        throw Error(ErrorKind::contract, "attention weight out of range");
                    sum += v;
                }
                if (std::abs(sum - 1.0) > 1e-6)
                    throw Error(ErrorKind::contract,
                                "attention row does not sum to 1 (got " +
                                    std::to_string(sum) + ")");
            }
        }
    }
    for (const Mat& hm : hidden) {
        if (hm.rows != T)
            throw Error(ErrorKind::contract, "hidden state row count mismatch");
        for (double v : hm.a)
            if (!std::isfinite(v))
                throw Error(ErrorKind::contract, "non-finite hidden state value");
    }
}

std::vector<int> AttentionAggregation::resolve(size_t num_layers) const {
    if (num_layers == 0) throw Error(ErrorKind::contract, "model has no layers");
    if (layers.empty()) return {static_cast<int>(num_layers) - 1};
    std::vector<int> out;
    for (int l : layers) {
        if (l < 0 || static_cast<size_t>(l) >= num_layers)
            throw Error(ErrorKind::contract,
                        "aggregation layer " + std::to_string(l) + " out of range");
        out.push_back(l);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

Mat aggregate_attention(const ForwardTrace& trace, const AttentionAggregation& agg) {
    std::vector<int> layers = agg.resolve(trace.attention.size());
    size_t T = trace.seq_len();
    Mat out(T, T);
    size_t n = 0;
    for (int l : layers) {
        for (const Mat& A : trace.attention[static_cast<size_t>(l)]) {
            for (size_t i = 0; i < out.size(); ++i) out.a[i] += A.a[i];
            ++n;
        }
    }
    if (n == 0) throw Error(ErrorKind::contract, "aggregation selected no attention heads");
    for (double& v : out.a) v /= static_cast<double>(n);
    return out;
}

std::vector<int> ModelAdapter::generate_greedy(const std::vector<int>& prompt_ids,
                                               size_t max_new) const {
    if (prompt_ids.empty())
        throw Error(ErrorKind::contract, "generate_greedy: empty prompt");
    std::vector<int> ids = prompt_ids;
    for (size_t step = 0; step < max_new; ++step) {
        if (ids.size() >= max_seq_len()) break;
        ForwardTrace trace = forward(ids);
        const Mat& logits = trace.logits;
        size_t last = logits.rows - 1;
        int best = 0;
        double best_v = logits(last, 0);
        for (size_t j = 1; j < logits.cols; ++j) {
            if (logits(last, j) > best_v) {  // strict: ties keep the lowest id
                best_v = logits(last, j);
                best = static_cast<int>(j);
            }
        }
        ids.push_back(best);
        if (best == Tokenizer::kEos) break;
    }
    return ids;
}

HiddenState ModelAdapter::hidden_state_of(const std::string& text, int layer,
                                          Pooling pooling) const {
    std::vector<int> ids = tokenizer().encode(text);
    if (ids.empty())
        throw Error(ErrorKind::contract, "hidden_state_of: text tokenizes to no tokens");
    ForwardTrace trace = forward(ids);
    int n_layers = static_cast<int>(trace.hidden.size()) - 1;
    int tap = layer < 0 ? n_layers : layer;
    if (tap < 0 || tap > n_layers)
        throw Error(ErrorKind::contract,
                    "hidden layer " + std::to_string(layer) + " out of range");
    const Mat& hm = trace.hidden[static_cast<size_t>(tap)];

    HiddenState out;
    out.layer = tap;
    out.pooling = pooling;
    out.values.resize(hm.cols, 0.0);
    if (pooling == Pooling::last_token) {
        for (size_t j = 0; j < hm.cols; ++j) out.values[j] = hm(hm.rows - 1, j);
    } else {
        for (size_t i = 0; i < hm.rows; ++i)
            for (size_t j = 0; j < hm.cols; ++j) out.values[j] += hm(i, j);
        for (double& v : out.values) v /= static_cast<double>(hm.rows);
    }
    return out;
}

void check_adapter_contract(const ModelAdapter& adapter) {
    // shape + stochasticity + determinism over a few short inputs
    size_t V = adapter.tokenizer().vocab_size();
    std::vector<std::vector<int>> inputs = {
        {0},
        {static_cast<int>(V - 1), 0, 1},
        {1, 1, 0, static_cast<int>(V / 2)},
    };
    for (const auto& ids : inputs) {
        ForwardTrace a = adapter.forward(ids);
        ForwardTrace b = adapter.forward(ids);
        a.check_invariants(adapter.num_layers());
        if (a.logits.rows != ids.size() || a.logits.cols != V)
            throw Error(ErrorKind::contract, "adapter logits shape mismatch");
        for (const Mat& hm : a.hidden)
            if (hm.cols != adapter.model_dim())
                throw Error(ErrorKind::contract, "adapter hidden dim mismatch");
        if (a.logits.a != b.logits.a)
            throw Error(ErrorKind::contract, "adapter forward is not deterministic");
    }
}

}  // namespace clear
