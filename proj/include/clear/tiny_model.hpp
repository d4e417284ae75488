#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "clear/model_adapter.hpp"

namespace clear {

// Desk-scale stand-in for a production backbone: pre-norm decoder blocks,
// learned positional embeddings, untied unembedding.
struct TinyModelConfig {
    size_t vocab_size = 64;
    size_t layers = 2;
    size_t heads = 2;
    size_t model_dim = 32;
    size_t max_seq_len = 64;
    uint64_t seed = 0;

    void validate() const;
};

struct TinyLayerParams {
    Mat ln1_g, ln1_b;
    Mat wq, wk, wv, wo;  // each d x d
    Mat ln2_g, ln2_b;
    Mat w1, b1;  // d x 4d, 1 x 4d
    Mat w2, b2;  // 4d x d, 1 x d
};

struct TinyParams {
    Mat tok_emb;  // V x d
    Mat pos_emb;  // maxT x d
    std::vector<TinyLayerParams> layers;
    Mat lnf_g, lnf_b;  // 1 x d
    Mat w_out;         // d x V
};

// LM-loss mask plus attention-guidance inputs for one teacher-forced step.
struct TrainStep {
    std::vector<int> ids;           // prompt + annotated context + answer (+ eos)
    size_t answer_start = 0;        // index of the first answer token
    bool full_sequence_mask = false;
    std::vector<size_t> conflict_positions;  // S
    double lambda = 0.0;
    AttentionAggregation aggregation;
};

struct TrainStepLosses {
    double l_lm = 0.0;
    double l_attn = 0.0;
};

class TinyModel : public ModelAdapter {
  public:
    TinyModel(const TinyModelConfig& config, Tokenizer tokenizer);

    const Tokenizer& tokenizer() const override { return tokenizer_; }
    size_t model_dim() const override { return config_.model_dim; }
    size_t num_layers() const override { return config_.layers; }
    size_t max_seq_len() const override { return config_.max_seq_len; }
    const TinyModelConfig& config() const { return config_; }

    ForwardTrace forward(const std::vector<int>& token_ids) const override;

    // Forward + losses + analytic parameter gradients for one step. grads
    // may be null to get losses only. Gradients are of
    // (1-lambda)*l_lm + lambda*l_attn.
    TrainStepLosses loss_and_grad(const TrainStep& step, TinyParams* grads) const;

    // Named views over every parameter tensor, in a fixed order shared by
    // initialization, checkpoints, and the optimizer.
    std::vector<std::pair<std::string, Mat*>> named_params();
    std::vector<std::pair<std::string, const Mat*>> named_params() const;
    static std::vector<std::pair<std::string, Mat*>> named_tensors(TinyParams& p);

    TinyParams& params() { return params_; }
    const TinyParams& params() const { return params_; }
    // Zero-initialized gradient/optimizer-state buffers with matching shapes.
    TinyParams zero_like() const;

    uint64_t param_checksum() const;

    void save_checkpoint(const std::string& path) const;
    static TinyModel load_checkpoint(const std::string& path);

  private:
    TinyModelConfig config_;
    Tokenizer tokenizer_;
    TinyParams params_;

    void init_params();
    void check_input(const std::vector<int>& token_ids) const;
};

}  // namespace clear
