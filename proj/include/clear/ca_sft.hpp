#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clear/annotate.hpp"
#include "clear/tiny_model.hpp"

namespace clear {

struct LossBreakdown {
    double l_lm = 0.0;
    double l_attn = 0.0;
    double lambda = 0.0;
    double l_total = 0.0;
};

// (1 - lambda) * l_lm + lambda * l_attn, exactly.
LossBreakdown total_loss(double l_lm, double l_attn, double lambda);

// Mean over P = {(i,j) | i >= j, j in S} of (1 - abar_ij), where abar is the
// aggregated attention. 0 when S is empty.
double attention_loss(const ForwardTrace& trace, const std::vector<size_t>& positions,
                      const AttentionAggregation& aggregation);

enum class AdapterMode { full, low_rank };
enum class LmLossMask { answer_only, full_sequence };

struct CaSftConfig {
    double lambda = 0.1;
    double learning_rate = 3e-5;
    size_t epochs = 5;
    AdapterMode adapter_mode = AdapterMode::low_rank;
    size_t lora_rank = 16;
    double lora_scale = 16.0;
    AttentionAggregation aggregation;  // default: final layer, all heads
    LmLossMask lm_mask = LmLossMask::answer_only;
    uint64_t seed = 0;
    double weight_decay = 0.01;

    void validate() const;
};

struct CaSftEpochStats {
    double l_lm = 0.0;
    double l_attn = 0.0;
    double l_total = 0.0;
    double conflict_attention_mass = 0.0;
};

struct CaSftReport {
    std::vector<CaSftEpochStats> epochs;
    size_t record_count = 0;
    uint64_t seed = 0;
    double wall_seconds = 0.0;  // not part of deterministic artifacts

    double final_mass() const {
        return epochs.empty() ? 0.0 : epochs.back().conflict_attention_mass;
    }
};

// Prompt assembly shared by training, attention measurement, and generation.
// S indices in AnnotatedExample are relative to prefix + " " + context, so
// the answer suffix never shifts them.
struct AssembledInput {
    std::vector<int> ids;      // teacher-forced sequence ending in <eos>
    size_t answer_start = 0;   // index of the first answer token
};

AssembledInput assemble_training_input(const Tokenizer& tokenizer,
                                       const AnnotatedExample& example,
                                       size_t max_seq_len);
std::vector<int> assemble_generation_prompt(const Tokenizer& tokenizer,
                                            const std::string& question,
                                            const std::string& context);

// Conflict-aware supervised fine-tuning: teacher-forced forward, blended
// loss, decoupled-weight-decay adaptive updates. Owns the model exclusively
// for the duration of the run.
CaSftReport train_ca_sft(TinyModel& model, const std::vector<AnnotatedExample>& examples,
                         const CaSftConfig& config);

// Mean over examples (with non-empty S) of mean_{(i,j) in P} abar_ij, i.e.
// 1 - attention_loss per example, with frozen parameters.
double measure_conflict_attention(const ModelAdapter& adapter,
                                  const std::vector<AnnotatedExample>& examples,
                                  const AttentionAggregation& aggregation);

}  // namespace clear
