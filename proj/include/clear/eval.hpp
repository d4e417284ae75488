#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clear/annotate.hpp"
#include "clear/datasets.hpp"
#include "clear/model_adapter.hpp"
#include "clear/prune.hpp"

namespace clear {

// SQuAD answer normalization: lowercase, strip punctuation, drop articles
// (a, an, the), collapse whitespace.
std::string normalize_answer(const std::string& text);

// 1 iff the normalized prediction equals any normalized gold.
int exact_match(const std::string& prediction, const std::vector<std::string>& golds);

// Max over golds of the harmonic mean of token precision/recall (multiset
// token overlap). 1 when both sides normalize to empty, 0 when exactly one
// side is empty.
double token_f1(const std::string& prediction, const std::vector<std::string>& golds);

enum class EvalPipeline { full_clear, passthrough };

struct EvalConfig {
    EvalPipeline pipeline = EvalPipeline::passthrough;
    DecomposerSpec decomposer;
    EncoderSpec encoder;
    PruneConfig prune;
    size_t max_new_tokens = 128;
    ConflictJudge judge;  // required for full_clear
};

struct PerExampleResult {
    std::string id;
    double f1 = 0.0;
    double em = 0.0;
    std::string prediction;
    std::string error;  // non-empty when a pipeline stage failed for this example
};

struct EvalResult {
    double f1 = 0.0;
    double em = 0.0;
    size_t n = 0;
    std::vector<PerExampleResult> per_example;
};

// Runs the selected inference pipeline per example (CLEAR: decompose ->
// prune -> detect -> annotate; passthrough: raw context), generates greedily,
// scores EM/F1. Stage failures are attributed to the example, scored 0, and
// the run continues.
EvalResult evaluate(const ModelAdapter& adapter, const std::vector<QAExample>& dataset,
                    const EvalConfig& config);

// Clean vs perturbed comparison rows; EM stands in for accuracy.
struct DegradationRow {
    std::string condition;
    double em = 0.0;
    double f1 = 0.0;
    size_t n = 0;
};

struct DegradationSpec {
    std::vector<std::string> distractor_pool;
    size_t distractors_per_example = 2;
    // per-example counterfactual substitutions, keyed by example id
    std::vector<std::pair<std::string, Substitution>> substitutions;
    uint64_t seed = 0;
};

std::vector<DegradationRow> degradation_study(const ModelAdapter& adapter,
                                              const std::vector<QAExample>& dataset,
                                              const DegradationSpec& spec,
                                              const EvalConfig& config);

void write_degradation_tsv(const std::string& path,
                           const std::vector<DegradationRow>& rows);

}  // namespace clear
