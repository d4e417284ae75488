#include "clear/eval.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "clear/ca_sft.hpp"
#include "clear/decompose.hpp"

namespace clear {

std::string normalize_answer(const std::string& text) {
    std::string lowered;
    lowered.reserve(text.size());
    for (char c : text) {
        unsigned char uc = static_cast<unsigned char>(c);
        if (std::ispunct(uc)) continue;  // drop punctuation outright
        lowered += static_cast<char>(std::tolower(uc));
    }
    std::istringstream ss(lowered);
    std::string w, out;
    while (ss >> w) {
        if (w == "a" || w == "an" || w == "the") continue;
        if (!out.empty()) out += " ";
        out += w;
    }
    return out;
}

namespace {

std::vector<std::string> normalized_tokens(const std::string& text) {
    std::istringstream ss(normalize_answer(text));
    std::vector<std::string> out;
    std::string w;
    while (ss >> w) out.push_back(w);
    return out;
}

double f1_against(const std::vector<std::string>& pred,
                  const std::vector<std::string>& gold) {
    if (pred.empty() && gold.empty()) return 1.0;
    if (pred.empty() || gold.empty()) return 0.0;
    std::map<std::string, int> counts;
    for (const auto& t : gold) ++counts[t];
    int common = 0;
    for (const auto& t : pred) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            ++common;
            --it->second;
        }
    }
    if (common == 0) return 0.0;
    double precision = static_cast<double>(common) / static_cast<double>(pred.size());
    double recall = static_cast<double>(common) / static_cast<double>(gold.size());
    return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

int exact_match(const std::string& prediction, const std::vector<std::string>& golds) {
    if (golds.empty()) throw Error(ErrorKind::contract, "exact_match: empty gold list");
    std::string p = normalize_answer(prediction);
    for (const auto& g : golds)
        if (p == normalize_answer(g)) return 1;
    return 0;
}

double token_f1(const std::string& prediction, const std::vector<std::string>& golds) {
    if (golds.empty()) throw Error(ErrorKind::contract, "token_f1: empty gold list");
    std::vector<std::string> pred = normalized_tokens(prediction);
    double best = 0.0;
    for (const auto& g : golds) best = std::max(best, f1_against(pred, normalized_tokens(g)));
    return best;
}

namespace {

std::string generate_answer(const ModelAdapter& adapter, const std::string& question,
                            const std::string& context, size_t max_new) {
    std::vector<int> prompt =
        assemble_generation_prompt(adapter.tokenizer(), question, context);
    if (prompt.empty()) throw Error(ErrorKind::contract, "empty generation prompt");
    if (prompt.size() >= adapter.max_seq_len())
        throw Error(ErrorKind::contract,
                    "prompt tokenizes to " + std::to_string(prompt.size()) +
                        " tokens, exceeding max_seq_len " +
                        std::to_string(adapter.max_seq_len()));
    std::vector<int> out = adapter.generate_greedy(prompt, max_new);
    std::vector<int> new_ids(out.begin() + static_cast<std::ptrdiff_t>(prompt.size()),
                             out.end());
    while (!new_ids.empty() && new_ids.back() == Tokenizer::kEos) new_ids.pop_back();
    return adapter.tokenizer().decode(new_ids);
}

std::string clear_pipeline_context(const QAExample& ex, const EvalConfig& config) {
    std::vector<KnowledgeItem> items = decompose_context(ex.context, config.decomposer);
    items = prune_top_k(items, ex.question, config.encoder, config.prune);
    if (!config.judge)
        throw Error(ErrorKind::config, "full_clear evaluation requires a conflict judge");
    items = detect_conflicts(items, config.judge);
    return annotate_context(items).text;
}

}  // namespace

EvalResult evaluate(const ModelAdapter& adapter, const std::vector<QAExample>& dataset,
                    const EvalConfig& config) {
    if (dataset.empty()) throw Error(ErrorKind::contract, "evaluate: empty dataset");
    EvalResult result;
    result.per_example.reserve(dataset.size());
    double f1_sum = 0.0, em_sum = 0.0;
    for (const QAExample& ex : dataset) {
        PerExampleResult per;
        per.id = ex.id;
        try {
            std::string context = config.pipeline == EvalPipeline::full_clear
                                      ? clear_pipeline_context(ex, config)
                                      : ex.context;
            per.prediction =
                generate_answer(adapter, ex.question, context, config.max_new_tokens);
            per.em = exact_match(per.prediction, ex.gold_answers);
            per.f1 = token_f1(per.prediction, ex.gold_answers);
        } catch (const Error& e) {
            per.error = std::string(error_kind_name(e.kind())) + ": " + e.what();
            per.em = 0.0;
            per.f1 = 0.0;
        }
        f1_sum += per.f1;
        em_sum += per.em;
        result.per_example.push_back(std::move(per));
    }
    result.n = result.per_example.size();
    result.f1 = f1_sum / static_cast<double>(result.n);
    result.em = em_sum / static_cast<double>(result.n);
    return result;
}

std::vector<DegradationRow> degradation_study(const ModelAdapter& adapter,
                                              const std::vector<QAExample>& dataset,
                                              const DegradationSpec& spec,
                                              const EvalConfig& config) {
    if (dataset.empty()) throw Error(ErrorKind::contract, "degradation_study: empty dataset");

    auto run = [&](const std::vector<QAExample>& data, const std::string& name) {
        EvalResult r = evaluate(adapter, data, config);
        return DegradationRow{name, r.em, r.f1, r.n};
    };

    std::vector<DegradationRow> rows;
    rows.push_back(run(dataset, "clean"));

    if (!spec.distractor_pool.empty()) {
        std::vector<QAExample> noisy;
        noisy.reserve(dataset.size());
        size_t n = std::min(spec.distractors_per_example, spec.distractor_pool.size());
        for (size_t i = 0; i < dataset.size(); ++i)
            noisy.push_back(
                perturb_with_irrelevant(dataset[i], spec.distractor_pool, n,
                                        spec.seed + i));
        rows.push_back(run(noisy, "irrelevant"));
    }

    if (!spec.substitutions.empty()) {
        std::map<std::string, Substitution> by_id(spec.substitutions.begin(),
                                                  spec.substitutions.end());
        std::vector<QAExample> conflicted;
        conflicted.reserve(dataset.size());
        for (const auto& ex : dataset) {
            auto it = by_id.find(ex.id);
            conflicted.push_back(it == by_id.end() ? ex
                                                   : perturb_counterfactual(ex, it->second));
        }
        rows.push_back(run(conflicted, "conflict"));
    }
    return rows;
}

void write_degradation_tsv(const std::string& path,
                           const std::vector<DegradationRow>& rows) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::config, "cannot write degradation table: " + path);
    out << "condition\tem\tf1\tn\n";
    out.precision(17);
    for (const auto& row : rows)
        out << row.condition << "\t" << row.em << "\t" << row.f1 << "\t" << row.n << "\n";
}

}  // namespace clear
