#include "clear/ca_sft.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "clear/rng.hpp"

namespace clear {

LossBreakdown total_loss(double l_lm, double l_attn, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw Error(ErrorKind::contract, "lambda must lie in [0,1]");
    if (!std::isfinite(l_lm) || !std::isfinite(l_attn))
        throw Error(ErrorKind::contract, "loss inputs must be finite");
    LossBreakdown out;
    out.l_lm = l_lm;
    out.l_attn = l_attn;
    out.lambda = lambda;
    out.l_total = (1.0 - lambda) * l_lm + lambda * l_attn;
    return out;
}

double attention_loss(const ForwardTrace& trace, const std::vector<size_t>& positions,
                      const AttentionAggregation& aggregation) {
    std::vector<size_t> s = positions;
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    if (s.empty()) return 0.0;
    size_t T = trace.seq_len();
    if (s.back() >= T)
        throw Error(ErrorKind::contract,
                    "conflict position " + std::to_string(s.back()) +
                        " out of range for sequence of length " + std::to_string(T));
    Mat abar = aggregate_attention(trace, aggregation);
    double sum = 0.0;
    size_t pairs = 0;
    for (size_t j : s) {
        for (size_t i = j; i < T; ++i) {
            sum += 1.0 - abar(i, j);
            ++pairs;
        }
    }
    return sum / static_cast<double>(pairs);
}

void CaSftConfig::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw Error(ErrorKind::config, "lambda must lie in [0,1]");
    if (learning_rate <= 0.0) throw Error(ErrorKind::config, "learning_rate must be > 0");
    if (epochs == 0) throw Error(ErrorKind::config, "epochs must be >= 1");
    if (adapter_mode == AdapterMode::low_rank && lora_rank == 0)
        throw Error(ErrorKind::config, "low_rank mode requires rank >= 1");
    if (weight_decay < 0.0) throw Error(ErrorKind::config, "weight_decay must be >= 0");
}

AssembledInput assemble_training_input(const Tokenizer& tokenizer,
                                       const AnnotatedExample& example,
                                       size_t max_seq_len) {
    if (example.gold_answers.empty())
        throw Error(ErrorKind::contract, "training record has no gold answer");
    std::string prompt = qa_prompt_prefix(example.question) + " " +
                         example.annotated_context + " " + qa_answer_cue();
    AssembledInput out;
    out.ids = tokenizer.encode(prompt);
    out.answer_start = out.ids.size();
    std::vector<int> answer_ids = tokenizer.encode(example.gold_answers.front());
    out.ids.insert(out.ids.end(), answer_ids.begin(), answer_ids.end());
    out.ids.push_back(Tokenizer::kEos);
    if (out.ids.size() > max_seq_len)
        throw Error(ErrorKind::contract,
                    "training record tokenizes to " + std::to_string(out.ids.size()) +
                        " tokens, exceeding max_seq_len " + std::to_string(max_seq_len));
    return out;
}

std::vector<int> assemble_generation_prompt(const Tokenizer& tokenizer,
                                            const std::string& question,
                                            const std::string& context) {
    std::string prompt =
        qa_prompt_prefix(question) + " " + context + " " + qa_answer_cue();
    return tokenizer.encode(prompt);
}

namespace {

bool has_marker_text(const std::string& text) {
    return text.find(Tokenizer::kConflictOpenText) != std::string::npos ||
           text.find(Tokenizer::kConflictCloseText) != std::string::npos;
}

// One AdamW-managed tensor (decoupled weight decay).
struct AdamSlot {
    Mat* param = nullptr;
    Mat m, v;

    explicit AdamSlot(Mat* p) : param(p), m(p->rows, p->cols), v(p->rows, p->cols) {}

    void step(const Mat& grad, double lr, double weight_decay, size_t t) {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
        double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
        for (size_t i = 0; i < param->size(); ++i) {
            double g = grad.a[i];
            m.a[i] = b1 * m.a[i] + (1.0 - b1) * g;
            v.a[i] = b2 * v.a[i] + (1.0 - b2) * g * g;
            double update = (m.a[i] / c1) / (std::sqrt(v.a[i] / c2) + eps);
            param->a[i] -= lr * (update + weight_decay * param->a[i]);
        }
    }
};

// Low-rank additive factors on the attention projections, applied as
// W = W_base + (scale/rank) * A * B.
struct LoraPair {
    Mat base;  // frozen copy of the original weight
    Mat a;     // d x r
    Mat b;     // r x d
    Mat* target = nullptr;

    void materialize(double factor) {
        Mat& w = *target;
        w = base;
        for (size_t i = 0; i < a.rows; ++i)
            for (size_t r = 0; r < a.cols; ++r) {
                double av = a(i, r) * factor;
                if (av == 0.0) continue;
                for (size_t j = 0; j < b.cols; ++j) w(i, j) += av * b(r, j);
            }
    }
};

}  // namespace

CaSftReport train_ca_sft(TinyModel& model, const std::vector<AnnotatedExample>& examples,
                         const CaSftConfig& config) {
    config.validate();
    if (examples.empty())
        throw Error(ErrorKind::contract, "train_ca_sft: empty training set");

    auto wall_start = std::chrono::steady_clock::now();

    // precompute teacher-forced inputs and validate S integrity
    std::vector<TrainStep> steps(examples.size());
    for (size_t i = 0; i < examples.size(); ++i) {
        const AnnotatedExample& ex = examples[i];
        if (has_marker_text(ex.annotated_context) && ex.conflict_positions.empty())
            throw Error(ErrorKind::data,
                        "record " + std::to_string(i + 1) +
                            " has conflict markers but an empty position set");
        AssembledInput input =
            assemble_training_input(model.tokenizer(), ex, model.max_seq_len());
        steps[i].ids = std::move(input.ids);
        steps[i].answer_start = input.answer_start;
        steps[i].full_sequence_mask = config.lm_mask == LmLossMask::full_sequence;
        steps[i].conflict_positions = ex.conflict_positions;
        steps[i].lambda = config.lambda;
        steps[i].aggregation = config.aggregation;
        for (size_t pos : ex.conflict_positions)
            if (pos >= steps[i].ids.size())
                throw Error(ErrorKind::data, "record " + std::to_string(i + 1) +
                                                 " has conflict positions beyond its "
                                                 "tokenized length");
    }

    // trainable set
    std::vector<AdamSlot> slots;
    std::vector<LoraPair> lora;
    Mat marker_rows;  // view copy of the two marker embedding rows
    const double lora_factor =
        config.lora_scale / static_cast<double>(std::max<size_t>(1, config.lora_rank));
    Rng init_rng = Rng(config.seed).fork("lora_init");

    if (config.adapter_mode == AdapterMode::full) {
        for (auto& [name, tensor] : model.named_params()) slots.emplace_back(tensor);
    } else {
        size_t d = model.model_dim();
        for (size_t l = 0; l < model.num_layers(); ++l) {
            TinyLayerParams& lp = model.params().layers[l];
            for (Mat* target : {&lp.wq, &lp.wk, &lp.wv, &lp.wo}) {
                LoraPair pair;
                pair.base = *target;
                pair.a = Mat(d, config.lora_rank);
                pair.b = Mat(config.lora_rank, d);
                for (double& v : pair.a.a) v = 0.02 * init_rng.next_gaussian();
                pair.target = target;
                lora.push_back(std::move(pair));
            }
        }
        // marker-token embeddings stay trainable so new tokens can learn
        marker_rows = Mat(2, d);
        for (auto& pair : lora) {
            slots.emplace_back(&pair.a);
            slots.emplace_back(&pair.b);
        }
        slots.emplace_back(&marker_rows);
        for (size_t r = 0; r < 2; ++r)
            for (size_t j = 0; j < d; ++j)
                marker_rows(r, j) =
                    model.params().tok_emb(static_cast<size_t>(Tokenizer::kConflictOpen) + r, j);
    }

    auto apply_lora = [&] {
        for (auto& pair : lora) pair.materialize(lora_factor);
        if (marker_rows.rows == 2) {
            size_t d = model.model_dim();
            for (size_t r = 0; r < 2; ++r)
                for (size_t j = 0; j < d; ++j)
                    model.params().tok_emb(static_cast<size_t>(Tokenizer::kConflictOpen) + r,
                                           j) = marker_rows(r, j);
        }
    };
    if (config.adapter_mode == AdapterMode::low_rank) apply_lora();

    CaSftReport report;
    report.record_count = examples.size();
    report.seed = config.seed;

    Rng shuffle_rng = Rng(config.seed).fork("ca_sft_shuffle");
    std::vector<size_t> order(examples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    size_t adam_t = 0;
    for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        CaSftEpochStats stats;
        for (size_t n = 0; n < order.size(); ++n) {
            const TrainStep& step = steps[order[n]];
            TinyParams grads = model.zero_like();
            TrainStepLosses losses = model.loss_and_grad(step, &grads);
            LossBreakdown breakdown = total_loss(losses.l_lm, losses.l_attn, config.lambda);
            if (!std::isfinite(breakdown.l_total))
                throw Error(ErrorKind::divergence,
                            "non-finite loss at epoch " + std::to_string(epoch + 1) +
                                ", step " + std::to_string(n + 1));
            stats.l_lm += breakdown.l_lm;
            stats.l_attn += breakdown.l_attn;
            stats.l_total += breakdown.l_total;

            ++adam_t;
            if (config.adapter_mode == AdapterMode::full) {
                auto grad_tensors = TinyModel::named_tensors(grads);
                for (size_t k = 0; k < slots.size(); ++k)
                    slots[k].step(*grad_tensors[k].second, config.learning_rate,
                                  config.weight_decay, adam_t);
            } else {
                size_t d = model.model_dim();
                size_t slot_idx = 0;
                size_t lora_idx = 0;
                for (size_t l = 0; l < model.num_layers(); ++l) {
                    TinyLayerParams& gl = grads.layers[l];
                    for (Mat* gw : {&gl.wq, &gl.wk, &gl.wv, &gl.wo}) {
                        LoraPair& pair = lora[lora_idx++];
                        // dA = factor * dW * B^T ; dB = factor * A^T * dW
                        Mat da(pair.a.rows, pair.a.cols);
                        Mat db(pair.b.rows, pair.b.cols);
                        for (size_t i = 0; i < d; ++i)
                            for (size_t r = 0; r < pair.a.cols; ++r) {
                                double s = 0.0;
                                for (size_t j = 0; j < d; ++j)
                                    s += (*gw)(i, j) * pair.b(r, j);
                                da(i, r) = lora_factor * s;
                            }
                        for (size_t r = 0; r < pair.b.rows; ++r)
                            for (size_t j = 0; j < d; ++j) {
                                double s = 0.0;
                                for (size_t i = 0; i < d; ++i)
                                    s += pair.a(i, r) * (*gw)(i, j);
                                db(r, j) = lora_factor * s;
                            }
                        slots[slot_idx++].step(da, config.learning_rate,
                                               config.weight_decay, adam_t);
                        slots[slot_idx++].step(db, config.learning_rate,
                                               config.weight_decay, adam_t);
                    }
                }
                Mat dmarker(2, d);
                for (size_t r = 0; r < 2; ++r)
                    for (size_t j = 0; j < d; ++j)
                        dmarker(r, j) = grads.tok_emb(
                            static_cast<size_t>(Tokenizer::kConflictOpen) + r, j);
                slots[slot_idx].step(dmarker, config.learning_rate, config.weight_decay,
                                     adam_t);
                apply_lora();
            }
        }
        double inv = 1.0 / static_cast<double>(order.size());
        stats.l_lm *= inv;
        stats.l_attn *= inv;
        stats.l_total *= inv;
        stats.conflict_attention_mass =
            measure_conflict_attention(model, examples, config.aggregation);
        report.epochs.push_back(stats);
    }

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start)
            .count();
    return report;
}

double measure_conflict_attention(const ModelAdapter& adapter,
                                  const std::vector<AnnotatedExample>& examples,
                                  const AttentionAggregation& aggregation) {
    double sum = 0.0;
    size_t counted = 0;
    for (const auto& ex : examples) {
        if (ex.conflict_positions.empty()) continue;
        AssembledInput input =
            assemble_training_input(adapter.tokenizer(), ex, adapter.max_seq_len());
        ForwardTrace trace = adapter.forward(input.ids);
        sum += 1.0 - attention_loss(trace, ex.conflict_positions, aggregation);
        ++counted;
    }
    if (counted == 0)
        throw Error(ErrorKind::data,
                    "conflict-attention measurement undefined: no example has a "
                    "non-empty position set");
    return sum / static_cast<double>(counted);
}

}  // namespace clear
