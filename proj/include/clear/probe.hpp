#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "clear/datasets.hpp"
#include "clear/model_adapter.hpp"

namespace clear {

// Binary conflict classifier over hidden states: three fully connected
// layers, rectifier activations, logistic output.
struct ConflictProbe {
    std::vector<size_t> layer_dims;  // [d_M, h1, h2, 1]
    std::vector<Mat> weights;        // per layer, in x out
    std::vector<Mat> biases;         // per layer, 1 x out
    double threshold = 0.5;

    size_t input_dim() const { return layer_dims.empty() ? 0 : layer_dims.front(); }
    void validate() const;

    void save(const std::string& path) const;
    static ConflictProbe load(const std::string& path);
};

struct ProbeTrainConfig {
    double learning_rate = 0.001;
    size_t epochs = 10;
    size_t sample_count = 1000;  // states are subsampled down to this
    size_t batch_size = 1;  // per-sample updates by default
    uint64_t seed = 0;
    Pooling pooling = Pooling::last_token;
    std::vector<size_t> hidden_dims;  // empty -> [d/2, d/4]

    void validate() const;
};

struct ProbeTrainReport {
    std::vector<double> epoch_loss;              // mean BCE per epoch
    std::vector<double> epoch_holdout_accuracy;  // on the 10% split
    size_t train_count = 0;
    size_t holdout_count = 0;

    double final_holdout_accuracy() const {
        return epoch_holdout_accuracy.empty() ? 0.0 : epoch_holdout_accuracy.back();
    }
};

// Core trainer over labeled states (label 1 = conflicting). Plain mini-batch
// gradient descent on binary cross-entropy, fully seeded.
std::pair<ConflictProbe, ProbeTrainReport> train_probe_on_states(
    const std::vector<HiddenState>& states, const std::vector<int>& labels,
    const ProbeTrainConfig& config);

// Extracts last-layer states for each pair (aligned -> 0, conflicting -> 1)
// from the frozen adapter, then trains.
std::pair<ConflictProbe, ProbeTrainReport> train_probe(
    const std::vector<KnowledgePair>& pairs, const ModelAdapter& adapter,
    const ProbeTrainConfig& config);

// (label, logistic score); label = 1 iff score >= threshold.
std::pair<int, double> probe_predict(const ConflictProbe& probe, const HiddenState& hidden);

double probe_score(const ConflictProbe& probe, const std::vector<double>& values);

// Accuracy of the probe over labeled states.
double probe_accuracy(const ConflictProbe& probe, const std::vector<HiddenState>& states,
                      const std::vector<int>& labels);

enum class ProjectionMethod { pca, neighbor_embedding };

struct ProjectedPoint {
    double x = 0.0;
    double y = 0.0;
    int label = 0;
};

// 2D projection of labeled states for the separation study. pca is
// deterministic (axis signs fixed by the largest-component-positive
// convention); neighbor_embedding is a seeded stochastic neighbor layout.
std::vector<ProjectedPoint> project_hidden_2d(const std::vector<HiddenState>& states,
                                              const std::vector<int>& labels,
                                              ProjectionMethod method, uint64_t seed);

void write_projection_tsv(const std::string& path,
                          const std::vector<ProjectedPoint>& points,
                          const std::vector<std::string>& ids);

}  // namespace clear
