#include "clear/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "clear/rng.hpp"

namespace clear {

using nlohmann::json;

void ConflictProbe::validate() const {
    if (layer_dims.size() != 4 || layer_dims.back() != 1)
        throw Error(ErrorKind::contract, "probe must have layer dims [d_M, h1, h2, 1]");
    if (threshold <= 0.0 || threshold >= 1.0)
        throw Error(ErrorKind::contract, "probe threshold must lie in (0,1)");
    if (weights.size() != 3 || biases.size() != 3)
        throw Error(ErrorKind::contract, "probe must have exactly three FC layers");
    for (size_t l = 0; l < 3; ++l) {
        if (weights[l].rows != layer_dims[l] || weights[l].cols != layer_dims[l + 1] ||
            biases[l].cols != layer_dims[l + 1])
            throw Error(ErrorKind::contract, "probe tensor shapes are inconsistent");
    }
}

void ProbeTrainConfig::validate() const {
    if (learning_rate <= 0.0) throw Error(ErrorKind::config, "learning_rate must be > 0");
    if (epochs == 0 || sample_count == 0 || batch_size == 0)
        throw Error(ErrorKind::config, "epochs, sample_count, batch_size must be >= 1");
}

namespace {

double stable_sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    double e = std::exp(z);
    return e / (1.0 + e);
}

// log(1 + e^z), overflow-safe
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

struct ProbeActivations {
    std::vector<std::vector<double>> pre;   // pre-activation per layer
    std::vector<std::vector<double>> post;  // post-activation per layer (input first)
};

double probe_logit(const ConflictProbe& probe, const std::vector<double>& x,
                   ProbeActivations* acts) {
    std::vector<double> cur = x;
    if (acts) acts->post.push_back(cur);
    for (size_t l = 0; l < probe.weights.size(); ++l) {
        const Mat& w = probe.weights[l];
        const Mat& b = probe.biases[l];
        std::vector<double> next(w.cols, 0.0);
        for (size_t j = 0; j < w.cols; ++j) next[j] = b(0, j);
        for (size_t i = 0; i < w.rows; ++i) {
            double xv = cur[i];
            if (xv == 0.0) continue;
            for (size_t j = 0; j < w.cols; ++j) next[j] += xv * w(i, j);
        }
        if (acts) acts->pre.push_back(next);
        if (l + 1 < probe.weights.size()) {
            for (double& v : next) v = std::max(0.0, v);  // ReLU on hidden layers
        }
        cur = next;
        if (acts) acts->post.push_back(cur);
    }
    return cur[0];
}

ConflictProbe make_probe(size_t input_dim, const std::vector<size_t>& hidden_dims,
                         Rng& rng) {
    std::vector<size_t> hs = hidden_dims;
    if (hs.empty()) hs = {std::max<size_t>(1, input_dim / 2), std::max<size_t>(1, input_dim / 4)};
    if (hs.size() != 2)
        throw Error(ErrorKind::config, "probe hidden_dims must list exactly two widths");
    ConflictProbe probe;
    probe.layer_dims = {input_dim, hs[0], hs[1], 1};
    for (size_t l = 0; l < 3; ++l) {
        size_t in = probe.layer_dims[l], out = probe.layer_dims[l + 1];
        Mat w(in, out);
        // hidden layers get rectifier-scaled init; the output layer starts at
        // zero so the initial score is exactly 0.5 and flipped-label training
        // mirrors the score trajectory
        if (l + 1 < 3) {
            double std_dev = std::sqrt(2.0 / static_cast<double>(in));
            for (double& v : w.a) v = std_dev * rng.next_gaussian();
        }
        probe.weights.push_back(std::move(w));
        probe.biases.emplace_back(1, out);
    }
    return probe;
}

}  // namespace

double probe_score(const ConflictProbe& probe, const std::vector<double>& values) {
    if (values.size() != probe.input_dim())
        throw Error(ErrorKind::contract,
                    "probe input dim " + std::to_string(probe.input_dim()) +
                        " does not match state dim " + std::to_string(values.size()));
    return stable_sigmoid(probe_logit(probe, values, nullptr));
}

std::pair<int, double> probe_predict(const ConflictProbe& probe, const HiddenState& hidden) {
    double score = probe_score(probe, hidden.values);
    return {score >= probe.threshold ? 1 : 0, score};
}

double probe_accuracy(const ConflictProbe& probe, const std::vector<HiddenState>& states,
                      const std::vector<int>& labels) {
    if (states.empty() || states.size() != labels.size())
        throw Error(ErrorKind::contract, "probe_accuracy: bad inputs");
    size_t correct = 0;
    for (size_t i = 0; i < states.size(); ++i)
        if (probe_predict(probe, states[i]).first == labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(states.size());
}

std::pair<ConflictProbe, ProbeTrainReport> train_probe_on_states(
    const std::vector<HiddenState>& states, const std::vector<int>& labels,
    const ProbeTrainConfig& config) {
    config.validate();
    if (states.size() < 2 || states.size() != labels.size())
        throw Error(ErrorKind::contract, "probe training needs >= 2 labeled states");
    bool has0 = false, has1 = false;
    for (int l : labels) (l ? has1 : has0) = true;
    if (!has0 || !has1)
        throw Error(ErrorKind::data, "probe training data has a single label only");
    size_t dim = states[0].values.size();
    for (const auto& s : states)
        if (s.values.size() != dim)
            throw Error(ErrorKind::contract, "probe training states have mixed dims");

    Rng rng(config.seed);

    // subsample to sample_count, then split 90/10
    std::vector<size_t> order(states.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    if (order.size() > config.sample_count) order.resize(config.sample_count);

    size_t holdout = std::max<size_t>(1, order.size() / 10);
    if (holdout >= order.size()) holdout = order.size() - 1;
    std::vector<size_t> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(holdout));
    std::vector<size_t> hold_idx(order.end() - static_cast<std::ptrdiff_t>(holdout), order.end());

    ConflictProbe probe = make_probe(dim, config.hidden_dims, rng);
    ProbeTrainReport report;
    report.train_count = train_idx.size();
    report.holdout_count = hold_idx.size();

    std::vector<Mat> gw(3), gb(3);
    for (size_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(train_idx);
        double epoch_loss = 0.0;
        for (size_t begin = 0; begin < train_idx.size(); begin += config.batch_size) {
            size_t end = std::min(begin + config.batch_size, train_idx.size());
            for (size_t l = 0; l < 3; ++l) {
                gw[l] = Mat(probe.weights[l].rows, probe.weights[l].cols);
                gb[l] = Mat(1, probe.biases[l].cols);
            }
            double inv_batch = 1.0 / static_cast<double>(end - begin);
            for (size_t bi = begin; bi < end; ++bi) {
                size_t idx = train_idx[bi];
                ProbeActivations acts;
                double z = probe_logit(probe, states[idx].values, &acts);
                double y = labels[idx] ? 1.0 : 0.0;
                epoch_loss += softplus(z) - y * z;
                // backward: dL/dz = sigmoid(z) - y
                std::vector<double> delta = {(stable_sigmoid(z) - y) * inv_batch};
                for (size_t l = 3; l-- > 0;) {
                    const std::vector<double>& input = acts.post[l];
                    for (size_t i = 0; i < probe.weights[l].rows; ++i)
                        for (size_t j = 0; j < probe.weights[l].cols; ++j)
                            gw[l](i, j) += input[i] * delta[j];
                    for (size_t j = 0; j < probe.biases[l].cols; ++j)
                        gb[l](0, j) += delta[j];
                    if (l == 0) break;
                    std::vector<double> prev(probe.weights[l].rows, 0.0);
                    for (size_t i = 0; i < probe.weights[l].rows; ++i) {
                        double s = 0.0;
                        for (size_t j = 0; j < probe.weights[l].cols; ++j)
                            s += probe.weights[l](i, j) * delta[j];
                        // ReLU gate on the hidden pre-activation
                        prev[i] = acts.pre[l - 1][i] > 0.0 ? s : 0.0;
                    }
                    delta = std::move(prev);
                }
            }
            for (size_t l = 0; l < 3; ++l) {
                for (size_t i = 0; i < gw[l].size(); ++i)
                    probe.weights[l].a[i] -= config.learning_rate * gw[l].a[i];
                for (size_t i = 0; i < gb[l].size(); ++i)
                    probe.biases[l].a[i] -= config.learning_rate * gb[l].a[i];
            }
        }
        report.epoch_loss.push_back(epoch_loss / static_cast<double>(train_idx.size()));

        size_t correct = 0;
        for (size_t idx : hold_idx) {
            double s = probe_score(probe, states[idx].values);
            int pred = s >= probe.threshold ? 1 : 0;
            if (pred == labels[idx]) ++correct;
        }
        report.epoch_holdout_accuracy.push_back(static_cast<double>(correct) /
                                                static_cast<double>(hold_idx.size()));
    }
    return {std::move(probe), std::move(report)};
}

std::pair<ConflictProbe, ProbeTrainReport> train_probe(
    const std::vector<KnowledgePair>& pairs, const ModelAdapter& adapter,
    const ProbeTrainConfig& config) {
    if (pairs.size() < 2)
        throw Error(ErrorKind::contract, "probe training needs at least 2 pairs");
    std::vector<HiddenState> states;
    std::vector<int> labels;
    states.reserve(pairs.size() * 2);
    for (const auto& pair : pairs) {
        states.push_back(adapter.hidden_state_of(pair.aligned, -1, config.pooling));
        labels.push_back(0);
        states.push_back(adapter.hidden_state_of(pair.conflicting, -1, config.pooling));
        labels.push_back(1);
    }
    return train_probe_on_states(states, labels, config);
}

namespace {

constexpr char kProbeMagic[8] = {'C', 'L', 'R', 'P', 'R', 'O', 'B', '1'};

}  // namespace

void ConflictProbe::save(const std::string& path) const {
    validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::config, "cannot write probe checkpoint: " + path);
    out.write(kProbeMagic, sizeof(kProbeMagic));
    json header = {{"layer_dims", layer_dims}, {"threshold", threshold}};
    std::string hs = header.dump();
    uint32_t hlen = static_cast<uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), hlen);
    for (size_t l = 0; l < weights.size(); ++l) {
        out.write(reinterpret_cast<const char*>(weights[l].a.data()),
                  static_cast<std::streamsize>(weights[l].a.size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(biases[l].a.data()),
                  static_cast<std::streamsize>(biases[l].a.size() * sizeof(double)));
    }
    if (!out) throw Error(ErrorKind::config, "probe checkpoint write failed: " + path);
}

ConflictProbe ConflictProbe::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::config, "cannot open probe checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kProbeMagic, sizeof(magic)) != 0)
        throw Error(ErrorKind::parse, "not a probe checkpoint: " + path);
    uint32_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    if (!in) throw Error(ErrorKind::parse, "truncated probe checkpoint");
    json header;
    try {
        header = json::parse(hs);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, std::string("corrupt probe header: ") + e.what());
    }
    ConflictProbe probe;
    probe.layer_dims = header.at("layer_dims").get<std::vector<size_t>>();
    probe.threshold = header.at("threshold").get<double>();
    if (probe.layer_dims.size() != 4)
        throw Error(ErrorKind::parse, "probe checkpoint has bad layer dims");
    for (size_t l = 0; l < 3; ++l) {
        Mat w(probe.layer_dims[l], probe.layer_dims[l + 1]);
        Mat b(1, probe.layer_dims[l + 1]);
        in.read(reinterpret_cast<char*>(w.a.data()),
                static_cast<std::streamsize>(w.a.size() * sizeof(double)));
        in.read(reinterpret_cast<char*>(b.a.data()),
                static_cast<std::streamsize>(b.a.size() * sizeof(double)));
        if (!in) throw Error(ErrorKind::parse, "truncated probe tensors");
        probe.weights.push_back(std::move(w));
        probe.biases.push_back(std::move(b));
    }
    probe.validate();
    return probe;
}

}  // namespace clear
