#include <doctest.h>

#include <cmath>

#include "clear/probe.hpp"
#include "clear/rng.hpp"
#include "clear/tiny_model.hpp"
#include "test_support.hpp"

using namespace clear;
using test_support::TempDir;

namespace {

// Two Gaussian clusters with 4-sigma mean separation along a fixed direction.
void make_clusters(size_t n, size_t dim, uint64_t seed, std::vector<HiddenState>* states,
                   std::vector<int>* labels) {
    Rng rng(seed);
    std::vector<double> direction(dim, 0.0);
    double norm = 0.0;
    for (auto& v : direction) {
        v = rng.next_gaussian();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : direction) v /= norm;
    for (size_t i = 0; i < n; ++i) {
        int label = static_cast<int>(i % 2);
        double sign = label ? 2.0 : -2.0;  // means at +/- 2 sigma -> 4 sigma apart
        HiddenState h;
        h.values.resize(dim);
        for (size_t j = 0; j < dim; ++j)
            h.values[j] = sign * direction[j] + rng.next_gaussian();
        states->push_back(std::move(h));
        labels->push_back(label);
    }
}

ConflictProbe scalar_probe(double w1, double b1, double w2, double b2, double w3,
                           double b3) {
    ConflictProbe probe;
    probe.layer_dims = {1, 1, 1, 1};
    for (auto [w, b] : {std::pair{w1, b1}, std::pair{w2, b2}, std::pair{w3, b3}}) {
        Mat wm(1, 1), bm(1, 1);
        wm(0, 0) = w;
        bm(0, 0) = b;
        probe.weights.push_back(wm);
        probe.biases.push_back(bm);
    }
    return probe;
}

}  // namespace

TEST_CASE("probe_predict: zero probe scores exactly 0.5, label 1 by convention") {
    ConflictProbe probe = scalar_probe(0, 0, 0, 0, 0, 0);
    HiddenState h;
    h.values = {1.0};
    auto [label, score] = probe_predict(probe, h);
    CHECK(score == 0.5);
    CHECK(label == 1);
}

TEST_CASE("probe_predict: hand computation on a 1-1-1-1 probe") {
    ConflictProbe probe = scalar_probe(2.0, 0.5, -1.0, 0.25, 0.5, -0.1);
    HiddenState h;
    h.values = {1.0};
    // z1 = 2.5 -> relu 2.5 ; z2 = -2.25 -> relu 0 ; z3 = -0.1
    double want = 1.0 / (1.0 + std::exp(0.1));
    auto [label, score] = probe_predict(probe, h);
    CHECK(score == doctest::Approx(want).epsilon(1e-9));
    CHECK(label == 0);
}

TEST_CASE("probe_predict: scores stay in [0,1]; dim mismatch rejected") {
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<HiddenState> states;
        std::vector<int> labels;
        make_clusters(8, 6, 100 + trial, &states, &labels);
        ProbeTrainConfig cfg;
        cfg.epochs = 1;
        cfg.seed = trial;
        auto [probe, report] = train_probe_on_states(states, labels, cfg);
        for (const auto& s : states) {
            double score = probe_predict(probe, s).second;
            CHECK(score >= 0.0);
            CHECK(score <= 1.0);
        }
        HiddenState bad;
        bad.values = {1.0, 2.0};
        CHECK_THROWS_AS(probe_predict(probe, bad), Error);
    }
}

TEST_CASE("train_probe_on_states: separable clusters reach 0.95 held-out accuracy") {
    std::vector<HiddenState> states;
    std::vector<int> labels;
    make_clusters(1000, 32, 90002, &states, &labels);
    ProbeTrainConfig cfg;  // defaults carry lr 0.001, 10 epochs, 1000 samples
    cfg.seed = 2;
    auto [probe, report] = train_probe_on_states(states, labels, cfg);
    CHECK(report.holdout_count == 100);
    CHECK(report.final_holdout_accuracy() >= 0.95);
}

TEST_CASE("train_probe_on_states: training loss is non-increasing per epoch") {
    std::vector<HiddenState> states;
    std::vector<int> labels;
    make_clusters(600, 12, 99, &states, &labels);
    ProbeTrainConfig cfg;
    cfg.seed = 2;
    auto [probe, report] = train_probe_on_states(states, labels, cfg);
    for (size_t e = 1; e < report.epoch_loss.size(); ++e)
        CHECK(report.epoch_loss[e] <= report.epoch_loss[e - 1] + 1e-6);
}

TEST_CASE("train_probe_on_states: determinism and degenerate labels") {
    std::vector<HiddenState> states;
    std::vector<int> labels;
    make_clusters(200, 8, 7, &states, &labels);
    ProbeTrainConfig cfg;
    cfg.seed = 11;
    auto [p1, r1] = train_probe_on_states(states, labels, cfg);
    auto [p2, r2] = train_probe_on_states(states, labels, cfg);
    for (size_t l = 0; l < 3; ++l) {
        CHECK(p1.weights[l].a == p2.weights[l].a);
        CHECK(p1.biases[l].a == p2.biases[l].a);
    }
    CHECK(r1.epoch_loss == r2.epoch_loss);

    std::vector<int> all_ones(labels.size(), 1);
    CHECK_THROWS_AS(train_probe_on_states(states, all_ones, cfg), Error);
}

TEST_CASE("train_probe_on_states: label symmetry on the symmetric fixture") {
    std::vector<HiddenState> states;
    std::vector<int> labels;
    make_clusters(800, 12, 321, &states, &labels);
    ProbeTrainConfig cfg;
    cfg.seed = 17;
    auto [probe, report] = train_probe_on_states(states, labels, cfg);
    std::vector<int> flipped;
    for (int l : labels) flipped.push_back(1 - l);
    auto [probe_f, report_f] = train_probe_on_states(states, flipped, cfg);

    // fresh draws from the same distribution act as held-out points
    std::vector<HiddenState> holdout;
    std::vector<int> holdout_labels;
    make_clusters(100, 12, 654, &holdout, &holdout_labels);
    double worst = 0.0;
    for (const auto& h : holdout) {
        double s = probe_predict(probe, h).second;
        double sf = probe_predict(probe_f, h).second;
        worst = std::max(worst, std::abs(sf - (1.0 - s)));
    }
    CHECK(worst < 0.05);
}

TEST_CASE("train_probe: needs >= 2 pairs; adapter path produces both labels") {
    Tokenizer tok = Tokenizer::from_texts({"paris rome oslo is the capital of france "
                                           "italy spain norway chile egypt"});
    TinyModelConfig mc;
    mc.vocab_size = tok.vocab_size();
    mc.layers = 1;
    mc.heads = 2;
    mc.model_dim = 8;
    mc.max_seq_len = 16;
    mc.seed = 3;
    TinyModel model(mc, std::move(tok));

    ProbeTrainConfig cfg;
    cfg.epochs = 2;
    KnowledgePair one{"paris is the capital of france", "paris is the capital of spain",
                      "paris"};
    CHECK_THROWS_AS(train_probe({one}, model, cfg), Error);

    std::vector<KnowledgePair> pairs = {
        one,
        {"rome is the capital of italy", "rome is the capital of egypt", "rome"},
        {"oslo is the capital of norway", "oslo is the capital of chile", "oslo"},
    };
    auto [probe, report] = train_probe(pairs, model, cfg);
    CHECK(probe.input_dim() == model.model_dim());
    CHECK(report.train_count + report.holdout_count == 6);
}

TEST_CASE("train_probe_on_states: sample_count caps the training set") {
    std::vector<HiddenState> states;
    std::vector<int> labels;
    make_clusters(2000, 8, 42, &states, &labels);
    ProbeTrainConfig cfg;
    cfg.epochs = 1;
    cfg.sample_count = 1000;
    auto [probe, report] = train_probe_on_states(states, labels, cfg);
    CHECK(report.train_count + report.holdout_count == 1000);
    CHECK(report.holdout_count == 100);
}

TEST_CASE("probe checkpoint round-trip") {
    std::vector<HiddenState> states;
    std::vector<int> labels;
    make_clusters(100, 8, 55, &states, &labels);
    ProbeTrainConfig cfg;
    cfg.epochs = 2;
    auto [probe, report] = train_probe_on_states(states, labels, cfg);

    TempDir dir("probe_ckpt");
    probe.save(dir.file("p.ckpt"));
    ConflictProbe loaded = ConflictProbe::load(dir.file("p.ckpt"));
    CHECK(loaded.layer_dims == probe.layer_dims);
    for (const auto& s : states)
        CHECK(probe_predict(loaded, s).second == probe_predict(probe, s).second);
}

TEST_CASE("project_hidden_2d: collinear points have zero second coordinate") {
    std::vector<HiddenState> states;
    std::vector<int> labels = {0, 1, 0};
    for (double t : {0.0, 1.0, 2.0}) {
        HiddenState h;
        for (size_t j = 0; j < 6; ++j) h.values.push_back(t * (1.0 + double(j)));
        states.push_back(h);
    }
    auto points = project_hidden_2d(states, labels, ProjectionMethod::pca, 0);
    REQUIRE(points.size() == 3);
    for (const auto& p : points) CHECK(std::abs(p.y) < 1e-9);
    CHECK(points[0].label == 0);
    CHECK(points[1].label == 1);
}

namespace {

// Independent oracle: power iteration with deflation on the covariance.
std::vector<std::vector<double>> power_iteration_projection(
    const std::vector<HiddenState>& states) {
    size_t n = states.size(), d = states[0].values.size();
    std::vector<double> mean(d, 0.0);
    for (const auto& s : states)
        for (size_t j = 0; j < d; ++j) mean[j] += s.values[j];
    for (auto& v : mean) v /= double(n);
    std::vector<std::vector<double>> centered(n, std::vector<double>(d));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) centered[i][j] = states[i].values[j] - mean[j];

    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (size_t i = 0; i < n; ++i)
        for (size_t a = 0; a < d; ++a)
            for (size_t b = 0; b < d; ++b)
                cov[a][b] += centered[i][a] * centered[i][b] / double(n);

    auto top_vec = [&](const std::vector<std::vector<double>>& m) {
        std::vector<double> v(d, 0.0);
        v[0] = 1.0;
        v[d - 1] = 0.5;
        for (int it = 0; it < 2000; ++it) {
            std::vector<double> next(d, 0.0);
            for (size_t a = 0; a < d; ++a)
                for (size_t b = 0; b < d; ++b) next[a] += m[a][b] * v[b];
            double norm = 0.0;
            for (double x : next) norm += x * x;
            norm = std::sqrt(norm);
            for (size_t a = 0; a < d; ++a) v[a] = next[a] / norm;
        }
        return v;
    };
    std::vector<double> v1 = top_vec(cov);
    double lambda1 = 0.0;
    for (size_t a = 0; a < d; ++a)
        for (size_t b = 0; b < d; ++b) lambda1 += v1[a] * cov[a][b] * v1[b];
    auto deflated = cov;
    for (size_t a = 0; a < d; ++a)
        for (size_t b = 0; b < d; ++b) deflated[a][b] -= lambda1 * v1[a] * v1[b];
    std::vector<double> v2 = top_vec(deflated);

    std::vector<std::vector<double>> proj(n, std::vector<double>(2, 0.0));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) {
            proj[i][0] += centered[i][j] * v1[j];
            proj[i][1] += centered[i][j] * v2[j];
        }
    return proj;
}

}  // namespace

TEST_CASE("project_hidden_2d: pca preserves pairwise dot products vs oracle") {
    Rng rng(2718);
    std::vector<HiddenState> states;
    std::vector<int> labels;
    for (size_t i = 0; i < 20; ++i) {
        HiddenState h;
        for (size_t j = 0; j < 8; ++j) h.values.push_back(rng.next_gaussian() * (1.0 + j));
        states.push_back(h);
        labels.push_back(int(i % 2));
    }
    auto got = project_hidden_2d(states, labels, ProjectionMethod::pca, 0);
    auto want = power_iteration_projection(states);
    for (size_t i = 0; i < states.size(); ++i) {
        for (size_t j = 0; j < states.size(); ++j) {
            double gram_got = got[i].x * got[j].x + got[i].y * got[j].y;
            double gram_want = want[i][0] * want[j][0] + want[i][1] * want[j][1];
            CHECK(gram_got == doctest::Approx(gram_want).epsilon(1e-6));
        }
    }
}

TEST_CASE("project_hidden_2d: seeded neighbor embedding is reproducible") {
    std::vector<HiddenState> states;
    std::vector<int> labels;
    make_clusters(30, 6, 8, &states, &labels);
    auto a = project_hidden_2d(states, labels, ProjectionMethod::neighbor_embedding, 12);
    auto b = project_hidden_2d(states, labels, ProjectionMethod::neighbor_embedding, 12);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].x == b[i].x);
        CHECK(a[i].y == b[i].y);
    }
    // clusters should separate: mean intra-label distance < inter-label distance
    double intra = 0, inter = 0;
    int n_intra = 0, n_inter = 0;
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = i + 1; j < a.size(); ++j) {
            double dx = a[i].x - a[j].x, dy = a[i].y - a[j].y;
            double dist = std::sqrt(dx * dx + dy * dy);
            if (labels[i] == labels[j]) {
                intra += dist;
                ++n_intra;
            } else {
                inter += dist;
                ++n_inter;
            }
        }
    CHECK(intra / n_intra < inter / n_inter);
}

TEST_CASE("project_hidden_2d: degenerate inputs rejected") {
    std::vector<HiddenState> two(2);
    two[0].values = {1, 2};
    two[1].values = {3, 4};
    CHECK_THROWS_AS(project_hidden_2d(two, {0, 1}, ProjectionMethod::pca, 0), Error);

    std::vector<HiddenState> same(4);
    for (auto& s : same) s.values = {1.0, 1.0, 1.0};
    CHECK_THROWS_AS(project_hidden_2d(same, {0, 1, 0, 1}, ProjectionMethod::pca, 0),
                    Error);
}

TEST_CASE("projection export writes the tsv artifact") {
    TempDir dir("proj");
    std::vector<ProjectedPoint> pts = {{1.5, -2.0, 0}, {0.25, 3.0, 1}};
    write_projection_tsv(dir.file("p.tsv"), pts, {"a", "b"});
    std::string content = test_support::read_file(dir.file("p.tsv"));
    CHECK(content.find("x\ty\tlabel\tid") != std::string::npos);
    CHECK(content.find("1.5\t-2\t0\ta") != std::string::npos);
}
