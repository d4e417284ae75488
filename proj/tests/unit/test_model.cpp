#include <doctest.h>

#include <cmath>
#include <map>

#include "../common/grad_check.hpp"
#include "clear/rng.hpp"
#include "clear/stub_adapters.hpp"
#include "clear/tiny_model.hpp"
#include "test_support.hpp"

using namespace clear;
using test_support::TempDir;

namespace {

Tokenizer test_tokenizer() {
    return Tokenizer::from_texts(
        {"question: context: answer: the amber stone lies in north vale glows red "
         "where does lie ? . CF: was once lost"});
}

TinyModel make_model(uint64_t seed, size_t layers = 2, size_t heads = 2,
                     size_t dim = 16) {
    Tokenizer tok = test_tokenizer();
    TinyModelConfig cfg;
    cfg.vocab_size = tok.vocab_size();
    cfg.layers = layers;
    cfg.heads = heads;
    cfg.model_dim = dim;
    cfg.max_seq_len = 48;
    cfg.seed = seed;
    return TinyModel(cfg, std::move(tok));
}

}  // namespace

TEST_CASE("tiny model: same config+seed gives identical checksums") {
    TinyModel a = make_model(7);
    TinyModel b = make_model(7);
    CHECK(a.param_checksum() == b.param_checksum());
    TinyModel c = make_model(8);
    CHECK(a.param_checksum() != c.param_checksum());
}

TEST_CASE("tiny model: config validation") {
    Tokenizer tok = test_tokenizer();
    TinyModelConfig cfg;
    cfg.vocab_size = tok.vocab_size();
    cfg.layers = 1;
    cfg.heads = 3;
    cfg.model_dim = 8;  // 8 % 3 != 0
    cfg.max_seq_len = 16;
    CHECK_THROWS_AS(TinyModel(cfg, test_tokenizer()), Error);
    cfg.heads = 2;
    CHECK_NOTHROW(TinyModel(cfg, test_tokenizer()));
}

TEST_CASE("forward: trace invariants on random inputs") {
    TinyModel model = make_model(3);
    Rng rng(11);
    for (int trial = 0; trial < 25; ++trial) {
        size_t len = 1 + rng.next_below(20);
        std::vector<int> ids;
        for (size_t i = 0; i < len; ++i)
            ids.push_back(static_cast<int>(rng.next_below(model.tokenizer().vocab_size())));
        ForwardTrace trace = model.forward(ids);
        trace.check_invariants(model.num_layers());
        CHECK(trace.logits.rows == len);
        CHECK(trace.logits.cols == model.tokenizer().vocab_size());
    }
}

TEST_CASE("forward: single token attends only to itself") {
    TinyModel model = make_model(5);
    ForwardTrace trace = model.forward({4});
    for (const auto& layer : trace.attention)
        for (const Mat& head : layer) {
            REQUIRE(head.rows == 1);
            CHECK(head(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
        }
}

TEST_CASE("forward: purity, bitwise-stable logits") {
    TinyModel model = make_model(9);
    std::vector<int> ids = {1, 4, 7, 2};
    ForwardTrace a = model.forward(ids);
    ForwardTrace b = model.forward(ids);
    CHECK(a.logits.a == b.logits.a);
}

TEST_CASE("forward: contract errors") {
    TinyModel model = make_model(1);
    CHECK_THROWS_AS(model.forward({}), Error);
    CHECK_THROWS_AS(model.forward({static_cast<int>(model.tokenizer().vocab_size())}),
                    Error);
    std::vector<int> overlong(model.max_seq_len() + 1, 4);
    CHECK_THROWS_AS(model.forward(overlong), Error);
}

TEST_CASE("hidden_state_of: poolings agree on single token; shapes; mean oracle") {
    TinyModel model = make_model(2);
    HiddenState last = model.hidden_state_of("stone", -1, Pooling::last_token);
    HiddenState mean = model.hidden_state_of("stone", -1, Pooling::mean);
    REQUIRE(last.values.size() == model.model_dim());
    for (size_t j = 0; j < last.values.size(); ++j)
        CHECK(last.values[j] == doctest::Approx(mean.values[j]).epsilon(1e-12));

    // mean pooling equals the arithmetic mean of per-position vectors
    std::string text = "the amber stone";
    std::vector<int> ids = model.tokenizer().encode(text);
    REQUIRE(ids.size() == 3);
    ForwardTrace trace = model.forward(ids);
    HiddenState pooled = model.hidden_state_of(text, -1, Pooling::mean);
    const Mat& hm = trace.hidden.back();
    for (size_t j = 0; j < model.model_dim(); ++j) {
        double want = (hm(0, j) + hm(1, j) + hm(2, j)) / 3.0;
        CHECK(pooled.values[j] == doctest::Approx(want).epsilon(1e-12));
    }

    CHECK_THROWS_AS(model.hidden_state_of("stone", 99, Pooling::mean), Error);
}

namespace {

// Forced-logit backend for exercising greedy decoding.
class ForcedLogitAdapter : public ModelAdapter {
  public:
    ForcedLogitAdapter() { tok_ = Tokenizer::from_texts({"aa bb"}); }

    const Tokenizer& tokenizer() const override { return tok_; }
    size_t model_dim() const override { return 4; }
    size_t num_layers() const override { return 1; }
    size_t max_seq_len() const override { return 16; }

    ForwardTrace forward(const std::vector<int>& ids) const override {
        size_t T = ids.size();
        ForwardTrace trace;
        trace.logits = Mat(T, tok_.vocab_size());
        // favor token (last_id + 1) mod vocab; ties everywhere else
        size_t next = (static_cast<size_t>(ids.back()) + 1) % tok_.vocab_size();
        trace.logits(T - 1, next) = 1.0;
        trace.hidden.assign(2, Mat(T, 4));
        trace.attention.assign(1, std::vector<Mat>(1, Mat(T, T)));
        for (size_t i = 0; i < T; ++i)
            for (size_t j = 0; j <= i; ++j)
                trace.attention[0][0](i, j) = 1.0 / static_cast<double>(i + 1);
        return trace;
    }

  private:
    Tokenizer tok_;
};

}  // namespace

TEST_CASE("generate_greedy: forced logits, eos stop, tie-break") {
    ForcedLogitAdapter adapter;
    // vocab: 0 <unk>, 1 <eos>, 2 <conflict>, 3 </conflict>, 4 aa, 5 bb
    // from 4: next favored is 5; from 5: wraps to 0; from 0: 1 = eos
    auto out = adapter.generate_greedy({4}, 10);
    CHECK(out == std::vector<int>{4, 5, 0, 1});  // stops at eos

    CHECK(adapter.generate_greedy({4, 5}, 0) == std::vector<int>{4, 5});

    // all-zero row ties -> lowest id wins (id 0)
    auto tie = adapter.generate_greedy({5}, 1);
    CHECK(tie == std::vector<int>{5, 0});
}

TEST_CASE("generate_greedy: deterministic on the tiny model") {
    TinyModel model = make_model(4);
    std::vector<int> prompt = model.tokenizer().encode("where does the amber stone lie ?");
    auto a = model.generate_greedy(prompt, 8);
    auto b = model.generate_greedy(prompt, 8);
    CHECK(a == b);
    CHECK(a.size() > prompt.size());
}

TEST_CASE("checkpoint: round-trip preserves parameters and behavior") {
    TinyModel model = make_model(13);
    TempDir dir("ckpt");
    model.save_checkpoint(dir.file("m.ckpt"));
    TinyModel loaded = TinyModel::load_checkpoint(dir.file("m.ckpt"));
    CHECK(loaded.param_checksum() == model.param_checksum());
    std::vector<int> ids = {2, 4, 6};
    CHECK(loaded.forward(ids).logits.a == model.forward(ids).logits.a);
    CHECK(loaded.tokenizer().vocab() == model.tokenizer().vocab());
}

TEST_CASE("checkpoint: corrupt file rejected") {
    TempDir dir("ckpt_bad");
    test_support::write_file(dir.file("bad.ckpt"), "not a checkpoint");
    CHECK_THROWS_AS(TinyModel::load_checkpoint(dir.file("bad.ckpt")), Error);
}

TEST_CASE("tokenizer vocabulary file: one token per line, markers at fixed ids") {
    Tokenizer tok = test_tokenizer();
    TempDir dir("vocab");
    tok.save(dir.file("vocab.txt"));
    Tokenizer loaded = Tokenizer::load(dir.file("vocab.txt"));
    CHECK(loaded.vocab() == tok.vocab());
    CHECK(loaded.id_of(Tokenizer::kConflictOpenText) == Tokenizer::kConflictOpen);
    CHECK(loaded.id_of(Tokenizer::kConflictCloseText) == Tokenizer::kConflictClose);
    CHECK(loaded.encode("the amber stone") == tok.encode("the amber stone"));

    // a vocabulary without the reserved prefix is rejected
    test_support::write_file(dir.file("bad.txt"), "foo\nbar\n");
    CHECK_THROWS_AS(Tokenizer::load(dir.file("bad.txt")), Error);
}

TEST_CASE("adapter contract: tiny model and echo stub conform") {
    TinyModel model = make_model(21);
    CHECK_NOTHROW(check_adapter_contract(model));
    EchoStubAdapter stub(std::map<std::string, std::string>{
        {"where does the amber stone lie ?", "the north vale"}});
    CHECK_NOTHROW(check_adapter_contract(stub));
}

TEST_CASE("echo stub answers from memory regardless of context") {
    EchoStubAdapter stub(std::map<std::string, std::string>{
        {"where does the amber stone lie ?", "the north vale"}});
    const Tokenizer& tok = stub.tokenizer();
    std::vector<int> prompt = tok.encode(
        "question: where does the amber stone lie ? context: totally different words "
        "answer:");
    auto out = stub.generate_greedy(prompt, 8);
    std::vector<int> new_ids(out.begin() + static_cast<std::ptrdiff_t>(prompt.size()),
                             out.end());
    while (!new_ids.empty() && new_ids.back() == Tokenizer::kEos) new_ids.pop_back();
    CHECK(tok.decode(new_ids) == "the north vale");
}

TEST_CASE("loss_and_grad: endpoint lambdas and loss ranges") {
    TinyModel model = make_model(17);
    TrainStep step;
    step.ids = model.tokenizer().encode(
        "question: where does the amber stone lie ? context: <conflict> the amber stone "
        "lies in north vale </conflict> answer: north vale");
    step.answer_start = step.ids.size() - 2;
    step.conflict_positions = {10, 11, 12, 13, 14, 15, 16};
    step.lambda = 0.0;
    TrainStepLosses l0 = model.loss_and_grad(step, nullptr);
    CHECK(l0.l_lm > 0.0);
    CHECK(l0.l_attn >= 0.0);
    CHECK(l0.l_attn <= 1.0);

    step.lambda = 1.0;
    TrainStepLosses l1 = model.loss_and_grad(step, nullptr);
    // losses themselves do not depend on lambda, only their blend does
    CHECK(l1.l_lm == doctest::Approx(l0.l_lm).epsilon(1e-15));
    CHECK(l1.l_attn == doctest::Approx(l0.l_attn).epsilon(1e-15));

    CHECK_THROWS_AS([&] {
        TrainStep bad = step;
        bad.conflict_positions = {999};
        model.loss_and_grad(bad, nullptr);
    }(), Error);
}

TEST_CASE("loss_and_grad: quick finite-difference spot check") {
    TinyModel model = make_model(23, 2, 2, 16);
    TrainStep step;
    step.ids = model.tokenizer().encode(
        "question: where does the amber stone lie ? context: <conflict> the amber stone "
        "lies in north vale </conflict> answer: north vale");
    step.answer_start = step.ids.size() - 2;
    step.conflict_positions = {11, 12, 13};
    step.lambda = 0.5;
    auto result = grad_check::run(model, step, 40, 2025);
    CHECK(result.checked == 40);
    CHECK(result.max_rel_err < 1e-4);
}
