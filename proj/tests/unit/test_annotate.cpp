#include <doctest.h>

#include <algorithm>
#include <set>

#include "clear/annotate.hpp"
#include "clear/rng.hpp"
#include "clear/tiny_model.hpp"
#include "test_support.hpp"

using namespace clear;
using test_support::TempDir;

namespace {

std::vector<KnowledgeItem> make_items(const std::vector<std::string>& texts) {
    std::vector<KnowledgeItem> items;
    for (size_t i = 0; i < texts.size(); ++i) {
        KnowledgeItem item;
        item.id = i;
        item.text = texts[i];
        items.push_back(item);
    }
    return items;
}

TinyModel word_model(const std::string& vocab_text, size_t max_seq = 64) {
    Tokenizer tok = Tokenizer::from_texts({vocab_text});
    TinyModelConfig cfg;
    cfg.vocab_size = tok.vocab_size();
    cfg.layers = 1;
    cfg.heads = 1;
    cfg.model_dim = 8;
    cfg.max_seq_len = max_seq;
    cfg.seed = 0;
    return TinyModel(cfg, std::move(tok));
}

}  // namespace

TEST_CASE("detect_conflicts: empty input, constant and prefix judges") {
    CHECK(detect_conflicts({}, constant_judge(true)).empty());

    auto items = make_items({"plain fact", "CF: marked fact", "another", "CF: also"});
    auto all = detect_conflicts(items, constant_judge(true));
    for (const auto& it : all) CHECK(it.conflict_label == ConflictLabel::conflicting);

    auto flagged = detect_conflicts(items, prefix_judge("CF:"));
    REQUIRE(flagged.size() == 4);
    CHECK(flagged[0].conflict_label == ConflictLabel::aligned);
    CHECK(flagged[1].conflict_label == ConflictLabel::conflicting);
    CHECK(flagged[2].conflict_label == ConflictLabel::aligned);
    CHECK(flagged[3].conflict_label == ConflictLabel::conflicting);
    // order preserved
    for (size_t i = 0; i < flagged.size(); ++i) CHECK(flagged[i].id == i);
}

TEST_CASE("annotate_context: no conflicts means no markers") {
    auto items = detect_conflicts(make_items({"one", "two"}), constant_judge(false));
    AnnotatedContext ctx = annotate_context(items);
    CHECK(ctx.text == "one\ntwo");
    CHECK(ctx.conflict_spans.empty());
    CHECK(ctx.text.find(Tokenizer::kConflictOpenText) == std::string::npos);
}

TEST_CASE("annotate_context: items (3) and (5) wrapped, rest untouched") {
    // six items; the third and fifth (1-based) are conflicting
    auto items = make_items({"alpha", "bravo", "charlie", "delta", "echo", "foxtrot"});
    for (auto& item : items)
        item.conflict_label = (item.id == 2 || item.id == 4) ? ConflictLabel::conflicting
                                                             : ConflictLabel::aligned;
    AnnotatedContext ctx = annotate_context(items);

    size_t open_count = 0, pos = 0;
    while ((pos = ctx.text.find(Tokenizer::kConflictOpenText, pos)) != std::string::npos) {
        ++open_count;
        pos += 1;
    }
    CHECK(open_count == 2);
    CHECK(ctx.text.find("<conflict> charlie </conflict>") != std::string::npos);
    CHECK(ctx.text.find("<conflict> echo </conflict>") != std::string::npos);
    REQUIRE(ctx.conflict_spans.size() == 2);
    for (size_t s = 0; s < ctx.conflict_spans.size(); ++s) {
        auto [a, b] = ctx.conflict_spans[s];
        CHECK(ctx.text.substr(a, b - a) == (s == 0 ? "charlie" : "echo"));
    }
}

TEST_CASE("annotate_context: unresolved label is a contract error") {
    auto items = make_items({"one"});
    CHECK_THROWS_AS(annotate_context(items), Error);
}

TEST_CASE("annotate_context: markers balanced on 500 random labelings") {
    Rng rng(99);
    for (int trial = 0; trial < 500; ++trial) {
        size_t n = 1 + rng.next_below(8);
        std::vector<KnowledgeItem> items;
        for (size_t i = 0; i < n; ++i) {
            KnowledgeItem item;
            item.id = i;
            item.text = "item" + std::to_string(i);
            item.conflict_label = rng.next_below(2) ? ConflictLabel::conflicting
                                                    : ConflictLabel::aligned;
            items.push_back(item);
        }
        AnnotatedContext ctx = annotate_context(items);
        // scan: markers alternate open/close and end balanced
        int depth = 0;
        size_t i = 0;
        while (i < ctx.text.size()) {
            if (ctx.text.compare(i, 10, "<conflict>") == 0) {
                CHECK(depth == 0);
                depth = 1;
                i += 10;
            } else if (ctx.text.compare(i, 11, "</conflict>") == 0) {
                CHECK(depth == 1);
                depth = 0;
                i += 11;
            } else {
                ++i;
            }
        }
        CHECK(depth == 0);

        // spans are non-overlapping and hold the conflicting texts
        size_t conflicting = 0;
        for (const auto& item : items)
            if (item.conflict_label == ConflictLabel::conflicting) ++conflicting;
        CHECK(ctx.conflict_spans.size() == conflicting);
        for (size_t s = 1; s < ctx.conflict_spans.size(); ++s)
            CHECK(ctx.conflict_spans[s - 1].second < ctx.conflict_spans[s].first);

        // stripping markers reproduces the plain joined items exactly
        std::string stripped = ctx.text;
        auto erase_all = [&stripped](const std::string& what) {
            size_t at;
            while ((at = stripped.find(what)) != std::string::npos)
                stripped.erase(at, what.size());
        };
        erase_all("<conflict> ");
        erase_all(" </conflict>");
        std::string plain;
        for (size_t k = 0; k < items.size(); ++k) {
            if (k) plain += "\n";
            plain += items[k].text;
        }
        CHECK(stripped == plain);
    }
}

TEST_CASE("conflict_token_positions: no spans yields empty S") {
    TinyModel model = word_model("p1 p2 p3 w1 w2 w3 w4");
    auto items = detect_conflicts(make_items({"w1 w2"}), constant_judge(false));
    AnnotatedContext ctx = annotate_context(items);
    CHECK(conflict_token_positions(ctx, model, "p1 p2 p3").empty());
}

TEST_CASE("conflict_token_positions: hand-tokenized fixture gives S = {4,5,6,7}") {
    TinyModel model = word_model("p1 p2 p3 w1 w2 w3 w4");
    auto items = detect_conflicts(make_items({"w1 w2 w3 w4"}), constant_judge(true));
    AnnotatedContext ctx = annotate_context(items);
    // tokens: p1 p2 p3 <conflict> w1 w2 w3 w4 </conflict>
    auto s = conflict_token_positions(ctx, model, "p1 p2 p3");
    CHECK(s == std::vector<size_t>{4, 5, 6, 7});
}

TEST_CASE("conflict_token_positions: two disjoint spans form a disjoint union") {
    TinyModel model = word_model("p1 a1 a2 b1 b2 b3 mid");
    auto items = make_items({"a1 a2", "mid", "b1 b2 b3"});
    items[0].conflict_label = ConflictLabel::conflicting;
    items[1].conflict_label = ConflictLabel::aligned;
    items[2].conflict_label = ConflictLabel::conflicting;
    AnnotatedContext ctx = annotate_context(items);
    // tokens: p1(0) <conflict>(1) a1(2) a2(3) </conflict>(4) mid(5)
    //         <conflict>(6) b1(7) b2(8) b3(9) </conflict>(10)
    auto s = conflict_token_positions(ctx, model, "p1");
    CHECK(s == std::vector<size_t>{2, 3, 7, 8, 9});

    // |S| equals the summed token counts of conflicting items
    size_t expected = 0;
    for (const auto& item : items)
        if (item.conflict_label == ConflictLabel::conflicting)
            expected += model.tokenizer().encode(item.text).size();
    CHECK(s.size() == expected);

    // no position in S is a marker token
    std::string full = std::string("p1") + " " + ctx.text;
    auto ids = model.tokenizer().encode(full);
    for (size_t pos : s) {
        CHECK(ids[pos] != Tokenizer::kConflictOpen);
        CHECK(ids[pos] != Tokenizer::kConflictClose);
    }
}

TEST_CASE("conflict_token_positions: overlong input is a contract error") {
    TinyModel model = word_model("p w", 8);
    auto items = make_items({"w w w w w w w w w w"});
    items[0].conflict_label = ConflictLabel::conflicting;
    AnnotatedContext ctx = annotate_context(items);
    CHECK_THROWS_AS(conflict_token_positions(ctx, model, "p"), Error);
}

TEST_CASE("annotated example file round-trip") {
    TempDir dir("ann");
    std::vector<AnnotatedExample> examples(2);
    examples[0].question = "where is w1 ?";
    examples[0].annotated_context = "<conflict> w1 w2 </conflict>";
    examples[0].gold_answers = {"w2"};
    examples[0].conflict_positions = {5, 6};
    examples[1].question = "where is b1 ?";
    examples[1].annotated_context = "b1 b2";
    examples[1].gold_answers = {"b2", "b1 b2"};
    save_annotated_examples(dir.file("a.jsonl"), examples);
    auto loaded = load_annotated_examples(dir.file("a.jsonl"));
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].question == examples[0].question);
    CHECK(loaded[0].annotated_context == examples[0].annotated_context);
    CHECK(loaded[0].conflict_positions == examples[0].conflict_positions);
    CHECK(loaded[1].gold_answers == examples[1].gold_answers);
    CHECK(loaded[1].conflict_positions.empty());
}
