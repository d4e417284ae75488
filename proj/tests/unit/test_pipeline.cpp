#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "clear/pipeline.hpp"
#include "test_support.hpp"

using namespace clear;
using nlohmann::json;
using test_support::TempDir;
using test_support::fixture;

namespace {

json smoke_config_json(const std::string& workdir) {
    return {
        {"workdir", workdir},
        {"root_seed", 7},
        {"dataset",
         {{"train_path", fixture("toy_corpus.jsonl")},
          {"test_path", fixture("toy_corpus.jsonl")},
          {"format", "confiqa_jsonl"}}},
        {"edits_path", fixture("toy_edits.jsonl")},
        {"decomposer", {{"kind", "rule_based"}, {"max_items", 50}}},
        {"encoder", {{"kind", "deterministic_test"}, {"dim", 16}}},
        {"prune", {{"k", 10}}},
        {"probe", {{"epochs", 3}, {"batch_size", 1}}},
        {"detect", {{"judge", "stub_prefix:CF:"}}},
        {"model",
         {{"kind", "tiny"},
          {"vocab_size", 160},
          {"layers", 2},
          {"heads", 2},
          {"model_dim", 32},
          {"max_seq_len", 96}}},
        {"train",
         {{"lambda", 0.1},
          {"learning_rate", 0.001},
          {"epochs", 1},
          {"adapter_mode", "low_rank"},
          {"lora_rank", 8},
          {"lora_scale", 8.0}}},
        {"evaluate",
         {{"pipeline", "full_clear"}, {"max_new_tokens", 8}, {"model", "trained"}}},
    };
}

std::string write_config(const TempDir& dir, const json& cfg) {
    std::string path = dir.file("config.json");
    std::ofstream out(path);
    out << cfg.dump(2);
    return path;
}

std::map<std::string, std::string> artifact_bytes(const std::string& workdir) {
    std::map<std::string, std::string> out;
    for (const auto& entry : std::filesystem::directory_iterator(workdir)) {
        std::string name = entry.path().filename().string();
        if (name == "run_meta.json" || name == ".lock") continue;  // volatile sidecars
        out[name] = test_support::read_file(entry.path().string());
    }
    return out;
}

}  // namespace

TEST_CASE("run config: load, defaults, relative path resolution") {
    TempDir dir("cfg");
    RunConfig cfg = RunConfig::load(write_config(dir, smoke_config_json(dir.file("wd"))));
    CHECK(cfg.root_seed == 7);
    CHECK(cfg.prune.k == 10);
    CHECK(cfg.judge_kind == JudgeKind::stub_prefix);
    CHECK(cfg.stub_prefix == "CF:");
    CHECK(cfg.model.model_dim == 32);
    CHECK(cfg.train.adapter_mode == AdapterMode::low_rank);
    CHECK_NOTHROW(cfg.validate(Stage::decompose, Stage::evaluate));
}

TEST_CASE("run config: invalid lambda fails validation before any stage") {
    TempDir dir("cfg_bad");
    json bad = smoke_config_json(dir.file("wd"));
    bad["train"]["lambda"] = 1.5;
    std::string path = write_config(dir, bad);
    RunConfig cfg = RunConfig::load(path);
    try {
        cfg.validate(Stage::decompose, Stage::evaluate);
        FAIL("expected config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
    }
    CHECK_FALSE(std::filesystem::exists(dir.file("wd/items.jsonl")));
}

TEST_CASE("run config: base-model stages require the train dataset path") {
    TempDir dir("cfg_base");
    json cfg_json = smoke_config_json(dir.file("wd"));
    cfg_json["dataset"].erase("train_path");
    RunConfig cfg = RunConfig::load(write_config(dir, cfg_json));
    try {
        cfg.validate(Stage::annotate, Stage::annotate);
        FAIL("expected config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
        CHECK(std::string(e.what()).find("training dataset") != std::string::npos);
    }
    // prune alone reads only the items artifact, so the path is not needed
    CHECK_NOTHROW(cfg.validate(Stage::prune, Stage::prune));
}

TEST_CASE("run config: unknown enum values are config errors") {
    TempDir dir("cfg_enum");
    json bad = smoke_config_json(dir.file("wd"));
    bad["detect"]["judge"] = "mystery";
    CHECK_THROWS_AS(RunConfig::load(write_config(dir, bad)), Error);
}

TEST_CASE("pipeline: full range emits every stage artifact") {
    TempDir dir("pipe_full");
    RunConfig cfg = RunConfig::load(write_config(dir, smoke_config_json(dir.file("wd"))));
    std::string corpus_before = test_support::read_file(fixture("toy_corpus.jsonl"));
    std::string edits_before = test_support::read_file(fixture("toy_edits.jsonl"));
    run_pipeline(cfg, Stage::decompose, Stage::evaluate);

    for (const char* artifact :
         {"items.jsonl", "pruned.jsonl", "prune_report.jsonl", "probe.ckpt",
          "probe_report.json", "detected.jsonl", "annotated.jsonl", "model.ckpt",
          "train_report.json", "eval.json", "run_meta.json"})
        CHECK(std::filesystem::exists(dir.file(std::string("wd/") + artifact)));

    // annotated records carry non-empty S for the CF: items
    auto annotated = load_annotated_examples(dir.file("wd/annotated.jsonl"));
    CHECK(annotated.size() == 20);
    size_t with_s = 0;
    for (const auto& ex : annotated)
        if (!ex.conflict_positions.empty()) ++with_s;
    CHECK(with_s == annotated.size());  // every toy context has one CF: item

    // eval result carries all test examples
    json eval = json::parse(test_support::read_file(dir.file("wd/eval.json")));
    CHECK(eval["n"] == 20);
    CHECK(eval["per_example"].size() == 20);

    // input dataset files never mutated
    CHECK(test_support::read_file(fixture("toy_corpus.jsonl")) == corpus_before);
    CHECK(test_support::read_file(fixture("toy_edits.jsonl")) == edits_before);
}

TEST_CASE("pipeline: byte-identical re-run under the same root seed") {
    TempDir dir("pipe_repro");
    json cfg_json = smoke_config_json(dir.file("wd1"));
    RunConfig cfg1 = RunConfig::load(write_config(dir, cfg_json));
    run_pipeline(cfg1, Stage::decompose, Stage::evaluate);

    cfg_json["workdir"] = dir.file("wd2");
    RunConfig cfg2 = RunConfig::load(write_config(dir, cfg_json));
    run_pipeline(cfg2, Stage::decompose, Stage::evaluate);

    auto a = artifact_bytes(dir.file("wd1"));
    auto b = artifact_bytes(dir.file("wd2"));
    REQUIRE(a.size() == b.size());
    for (const auto& [name, bytes] : a) {
        INFO("artifact ", name);
        REQUIRE(b.count(name) == 1);
        CHECK(bytes == b.at(name));
    }
}

TEST_CASE("pipeline: evaluate-only resumes from artifacts without retraining") {
    TempDir dir("pipe_resume");
    RunConfig cfg = RunConfig::load(write_config(dir, smoke_config_json(dir.file("wd"))));
    run_pipeline(cfg, Stage::decompose, Stage::evaluate);
    std::string model_before = test_support::read_file(dir.file("wd/model.ckpt"));
    std::filesystem::remove(dir.file("wd/eval.json"));

    run_stage(cfg, Stage::evaluate);
    CHECK(std::filesystem::exists(dir.file("wd/eval.json")));
    CHECK(test_support::read_file(dir.file("wd/model.ckpt")) == model_before);
}

TEST_CASE("pipeline: missing upstream artifact names the file") {
    TempDir dir("pipe_missing");
    RunConfig cfg = RunConfig::load(write_config(dir, smoke_config_json(dir.file("wd"))));
    try {
        run_stage(cfg, Stage::prune);
        FAIL("expected resume error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::data);
        CHECK(std::string(e.what()).find("items.jsonl") != std::string::npos);
        CHECK(std::string(e.what()).find("decompose") != std::string::npos);
    }
}

TEST_CASE("pipeline: workdir lock blocks concurrent runs") {
    TempDir dir("pipe_lock");
    RunConfig cfg = RunConfig::load(write_config(dir, smoke_config_json(dir.file("wd"))));
    std::filesystem::create_directories(dir.file("wd"));
    test_support::write_file(dir.file("wd/.lock"), "held\n");
    try {
        run_stage(cfg, Stage::decompose);
        FAIL("expected lock error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
        CHECK(std::string(e.what()).find(".lock") != std::string::npos);
    }
    std::filesystem::remove(dir.file("wd/.lock"));
    CHECK_NOTHROW(run_stage(cfg, Stage::decompose));
}

TEST_CASE("pipeline: probe judge plugs into detect and evaluate") {
    TempDir dir("pipe_probe");
    json cfg_json = smoke_config_json(dir.file("wd"));
    cfg_json["detect"]["judge"] = "probe";
    RunConfig cfg = RunConfig::load(write_config(dir, cfg_json));
    run_pipeline(cfg, Stage::decompose, Stage::annotate);
    CHECK(std::filesystem::exists(dir.file("wd/detected.jsonl")));
    auto docs = load_document_items(dir.file("wd/detected.jsonl"));
    for (const auto& doc : docs)
        for (const auto& item : doc.items)
            CHECK(item.conflict_label != ConflictLabel::unknown);
}

TEST_CASE("pipeline extras: project, sweep-lambda, report emit their artifacts") {
    TempDir dir("pipe_extra");
    json cfg_json = smoke_config_json(dir.file("wd"));
    cfg_json["sweep"] = {{"lambdas", {0.0, 0.5}},
                         {"seeds", {1}},
                         {"epochs", 1},
                         {"learning_rate", 0.002}};
    cfg_json["report"] = {{"distractors_path", fixture("toy_distractors.txt")},
                          {"distractors_per_example", 2},
                          {"substitutions_path", fixture("toy_substitutions.jsonl")}};
    cfg_json["project"] = {{"method", "pca"}};
    RunConfig cfg = RunConfig::load(write_config(dir, cfg_json));
    run_pipeline(cfg, Stage::decompose, Stage::annotate);

    run_project(cfg);
    CHECK(std::filesystem::exists(dir.file("wd/projection.tsv")));
    std::string proj = test_support::read_file(dir.file("wd/projection.tsv"));
    CHECK(proj.find("x\ty\tlabel\tid") != std::string::npos);

    run_probe_eval(cfg);
    json probe_eval =
        json::parse(test_support::read_file(dir.file("wd/probe_eval.json")));
    CHECK(probe_eval["pair_count"] == 12);
    CHECK(probe_eval["accuracy"].get<double>() >= 0.0);
    CHECK(probe_eval["accuracy"].get<double>() <= 1.0);

    run_sweep_lambda(cfg);
    std::string sweep = test_support::read_file(dir.file("wd/lambda_sweep.tsv"));
    CHECK(sweep.find("lambda\taccuracy\tattention_mass") != std::string::npos);
    // one row per lambda plus the header
    CHECK(std::count(sweep.begin(), sweep.end(), '\n') == 3);

    json echo_cfg = cfg_json;
    echo_cfg["model"] = {{"kind", "echo_parametric"}};
    echo_cfg["workdir"] = dir.file("wd_echo");
    RunConfig report_cfg = RunConfig::load(write_config(dir, echo_cfg));
    run_report(report_cfg);
    std::string degradation =
        test_support::read_file(dir.file("wd_echo/degradation.tsv"));
    CHECK(degradation.find("clean") != std::string::npos);
    CHECK(degradation.find("conflict") != std::string::npos);
}

TEST_CASE("cli: exit codes for success and validation failure") {
    TempDir dir("cli");
    std::string good = write_config(dir, smoke_config_json(dir.file("wd")));
    std::string cmd = std::string(CLEAR_CLI_PATH) + " -c " + good +
                      " decompose > /dev/null 2>&1";
    CHECK(std::system(cmd.c_str()) == 0);

    // contiguous range through the run subcommand
    std::string range_cmd = std::string(CLEAR_CLI_PATH) + " -c " + good +
                            " run --from prune --to detect > /dev/null 2>&1";
    CHECK(std::system(range_cmd.c_str()) == 0);
    CHECK(std::filesystem::exists(dir.file("wd/detected.jsonl")));

    json bad = smoke_config_json(dir.file("wd_bad"));
    bad["train"]["lambda"] = 1.5;
    std::ofstream(dir.file("bad.json")) << bad.dump();
    std::string bad_cmd = std::string(CLEAR_CLI_PATH) + " -c " + dir.file("bad.json") +
                          " run > /dev/null 2>&1";
    int rc = std::system(bad_cmd.c_str());
    CHECK(WEXITSTATUS(rc) == 1);

    json missing = smoke_config_json(dir.file("wd_missing"));
    std::ofstream(dir.file("missing.json")) << missing.dump();
    std::string resume_cmd = std::string(CLEAR_CLI_PATH) + " -c " +
                             dir.file("missing.json") + " prune > /dev/null 2>&1";
    rc = std::system(resume_cmd.c_str());
    CHECK(WEXITSTATUS(rc) == 2);

    // unreachable decomposition service maps to exit 3
    json svc = smoke_config_json(dir.file("wd_svc"));
    svc["decomposer"] = {{"kind", "llm_service"},
                         {"endpoint", "http://127.0.0.1:1/chat"},
                         {"model", "m"}};
    std::ofstream(dir.file("svc.json")) << svc.dump();
    std::string svc_cmd = std::string(CLEAR_CLI_PATH) + " -c " + dir.file("svc.json") +
                          " decompose > /dev/null 2>&1";
    rc = std::system(svc_cmd.c_str());
    CHECK(WEXITSTATUS(rc) == 3);
}
