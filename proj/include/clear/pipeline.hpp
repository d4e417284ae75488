#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "clear/annotate.hpp"
#include "clear/ca_sft.hpp"
#include "clear/datasets.hpp"
#include "clear/decompose.hpp"
#include "clear/eval.hpp"
#include "clear/probe.hpp"
#include "clear/prune.hpp"
#include "clear/tiny_model.hpp"

namespace clear {

enum class Stage { decompose, prune, probe_train, detect, annotate, train, evaluate };

const char* stage_name(Stage stage);
Stage stage_from_string(const std::string& s);

enum class JudgeKind { probe, stub_constant, stub_prefix };
enum class ModelKind { tiny, echo_parametric };

// Parsed run configuration; mirrors the documented config file schema.
struct RunConfig {
    std::string config_dir;  // directory of the config file, for relative paths
    std::string workdir;
    uint64_t root_seed = 0;

    std::string train_path;
    std::string test_path;
    DatasetFormat dataset_format = DatasetFormat::confiqa_jsonl;
    std::string edits_path;

    DecomposerSpec decomposer;
    EncoderSpec encoder;
    PruneConfig prune;
    ProbeTrainConfig probe;

    JudgeKind judge_kind = JudgeKind::probe;
    bool stub_constant_value = true;
    std::string stub_prefix = "CF:";

    ModelKind model_kind = ModelKind::tiny;
    TinyModelConfig model;

    CaSftConfig train;

    EvalPipeline eval_pipeline = EvalPipeline::full_clear;
    size_t eval_max_new_tokens = 16;
    bool eval_use_trained_model = true;

    std::vector<double> sweep_lambdas = {0.0, 0.1, 0.3, 0.5};
    std::vector<uint64_t> sweep_seeds = {1, 2, 3};
    std::optional<double> sweep_learning_rate;
    std::optional<size_t> sweep_epochs;

    std::string distractors_path;
    size_t distractors_per_example = 2;
    std::string substitutions_path;
    ProjectionMethod projection_method = ProjectionMethod::pca;

    static RunConfig load(const std::string& path);
    // Range-independent checks plus per-stage input existence.
    void validate(Stage from, Stage to) const;

    uint64_t stage_seed(const std::string& label) const;
    std::string artifact(const std::string& name) const;
};

// Per-document artifact record flowing between decompose/prune/detect/annotate.
struct DocumentItems {
    std::string id;
    std::string question;
    std::vector<std::string> gold_answers;
    std::vector<KnowledgeItem> items;
};

std::vector<DocumentItems> load_document_items(const std::string& path);
void save_document_items(const std::string& path, const std::vector<DocumentItems>& docs);

// Executes a contiguous stage range, persisting each stage's outputs under
// the workdir so later stages can resume. Throws Error on failure.
void run_pipeline(const RunConfig& config, Stage from, Stage to);
void run_stage(const RunConfig& config, Stage stage);

// Figure/report emitters outside the stage range.
void run_probe_eval(const RunConfig& config);
void run_project(const RunConfig& config);
void run_sweep_lambda(const RunConfig& config);
void run_report(const RunConfig& config);

// Deterministic base model shared by probe-train/detect/annotate/train.
TinyModel build_base_model(const RunConfig& config);

}  // namespace clear
