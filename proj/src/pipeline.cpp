#include "clear/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "clear/rng.hpp"
#include "clear/stub_adapters.hpp"

namespace clear {

namespace fs = std::filesystem;
using nlohmann::json;

const char* stage_name(Stage stage) {
    switch (stage) {
        case Stage::decompose: return "decompose";
        case Stage::prune: return "prune";
        case Stage::probe_train: return "probe-train";
        case Stage::detect: return "detect";
        case Stage::annotate: return "annotate";
        case Stage::train: return "train";
        case Stage::evaluate: return "evaluate";
    }
    return "?";
}

Stage stage_from_string(const std::string& s) {
    for (Stage st : {Stage::decompose, Stage::prune, Stage::probe_train, Stage::detect,
                     Stage::annotate, Stage::train, Stage::evaluate})
        if (s == stage_name(st)) return st;
    throw Error(ErrorKind::config, "unknown stage '" + s + "'");
}

namespace {

std::string resolve_path(const std::string& base_dir, const std::string& path) {
    if (path.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(base_dir) / path).string();
}

void require_file(const std::string& path, const std::string& what) {
    if (path.empty())
        throw Error(ErrorKind::config, what + " path is not configured");
    if (!fs::exists(path))
        throw Error(ErrorKind::config, what + " not found: " + path);
}

void require_artifact(const std::string& path, const std::string& producer) {
    if (!fs::exists(path))
        throw Error(ErrorKind::data, "cannot resume: missing artifact " + path +
                                         " (produced by the " + producer + " stage)");
}

// Exclusive ownership of the working directory for one run.
class WorkdirLock {
  public:
    explicit WorkdirLock(const std::string& workdir) : path_(workdir + "/.lock") {
        fs::create_directories(workdir);
        if (fs::exists(path_))
            throw Error(ErrorKind::config,
                        "workdir is locked by another run (remove " + path_ +
                            " if stale)");
        std::ofstream out(path_);
        out << "locked\n";
    }
    ~WorkdirLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }

  private:
    std::string path_;
};

json item_to_json(const KnowledgeItem& item) {
    json obj = {{"id", item.id},
                {"text", item.text},
                {"conflict_label", conflict_label_name(item.conflict_label)}};
    if (item.source_span)
        obj["span"] = {item.source_span->first, item.source_span->second};
    else
        obj["span"] = nullptr;
    if (item.similarity)
        obj["similarity"] = *item.similarity;
    else
        obj["similarity"] = nullptr;
    return obj;
}

KnowledgeItem item_from_json(const json& obj) {
    KnowledgeItem item;
    item.id = obj.at("id").get<size_t>();
    item.text = obj.at("text").get<std::string>();
    if (obj.contains("span") && !obj["span"].is_null()) {
        auto span = obj["span"].get<std::vector<size_t>>();
        if (span.size() == 2) item.source_span = std::make_pair(span[0], span[1]);
    }
    if (obj.contains("similarity") && !obj["similarity"].is_null())
        item.similarity = obj["similarity"].get<double>();
    item.conflict_label =
        conflict_label_from_string(obj.value("conflict_label", "unknown"));
    return item;
}

ConflictJudge make_judge(const RunConfig& config, const ConflictProbe* probe,
                         const ModelAdapter* adapter) {
    switch (config.judge_kind) {
        case JudgeKind::probe:
            if (!probe || !adapter)
                throw Error(ErrorKind::contract, "probe judge needs probe and adapter");
            return probe_judge(*probe, *adapter, config.probe.pooling);
        case JudgeKind::stub_constant: return constant_judge(config.stub_constant_value);
        case JudgeKind::stub_prefix: return prefix_judge(config.stub_prefix);
    }
    throw Error(ErrorKind::config, "unknown judge kind");
}

std::vector<std::string> load_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::config, "cannot open file: " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

std::vector<std::pair<std::string, Substitution>> load_substitutions(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::config, "cannot open substitutions file: " + path);
    std::vector<std::pair<std::string, Substitution>> out;
    std::string line;
    size_t record = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++record;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(ErrorKind::parse, "substitution record " + std::to_string(record) +
                                              ": invalid JSON: " + e.what());
        }
        Substitution sub;
        sub.target = obj.at("target").get<std::string>();
        sub.replacement = obj.at("replacement").get<std::string>();
        out.emplace_back(obj.at("id").get<std::string>(), sub);
    }
    return out;
}

std::string json_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

uint64_t RunConfig::stage_seed(const std::string& label) const {
    Rng rng = Rng(root_seed).fork(label);
    return rng.next_u64();
}

std::string RunConfig::artifact(const std::string& name) const {
    return workdir + "/" + name;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::config, "cannot open config file: " + path);
    json root;
    try {
        in >> root;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::config, std::string("invalid config JSON: ") + e.what());
    }
    RunConfig cfg;
    cfg.config_dir = fs::path(path).parent_path().string();
    if (cfg.config_dir.empty()) cfg.config_dir = ".";
    try {
        cfg.workdir = resolve_path(cfg.config_dir, root.at("workdir").get<std::string>());
        cfg.root_seed = root.value("root_seed", 0ULL);

        const json& ds = root.at("dataset");
        cfg.train_path = resolve_path(cfg.config_dir, ds.value("train_path", ""));
        cfg.test_path = resolve_path(cfg.config_dir, ds.value("test_path", ""));
        cfg.dataset_format =
            dataset_format_from_string(ds.value("format", "confiqa_jsonl"));
        cfg.edits_path = resolve_path(cfg.config_dir, root.value("edits_path", ""));

        if (root.contains("decomposer")) {
            const json& d = root["decomposer"];
            std::string kind = d.value("kind", "rule_based");
            if (kind == "rule_based")
                cfg.decomposer.kind = DecomposerKind::rule_based;
            else if (kind == "llm_service")
                cfg.decomposer.kind = DecomposerKind::llm_service;
            else
                throw Error(ErrorKind::config, "unknown decomposer kind '" + kind + "'");
            cfg.decomposer.endpoint = d.value("endpoint", "");
            cfg.decomposer.model = d.value("model", "gpt-3.5-turbo");
            cfg.decomposer.max_items = d.value("max_items", 50ULL);
            cfg.decomposer.prompt_template_path =
                resolve_path(cfg.config_dir, d.value("prompt_template", ""));
        }
        if (root.contains("encoder")) {
            const json& e = root["encoder"];
            std::string kind = e.value("kind", "deterministic_test");
            if (kind == "deterministic_test")
                cfg.encoder.kind = EncoderKind::deterministic_test;
            else if (kind == "service")
                cfg.encoder.kind = EncoderKind::service;
            else
                throw Error(ErrorKind::config, "unknown encoder kind '" + kind + "'");
            cfg.encoder.endpoint = e.value("endpoint", "");
            cfg.encoder.model = e.value("model", "all-MiniLM-L6-v2");
            cfg.encoder.dim = e.value("dim", 384ULL);
            cfg.encoder.seed = e.value("seed", 0ULL);
            cfg.encoder.cache_path = resolve_path(cfg.config_dir, e.value("cache", ""));
        }
        if (root.contains("prune")) cfg.prune.k = root["prune"].value("k", 10ULL);
        if (root.contains("probe")) {
            const json& p = root["probe"];
            cfg.probe.learning_rate = p.value("learning_rate", 0.001);
            cfg.probe.epochs = p.value("epochs", 10ULL);
            cfg.probe.sample_count = p.value("sample_count", 1000ULL);
            cfg.probe.batch_size = p.value("batch_size", 16ULL);
            std::string pooling = p.value("pooling", "last_token");
            if (pooling == "last_token")
                cfg.probe.pooling = Pooling::last_token;
            else if (pooling == "mean")
                cfg.probe.pooling = Pooling::mean;
            else
                throw Error(ErrorKind::config, "unknown pooling '" + pooling + "'");
        }
        if (root.contains("detect")) {
            std::string judge = root["detect"].value("judge", "probe");
            if (judge == "probe") {
                cfg.judge_kind = JudgeKind::probe;
            } else if (judge.rfind("stub_constant:", 0) == 0) {
                cfg.judge_kind = JudgeKind::stub_constant;
                cfg.stub_constant_value = judge.substr(14) == "1";
            } else if (judge.rfind("stub_prefix:", 0) == 0) {
                cfg.judge_kind = JudgeKind::stub_prefix;
                cfg.stub_prefix = judge.substr(12);
            } else {
                throw Error(ErrorKind::config, "unknown judge '" + judge + "'");
            }
        }
        if (root.contains("model")) {
            const json& m = root["model"];
            std::string kind = m.value("kind", "tiny");
            if (kind == "tiny")
                cfg.model_kind = ModelKind::tiny;
            else if (kind == "echo_parametric")
                cfg.model_kind = ModelKind::echo_parametric;
            else
                throw Error(ErrorKind::config, "unknown model kind '" + kind + "'");
            cfg.model.vocab_size = m.value("vocab_size", 512ULL);
            cfg.model.layers = m.value("layers", 2ULL);
            cfg.model.heads = m.value("heads", 2ULL);
            cfg.model.model_dim = m.value("model_dim", 32ULL);
            cfg.model.max_seq_len = m.value("max_seq_len", 96ULL);
        }
        if (root.contains("train")) {
            const json& t = root["train"];
            cfg.train.lambda = t.value("lambda", 0.1);
            cfg.train.learning_rate = t.value("learning_rate", 3e-5);
            cfg.train.epochs = t.value("epochs", 5ULL);
            std::string mode = t.value("adapter_mode", "low_rank");
            if (mode == "full")
                cfg.train.adapter_mode = AdapterMode::full;
            else if (mode == "low_rank")
                cfg.train.adapter_mode = AdapterMode::low_rank;
            else
                throw Error(ErrorKind::config, "unknown adapter_mode '" + mode + "'");
            cfg.train.lora_rank = t.value("lora_rank", 16ULL);
            cfg.train.lora_scale = t.value("lora_scale", 16.0);
            cfg.train.weight_decay = t.value("weight_decay", 0.01);
            std::string mask = t.value("lm_mask", "answer_only");
            if (mask == "answer_only")
                cfg.train.lm_mask = LmLossMask::answer_only;
            else if (mask == "full_sequence")
                cfg.train.lm_mask = LmLossMask::full_sequence;
            else
                throw Error(ErrorKind::config, "unknown lm_mask '" + mask + "'");
            if (t.contains("aggregation_layers") && t["aggregation_layers"].is_array())
                cfg.train.aggregation.layers =
                    t["aggregation_layers"].get<std::vector<int>>();
        }
        if (root.contains("evaluate")) {
            const json& e = root["evaluate"];
            std::string pipe = e.value("pipeline", "full_clear");
            if (pipe == "full_clear")
                cfg.eval_pipeline = EvalPipeline::full_clear;
            else if (pipe == "passthrough")
                cfg.eval_pipeline = EvalPipeline::passthrough;
            else
                throw Error(ErrorKind::config, "unknown eval pipeline '" + pipe + "'");
            cfg.eval_max_new_tokens = e.value("max_new_tokens", 16ULL);
            std::string model_src = e.value("model", "trained");
            if (model_src == "trained")
                cfg.eval_use_trained_model = true;
            else if (model_src == "base")
                cfg.eval_use_trained_model = false;
            else
                throw Error(ErrorKind::config, "unknown evaluate.model '" + model_src + "'");
        }
        if (root.contains("sweep")) {
            const json& s = root["sweep"];
            if (s.contains("lambdas"))
                cfg.sweep_lambdas = s["lambdas"].get<std::vector<double>>();
            if (s.contains("seeds"))
                cfg.sweep_seeds = s["seeds"].get<std::vector<uint64_t>>();
            if (s.contains("learning_rate"))
                cfg.sweep_learning_rate = s["learning_rate"].get<double>();
            if (s.contains("epochs")) cfg.sweep_epochs = s["epochs"].get<size_t>();
        }
        if (root.contains("report")) {
            const json& r = root["report"];
            cfg.distractors_path =
                resolve_path(cfg.config_dir, r.value("distractors_path", ""));
            cfg.distractors_per_example = r.value("distractors_per_example", 2ULL);
            cfg.substitutions_path =
                resolve_path(cfg.config_dir, r.value("substitutions_path", ""));
        }
        if (root.contains("project")) {
            std::string method = root["project"].value("method", "pca");
            if (method == "pca")
                cfg.projection_method = ProjectionMethod::pca;
            else if (method == "neighbor_embedding")
                cfg.projection_method = ProjectionMethod::neighbor_embedding;
            else
                throw Error(ErrorKind::config, "unknown projection method '" + method + "'");
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::config, std::string("config error: ") + e.what());
    }
    return cfg;
}

void RunConfig::validate(Stage from, Stage to) const {
    if (workdir.empty()) throw Error(ErrorKind::config, "workdir is not configured");
    if (static_cast<int>(from) > static_cast<int>(to))
        throw Error(ErrorKind::config, "stage range is empty (from is after to)");
    decomposer.validate();
    encoder.validate();
    prune.validate();
    probe.validate();
    train.validate();
    if (model_kind == ModelKind::tiny) model.validate();

    auto in_range = [&](Stage s) {
        return static_cast<int>(from) <= static_cast<int>(s) &&
               static_cast<int>(s) <= static_cast<int>(to);
    };
    // stages that rebuild the deterministic base model read the train set
    bool needs_base_model =
        in_range(Stage::probe_train) || in_range(Stage::annotate) ||
        in_range(Stage::train) ||
        (in_range(Stage::detect) && judge_kind == JudgeKind::probe) ||
        (in_range(Stage::evaluate) && model_kind == ModelKind::tiny &&
         !eval_use_trained_model);
    if (in_range(Stage::decompose) || needs_base_model)
        require_file(train_path, "training dataset");
    if (in_range(Stage::evaluate)) require_file(test_path, "test dataset");
    if (in_range(Stage::probe_train)) require_file(edits_path, "edit-record file");
    if (in_range(Stage::train) && model_kind != ModelKind::tiny)
        throw Error(ErrorKind::config, "only the tiny model supports training");
}

std::vector<DocumentItems> load_document_items(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::config, "cannot open items file: " + path);
    std::vector<DocumentItems> out;
    std::string line;
    size_t record = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++record;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(ErrorKind::parse, "items record " + std::to_string(record) +
                                              ": invalid JSON: " + e.what());
        }
        DocumentItems doc;
        doc.id = obj.at("id").get<std::string>();
        doc.question = obj.at("question").get<std::string>();
        doc.gold_answers = obj.at("answers").get<std::vector<std::string>>();
        for (const auto& it : obj.at("items")) doc.items.push_back(item_from_json(it));
        out.push_back(std::move(doc));
    }
    return out;
}

void save_document_items(const std::string& path, const std::vector<DocumentItems>& docs) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::config, "cannot write items file: " + path);
    for (const auto& doc : docs) {
        json obj = {{"id", doc.id},
                    {"question", doc.question},
                    {"answers", doc.gold_answers},
                    {"items", json::array()}};
        for (const auto& item : doc.items) obj["items"].push_back(item_to_json(item));
        out << obj.dump() << "\n";
    }
}

TinyModel build_base_model(const RunConfig& config) {
    std::vector<QAExample> examples =
        load_qa_dataset(config.train_path, config.dataset_format);
    std::vector<std::string> texts = {"question: context: answer: CF:"};
    for (const auto& ex : examples) {
        texts.push_back(ex.question);
        texts.push_back(ex.context);
        for (const auto& a : ex.gold_answers) texts.push_back(a);
    }
    if (!config.test_path.empty() && fs::exists(config.test_path)) {
        for (const auto& ex : load_qa_dataset(config.test_path, config.dataset_format)) {
            texts.push_back(ex.question);
            texts.push_back(ex.context);
            for (const auto& a : ex.gold_answers) texts.push_back(a);
        }
    }
    if (!config.edits_path.empty() && fs::exists(config.edits_path)) {
        for (const auto& rec : load_edit_records(config.edits_path)) {
            texts.push_back(rec.statement);
            texts.push_back(rec.edited_object);
        }
    }
    Tokenizer tok = Tokenizer::from_texts(texts, config.model.vocab_size);
    TinyModelConfig model_cfg = config.model;
    model_cfg.vocab_size = std::max<size_t>(model_cfg.vocab_size, tok.vocab_size());
    model_cfg.seed = config.stage_seed("model_init");
    return TinyModel(model_cfg, std::move(tok));
}

namespace {

void stage_decompose(const RunConfig& config) {
    std::vector<QAExample> examples =
        load_qa_dataset(config.train_path, config.dataset_format);
    std::vector<DocumentItems> docs;
    docs.reserve(examples.size());
    for (const auto& ex : examples) {
        DocumentItems doc;
        doc.id = ex.id;
        doc.question = ex.question;
        doc.gold_answers = ex.gold_answers;
        doc.items = decompose_context(ex.context, config.decomposer);
        docs.push_back(std::move(doc));
    }
    save_document_items(config.artifact("items.jsonl"), docs);
}

void stage_prune(const RunConfig& config) {
    require_artifact(config.artifact("items.jsonl"), "decompose");
    std::vector<DocumentItems> docs = load_document_items(config.artifact("items.jsonl"));
    std::vector<DocumentItems> report = docs;
    for (size_t d = 0; d < docs.size(); ++d) {
        auto& doc = docs[d];
        doc.items = prune_top_k(doc.items, doc.question, config.encoder, config.prune);
        // run report keeps every item with its score
        EmbeddingVector q = embed_text(doc.question, config.encoder);
        std::vector<std::string> texts;
        texts.reserve(report[d].items.size());
        for (const auto& item : report[d].items) texts.push_back(item.text);
        std::vector<EmbeddingVector> ks = embed_batch(texts, config.encoder);
        for (size_t i = 0; i < report[d].items.size(); ++i)
            report[d].items[i].similarity =
                similarity_score(cosine_similarity(q, ks[i]));
    }
    save_document_items(config.artifact("pruned.jsonl"), docs);
    save_document_items(config.artifact("prune_report.jsonl"), report);
}

void stage_probe_train(const RunConfig& config) {
    std::vector<EditRecord> records = load_edit_records(config.edits_path);
    std::vector<KnowledgePair> pairs = build_probe_pairs(records);
    TinyModel base = build_base_model(config);
    ProbeTrainConfig probe_cfg = config.probe;
    probe_cfg.seed = config.stage_seed("probe_train");
    auto [probe, report] = train_probe(pairs, base, probe_cfg);
    probe.save(config.artifact("probe.ckpt"));

    json rep = {{"train_count", report.train_count},
                {"holdout_count", report.holdout_count},
                {"epoch_loss", report.epoch_loss},
                {"epoch_holdout_accuracy", report.epoch_holdout_accuracy}};
    std::ofstream out(config.artifact("probe_report.json"));
    out << rep.dump(2) << "\n";
}

void stage_detect(const RunConfig& config) {
    require_artifact(config.artifact("pruned.jsonl"), "prune");
    std::vector<DocumentItems> docs = load_document_items(config.artifact("pruned.jsonl"));

    std::unique_ptr<TinyModel> base;
    std::unique_ptr<ConflictProbe> probe;
    if (config.judge_kind == JudgeKind::probe) {
        require_artifact(config.artifact("probe.ckpt"), "probe-train");
        probe = std::make_unique<ConflictProbe>(
            ConflictProbe::load(config.artifact("probe.ckpt")));
        base = std::make_unique<TinyModel>(build_base_model(config));
    }
    ConflictJudge judge = make_judge(config, probe.get(), base.get());
    for (auto& doc : docs) doc.items = detect_conflicts(doc.items, judge);
    save_document_items(config.artifact("detected.jsonl"), docs);
}

void stage_annotate(const RunConfig& config) {
    require_artifact(config.artifact("detected.jsonl"), "detect");
    std::vector<DocumentItems> docs =
        load_document_items(config.artifact("detected.jsonl"));
    TinyModel base = build_base_model(config);
    std::vector<AnnotatedExample> annotated;
    annotated.reserve(docs.size());
    for (const auto& doc : docs) {
        AnnotatedContext ctx = annotate_context(doc.items);
        AnnotatedExample ex;
        ex.question = doc.question;
        ex.annotated_context = ctx.text;
        ex.gold_answers = doc.gold_answers;
        ex.conflict_positions =
            conflict_token_positions(ctx, base, qa_prompt_prefix(doc.question));
        annotated.push_back(std::move(ex));
    }
    save_annotated_examples(config.artifact("annotated.jsonl"), annotated);
}

void write_train_report(const RunConfig& config, const CaSftReport& report,
                        const CaSftConfig& train_cfg) {
    // deterministic artifact: wall time goes to the run_meta sidecar instead
    json epochs = json::array();
    for (const auto& e : report.epochs)
        epochs.push_back({{"l_lm", e.l_lm},
                          {"l_attn", e.l_attn},
                          {"l_total", e.l_total},
                          {"conflict_attention_mass", e.conflict_attention_mass}});
    json rep = {
        {"epochs", epochs},
        {"record_count", report.record_count},
        {"seed", report.seed},
        {"config",
         {{"lambda", train_cfg.lambda},
          {"learning_rate", train_cfg.learning_rate},
          {"epochs", train_cfg.epochs},
          {"adapter_mode",
           train_cfg.adapter_mode == AdapterMode::full ? "full" : "low_rank"},
          {"lora_rank", train_cfg.lora_rank},
          {"lora_scale", train_cfg.lora_scale},
          {"weight_decay", train_cfg.weight_decay},
          {"lm_mask", train_cfg.lm_mask == LmLossMask::answer_only ? "answer_only"
                                                                   : "full_sequence"}}},
    };
    std::ofstream out(config.artifact("train_report.json"));
    out << rep.dump(2) << "\n";

    json meta = {{"wall_seconds", report.wall_seconds}};
    std::ofstream meta_out(config.artifact("run_meta.json"));
    meta_out << meta.dump(2) << "\n";
}

void stage_train(const RunConfig& config) {
    require_artifact(config.artifact("annotated.jsonl"), "annotate");
    std::vector<AnnotatedExample> examples =
        load_annotated_examples(config.artifact("annotated.jsonl"));
    TinyModel model = build_base_model(config);
    CaSftConfig train_cfg = config.train;
    train_cfg.seed = config.stage_seed("ca_sft");
    CaSftReport report = train_ca_sft(model, examples, train_cfg);
    model.save_checkpoint(config.artifact("model.ckpt"));
    write_train_report(config, report, train_cfg);
}

void write_eval_result(const std::string& path, const EvalResult& result) {
    json per = json::array();
    for (const auto& p : result.per_example) {
        json obj = {{"id", p.id}, {"f1", p.f1}, {"em", p.em}, {"prediction", p.prediction}};
        if (!p.error.empty()) obj["error"] = p.error;
        per.push_back(obj);
    }
    json rep = {{"f1", result.f1}, {"em", result.em}, {"n", result.n},
                {"per_example", per}};
    std::ofstream out(path);
    out << rep.dump(2) << "\n";
}

EvalConfig build_eval_config(const RunConfig& config, const ConflictProbe* probe,
                             const ModelAdapter* adapter) {
    EvalConfig eval_cfg;
    eval_cfg.pipeline = config.eval_pipeline;
    eval_cfg.decomposer = config.decomposer;
    eval_cfg.encoder = config.encoder;
    eval_cfg.prune = config.prune;
    eval_cfg.max_new_tokens = config.eval_max_new_tokens;
    if (config.eval_pipeline == EvalPipeline::full_clear)
        eval_cfg.judge = make_judge(config, probe, adapter);
    return eval_cfg;
}

std::unique_ptr<ModelAdapter> build_eval_adapter(const RunConfig& config,
                                                 const std::vector<QAExample>& test) {
    if (config.model_kind == ModelKind::echo_parametric) {
        std::map<std::string, std::string> memory;
        for (const auto& ex : test) memory[ex.question] = ex.gold_answers.front();
        return std::make_unique<EchoStubAdapter>(std::move(memory));
    }
    if (config.eval_use_trained_model) {
        require_artifact(config.artifact("model.ckpt"), "train");
        return std::make_unique<TinyModel>(
            TinyModel::load_checkpoint(config.artifact("model.ckpt")));
    }
    return std::make_unique<TinyModel>(build_base_model(config));
}

void stage_evaluate(const RunConfig& config) {
    std::vector<QAExample> test = load_qa_dataset(config.test_path, config.dataset_format);
    std::unique_ptr<ModelAdapter> adapter = build_eval_adapter(config, test);

    std::unique_ptr<ConflictProbe> probe;
    if (config.eval_pipeline == EvalPipeline::full_clear &&
        config.judge_kind == JudgeKind::probe) {
        require_artifact(config.artifact("probe.ckpt"), "probe-train");
        probe = std::make_unique<ConflictProbe>(
            ConflictProbe::load(config.artifact("probe.ckpt")));
    }
    EvalConfig eval_cfg = build_eval_config(config, probe.get(), adapter.get());
    EvalResult result = evaluate(*adapter, test, eval_cfg);
    write_eval_result(config.artifact("eval.json"), result);
}

}  // namespace

void run_stage(const RunConfig& config, Stage stage) {
    WorkdirLock lock(config.workdir);
    std::cerr << "[clear] stage " << stage_name(stage) << "\n";
    switch (stage) {
        case Stage::decompose: stage_decompose(config); break;
        case Stage::prune: stage_prune(config); break;
        case Stage::probe_train: stage_probe_train(config); break;
        case Stage::detect: stage_detect(config); break;
        case Stage::annotate: stage_annotate(config); break;
        case Stage::train: stage_train(config); break;
        case Stage::evaluate: stage_evaluate(config); break;
    }
}

void run_pipeline(const RunConfig& config, Stage from, Stage to) {
    config.validate(from, to);
    for (int s = static_cast<int>(from); s <= static_cast<int>(to); ++s)
        run_stage(config, static_cast<Stage>(s));
}

void run_probe_eval(const RunConfig& config) {
    WorkdirLock lock(config.workdir);
    require_file(config.train_path, "training dataset");
    require_file(config.edits_path, "edit-record file");
    require_artifact(config.artifact("probe.ckpt"), "probe-train");
    ConflictProbe probe = ConflictProbe::load(config.artifact("probe.ckpt"));
    TinyModel base = build_base_model(config);
    std::vector<KnowledgePair> pairs = build_probe_pairs(load_edit_records(config.edits_path));
    std::vector<HiddenState> states;
    std::vector<int> labels;
    for (const auto& pair : pairs) {
        states.push_back(base.hidden_state_of(pair.aligned, -1, config.probe.pooling));
        labels.push_back(0);
        states.push_back(base.hidden_state_of(pair.conflicting, -1, config.probe.pooling));
        labels.push_back(1);
    }
    double acc = probe_accuracy(probe, states, labels);
    json rep = {{"pair_count", pairs.size()}, {"accuracy", acc}};
    std::ofstream out(config.artifact("probe_eval.json"));
    out << rep.dump(2) << "\n";
    std::cout << "probe accuracy on " << pairs.size() << " pairs: " << acc << "\n";
}

void run_project(const RunConfig& config) {
    WorkdirLock lock(config.workdir);
    require_file(config.train_path, "training dataset");
    require_file(config.edits_path, "edit-record file");
    TinyModel base = build_base_model(config);
    std::vector<KnowledgePair> pairs = build_probe_pairs(load_edit_records(config.edits_path));
    std::vector<HiddenState> states;
    std::vector<int> labels;
    std::vector<std::string> ids;
    for (size_t i = 0; i < pairs.size(); ++i) {
        states.push_back(base.hidden_state_of(pairs[i].aligned, -1, config.probe.pooling));
        labels.push_back(0);
        ids.push_back("pair" + std::to_string(i) + ".aligned");
        states.push_back(
            base.hidden_state_of(pairs[i].conflicting, -1, config.probe.pooling));
        labels.push_back(1);
        ids.push_back("pair" + std::to_string(i) + ".conflicting");
    }
    auto points = project_hidden_2d(states, labels, config.projection_method,
                                    config.stage_seed("project"));
    write_projection_tsv(config.artifact("projection.tsv"), points, ids);
}

void run_sweep_lambda(const RunConfig& config) {
    WorkdirLock lock(config.workdir);
    require_file(config.train_path, "training dataset");
    require_artifact(config.artifact("annotated.jsonl"), "annotate");
    require_file(config.test_path, "test dataset");
    std::vector<AnnotatedExample> train_examples =
        load_annotated_examples(config.artifact("annotated.jsonl"));
    std::vector<QAExample> test = load_qa_dataset(config.test_path, config.dataset_format);

    std::ofstream out(config.artifact("lambda_sweep.tsv"));
    if (!out) throw Error(ErrorKind::config, "cannot write lambda_sweep.tsv");
    out << "lambda\taccuracy\tattention_mass\n";
    out.precision(17);

    std::unique_ptr<ConflictProbe> probe;
    if (config.eval_pipeline == EvalPipeline::full_clear &&
        config.judge_kind == JudgeKind::probe) {
        require_artifact(config.artifact("probe.ckpt"), "probe-train");
        probe = std::make_unique<ConflictProbe>(
            ConflictProbe::load(config.artifact("probe.ckpt")));
    }

    for (double lambda : config.sweep_lambdas) {
        double em_sum = 0.0, mass_sum = 0.0;
        for (uint64_t seed : config.sweep_seeds) {
            TinyModel model = build_base_model(config);
            CaSftConfig train_cfg = config.train;
            train_cfg.lambda = lambda;
            train_cfg.seed = seed;
            if (config.sweep_learning_rate) train_cfg.learning_rate = *config.sweep_learning_rate;
            if (config.sweep_epochs) train_cfg.epochs = *config.sweep_epochs;
            CaSftReport report = train_ca_sft(model, train_examples, train_cfg);
            mass_sum += report.final_mass();

            EvalConfig eval_cfg = build_eval_config(config, probe.get(), &model);
            EvalResult result = evaluate(model, test, eval_cfg);
            em_sum += result.em;
        }
        double denom = static_cast<double>(config.sweep_seeds.size());
        out << json_double(lambda) << "\t" << json_double(em_sum / denom) << "\t"
            << json_double(mass_sum / denom) << "\n";
    }
}

void run_report(const RunConfig& config) {
    WorkdirLock lock(config.workdir);
    require_file(config.test_path, "test dataset");
    std::vector<QAExample> test = load_qa_dataset(config.test_path, config.dataset_format);
    std::unique_ptr<ModelAdapter> adapter = build_eval_adapter(config, test);

    DegradationSpec spec;
    spec.seed = config.stage_seed("degradation");
    spec.distractors_per_example = config.distractors_per_example;
    if (!config.distractors_path.empty()) {
        require_file(config.distractors_path, "distractor pool");
        spec.distractor_pool = load_lines(config.distractors_path);
    }
    if (!config.substitutions_path.empty()) {
        require_file(config.substitutions_path, "substitutions file");
        spec.substitutions = load_substitutions(config.substitutions_path);
    }

    std::unique_ptr<ConflictProbe> probe;
    if (config.eval_pipeline == EvalPipeline::full_clear &&
        config.judge_kind == JudgeKind::probe) {
        require_artifact(config.artifact("probe.ckpt"), "probe-train");
        probe = std::make_unique<ConflictProbe>(
            ConflictProbe::load(config.artifact("probe.ckpt")));
    }
    EvalConfig eval_cfg = build_eval_config(config, probe.get(), adapter.get());
    auto rows = degradation_study(*adapter, test, spec, eval_cfg);
    write_degradation_tsv(config.artifact("degradation.tsv"), rows);
    for (const auto& row : rows)
        std::cout << row.condition << "\tem=" << row.em << "\tf1=" << row.f1 << "\n";
}

}  // namespace clear
