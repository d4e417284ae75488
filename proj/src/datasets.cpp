#include "clear/datasets.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "clear/rng.hpp"

namespace clear {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    if (from.empty()) return s;
    size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

}  // namespace

const char* subset_tag_name(SubsetTag tag) {
    switch (tag) {
        case SubsetTag::QA: return "QA";
        case SubsetTag::MR: return "MR";
        case SubsetTag::MC: return "MC";
        case SubsetTag::other: return "other";
    }
    return "other";
}

SubsetTag subset_tag_from_string(const std::string& s) {
    if (s == "QA") return SubsetTag::QA;
    if (s == "MR") return SubsetTag::MR;
    if (s == "MC") return SubsetTag::MC;
    return SubsetTag::other;
}

void QAExample::validate(size_t record_index) const {
    auto fail = [&](const std::string& what) {
        throw Error(ErrorKind::parse,
                    "record " + std::to_string(record_index) + ": " + what);
    };
    if (gold_answers.empty()) fail("missing or empty 'answers'");
    for (const auto& a : gold_answers) {
        if (trim(a).empty()) fail("blank gold answer");
    }
    if (trim(question).empty()) fail("empty 'question'");
    if (trim(context).empty()) fail("empty 'context'");
}

void EditRecord::validate(size_t record_index) const {
    auto fail = [&](const std::string& what) {
        throw Error(ErrorKind::parse,
                    "edit record " + std::to_string(record_index) + ": " + what);
    };
    if (trim(statement).empty()) fail("empty 'statement'");
    if (original_object.empty() || edited_object.empty()) fail("empty object field");
    if (original_object == edited_object) fail("original_object equals edited_object");
    if (statement.find(original_object) == std::string::npos)
        fail("statement does not contain original_object");
}

DatasetFormat dataset_format_from_string(const std::string& s) {
    if (s == "confiqa_jsonl") return DatasetFormat::confiqa_jsonl;
    if (s == "squad_json") return DatasetFormat::squad_json;
    throw Error(ErrorKind::config, "unknown dataset format '" + s + "'");
}

namespace {

QAExample parse_confiqa_record(const json& obj, size_t record_index) {
    QAExample ex;
    json extra = json::object();
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        const std::string& key = it.key();
        if (key == "id") {
            ex.id = it.value().is_string() ? it.value().get<std::string>()
                                           : it.value().dump();
        } else if (key == "question") {
            if (!it.value().is_string())
                throw Error(ErrorKind::parse, "record " + std::to_string(record_index) +
                                                  ": 'question' is not a string");
            ex.question = it.value().get<std::string>();
        } else if (key == "context") {
            if (!it.value().is_string())
                throw Error(ErrorKind::parse, "record " + std::to_string(record_index) +
                                                  ": 'context' is not a string");
            ex.context = it.value().get<std::string>();
        } else if (key == "answers") {
            if (!it.value().is_array())
                throw Error(ErrorKind::parse, "record " + std::to_string(record_index) +
                                                  ": 'answers' is not an array");
            for (const auto& a : it.value()) {
                if (!a.is_string())
                    throw Error(ErrorKind::parse, "record " + std::to_string(record_index) +
                                                      ": answer entry is not a string");
                ex.gold_answers.push_back(a.get<std::string>());
            }
        } else if (key == "subset") {
            ex.subset_raw = it.value().is_string() ? it.value().get<std::string>()
                                                   : it.value().dump();
        } else {
            extra[key] = it.value();
        }
    }
    ex.subset_tag = subset_tag_from_string(ex.subset_raw);
    if (!extra.empty()) ex.extra_json = extra.dump();
    ex.validate(record_index);
    return ex;
}

std::vector<QAExample> load_confiqa_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::config, "cannot open dataset file: " + path);
    std::vector<QAExample> out;
    std::string line;
    size_t record_index = 0;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        ++record_index;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(ErrorKind::parse, "line " + std::to_string(line_no) +
                                              ": invalid JSON: " + e.what());
        }
        if (!obj.is_object())
            throw Error(ErrorKind::parse,
                        "line " + std::to_string(line_no) + ": record is not an object");
        out.push_back(parse_confiqa_record(obj, record_index));
    }
    return out;
}

std::vector<QAExample> load_squad_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::config, "cannot open dataset file: " + path);
    json root;
    try {
        in >> root;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::parse, std::string("invalid SQuAD JSON: ") + e.what());
    }
    if (!root.contains("data") || !root["data"].is_array())
        throw Error(ErrorKind::parse, "SQuAD JSON: missing top-level 'data' array");
    std::vector<QAExample> out;
    size_t record_index = 0;
    size_t fallback_id = 0;
    for (const auto& article : root["data"]) {
        if (!article.contains("paragraphs")) continue;
        for (const auto& para : article["paragraphs"]) {
            std::string context = para.value("context", "");
            if (!para.contains("qas")) continue;
            for (const auto& qa : para["qas"]) {
                ++record_index;
                QAExample ex;
                ex.context = context;
                ex.question = qa.value("question", "");
                ex.id = qa.contains("id")
                            ? (qa["id"].is_string() ? qa["id"].get<std::string>()
                                                    : qa["id"].dump())
                            : "squad-" + std::to_string(fallback_id++);
                if (qa.contains("answers") && qa["answers"].is_array()) {
                    for (const auto& ans : qa["answers"]) {
                        if (ans.contains("text") && ans["text"].is_string())
                            ex.gold_answers.push_back(ans["text"].get<std::string>());
                    }
                }
                ex.subset_raw = "other";
                ex.subset_tag = SubsetTag::other;
                ex.validate(record_index);
                out.push_back(std::move(ex));
            }
        }
    }
    return out;
}

}  // namespace

std::vector<QAExample> load_qa_dataset(const std::string& path, DatasetFormat format) {
    switch (format) {
        case DatasetFormat::confiqa_jsonl: return load_confiqa_jsonl(path);
        case DatasetFormat::squad_json: return load_squad_json(path);
    }
    throw Error(ErrorKind::config, "unknown dataset format");
}

std::string qa_example_to_json_line(const QAExample& ex) {
    json obj = json::object();
    obj["id"] = ex.id;
    obj["question"] = ex.question;
    obj["context"] = ex.context;
    obj["answers"] = ex.gold_answers;
    obj["subset"] = ex.subset_raw.empty() ? subset_tag_name(ex.subset_tag) : ex.subset_raw;
    if (!ex.extra_json.empty()) {
        json extra = json::parse(ex.extra_json);
        for (auto it = extra.begin(); it != extra.end(); ++it) obj[it.key()] = it.value();
    }
    return obj.dump();
}

void save_qa_dataset(const std::string& path, const std::vector<QAExample>& examples) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::config, "cannot write dataset file: " + path);
    for (const auto& ex : examples) out << qa_example_to_json_line(ex) << "\n";
}

std::vector<EditRecord> load_edit_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::config, "cannot open edit-record file: " + path);
    std::vector<EditRecord> out;
    std::string line;
    size_t record_index = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++record_index;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(ErrorKind::parse, "edit record " + std::to_string(record_index) +
                                              ": invalid JSON: " + e.what());
        }
        EditRecord rec;
        rec.statement = obj.value("statement", "");
        rec.subject = obj.value("subject", "");
        rec.original_object = obj.value("original_object", "");
        rec.edited_object = obj.value("edited_object", "");
        rec.validate(record_index);
        out.push_back(std::move(rec));
    }
    return out;
}

std::pair<std::vector<QAExample>, std::vector<QAExample>> split_confiqa(
    const std::vector<QAExample>& examples, size_t train_per_subset, uint64_t seed) {
    // Group input indices per subset tag, shuffle each group with its own
    // stream, then mark train members. Output order follows the input.
    std::map<SubsetTag, std::vector<size_t>> groups;
    for (size_t i = 0; i < examples.size(); ++i)
        groups[examples[i].subset_tag].push_back(i);

    std::vector<bool> in_train(examples.size(), false);
    for (auto& [tag, idx] : groups) {
        if (idx.size() < train_per_subset)
            throw Error(ErrorKind::capacity,
                        std::string("subset '") + subset_tag_name(tag) + "' has " +
                            std::to_string(idx.size()) + " examples, need " +
                            std::to_string(train_per_subset));
        Rng rng = Rng(seed).fork(subset_tag_name(tag));
        rng.shuffle(idx);
        for (size_t k = 0; k < train_per_subset; ++k) in_train[idx[k]] = true;
    }

    std::vector<QAExample> train, test;
    for (size_t i = 0; i < examples.size(); ++i)
        (in_train[i] ? train : test).push_back(examples[i]);
    return {std::move(train), std::move(test)};
}

std::vector<KnowledgePair> build_probe_pairs(const std::vector<EditRecord>& records) {
    std::vector<KnowledgePair> out;
    out.reserve(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        const EditRecord& rec = records[i];
        size_t pos = rec.statement.find(rec.original_object);
        if (pos == std::string::npos)
            throw Error(ErrorKind::contract,
                        "edit record " + std::to_string(i + 1) +
                            ": original_object not found in statement");
        KnowledgePair pair;
        pair.aligned = rec.statement;
        pair.conflicting = rec.statement;
        pair.conflicting.replace(pos, rec.original_object.size(), rec.edited_object);
        pair.source_id = rec.subject;
        out.push_back(std::move(pair));
    }
    return out;
}

QAExample perturb_with_irrelevant(const QAExample& example,
                                  const std::vector<std::string>& distractor_pool,
                                  size_t n, uint64_t seed) {
    if (n > distractor_pool.size())
        throw Error(ErrorKind::capacity,
                    "requested " + std::to_string(n) + " distractors, pool has " +
                        std::to_string(distractor_pool.size()));
    if (n == 0) return example;

    Rng rng(seed);
    // sample n distinct pool indices
    std::vector<size_t> pool_idx(distractor_pool.size());
    for (size_t i = 0; i < pool_idx.size(); ++i) pool_idx[i] = i;
    rng.shuffle(pool_idx);
    pool_idx.resize(n);

    // split the context into passages on blank lines
    std::vector<std::string> passages;
    {
        std::string cur;
        std::istringstream ss(example.context);
        std::string line;
        while (std::getline(ss, line)) {
            if (trim(line).empty()) {
                if (!cur.empty()) passages.push_back(cur);
                cur.clear();
            } else {
                if (!cur.empty()) cur += "\n";
                cur += line;
            }
        }
        if (!cur.empty()) passages.push_back(cur);
    }
    if (passages.empty()) passages.push_back(example.context);

    for (size_t k = 0; k < n; ++k) {
        size_t at = static_cast<size_t>(rng.next_below(passages.size() + 1));
        passages.insert(passages.begin() + static_cast<std::ptrdiff_t>(at),
                        distractor_pool[pool_idx[k]]);
    }

    QAExample out = example;
    std::string joined;
    for (size_t i = 0; i < passages.size(); ++i) {
        if (i) joined += "\n\n";
        joined += passages[i];
    }
    out.context = joined;
    return out;
}

QAExample perturb_counterfactual(const QAExample& example, const Substitution& sub) {
    if (example.context.find(sub.target) == std::string::npos)
        throw Error(ErrorKind::contract,
                    "counterfactual target '" + sub.target + "' not found in context of '" +
                        example.id + "'");
    QAExample out = example;
    out.context = replace_all(out.context, sub.target, sub.replacement);
    // keep gold answers faithful to the edited context
    for (auto& g : out.gold_answers) g = replace_all(g, sub.target, sub.replacement);
    return out;
}

}  // namespace clear
