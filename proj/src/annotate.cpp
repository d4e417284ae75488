#include "clear/annotate.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

namespace clear {

using nlohmann::json;

ConflictJudge probe_judge(const ConflictProbe& probe, const ModelAdapter& adapter,
                          Pooling pooling) {
    if (probe.input_dim() != adapter.model_dim())
        throw Error(ErrorKind::contract,
                    "probe input dim " + std::to_string(probe.input_dim()) +
                        " does not match adapter d_M " +
                        std::to_string(adapter.model_dim()));
    return [&probe, &adapter, pooling](const KnowledgeItem& item) {
        HiddenState h = adapter.hidden_state_of(item.text, -1, pooling);
        return probe_predict(probe, h).first == 1;
    };
}

ConflictJudge constant_judge(bool conflicting) {
    return [conflicting](const KnowledgeItem&) { return conflicting; };
}

ConflictJudge prefix_judge(std::string prefix) {
    return [prefix = std::move(prefix)](const KnowledgeItem& item) {
        return item.text.rfind(prefix, 0) == 0;
    };
}

std::vector<KnowledgeItem> detect_conflicts(const std::vector<KnowledgeItem>& items,
                                            const ConflictJudge& judge) {
    std::vector<KnowledgeItem> out = items;
    for (auto& item : out)
        item.conflict_label =
            judge(item) ? ConflictLabel::conflicting : ConflictLabel::aligned;
    return out;
}

AnnotatedContext annotate_context(const std::vector<KnowledgeItem>& items) {
    AnnotatedContext out;
    out.items = items;
    std::sort(out.items.begin(), out.items.end(),
              [](const KnowledgeItem& a, const KnowledgeItem& b) { return a.id < b.id; });
    for (size_t i = 0; i < out.items.size(); ++i) {
        const KnowledgeItem& item = out.items[i];
        if (item.conflict_label == ConflictLabel::unknown)
            throw Error(ErrorKind::contract,
                        "annotate_context: item " + std::to_string(item.id) +
                            " has no resolved conflict label");
        if (i) out.text += "\n";
        if (item.conflict_label == ConflictLabel::conflicting) {
            out.text += Tokenizer::kConflictOpenText;
            out.text += " ";
            size_t start = out.text.size();
            out.text += item.text;
            out.conflict_spans.emplace_back(start, out.text.size());
            out.text += " ";
            out.text += Tokenizer::kConflictCloseText;
        } else {
            out.text += item.text;
        }
    }
    return out;
}

std::string qa_prompt_prefix(const std::string& question) {
    return "question: " + question + " context:";
}

std::string qa_answer_cue() { return "answer:"; }

std::vector<size_t> conflict_token_positions(const AnnotatedContext& annotated,
                                             const ModelAdapter& adapter,
                                             const std::string& prompt_prefix) {
    const Tokenizer& tok = adapter.tokenizer();
    // markers must be atomic vocabulary entries
    for (const char* marker :
         {Tokenizer::kConflictOpenText, Tokenizer::kConflictCloseText}) {
        std::vector<int> ids = tok.encode(marker);
        if (ids.size() != 1 || ids[0] == Tokenizer::kUnk)
            throw Error(ErrorKind::contract,
                        std::string("marker token '") + marker +
                            "' is not an atomic vocabulary entry");
    }

    std::string full =
        prompt_prefix.empty() ? annotated.text : prompt_prefix + " " + annotated.text;
    std::vector<int> ids = tok.encode(full);
    if (ids.size() > adapter.max_seq_len())
        throw Error(ErrorKind::contract,
                    "annotated input tokenizes to " + std::to_string(ids.size()) +
                        " tokens, exceeding max_seq_len " +
                        std::to_string(adapter.max_seq_len()));

    std::vector<size_t> positions;
    int depth = 0;
    for (size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] == Tokenizer::kConflictOpen) {
            if (depth != 0)
                throw Error(ErrorKind::contract, "nested conflict markers");
            depth = 1;
        } else if (ids[t] == Tokenizer::kConflictClose) {
            if (depth != 1)
                throw Error(ErrorKind::contract, "unbalanced conflict markers");
            depth = 0;
        } else if (depth == 1) {
            positions.push_back(t);
        }
    }
    if (depth != 0) throw Error(ErrorKind::contract, "unterminated conflict marker");
    return positions;
}

std::vector<AnnotatedExample> load_annotated_examples(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::config, "cannot open annotated examples: " + path);
    std::vector<AnnotatedExample> out;
    std::string line;
    size_t record = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++record;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(ErrorKind::parse, "annotated record " + std::to_string(record) +
                                              ": invalid JSON: " + e.what());
        }
        AnnotatedExample ex;
        ex.question = obj.value("question", "");
        ex.annotated_context = obj.value("annotated_context", "");
        if (obj.contains("gold_answers"))
            ex.gold_answers = obj["gold_answers"].get<std::vector<std::string>>();
        if (obj.contains("S")) ex.conflict_positions = obj["S"].get<std::vector<size_t>>();
        if (ex.question.empty() || ex.annotated_context.empty() || ex.gold_answers.empty())
            throw Error(ErrorKind::parse, "annotated record " + std::to_string(record) +
                                              ": missing required fields");
        std::sort(ex.conflict_positions.begin(), ex.conflict_positions.end());
        out.push_back(std::move(ex));
    }
    return out;
}

void save_annotated_examples(const std::string& path,
                             const std::vector<AnnotatedExample>& examples) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::config, "cannot write annotated examples: " + path);
    for (const auto& ex : examples) {
        json obj = {{"question", ex.question},
                    {"annotated_context", ex.annotated_context},
                    {"gold_answers", ex.gold_answers},
                    {"S", ex.conflict_positions}};
        out << obj.dump() << "\n";
    }
}

}  // namespace clear
