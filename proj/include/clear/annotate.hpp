#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "clear/decompose.hpp"
#include "clear/model_adapter.hpp"
#include "clear/probe.hpp"

namespace clear {

// Pruned context rebuilt with conflict markers, plus the derived token
// position set S. Markers are balanced, never nested; spans never overlap.
struct AnnotatedContext {
    std::string text;
    std::vector<KnowledgeItem> items;
    std::vector<std::pair<size_t, size_t>> conflict_spans;  // char offsets into text
    std::vector<size_t> token_positions;  // S, sorted; markers excluded
};

// Judges whether one knowledge item conflicts with parametric knowledge.
using ConflictJudge = std::function<bool(const KnowledgeItem&)>;

// Real path: probe over the adapter's final-layer hidden state of item text.
ConflictJudge probe_judge(const ConflictProbe& probe, const ModelAdapter& adapter,
                          Pooling pooling = Pooling::last_token);
ConflictJudge constant_judge(bool conflicting);
// Flags items whose text starts with the given marker prefix; used by tests
// and the offline smoke pipeline.
ConflictJudge prefix_judge(std::string prefix);

// Resolves every item's conflict_label, preserving order.
std::vector<KnowledgeItem> detect_conflicts(const std::vector<KnowledgeItem>& items,
                                            const ConflictJudge& judge);

// Joins items one per line in id order, wrapping conflicting ones in marker
// tokens; fills text, items, and conflict_spans (token_positions needs an
// adapter, see below).
AnnotatedContext annotate_context(const std::vector<KnowledgeItem>& items);

// Token indices (into the tokenization of prompt_prefix + " " + text) lying
// strictly between marker pairs; marker tokens themselves are excluded.
std::vector<size_t> conflict_token_positions(const AnnotatedContext& annotated,
                                             const ModelAdapter& adapter,
                                             const std::string& prompt_prefix);

// Prompt scaffold shared by annotation, training, and evaluation. S indices
// are relative to prefix + " " + annotated context.
std::string qa_prompt_prefix(const std::string& question);
std::string qa_answer_cue();  // appended after the context, before the answer

// One record of the annotated-example file consumed by the trainer.
struct AnnotatedExample {
    std::string question;
    std::string annotated_context;
    std::vector<std::string> gold_answers;
    std::vector<size_t> conflict_positions;  // S, sorted
};

std::vector<AnnotatedExample> load_annotated_examples(const std::string& path);
void save_annotated_examples(const std::string& path,
                             const std::vector<AnnotatedExample>& examples);

}  // namespace clear
