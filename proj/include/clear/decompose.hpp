#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "clear/error.hpp"

namespace clear {

enum class ConflictLabel { unknown, aligned, conflicting };

const char* conflict_label_name(ConflictLabel label);
ConflictLabel conflict_label_from_string(const std::string& s);

// One atomic sentence-level statement (K_i). similarity, when set, stores the
// [0,1]-mapped score (1+cos)/2; ranking elsewhere uses the same scale.
struct KnowledgeItem {
    size_t id = 0;  // index within the document, contiguous from 0
    std::string text;
    // char offsets of the source sentence this item came from; items produced
    // by coordination splits share their sentence's span. Absent for
    // service-rewritten items.
    std::optional<std::pair<size_t, size_t>> source_span;
    std::optional<double> similarity;
    ConflictLabel conflict_label = ConflictLabel::unknown;
};

enum class DecomposerKind { rule_based, llm_service };

struct DecomposerSpec {
    DecomposerKind kind = DecomposerKind::rule_based;
    std::string endpoint;  // required for llm_service
    std::string model;     // service model name; §config, not a constant
    size_t max_items = 50;
    std::string prompt_template_path;  // empty -> bundled resource

    void validate() const;
};

// Sentence segmentation plus coordination splitting; offline fallback for the
// service decomposer. Worst case returns whole sentences as items.
std::vector<KnowledgeItem> rule_decompose(const std::string& document);

std::vector<KnowledgeItem> decompose_context(const std::string& document,
                                             const DecomposerSpec& spec);

// Loads the prompt template (single {context} placeholder) and interpolates
// the document exactly once.
std::string render_decomposition_prompt(const std::string& document,
                                        const std::string& template_path = "");

// Parses a chat-completion response into item texts. Accepts "1." / "-" /
// one-per-line list formats.
std::vector<std::string> parse_decomposition_reply(const std::string& reply);

// Lowercased alphanumeric tokens not in the bundled 50-word stopword list.
// Used by the information-coverage invariant.
std::vector<std::string> content_words(const std::string& text);

const std::vector<std::string>& stopword_list();

std::string default_resource_path(const std::string& filename);

}  // namespace clear
