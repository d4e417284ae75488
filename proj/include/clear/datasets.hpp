#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "clear/error.hpp"

namespace clear {

enum class SubsetTag { QA, MR, MC, other };

const char* subset_tag_name(SubsetTag tag);
SubsetTag subset_tag_from_string(const std::string& s);

struct QAExample {
    std::string id;
    std::string question;
    std::string context;
    std::vector<std::string> gold_answers;
    SubsetTag subset_tag = SubsetTag::other;
    // Raw subset string and unconsumed fields, kept so round-trips preserve
    // the source file.
    std::string subset_raw;
    std::string extra_json;  // serialized object of unknown fields, "" if none

    void validate(size_t record_index) const;
};

struct KnowledgePair {
    std::string aligned;      // K_a
    std::string conflicting;  // K_c
    std::string source_id;
};

struct EditRecord {
    std::string statement;
    std::string subject;
    std::string original_object;
    std::string edited_object;

    void validate(size_t record_index) const;
};

enum class DatasetFormat { confiqa_jsonl, squad_json };

DatasetFormat dataset_format_from_string(const std::string& s);

std::vector<QAExample> load_qa_dataset(const std::string& path, DatasetFormat format);
void save_qa_dataset(const std::string& path, const std::vector<QAExample>& examples);
std::string qa_example_to_json_line(const QAExample& ex);

std::vector<EditRecord> load_edit_records(const std::string& path);

// Deterministic per-subset split: exactly train_per_subset examples of every
// subset tag present go to train, the rest to test.
std::pair<std::vector<QAExample>, std::vector<QAExample>> split_confiqa(
    const std::vector<QAExample>& examples, size_t train_per_subset, uint64_t seed);

std::vector<KnowledgePair> build_probe_pairs(const std::vector<EditRecord>& records);

QAExample perturb_with_irrelevant(const QAExample& example,
                                  const std::vector<std::string>& distractor_pool,
                                  size_t n, uint64_t seed);

struct Substitution {
    std::string target;
    std::string replacement;
};

QAExample perturb_counterfactual(const QAExample& example, const Substitution& sub);

}  // namespace clear
