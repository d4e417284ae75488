#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clear/decompose.hpp"
#include "clear/error.hpp"

namespace clear {

struct EmbeddingVector {
    std::vector<double> values;

    size_t dim() const { return values.size(); }
    void validate() const;
};

enum class EncoderKind { service, deterministic_test };

struct EncoderSpec {
    EncoderKind kind = EncoderKind::deterministic_test;
    std::string endpoint;                      // required for service
    std::string model = "all-MiniLM-L6-v2";    // default sentence encoder
    size_t dim = 384;
    uint64_t seed = 0;        // deterministic_test only
    std::string cache_path;   // optional content-hash cache (jsonl)

    void validate() const;
};

struct PruneConfig {
    size_t k = 10;  // retain the top-10 most relevant items by default

    void validate() const;
};

// deterministic_test produces a seeded hash-derived vector, stable across
// runs and platforms; service calls the embedding endpoint (with optional
// cache).
EmbeddingVector embed_text(const std::string& text, const EncoderSpec& encoder);

std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts,
                                         const EncoderSpec& encoder);

// dot(a,b) / (|a| |b|), in [-1, 1].
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

// Maps raw cosine onto the [0,1] similarity stored on KnowledgeItem.
inline double similarity_score(double cosine) { return (1.0 + cosine) / 2.0; }

// Scores every item against the query, keeps the top-k sorted by descending
// similarity with ties broken by original item id.
std::vector<KnowledgeItem> prune_top_k(const std::vector<KnowledgeItem>& items,
                                       const std::string& query,
                                       const EncoderSpec& encoder,
                                       const PruneConfig& config);

}  // namespace clear
