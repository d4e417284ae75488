#include "clear/prune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "clear/rng.hpp"
#include "clear/service_client.hpp"

namespace clear {

using nlohmann::json;

void EmbeddingVector::validate() const {
    if (values.empty())
        throw Error(ErrorKind::contract, "embedding vector has dim 0");
    for (double v : values)
        if (!std::isfinite(v))
            throw Error(ErrorKind::contract, "embedding vector has non-finite value");
}

void EncoderSpec::validate() const {
    if (dim == 0) throw Error(ErrorKind::config, "encoder dim must be >= 1");
    if (kind == EncoderKind::service && endpoint.empty())
        throw Error(ErrorKind::config, "service encoder requires an endpoint");
}

void PruneConfig::validate() const {
    if (k == 0) throw Error(ErrorKind::config, "prune k must be >= 1");
}

namespace {

EmbeddingVector deterministic_vector(const std::string& text, size_t dim, uint64_t seed) {
    // hash-derived, in [-1, 1]; no std distributions so it is bit-stable
    EmbeddingVector out;
    out.values.resize(dim);
    uint64_t state = fnv1a64(text) ^ (seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
    for (size_t i = 0; i < dim; ++i) {
        uint64_t bits = splitmix64(state);
        double u = static_cast<double>(bits >> 11) * 0x1.0p-53;  // [0,1)
        out.values[i] = 2.0 * u - 1.0;
    }
    return out;
}

// Optional on-disk cache: one {"h": "<fnv64 hex>", "v": [...]} object per line.
class EmbeddingCache {
  public:
    explicit EmbeddingCache(const std::string& path) : path_(path) {
        std::ifstream in(path_);
        if (!in) return;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                json obj = json::parse(line);
                entries_[obj.at("h").get<std::string>()] =
                    obj.at("v").get<std::vector<double>>();
            } catch (const json::exception&) {
                throw Error(ErrorKind::parse, "corrupt embedding cache: " + path_);
            }
        }
    }

    const std::vector<double>* find(const std::string& key) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? nullptr : &it->second;
    }

    void insert(const std::string& key, const std::vector<double>& v) {
        if (entries_.count(key)) return;
        entries_[key] = v;
        std::ofstream out(path_, std::ios::app);
        if (!out) return;  // cache is best-effort
        json obj = {{"h", key}, {"v", v}};
        out << obj.dump() << "\n";
    }

  private:
    std::string path_;
    std::map<std::string, std::vector<double>> entries_;
};

std::string cache_key(const std::string& model, const std::string& text) {
    std::ostringstream os;
    os << std::hex << fnv1a64(model + "\x1f" + text);
    return os.str();
}

}  // namespace

EmbeddingVector embed_text(const std::string& text, const EncoderSpec& encoder) {
    if (text.empty()) throw Error(ErrorKind::contract, "embed_text: empty text");
    auto vs = embed_batch({text}, encoder);
    return vs.front();
}

std::vector<EmbeddingVector> embed_batch(const std::vector<std::string>& texts,
                                         const EncoderSpec& encoder) {
    encoder.validate();
    for (const auto& t : texts)
        if (t.empty()) throw Error(ErrorKind::contract, "embed_batch: empty text");

    std::vector<EmbeddingVector> out(texts.size());
    if (encoder.kind == EncoderKind::deterministic_test) {
        for (size_t i = 0; i < texts.size(); ++i)
            out[i] = deterministic_vector(texts[i], encoder.dim, encoder.seed);
        return out;
    }

    std::unique_ptr<EmbeddingCache> cache;
    if (!encoder.cache_path.empty())
        cache = std::make_unique<EmbeddingCache>(encoder.cache_path);

    std::vector<size_t> missing;
    for (size_t i = 0; i < texts.size(); ++i) {
        if (cache) {
            if (const auto* v = cache->find(cache_key(encoder.model, texts[i]))) {
                out[i].values = *v;
                continue;
            }
        }
        missing.push_back(i);
    }
    if (!missing.empty()) {
        EmbeddingClient client(encoder.endpoint, encoder.model, encoder.dim);
        std::vector<std::string> to_fetch;
        to_fetch.reserve(missing.size());
        for (size_t i : missing) to_fetch.push_back(texts[i]);
        auto fetched = client.embed(to_fetch);
        for (size_t k = 0; k < missing.size(); ++k) {
            out[missing[k]].values = fetched[k];
            if (cache)
                cache->insert(cache_key(encoder.model, texts[missing[k]]), fetched[k]);
        }
    }
    for (auto& v : out) {
        v.validate();
        if (v.dim() != encoder.dim)
            throw Error(ErrorKind::contract,
                        "embedding dim " + std::to_string(v.dim()) +
                            " does not match configured dim " + std::to_string(encoder.dim));
    }
    return out;
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim())
        throw Error(ErrorKind::contract, "cosine_similarity: dim mismatch (" +
                                             std::to_string(a.dim()) + " vs " +
                                             std::to_string(b.dim()) + ")");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw Error(ErrorKind::contract, "cosine_similarity undefined for zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<KnowledgeItem> prune_top_k(const std::vector<KnowledgeItem>& items,
                                       const std::string& query,
                                       const EncoderSpec& encoder,
                                       const PruneConfig& config) {
    config.validate();
    if (items.empty()) throw Error(ErrorKind::contract, "prune_top_k: no items");

    // one query embedding per document
    EmbeddingVector q = embed_text(query, encoder);
    std::vector<std::string> texts;
    texts.reserve(items.size());
    for (const auto& it : items) texts.push_back(it.text);
    std::vector<EmbeddingVector> ks = embed_batch(texts, encoder);

    std::vector<KnowledgeItem> scored = items;
    for (size_t i = 0; i < scored.size(); ++i)
        scored[i].similarity = similarity_score(cosine_similarity(q, ks[i]));

    std::stable_sort(scored.begin(), scored.end(),
                     [](const KnowledgeItem& a, const KnowledgeItem& b) {
                         if (*a.similarity != *b.similarity)
                             return *a.similarity > *b.similarity;
                         return a.id < b.id;
                     });
    if (scored.size() > config.k) scored.resize(config.k);
    return scored;
}

}  // namespace clear
