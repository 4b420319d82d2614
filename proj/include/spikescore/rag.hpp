#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spikescore/http.hpp"

namespace spikescore::rag {

/// Text embedding contract. Implementations must be thread-safe.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::vector<std::vector<double>> embed(std::span<const std::string> texts) const = 0;
    [[nodiscard]] virtual std::string id() const = 0;
};

/// Checks the batch contract: non-empty input, one vector per text, one
/// shared length, finite entries.
std::vector<std::vector<double>> embed_texts(std::span<const std::string> texts, const Embedder& embedder);

/// Deterministic signed feature hashing of lowercased word unigrams and
/// bigrams. Meant for tests and desk-scale runs, not semantic quality.
class HashingEmbedder final : public Embedder {
public:
    explicit HashingEmbedder(std::size_t dimension = 256, std::uint64_t seed = 0);

    std::vector<std::vector<double>> embed(std::span<const std::string> texts) const override;
    [[nodiscard]] std::string id() const override;
    [[nodiscard]] std::size_t dimension() const noexcept { return dim_; }

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

/// Embedding service: POST {texts:[...]} -> {vectors:[[...], ...]}, in
/// batches. Errors name the failing batch.
class HttpEmbedder final : public Embedder {
public:
    explicit HttpEmbedder(HttpEndpoint endpoint, std::size_t batch_size = 64, std::string model = "remote");

    std::vector<std::vector<double>> embed(std::span<const std::string> texts) const override;
    [[nodiscard]] std::string id() const override { return "http:" + model_; }

private:
    HttpEndpoint endpoint_;
    std::size_t batch_size_;
    std::string model_;
};

struct CorpusDoc {
    std::string doc_id;
    std::string text;
    std::vector<double> embedding;  ///< unit norm

    bool operator==(const CorpusDoc&) const = default;
};

/// Immutable exact-search index. Documents are kept in ascending doc_id order.
class RetrievalIndex {
public:
    RetrievalIndex() = default;

    [[nodiscard]] std::size_t dimension() const noexcept { return dim_; }
    [[nodiscard]] std::size_t size() const noexcept { return docs_.size(); }
    [[nodiscard]] const std::vector<CorpusDoc>& documents() const noexcept { return docs_; }
    [[nodiscard]] const std::string& embedder_id() const noexcept { return embedder_id_; }
    [[nodiscard]] const CorpusDoc* find(std::string_view doc_id) const;

    bool operator==(const RetrievalIndex&) const = default;

private:
    friend RetrievalIndex make_index(std::vector<CorpusDoc> docs, std::string embedder_id);
    std::size_t dim_ = 0;
    std::vector<CorpusDoc> docs_;
    std::string embedder_id_;
};

/// Normalizes embeddings, checks ids and dimensions, sorts by doc_id.
RetrievalIndex make_index(std::vector<CorpusDoc> docs, std::string embedder_id);

struct RawDoc {
    std::string doc_id;
    std::string text;
};

RetrievalIndex build_index(const std::vector<RawDoc>& docs, const Embedder& embedder);

/// x / ||x||; throws on a zero or non-finite vector.
std::vector<double> unit_normalize(std::span<const double> v);

struct Hit {
    std::string doc_id;
    double score;  ///< cosine similarity

    bool operator==(const Hit&) const = default;
};

inline constexpr std::size_t kDefaultTopK = 4;

/// Exact top-k by cosine, descending, ties by ascending doc_id.
std::vector<Hit> retrieve_top_k(const RetrievalIndex& index, std::span<const double> query_embedding,
                                std::size_t k = kDefaultTopK);
std::vector<Hit> retrieve_top_k(const RetrievalIndex& index, const std::string& query_text, const Embedder& embedder,
                                std::size_t k = kDefaultTopK);

inline constexpr std::string_view kNoContextMarker = "[no retrieved context]";

/// Contexts in rank order, each labeled, then the question. `char_cap`
/// truncates each context to that many bytes (on a UTF-8 boundary).
std::string assemble_rag_prompt(std::string_view question, std::span<const std::string> contexts,
                                std::optional<std::size_t> char_cap = std::nullopt);

void to_json(nlohmann::json& j, const RetrievalIndex& index);
void from_json(const nlohmann::json& j, RetrievalIndex& index);

/// Corpus file: one {doc_id, text} object per line.
std::vector<RawDoc> load_corpus(const std::filesystem::path& path);

}  // namespace spikescore::rag
