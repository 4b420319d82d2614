#include "spikescore/rag.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include <json.hpp>

#include "spikescore/error.hpp"
#include "spikescore/jsonl.hpp"
#include "spikescore/rng.hpp"

namespace spikescore::rag {
namespace {

std::vector<std::string> words(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char ch : text) {
        if (std::isalnum(ch) || ch >= 0x80) {
            cur.push_back(static_cast<char>(std::tolower(ch)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

bool better(const Hit& a, const Hit& b) { return a.score > b.score || (a.score == b.score && a.doc_id < b.doc_id); }

}  // namespace

std::vector<std::vector<double>> embed_texts(std::span<const std::string> texts, const Embedder& embedder) {
    if (texts.empty()) fail(ErrorKind::InvalidArgument, "no texts to embed");
    auto vectors = embedder.embed(texts);
    if (vectors.size() != texts.size()) {
        throw BackendError(BackendError::Cause::MalformedResponse, "embedder returned " + std::to_string(vectors.size()) +
                                                                       " vectors for " + std::to_string(texts.size()) + " texts");
    }
    const std::size_t dim = vectors.front().size();
    if (dim == 0) throw BackendError(BackendError::Cause::MalformedResponse, "embedder returned empty vectors");
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        if (vectors[i].size() != dim) {
            throw BackendError(BackendError::Cause::MalformedResponse,
                               "vector " + std::to_string(i) + " has dimension " + std::to_string(vectors[i].size()) +
                                   ", expected " + std::to_string(dim));
        }
        for (double v : vectors[i]) {
            if (!std::isfinite(v)) throw BackendError(BackendError::Cause::MalformedResponse, "non-finite embedding value");
        }
    }
    return vectors;
}

HashingEmbedder::HashingEmbedder(std::size_t dimension, std::uint64_t seed) : dim_(dimension), seed_(seed) {
    if (dim_ < 2) fail(ErrorKind::InvalidArgument, "hashing embedder dimension must be at least 2");
}

std::string HashingEmbedder::id() const { return "hashing:" + std::to_string(dim_) + ":" + std::to_string(seed_); }

std::vector<std::vector<double>> HashingEmbedder::embed(std::span<const std::string> texts) const {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    const std::uint64_t basis = derive_key(0xcbf29ce484222325ULL, seed_);
    for (const auto& text : texts) {
        std::vector<double> v(dim_, 0.0);
        auto add = [&](std::string_view feature, double weight) {
            const std::uint64_t h = fnv1a64(feature, basis);
            v[h % dim_] += (h >> 63) ? -weight : weight;
        };
        const auto ws = words(text);
        for (std::size_t i = 0; i < ws.size(); ++i) {
            add(ws[i], 1.0);
            if (i + 1 < ws.size()) add(ws[i] + ' ' + ws[i + 1], 0.5);
        }
        // Texts without words still get a stable, non-zero vector.
        if (ws.empty()) add(std::string("\x01") + text, 1.0);
        if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) v[0] = 1.0;
        out.push_back(std::move(v));
    }
    return out;
}

HttpEmbedder::HttpEmbedder(HttpEndpoint endpoint, std::size_t batch_size, std::string model)
    : endpoint_(std::move(endpoint)), batch_size_(batch_size), model_(std::move(model)) {
    if (batch_size_ == 0) fail(ErrorKind::InvalidArgument, "embedding batch size must be positive");
}

std::vector<std::vector<double>> HttpEmbedder::embed(std::span<const std::string> texts) const {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (std::size_t start = 0, batch = 0; start < texts.size(); start += batch_size_, ++batch) {
        const auto chunk = texts.subspan(start, std::min(batch_size_, texts.size() - start));
        const std::string where = "embedding batch " + std::to_string(batch) + ": ";
        nlohmann::json response;
        try {
            response = post_json(endpoint_, {{"texts", std::vector<std::string>(chunk.begin(), chunk.end())}});
        } catch (const BackendError& e) {
            throw BackendError(e.cause(), where + e.what(), e.http_status());
        }
        const auto it = response.find("vectors");
        if (it == response.end() || !it->is_array() || it->size() != chunk.size()) {
            throw BackendError(BackendError::Cause::MalformedResponse, where + "expected 'vectors' with one row per text");
        }
        for (const auto& row : *it) {
            if (!row.is_array()) throw BackendError(BackendError::Cause::MalformedResponse, where + "vector row is not an array");
            std::vector<double> v;
            for (const auto& x : row) {
                if (!x.is_number()) throw BackendError(BackendError::Cause::MalformedResponse, where + "non-numeric vector entry");
                v.push_back(x.get<double>());
            }
            out.push_back(std::move(v));
        }
    }
    return out;
}

std::vector<double> unit_normalize(std::span<const double> v) {
    double ss = 0.0;
    for (double x : v) {
        if (!std::isfinite(x)) fail(ErrorKind::InvalidArgument, "embedding contains a non-finite value");
        ss += x * x;
    }
    if (!(ss > 0.0)) fail(ErrorKind::Degenerate, "cannot normalize a zero vector");
    const double norm = std::sqrt(ss);
    std::vector<double> out(v.begin(), v.end());
    for (auto& x : out) x /= norm;
    return out;
}

const CorpusDoc* RetrievalIndex::find(std::string_view doc_id) const {
    auto it = std::lower_bound(docs_.begin(), docs_.end(), doc_id,
                               [](const CorpusDoc& d, std::string_view id) { return d.doc_id < id; });
    return it != docs_.end() && it->doc_id == doc_id ? &*it : nullptr;
}

RetrievalIndex make_index(std::vector<CorpusDoc> docs, std::string embedder_id) {
    if (docs.empty()) fail(ErrorKind::InvalidArgument, "cannot build an index from zero documents");
    RetrievalIndex index;
    index.embedder_id_ = std::move(embedder_id);
    index.dim_ = docs.front().embedding.size();
    std::set<std::string_view> seen;
    for (auto& d : docs) {
        if (!seen.insert(d.doc_id).second) fail(ErrorKind::InvalidArgument, "duplicate doc_id '" + d.doc_id + "'");
        if (d.embedding.size() != index.dim_) {
            fail(ErrorKind::InvalidArgument, "doc '" + d.doc_id + "' has dimension " + std::to_string(d.embedding.size()) +
                                                 ", expected " + std::to_string(index.dim_));
        }
        d.embedding = unit_normalize(d.embedding);
    }
    std::sort(docs.begin(), docs.end(), [](const CorpusDoc& a, const CorpusDoc& b) { return a.doc_id < b.doc_id; });
    index.docs_ = std::move(docs);
    return index;
}

RetrievalIndex build_index(const std::vector<RawDoc>& docs, const Embedder& embedder) {
    std::set<std::string_view> seen;
    for (const auto& d : docs) {
        if (!seen.insert(d.doc_id).second) fail(ErrorKind::InvalidArgument, "duplicate doc_id '" + d.doc_id + "'");
    }
    std::vector<std::string> texts;
    texts.reserve(docs.size());
    for (const auto& d : docs) texts.push_back(d.text);
    auto vectors = embed_texts(texts, embedder);
    std::vector<CorpusDoc> out;
    out.reserve(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) out.push_back({docs[i].doc_id, docs[i].text, std::move(vectors[i])});
    return make_index(std::move(out), embedder.id());
}

std::vector<Hit> retrieve_top_k(const RetrievalIndex& index, std::span<const double> query_embedding, std::size_t k) {
    if (k > index.size()) {
        fail(ErrorKind::OutOfRange, "k = " + std::to_string(k) + " exceeds index size " + std::to_string(index.size()));
    }
    if (query_embedding.size() != index.dimension()) {
        fail(ErrorKind::InvalidArgument, "query dimension " + std::to_string(query_embedding.size()) +
                                             " does not match index dimension " + std::to_string(index.dimension()));
    }
    const auto q = unit_normalize(query_embedding);
    std::vector<Hit> hits;
    hits.reserve(index.size());
    for (const auto& d : index.documents()) {
        double dot = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) dot += q[i] * d.embedding[i];
        hits.push_back({d.doc_id, dot});
    }
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), better);
    hits.resize(k);
    return hits;
}

std::vector<Hit> retrieve_top_k(const RetrievalIndex& index, const std::string& query_text, const Embedder& embedder,
                                std::size_t k) {
    const auto v = embed_texts(std::span<const std::string>(&query_text, 1), embedder);
    return retrieve_top_k(index, v.front(), k);
}

std::string assemble_rag_prompt(std::string_view question, std::span<const std::string> contexts,
                                std::optional<std::size_t> char_cap) {
    std::string out;
    if (contexts.empty()) {
        out += kNoContextMarker;
        out += "\n\n";
    }
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        std::string_view ctx = contexts[i];
        if (char_cap && ctx.size() > *char_cap) {
            std::size_t cut = *char_cap;
            while (cut > 0 && (static_cast<unsigned char>(ctx[cut]) & 0xC0) == 0x80) --cut;
            ctx = ctx.substr(0, cut);
        }
        out += "Context [" + std::to_string(i + 1) + "]:\n";
        out += ctx;
        out += "\n\n";
    }
    out += "Question: ";
    out += question;
    return out;
}

void to_json(nlohmann::json& j, const RetrievalIndex& index) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& d : index.documents()) rows.push_back({{"doc_id", d.doc_id}, {"text", d.text}, {"embedding", d.embedding}});
    j = nlohmann::json{{"dimension", index.dimension()}, {"embedder_id", index.embedder_id()}, {"rows", std::move(rows)}};
}

void from_json(const nlohmann::json& j, RetrievalIndex& index) {
    std::vector<CorpusDoc> docs;
    for (const auto& row : j.at("rows")) {
        docs.push_back({row.at("doc_id").get<std::string>(), row.at("text").get<std::string>(),
                        row.at("embedding").get<std::vector<double>>()});
    }
    const auto dim = j.at("dimension").get<std::size_t>();
    index = make_index(std::move(docs), j.value("embedder_id", std::string()));
    if (index.dimension() != dim) fail(ErrorKind::Schema, "index rows do not match the declared dimension");
}

std::vector<RawDoc> load_corpus(const std::filesystem::path& path) {
    std::vector<RawDoc> docs;
    for (const auto& row : read_jsonl(path)) {
        const auto& v = row.value;
        const std::string where = path.string() + ":" + std::to_string(row.line) + ": ";
        if (!v.is_object() || !v.contains("doc_id") || !v.contains("text") || !v["doc_id"].is_string() ||
            !v["text"].is_string()) {
            fail(ErrorKind::Schema, where + "corpus rows need string fields doc_id and text");
        }
        docs.push_back({v["doc_id"].get<std::string>(), v["text"].get<std::string>()});
    }
    return docs;
}

}  // namespace spikescore::rag
