#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "oracles.hpp"
#include "spikescore/error.hpp"
#include "spikescore/jsonl.hpp"
#include "spikescore/rag.hpp"

using namespace spikescore;
using namespace spikescore::rag;
using nlohmann::json;

namespace {

RetrievalIndex random_index(std::mt19937_64& gen, std::size_t n, std::size_t dim, std::vector<std::string>& ids,
                            std::vector<std::vector<double>>& raw) {
    std::normal_distribution<double> g(0, 1);
    std::vector<CorpusDoc> docs;
    ids.clear();
    raw.clear();
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> v(dim);
        for (auto& x : v) x = g(gen);
        ids.push_back("doc-" + std::to_string(i));
        raw.push_back(v);
        docs.push_back({ids.back(), "text " + std::to_string(i), v});
    }
    return make_index(std::move(docs), "random");
}

class FixedEmbedder final : public Embedder {
public:
    explicit FixedEmbedder(std::vector<std::vector<double>> out) : out_(std::move(out)) {}
    std::vector<std::vector<double>> embed(std::span<const std::string>) const override { return out_; }
    std::string id() const override { return "fixed"; }

private:
    std::vector<std::vector<double>> out_;
};

}  // namespace

TEST(Embed, HashingDeterministicAndShaped) {
    HashingEmbedder e(64, 3);
    const std::vector<std::string> texts{"Paris is the capital of France", "Paris is the capital of France", "unrelated words here"};
    const auto v = embed_texts(texts, e);
    ASSERT_EQ(v.size(), 3u);
    for (const auto& x : v) EXPECT_EQ(x.size(), 64u);
    EXPECT_EQ(v[0], v[1]);
    EXPECT_NE(v[0], v[2]);
    EXPECT_EQ(HashingEmbedder(64, 3).embed(texts), v);
}

TEST(Embed, ContractViolations) {
    HashingEmbedder e(8);
    EXPECT_THROW(embed_texts(std::vector<std::string>{}, e), Error);
    const std::vector<std::string> two{"a", "b"};
    EXPECT_THROW(embed_texts(two, FixedEmbedder({{1, 0}})), Error);
    EXPECT_THROW(embed_texts(two, FixedEmbedder({{1, 0}, {1, 0, 0}})), Error);
    EXPECT_THROW(embed_texts(two, FixedEmbedder({{1, 0}, {NAN, 0}})), Error);
}

TEST(Index, BuildAndDuplicate) {
    HashingEmbedder e(32);
    const std::vector<RawDoc> docs{{"b", "beta text"}, {"a", "alpha text"}, {"c", "gamma text"}};
    const auto idx = build_index(docs, e);
    EXPECT_EQ(idx.size(), 3u);
    EXPECT_EQ(idx.dimension(), 32u);
    EXPECT_EQ(idx.documents().front().doc_id, "a");
    for (const auto& d : idx.documents()) {
        double n = 0.0;
        for (double x : d.embedding) n += x * x;
        EXPECT_NEAR(std::sqrt(n), 1.0, 1e-9);
    }
    EXPECT_EQ(build_index(docs, e), idx);
    try {
        build_index({{"x", "one"}, {"x", "two"}}, e);
        FAIL();
    } catch (const Error& err) {
        EXPECT_NE(std::string(err.what()).find("'x'"), std::string::npos);
    }
}

TEST(Retrieve, HandVectors) {
    const auto idx = make_index({{"d1", "", {1, 0}}, {"d2", "", {0, 1}}, {"d3", "", {0.6, 0.8}}}, "hand");
    const auto hits = retrieve_top_k(idx, std::vector<double>{1, 0}, 2);
    ASSERT_EQ(hits.size(), 2u);
    EXPECT_EQ(hits[0].doc_id, "d1");
    EXPECT_NEAR(hits[0].score, 1.0, 1e-15);
    EXPECT_EQ(hits[1].doc_id, "d3");
    EXPECT_NEAR(hits[1].score, 0.6, 1e-15);
}

TEST(Retrieve, TiesByAscendingId) {
    const auto idx = make_index({{"z", "", {1, 0}}, {"m", "", {2, 0}}, {"a", "", {0, 1}}}, "hand");
    const auto hits = retrieve_top_k(idx, std::vector<double>{1, 0}, 3);
    EXPECT_EQ(hits[0].doc_id, "m");
    EXPECT_EQ(hits[1].doc_id, "z");
    EXPECT_EQ(hits[2].doc_id, "a");
}

TEST(Retrieve, KTooLarge) {
    const auto idx = make_index({{"a", "", {1, 0}}}, "hand");
    EXPECT_THROW(retrieve_top_k(idx, std::vector<double>{1, 0}, 2), Error);
}

TEST(Retrieve, SelfQueryRanksFirst) {
    HashingEmbedder e(128, 1);
    std::vector<RawDoc> docs;
    for (int i = 0; i < 50; ++i) docs.push_back({"d" + std::to_string(i), "passage number " + std::to_string(i) + " about topic " + std::to_string(i * 7 % 13)});
    const auto idx = build_index(docs, e);
    for (const auto& d : docs) {
        const auto hits = retrieve_top_k(idx, d.text, e, 4);
        ASSERT_EQ(hits.size(), 4u);
        EXPECT_EQ(hits[0].doc_id, d.doc_id);
        EXPECT_NEAR(hits[0].score, 1.0, 1e-12);
    }
}

TEST(Retrieve, MatchesExhaustiveOracle) {
    std::mt19937_64 gen(21);
    std::normal_distribution<double> g(0, 1);
    std::vector<std::string> ids;
    std::vector<std::vector<double>> raw;
    for (int corpus = 0; corpus < 10; ++corpus) {
        const auto idx = random_index(gen, 100, 16, ids, raw);
        std::vector<double> q(16);
        for (auto& x : q) x = g(gen);
        const auto hits = retrieve_top_k(idx, q, 100);
        const auto want = oracle::cosine_rank(ids, raw, q);
        ASSERT_EQ(hits.size(), want.size());
        for (std::size_t i = 0; i < hits.size(); ++i) {
            EXPECT_EQ(hits[i].doc_id, want[i].id);
            EXPECT_NEAR(hits[i].score, want[i].score, 1e-12);
        }
    }
}

TEST(Retrieve, ScaleInvariant) {
    std::mt19937_64 gen(22);
    std::vector<std::string> ids;
    std::vector<std::vector<double>> raw;
    const auto idx = random_index(gen, 60, 8, ids, raw);
    std::vector<CorpusDoc> scaled;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto v = raw[i];
        for (auto& x : v) x *= 1.0 + 10.0 * static_cast<double>(i);
        scaled.push_back({ids[i], "", v});
    }
    const auto idx2 = make_index(std::move(scaled), "scaled");
    const std::vector<double> q{1, -1, 0.5, 0, 2, 0, 0, 1};
    const auto a = retrieve_top_k(idx, q, 60), b = retrieve_top_k(idx2, q, 60);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].doc_id, b[i].doc_id);
        EXPECT_NEAR(a[i].score, b[i].score, 1e-12);
    }
    // total order consistent with pairwise comparison
    for (std::size_t i = 1; i < a.size(); ++i) EXPECT_GE(a[i - 1].score, a[i].score);
}

TEST(Prompt, Assembly) {
    const std::vector<std::string> ctx{"first", "second", "third", "fourth"};
    const auto p = assemble_rag_prompt("What?", ctx);
    std::size_t last = 0;
    for (const auto& c : ctx) {
        const auto at = p.find(c);
        ASSERT_NE(at, std::string::npos);
        EXPECT_GT(at, last);
        last = at;
    }
    EXPECT_GT(p.find("What?"), last);
    EXPECT_EQ(p, assemble_rag_prompt("What?", ctx));

    const auto none = assemble_rag_prompt("What?", std::vector<std::string>{});
    EXPECT_NE(none.find(kNoContextMarker), std::string::npos);
    EXPECT_NE(none.find("What?"), std::string::npos);

    // the cap never splits a multi-byte character
    const std::vector<std::string> utf{"\xC3\xA9\xC3\xA9\xC3\xA9"};
    const auto capped = assemble_rag_prompt("q", utf, 3);
    EXPECT_NE(capped.find("\xC3\xA9"), std::string::npos);
    EXPECT_EQ(capped.find("\xC3\xA9\xC3\xA9"), std::string::npos);
}

TEST(Index, JsonRoundTripAndCorpusFile) {
    testutil::TempDir dir;
    write_jsonl(dir / "corpus.jsonl", {json{{"doc_id", "a"}, {"text", "alpha"}}, json{{"doc_id", "b"}, {"text", "beta"}}});
    const auto docs = load_corpus(dir / "corpus.jsonl");
    ASSERT_EQ(docs.size(), 2u);
    HashingEmbedder e(16);
    const auto idx = build_index(docs, e);
    const json j = idx;
    EXPECT_EQ(j["dimension"], 16);
    const auto back = json::parse(j.dump()).get<RetrievalIndex>();
    EXPECT_EQ(back, idx);
}

TEST(HttpEmbed, BatchesAndErrors) {
    httplib::Server server;
    int batches = 0;
    server.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
        ++batches;
        const auto body = json::parse(req.body);
        json vectors = json::array();
        for (const auto& t : body.at("texts")) vectors.push_back({static_cast<double>(t.get<std::string>().size()), 1.0});
        res.set_content(json{{"vectors", vectors}}.dump(), "application/json");
    });
    server.Post("/short", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"vectors":[[1,2]]})", "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    const std::string base = "http://127.0.0.1:" + std::to_string(port);

    std::vector<std::string> texts;
    for (int i = 0; i < 5; ++i) texts.push_back(std::string(static_cast<std::size_t>(i + 1), 'x'));
    HttpEmbedder ok({base + "/embed", "", std::chrono::milliseconds(2000)}, 2);
    const auto v = embed_texts(texts, ok);
    EXPECT_EQ(batches, 3);
    ASSERT_EQ(v.size(), 5u);
    EXPECT_EQ(v[4][0], 5.0);

    HttpEmbedder bad({base + "/short", "", std::chrono::milliseconds(2000)}, 4);
    try {
        bad.embed(texts);
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_NE(std::string(e.what()).find("embedding batch"), std::string::npos);
    }
    server.stop();
    th.join();
}
