#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <map>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "spikescore/chat.hpp"
#include "spikescore/dialogue.hpp"
#include "spikescore/error.hpp"
#include "spikescore/http.hpp"
#include "spikescore/prompts.hpp"
#include "spikescore/simulator.hpp"
#include "spikescore/trajectory.hpp"

using namespace spikescore;
using nlohmann::json;

namespace {

InductionRequest sim_request(const std::string& id, Regime regime) {
    InductionRequest r;
    r.item_id = id;
    r.domain_id = "sim-00";
    r.question = "What is 6 times 7?";
    r.initial_answer = "The value is 42.";
    r.label = regime == Regime::Hallucinated ? 1 : 0;
    r.regime = regime;
    return r;
}

InductionOptions fast_options(int k = 20) {
    InductionOptions o;
    o.decoding.turn_budget = k;
    o.sleep = [](std::chrono::milliseconds) {};
    return o;
}

std::vector<double> latents_of(const DialogueTranscript& t) {
    std::vector<double> s{*t.initial_latent};
    for (const auto& turn : t.turns) s.push_back(*turn.latent);
    return s;
}

// Backend scripted per call: fails `failures` times, then answers.
class ScriptedBackend final : public ChatBackend {
public:
    explicit ScriptedBackend(std::function<ChatReply(int call, std::span<const ChatMessage>)> fn) : fn_(std::move(fn)) {}
    ChatReply complete(std::span<const ChatMessage> messages, const DecodingConfig&, const ChatSession&) const override {
        validate_messages(messages);
        seen.emplace_back(messages.begin(), messages.end());
        return fn_(calls++, messages);
    }
    std::string id() const override { return "scripted"; }

    mutable std::atomic<int> calls{0};
    mutable std::vector<std::vector<ChatMessage>> seen;

private:
    std::function<ChatReply(int, std::span<const ChatMessage>)> fn_;
};

// Loopback HTTP server on an ephemeral port.
class LocalServer {
public:
    LocalServer() {
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~LocalServer() {
        server_.stop();
        thread_.join();
    }
    httplib::Server& server() { return server_; }
    std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

}  // namespace

// ---- prompt library -------------------------------------------------------

TEST(PromptLibrary, FortyDistinctCards) {
    const auto lib = prompt_library();
    ASSERT_EQ(lib.size(), 40u);
    std::set<std::pair<int, int>> cells;
    std::set<std::string_view> texts;
    for (const auto& c : lib) {
        cells.emplace(static_cast<int>(c.type), c.strength);
        texts.insert(c.text);
        EXPECT_FALSE(c.text.empty());
        EXPECT_GE(c.strength, 1);
        EXPECT_LE(c.strength, 5);
    }
    EXPECT_EQ(cells.size(), 40u);
    EXPECT_EQ(texts.size(), 40u);
}

TEST(PromptLibrary, KnownCards) {
    EXPECT_EQ(prompt_card(PromptType::Encouraging, 1).text, "Great! Continue.");
    EXPECT_EQ(prompt_card(PromptType::Reflective, 1).text, "Reflect on what you have said so far.");
    EXPECT_THROW(prompt_card(PromptType::Critical, 6), Error);
    EXPECT_THROW(prompt_card(PromptType::Critical, 0), Error);
}

TEST(PromptLibrary, TypeNamesRoundTrip) {
    for (std::size_t i = 0; i < kPromptTypeCount; ++i) {
        const auto t = static_cast<PromptType>(i);
        EXPECT_EQ(parse_prompt_type(prompt_type_name(t)), t);
    }
    EXPECT_FALSE(parse_prompt_type("Sarcastic").has_value());
}

// ---- schedule --------------------------------------------------------------

TEST(Schedule, Endpoints) {
    for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
        EXPECT_EQ(schedule_prompt(2, 20, seed).strength, 1);
        EXPECT_EQ(schedule_prompt(20, 20, seed).strength, 5);
    }
    EXPECT_EQ(schedule_prompt(2, 2, 5).strength, 1);
}

TEST(Schedule, NondecreasingAnchoredForEveryK) {
    for (int K = 2; K <= 60; ++K) {
        int prev = 0;
        for (int k = 2; k <= K; ++k) {
            const int s = scheduled_strength(k, K);
            EXPECT_GE(s, prev) << "K=" << K << " k=" << k;
            EXPECT_GE(s, 1);
            EXPECT_LE(s, 5);
            prev = s;
        }
        EXPECT_EQ(scheduled_strength(2, K), 1) << K;
        if (K >= 3) EXPECT_EQ(scheduled_strength(K, K), 5) << K;
    }
}

TEST(Schedule, EveryStrengthReachedWhenEnoughTurns) {
    for (int K = 6; K <= 40; ++K) {
        std::set<int> seen;
        for (int k = 2; k <= K; ++k) seen.insert(scheduled_strength(k, K));
        EXPECT_EQ(seen.size(), 5u) << K;
    }
}

TEST(Schedule, DeterministicAndSeedOnlyMovesType) {
    std::set<int> types;
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
        for (int k = 2; k <= 20; ++k) {
            const auto& a = schedule_prompt(k, 20, seed);
            const auto& b = schedule_prompt(k, 20, seed);
            EXPECT_EQ(a, b);
            EXPECT_EQ(a.strength, scheduled_strength(k, 20));
        }
        types.insert(static_cast<int>(schedule_prompt(7, 20, seed).type));
    }
    EXPECT_EQ(types.size(), kPromptTypeCount);
}

TEST(Schedule, TypesRoughlyUniform) {
    std::map<int, int> counts;
    for (std::uint64_t seed = 0; seed < 8000; ++seed) ++counts[static_cast<int>(schedule_prompt(3, 20, seed).type)];
    for (const auto& [t, n] : counts) EXPECT_NEAR(n, 1000, 150) << t;
}

TEST(Schedule, OutOfRange) {
    EXPECT_THROW(schedule_prompt(1, 20, 0), Error);
    EXPECT_THROW(schedule_prompt(21, 20, 0), Error);
}

// ---- decoding / messages ------------------------------------------------------

TEST(Decoding, DefaultsAndValidation) {
    DecodingConfig d;
    EXPECT_EQ(d.temperature, 0.2);
    EXPECT_EQ(d.top_p, 0.9);
    EXPECT_EQ(d.turn_budget, 20);
    EXPECT_EQ(d.max_answer_tokens, 256);
    auto r = DecodingConfig::reasoning_mode();
    EXPECT_EQ(r.temperature, 0.6);
    EXPECT_EQ(r.top_p, 0.95);
    d.top_p = 0.0;
    EXPECT_THROW(d.validate(), Error);
    d.top_p = 1.0;
    d.temperature = -1;
    EXPECT_THROW(d.validate(), Error);
}

TEST(Messages, RoleContract) {
    std::vector<ChatMessage> ok{{Role::System, "s"}, {Role::User, "q"}, {Role::Assistant, "a"}, {Role::User, "p"}};
    EXPECT_NO_THROW(validate_messages(ok));
    std::vector<ChatMessage> bad{{Role::User, "q"}, {Role::User, "p"}};
    EXPECT_THROW(validate_messages(bad), Error);
    EXPECT_THROW(validate_messages(std::vector<ChatMessage>{}), Error);
}

TEST(Retry, BackoffSchedule) {
    RetryPolicy p;
    EXPECT_EQ(p.delay_before(1).count(), 0);
    EXPECT_EQ(p.delay_before(2).count(), 500);
    EXPECT_EQ(p.delay_before(3).count(), 1000);
}

// ---- simulator ---------------------------------------------------------------

TEST(Simulator, DeterministicReplies) {
    sim::SimulatorBackend backend;
    std::vector<ChatMessage> msgs{{Role::User, "Q"}, {Role::Assistant, "A"}, {Role::User, "Great! Continue."}};
    ChatSession s{"sim-00-0001", "sim-00", 3, Regime::Hallucinated};
    DecodingConfig d;
    d.request_logprobs = true;
    const auto a = backend.complete(msgs, d, s);
    const auto b = backend.complete(msgs, d, s);
    EXPECT_EQ(a.text, b.text);
    EXPECT_EQ(a.latent, b.latent);
    EXPECT_EQ(a.token_logprobs, b.token_logprobs);
    EXPECT_FALSE(a.text.empty());
    ASSERT_TRUE(a.token_logprobs.has_value());
    EXPECT_EQ(a.token_logprobs->size(), split_tokens(a.text).size());
    for (double lp : *a.token_logprobs) EXPECT_LE(lp, 0.0);
}

TEST(Simulator, LatentPrefixStable) {
    sim::SimulatorConfig cfg;
    ChatSession s{"x", "sim-01", 0, Regime::Hallucinated};
    const auto a = sim::latent_trajectory(cfg, s, Regime::Hallucinated, 8);
    const auto b = sim::latent_trajectory(cfg, s, Regime::Hallucinated, 20);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(a.latents[i], b.latents[i]);
}

TEST(Simulator, ExactlyOneBurstInHallucinatedRegime) {
    sim::SimulatorConfig cfg;
    for (int i = 0; i < 200; ++i) {
        ChatSession s{"item-" + std::to_string(i), "sim-02", 0, Regime::Hallucinated};
        const auto h = sim::latent_trajectory(cfg, s, Regime::Hallucinated, 20);
        ASSERT_TRUE(h.burst.has_value());
        EXPECT_GE(h.burst->turn, cfg.burst_first_turn);
        EXPECT_LE(h.burst->turn, cfg.burst_last_turn);
        EXPECT_GE(h.burst->amplitude, cfg.burst_min);
        EXPECT_LE(h.burst->amplitude, cfg.burst_max);
        const auto f = sim::latent_trajectory(cfg, s, Regime::Factual, 20);
        EXPECT_FALSE(f.burst.has_value());
    }
}

TEST(Simulator, FactualSpikesBelowHallucinatedMedian) {
    sim::SimulatorConfig cfg;
    std::vector<double> hall, fact;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        ChatSession s{"probe-item", "sim-03", seed, std::nullopt};
        hall.push_back(spike_score(sim::latent_trajectory(cfg, s, Regime::Hallucinated, 20).latents));
        fact.push_back(spike_score(sim::latent_trajectory(cfg, s, Regime::Factual, 20).latents));
    }
    std::nth_element(hall.begin(), hall.begin() + 50, hall.end());
    const double median = hall[50];
    for (double f : fact) EXPECT_LT(f, median);
}

// ---- induction ---------------------------------------------------------------

TEST(Induce, SimulatorNineteenTurnsDeterministic) {
    sim::SimulatorBackend backend;
    const auto a = induce_continuation(sim_request("sim-00-0003", Regime::Hallucinated), backend, fast_options());
    const auto b = induce_continuation(sim_request("sim-00-0003", Regime::Hallucinated), backend, fast_options());
    EXPECT_EQ(a.turns.size(), 19u);
    EXPECT_EQ(a.turn_count(), 20);
    EXPECT_FALSE(a.truncated);
    EXPECT_EQ(json(a).dump(), json(b).dump());
    ASSERT_TRUE(a.initial_latent.has_value());
    for (std::size_t i = 0; i < a.turns.size(); ++i) {
        EXPECT_EQ(a.turns[i].turn, static_cast<int>(i) + 2);
        EXPECT_EQ(a.turns[i].prompt, prompt_card(a.turns[i].prompt_type, a.turns[i].strength).text);
    }
}

TEST(Induce, LatentsMatchGenerator) {
    sim::SimulatorBackend backend;
    const auto t = induce_continuation(sim_request("sim-00-0004", Regime::Factual), backend, fast_options());
    ChatSession s{"sim-00-0004", "sim-00", 0, Regime::Factual};
    EXPECT_EQ(latents_of(t), sim::latent_trajectory(backend.config(), s, Regime::Factual, 20).latents);
}

TEST(Induce, KTwoUsesOneWeakPrompt) {
    sim::SimulatorBackend backend;
    const auto t = induce_continuation(sim_request("a", Regime::Factual), backend, fast_options(2));
    ASSERT_EQ(t.turns.size(), 1u);
    EXPECT_EQ(t.turns[0].strength, 1);
}

TEST(Induce, PromptSeedChangesTypesNotStrengths) {
    sim::SimulatorBackend backend;
    auto o1 = fast_options();
    auto o2 = fast_options();
    o2.prompt_seed = o1.prompt_seed + 1;
    const auto a = induce_continuation(sim_request("a", Regime::Factual), backend, o1);
    const auto b = induce_continuation(sim_request("a", Regime::Factual), backend, o2);
    bool any_type_differs = false;
    for (std::size_t i = 0; i < a.turns.size(); ++i) {
        EXPECT_EQ(a.turns[i].strength, b.turns[i].strength);
        any_type_differs |= a.turns[i].prompt_type != b.turns[i].prompt_type;
    }
    EXPECT_TRUE(any_type_differs);
}

TEST(Induce, DirectiveLeadsEveryCallAndHistoryGrows) {
    ScriptedBackend backend([](int call, std::span<const ChatMessage>) {
        return ChatReply{"answer " + std::to_string(call), std::nullopt, std::nullopt};
    });
    auto o = fast_options(5);
    o.system_directive = std::string(kPoliteAlignedDirective);
    InductionRequest r = sim_request("x", Regime::Factual);
    const auto t = induce_continuation(r, backend, o);
    ASSERT_EQ(backend.seen.size(), 4u);
    for (std::size_t c = 0; c < backend.seen.size(); ++c) {
        const auto& m = backend.seen[c];
        EXPECT_EQ(m.front().role, Role::System);
        EXPECT_EQ(m.front().content, kPoliteAlignedDirective);
        EXPECT_EQ(m[1].content, r.question);
        EXPECT_EQ(m[2].content, r.initial_answer);
        // directive + Q + A1 + (P, A) pairs + final P
        EXPECT_EQ(m.size(), 3 + 2 * c + 1);
        EXPECT_EQ(m.back().content, t.turns[c].prompt);
        if (c > 0) EXPECT_EQ(m[m.size() - 2].content, "answer " + std::to_string(c - 1));
    }
    EXPECT_EQ(conversation_for_turn(t, 5), backend.seen.back());
}

TEST(Induce, RetriesThenSucceeds) {
    ScriptedBackend backend([](int call, std::span<const ChatMessage>) -> ChatReply {
        if (call < 2) throw BackendError(BackendError::Cause::Transport, "down");
        return ChatReply{"ok", std::nullopt, std::nullopt};
    });
    std::vector<std::chrono::milliseconds> sleeps;
    auto o = fast_options(2);
    o.sleep = [&](std::chrono::milliseconds d) { sleeps.push_back(d); };
    const auto t = induce_continuation(sim_request("x", Regime::Factual), backend, o);
    EXPECT_FALSE(t.truncated);
    EXPECT_EQ(backend.calls.load(), 3);
    EXPECT_EQ(sleeps, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(500), std::chrono::milliseconds(1000)}));
}

TEST(Induce, TruncatesAfterRetriesExhausted) {
    ScriptedBackend backend([](int call, std::span<const ChatMessage>) -> ChatReply {
        if (call >= 3) throw BackendError(BackendError::Cause::Timeout, "slow");
        return ChatReply{"fine", std::nullopt, std::nullopt};
    });
    const auto t = induce_continuation(sim_request("x", Regime::Factual), backend, fast_options(10));
    EXPECT_TRUE(t.truncated);
    EXPECT_EQ(t.turns.size(), 3u);
    ASSERT_TRUE(t.truncation_reason.has_value());
    EXPECT_NE(t.truncation_reason->find("turn 5"), std::string::npos);
    EXPECT_EQ(backend.calls.load(), 3 + 3);
}

TEST(Induce, EmptyReplyRecordedAndFlagged) {
    ScriptedBackend backend([](int call, std::span<const ChatMessage>) -> ChatReply {
        if (call == 1) throw BackendError(BackendError::Cause::EmptyReply, "empty");
        return ChatReply{"text", std::nullopt, std::nullopt};
    });
    const auto t = induce_continuation(sim_request("x", Regime::Factual), backend, fast_options(5));
    EXPECT_FALSE(t.truncated);
    ASSERT_EQ(t.turns.size(), 4u);
    EXPECT_TRUE(t.turns[1].empty_reply);
    EXPECT_EQ(t.turns[1].answer, "");
    EXPECT_EQ(backend.calls.load(), 4);  // empty replies are not retried
    EXPECT_FALSE(t.flags.empty());
}

TEST(Transcript, JsonRoundTrip) {
    sim::SimulatorBackend backend;
    auto o = fast_options(6);
    o.decoding.request_logprobs = true;
    o.system_directive = "be nice";
    const auto t = induce_continuation(sim_request("rt", Regime::Hallucinated), backend, o);
    const json j = t;
    const auto back = j.get<DialogueTranscript>();
    EXPECT_EQ(back, t);
    EXPECT_EQ(json(back).dump(), j.dump());
}

// ---- HTTP backend ----------------------------------------------------------------

TEST(HttpChat, RequestShapeAndLogprobs) {
    LocalServer srv;
    json last_request;
    srv.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        last_request = json::parse(req.body);
        EXPECT_EQ(req.get_header_value("Authorization"), "Bearer tok");
        json body{{"choices", {{{"message", {{"role", "assistant"}, {"content", "three token reply"}}},
                                {"logprobs", {{"content", {{{"logprob", -0.1}}, {{"logprob", -0.2}}, {{"logprob", -0.3}}}}}}}}}};
        res.set_content(body.dump(), "application/json");
    });
    HttpChatBackend backend({{srv.url("/v1/chat/completions"), "tok", std::chrono::milliseconds(2000)}, "m1"});
    DecodingConfig d;
    d.request_logprobs = true;
    std::vector<ChatMessage> msgs{{Role::System, "s"}, {Role::User, "q"}};
    const auto reply = backend.complete(msgs, d, {});
    EXPECT_EQ(reply.text, "three token reply");
    ASSERT_TRUE(reply.token_logprobs.has_value());
    EXPECT_EQ(reply.token_logprobs->size(), 3u);
    EXPECT_EQ(last_request["model"], "m1");
    EXPECT_EQ(last_request["temperature"], 0.2);
    EXPECT_EQ(last_request["top_p"], 0.9);
    EXPECT_EQ(last_request["max_tokens"], 256);
    EXPECT_EQ(last_request["logprobs"], true);
    EXPECT_EQ(last_request["messages"][0]["role"], "system");
    EXPECT_EQ(last_request["messages"][1]["content"], "q");
}

TEST(HttpChat, StatusErrorIsTyped) {
    LocalServer srv;
    srv.server().Post("/c", [](const httplib::Request&, httplib::Response& res) {
        res.status = 503;
        res.set_content("busy", "text/plain");
    });
    HttpChatBackend backend({{srv.url("/c"), "", std::chrono::milliseconds(2000)}, "m"});
    std::vector<ChatMessage> msgs{{Role::User, "q"}};
    try {
        backend.complete(msgs, {}, {});
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.cause(), BackendError::Cause::HttpStatus);
        EXPECT_EQ(e.http_status(), 503);
    }
}

TEST(HttpChat, MalformedAndEmpty) {
    LocalServer srv;
    srv.server().Post("/bad", [](const httplib::Request&, httplib::Response& res) { res.set_content("{not json", "application/json"); });
    srv.server().Post("/shape", [](const httplib::Request&, httplib::Response& res) { res.set_content(R"({"x":1})", "application/json"); });
    srv.server().Post("/empty", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"choices":[{"message":{"content":""}}]})", "application/json");
    });
    std::vector<ChatMessage> msgs{{Role::User, "q"}};
    auto cause = [&](const std::string& path) {
        HttpChatBackend b({{srv.url(path), "", std::chrono::milliseconds(2000)}, "m"});
        try {
            b.complete(msgs, {}, {});
        } catch (const BackendError& e) {
            return e.cause();
        }
        return BackendError::Cause::Unsupported;
    };
    EXPECT_EQ(cause("/bad"), BackendError::Cause::MalformedResponse);
    EXPECT_EQ(cause("/shape"), BackendError::Cause::MalformedResponse);
    EXPECT_EQ(cause("/empty"), BackendError::Cause::EmptyReply);
}

TEST(HttpChat, TimeoutAndUnreachable) {
    LocalServer srv;
    srv.server().Post("/slow", [](const httplib::Request&, httplib::Response& res) {
        std::this_thread::sleep_for(std::chrono::milliseconds(600));
        res.set_content(R"({"choices":[{"message":{"content":"late"}}]})", "application/json");
    });
    std::vector<ChatMessage> msgs{{Role::User, "q"}};
    HttpChatBackend slow({{srv.url("/slow"), "", std::chrono::milliseconds(150)}, "m"});
    try {
        slow.complete(msgs, {}, {});
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.cause(), BackendError::Cause::Timeout);
    }
    HttpChatBackend dead({{"http://127.0.0.1:1/x", "", std::chrono::milliseconds(300)}, "m"});
    EXPECT_THROW(dead.complete(msgs, {}, {}), BackendError);
}

TEST(HttpChat, InductionRetriesFlakyServer) {
    LocalServer srv;
    std::atomic<int> hits{0};
    srv.server().Post("/flaky", [&](const httplib::Request&, httplib::Response& res) {
        if (hits++ % 2 == 0) {
            res.status = 500;
            return;
        }
        res.set_content(R"({"choices":[{"message":{"content":"steady"}}]})", "application/json");
    });
    HttpChatBackend backend({{srv.url("/flaky"), "", std::chrono::milliseconds(2000)}, "m"});
    const auto t = induce_continuation(sim_request("h", Regime::Factual), backend, fast_options(4));
    EXPECT_FALSE(t.truncated);
    EXPECT_EQ(t.turns.size(), 3u);
    EXPECT_EQ(hits.load(), 6);
    for (const auto& turn : t.turns) EXPECT_EQ(turn.answer, "steady");
}
