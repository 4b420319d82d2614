#include "spikescore/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

#include "spikescore/dialogue.hpp"
#include "spikescore/error.hpp"
#include "spikescore/jsonl.hpp"
#include "spikescore/rng.hpp"
#include "spikescore/scoring.hpp"

namespace spikescore {
namespace {

constexpr std::array<std::string_view, 21> kNumberWords{
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty"};

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

// "1,000.50" -> "1000.5"; empty when the token is not a plain numeral.
std::string canonical_number(std::string_view tok) {
    std::string digits;
    bool seen_dot = false, any_digit = false;
    std::size_t i = 0;
    bool negative = false;
    if (!tok.empty() && (tok[0] == '-' || tok[0] == '+')) {
        negative = tok[0] == '-';
        i = 1;
    }
    for (; i < tok.size(); ++i) {
        const char c = tok[i];
        if (std::isdigit(static_cast<unsigned char>(c))) {
            digits.push_back(c);
            any_digit = true;
        } else if (c == ',' && !seen_dot && any_digit) {
            continue;
        } else if (c == '.' && !seen_dot) {
            seen_dot = true;
            digits.push_back('.');
        } else {
            return {};
        }
    }
    if (!any_digit) return {};
    if (seen_dot) {
        while (!digits.empty() && digits.back() == '0') digits.pop_back();
        if (!digits.empty() && digits.back() == '.') digits.pop_back();
    }
    std::size_t lead = 0;
    while (lead + 1 < digits.size() && digits[lead] == '0' && digits[lead + 1] != '.') ++lead;
    digits.erase(0, lead);
    if (digits.empty() || digits[0] == '.') digits.insert(0, "0");
    if (negative && digits != "0") digits.insert(0, "-");
    return digits;
}

std::vector<std::string> normalized_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        std::string_view raw = text.substr(i, j - i);
        i = j;
        // Trim surrounding punctuation, keeping a leading sign or decimal point for numerals.
        while (!raw.empty() && !is_word_byte(static_cast<unsigned char>(raw.back()))) raw.remove_suffix(1);
        while (!raw.empty() && !is_word_byte(static_cast<unsigned char>(raw.front())) && raw.front() != '-' &&
               raw.front() != '.') {
            raw.remove_prefix(1);
        }
        if (raw.empty()) continue;
        if (auto num = canonical_number(raw); !num.empty()) {
            out.push_back(std::move(num));
            continue;
        }
        // Inner punctuation splits words ("state-of-the-art"), except apostrophes which join ("o'neil").
        std::string cur;
        auto flush = [&] {
            if (cur.empty()) return;
            if (cur != "a" && cur != "an" && cur != "the") {
                auto it = std::find(kNumberWords.begin(), kNumberWords.end(), cur);
                out.push_back(it != kNumberWords.end() ? std::to_string(it - kNumberWords.begin()) : cur);
            }
            cur.clear();
        };
        for (unsigned char c : raw) {
            if (is_word_byte(c)) cur.push_back(static_cast<char>(std::tolower(c)));
            else if (c != '\'') flush();
        }
        flush();
    }
    return out;
}

bool contains_run(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
    if (needle.empty() || needle.size() > hay.size()) return false;
    return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) s.replace(pos, from.size(), to);
}

std::string stratum_of(const QAItem& item, StratumField field) {
    switch (field) {
        case StratumField::None: return {};
        case StratumField::Label: return item.label ? std::to_string(*item.label) : "unlabeled";
        case StratumField::Language: return item.language.value_or("unknown");
    }
    return {};
}

}  // namespace

void to_json(nlohmann::json& j, const QAItem& item) {
    j = nlohmann::json{{"item_id", item.item_id},
                       {"domain_id", item.domain_id},
                       {"question", item.question},
                       {"reference_answers", item.reference_answers},
                       {"generated_answer", item.generated_answer},
                       {"label", item.label ? nlohmann::json(*item.label) : nlohmann::json(nullptr)}};
    if (item.group) j["group"] = *item.group;
    if (item.language) j["language"] = *item.language;
}

void from_json(const nlohmann::json& j, QAItem& item) {
    if (!j.is_object()) fail(ErrorKind::Schema, "QA record must be an object");
    for (const char* key : {"item_id", "domain_id", "question", "reference_answers", "generated_answer"}) {
        if (!j.contains(key)) fail(ErrorKind::Schema, std::string("missing field '") + key + "'");
    }
    for (const char* key : {"item_id", "domain_id", "question", "generated_answer"}) {
        if (!j[key].is_string()) fail(ErrorKind::Schema, std::string("field '") + key + "' must be a string");
    }
    item = QAItem{};
    item.item_id = j["item_id"].get<std::string>();
    item.domain_id = j["domain_id"].get<std::string>();
    item.question = j["question"].get<std::string>();
    item.generated_answer = j["generated_answer"].get<std::string>();
    const auto& refs = j["reference_answers"];
    if (!refs.is_array()) fail(ErrorKind::Schema, "field 'reference_answers' must be an array of strings");
    for (const auto& r : refs) {
        if (!r.is_string()) fail(ErrorKind::Schema, "field 'reference_answers' must be an array of strings");
        item.reference_answers.push_back(r.get<std::string>());
    }
    if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
        if (!it->is_number_integer() || (it->get<int>() != 0 && it->get<int>() != 1)) {
            fail(ErrorKind::Schema, "field 'label' must be 0, 1 or null");
        }
        item.label = it->get<int>();
    }
    if (auto it = j.find("group"); it != j.end() && !it->is_null()) item.group = it->get<std::string>();
    if (auto it = j.find("language"); it != j.end() && !it->is_null()) item.language = it->get<std::string>();
}

std::vector<QAItem> load_items(const std::filesystem::path& path) {
    std::vector<QAItem> items;
    for (const auto& row : read_jsonl(path)) {
        try {
            items.push_back(row.value.get<QAItem>());
        } catch (const Error& e) {
            throw Error(e.kind(), path.string() + ":" + std::to_string(row.line) + ": " + e.what());
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::Schema, path.string() + ":" + std::to_string(row.line) + ": " + e.what());
        }
    }
    return items;
}

std::string normalize_answer(std::string_view text) {
    std::string out;
    for (const auto& tok : normalized_tokens(text)) {
        if (!out.empty()) out += ' ';
        out += tok;
    }
    return out;
}

int fallback_label(std::string_view answer, const std::vector<std::string>& references) {
    if (references.empty()) fail(ErrorKind::InvalidArgument, "empty references");
    const auto ans = normalized_tokens(answer);
    bool any_usable = false;
    for (const auto& ref : references) {
        const auto r = normalized_tokens(ref);
        if (r.empty()) continue;
        any_usable = true;
        if (r == ans) return 0;
        if (r.size() <= kContainsMaxTokens && contains_run(ans, r)) return 0;
    }
    if (!any_usable) fail(ErrorKind::InvalidArgument, "empty references: every reference normalizes to nothing");
    return 1;
}

ChatJudge::ChatJudge(const ChatBackend& backend, DecodingConfig decoding, RetryPolicy retry, std::string prompt_template)
    : backend_(backend), decoding_(decoding), retry_(retry), template_(std::move(prompt_template)) {}

std::string ChatJudge::render(std::string_view question, const std::vector<std::string>& references,
                              std::string_view answer) const {
    std::string refs;
    for (std::size_t i = 0; i < references.size(); ++i) {
        if (i) refs += " | ";
        refs += references[i];
    }
    std::string out = template_;
    replace_all(out, "{question}", question);
    replace_all(out, "{references}", refs);
    replace_all(out, "{answer}", answer);
    return out;
}

int ChatJudge::judge(std::string_view question, const std::vector<std::string>& references, std::string_view answer) const {
    const std::vector<ChatMessage> messages{{Role::User, render(question, references, answer)}};
    const ChatReply reply = complete_with_retry(backend_, messages, decoding_, ChatSession{}, retry_);
    std::string_view text = reply.text;
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
    if (text == "0") return 0;
    if (text == "1") return 1;
    throw BackendError(BackendError::Cause::MalformedResponse, "judge reply is not \"0\" or \"1\": '" + std::string(text) + "'");
}

int label_answer(const QAItem& item, const LabelingOptions& options) {
    if (item.reference_answers.empty()) fail(ErrorKind::InvalidArgument, "empty references for item '" + item.item_id + "'");
    if (options.judge) {
        try {
            return options.judge->judge(item.question, item.reference_answers, item.generated_answer);
        } catch (const BackendError& e) {
            if (!options.allow_fallback) {
                fail(ErrorKind::Backend, "labeling failed for item '" + item.item_id + "': " + e.what());
            }
        }
    }
    return fallback_label(item.generated_answer, item.reference_answers);
}

std::string_view stratum_field_name(StratumField f) noexcept {
    switch (f) {
        case StratumField::None: return "none";
        case StratumField::Label: return "label";
        case StratumField::Language: return "language";
    }
    return "?";
}

StratumField parse_stratum_field(std::string_view name) {
    for (auto f : {StratumField::None, StratumField::Label, StratumField::Language}) {
        if (name == stratum_field_name(f)) return f;
    }
    fail(ErrorKind::InvalidArgument, "unknown stratum field '" + std::string(name) + "'");
}

SplitResult sample_split(const std::vector<QAItem>& items, const SplitOptions& opt) {
    const std::size_t need = opt.train_n + opt.test_n;
    if (need > items.size()) {
        fail(ErrorKind::InvalidArgument, "insufficient items: need " + std::to_string(need) + ", have " +
                                             std::to_string(items.size()));
    }
    if (opt.by_group && opt.strata != StratumField::None) {
        fail(ErrorKind::InvalidArgument, "group-disjoint splits cannot also be stratified");
    }
    std::vector<std::size_t> train_idx, test_idx;

    if (opt.by_group) {
        std::map<std::string, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < items.size(); ++i) {
            groups[items[i].group ? "g:" + *items[i].group : "i:" + items[i].item_id].push_back(i);
        }
        std::vector<const std::vector<std::size_t>*> order;
        for (const auto& [key, members] : groups) order.push_back(&members);
        CounterRng(opt.seed, 0x67726f7570ULL).shuffle(order);
        for (const auto* members : order) {
            if (train_idx.size() + members->size() <= opt.train_n) {
                train_idx.insert(train_idx.end(), members->begin(), members->end());
            } else if (test_idx.size() + members->size() <= opt.test_n) {
                test_idx.insert(test_idx.end(), members->begin(), members->end());
            }
            if (train_idx.size() == opt.train_n && test_idx.size() == opt.test_n) break;
        }
        if (train_idx.size() != opt.train_n || test_idx.size() != opt.test_n) {
            fail(ErrorKind::InvalidArgument, "insufficient items: whole groups cannot fill a " + std::to_string(opt.train_n) +
                                                 "/" + std::to_string(opt.test_n) + " split");
        }
    } else {
        std::map<std::string, std::vector<std::size_t>> strata;
        for (std::size_t i = 0; i < items.size(); ++i) strata[stratum_of(items[i], opt.strata)].push_back(i);

        // Largest-remainder quotas proportional to stratum size.
        auto quotas = [&](std::size_t total) {
            std::vector<std::size_t> q;
            std::vector<std::pair<double, std::size_t>> rema;
            std::size_t assigned = 0, s = 0;
            for (const auto& [key, members] : strata) {
                const double exact = static_cast<double>(total) * static_cast<double>(members.size()) /
                                     static_cast<double>(items.size());
                const auto fl = static_cast<std::size_t>(std::floor(exact));
                q.push_back(fl);
                assigned += fl;
                rema.emplace_back(-(exact - static_cast<double>(fl)), s++);
            }
            std::sort(rema.begin(), rema.end());
            for (std::size_t i = 0; assigned < total; ++i, ++assigned) q[rema[i % rema.size()].second] += 1;
            return q;
        };
        const auto train_q = quotas(opt.train_n);
        const auto test_q = quotas(opt.test_n);
        std::size_t s = 0;
        for (const auto& [key, members] : strata) {
            if (train_q[s] + test_q[s] > members.size()) {
                fail(ErrorKind::InvalidArgument, "stratum '" + key + "' too small: needs " +
                                                     std::to_string(train_q[s] + test_q[s]) + ", has " +
                                                     std::to_string(members.size()));
            }
            std::vector<std::size_t> shuffled = members;
            CounterRng(derive_key(opt.seed, key)).shuffle(shuffled);
            train_idx.insert(train_idx.end(), shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(train_q[s]));
            test_idx.insert(test_idx.end(), shuffled.begin() + static_cast<std::ptrdiff_t>(train_q[s]),
                            shuffled.begin() + static_cast<std::ptrdiff_t>(train_q[s] + test_q[s]));
            ++s;
        }
    }

    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
    SplitResult out;
    for (std::size_t i : train_idx) out.train.push_back(items[i]);
    for (std::size_t i : test_idx) out.test.push_back(items[i]);
    return out;
}

std::string_view record_schema_name(RecordSchema s) noexcept {
    switch (s) {
        case RecordSchema::QA: return "qa";
        case RecordSchema::Transcript: return "transcript";
        case RecordSchema::Feature: return "feature";
        case RecordSchema::Score: return "score";
        case RecordSchema::Label: return "label";
    }
    return "?";
}

RecordSchema parse_record_schema(std::string_view name) {
    for (auto s : {RecordSchema::QA, RecordSchema::Transcript, RecordSchema::Feature, RecordSchema::Score, RecordSchema::Label}) {
        if (name == record_schema_name(s)) return s;
    }
    fail(ErrorKind::InvalidArgument, "unknown record schema '" + std::string(name) + "'");
}

void to_json(nlohmann::json& j, const ValidationReport& r) {
    nlohmann::json issues = nlohmann::json::array();
    for (const auto& i : r.issues) issues.push_back({{"line", i.line}, {"field", i.field}, {"reason", i.reason}});
    j = nlohmann::json{{"path", r.path.generic_string()},
                       {"schema", record_schema_name(r.schema)},
                       {"records", r.records},
                       {"ok", r.ok()},
                       {"issues", std::move(issues)}};
}

namespace {

// Pulls the field name out of messages shaped "missing field 'x'" / "field 'x' ...".
std::string field_from_message(const std::string& msg) {
    const auto a = msg.find('\'');
    if (a == std::string::npos) return {};
    const auto b = msg.find('\'', a + 1);
    return b == std::string::npos ? std::string() : msg.substr(a + 1, b - a - 1);
}

void check_transcript(const nlohmann::json& v) {
    if (!v.is_object()) fail(ErrorKind::Schema, "transcript record must be an object");
    for (const char* key : {"item_id", "question", "initial_answer", "turns"}) {
        if (!v.contains(key)) fail(ErrorKind::Schema, std::string("missing field '") + key + "'");
    }
    if (!v["turns"].is_array()) fail(ErrorKind::Schema, "field 'turns' must be an array");
    int expect = 2;
    for (const auto& t : v["turns"]) {
        for (const char* key : {"turn", "prompt", "answer"}) {
            if (!t.contains(key)) fail(ErrorKind::Schema, std::string("missing field 'turns[].") + key + "'");
        }
        if (!t["turn"].is_number_integer() || t["turn"].get<int>() != expect) {
            fail(ErrorKind::Schema, "field 'turns[].turn' must run 2, 3, ... without gaps (expected " +
                                        std::to_string(expect) + ")");
        }
        ++expect;
    }
    (void)v.get<DialogueTranscript>();
}

void check_label(const nlohmann::json& v) {
    if (!v.is_object()) fail(ErrorKind::Schema, "label record must be an object");
    if (!v.contains("item_id")) fail(ErrorKind::Schema, "missing field 'item_id'");
    if (!v["item_id"].is_string()) fail(ErrorKind::Schema, "field 'item_id' must be a string");
    if (!v.contains("label")) fail(ErrorKind::Schema, "missing field 'label'");
    const auto& l = v["label"];
    if (!l.is_number_integer() || (l.get<int>() != 0 && l.get<int>() != 1)) fail(ErrorKind::Schema, "field 'label' must be 0 or 1");
}

}  // namespace

ValidationReport validate_records(const std::filesystem::path& path, RecordSchema schema) {
    ValidationReport report;
    report.path = path;
    report.schema = schema;
    JsonlScan scan;
    try {
        scan = scan_jsonl(path);
    } catch (const Error& e) {
        report.issues.push_back({0, "", e.what()});
        return report;
    }
    for (const auto& [line, reason] : scan.errors) report.issues.push_back({line, "", reason});

    std::size_t feature_dim = 0;
    std::map<std::string, std::set<int>> feature_turns;
    std::map<std::tuple<std::string, int, std::string>, std::size_t> score_keys;
    std::map<std::string, std::size_t> seen_ids;

    for (const auto& row : scan.rows) {
        ++report.records;
        try {
            switch (schema) {
                case RecordSchema::QA: {
                    const auto item = row.value.get<QAItem>();
                    if (item.reference_answers.empty()) fail(ErrorKind::Schema, "field 'reference_answers' is empty");
                    if (auto [it, ok] = seen_ids.emplace(item.item_id, row.line); !ok) {
                        fail(ErrorKind::Schema, "field 'item_id' duplicates line " + std::to_string(it->second));
                    }
                    break;
                }
                case RecordSchema::Transcript: check_transcript(row.value); break;
                case RecordSchema::Feature: {
                    const auto rec = row.value.get<FeatureRecord>();
                    if (feature_dim == 0) feature_dim = rec.vector.size();
                    if (rec.vector.size() != feature_dim) {
                        fail(ErrorKind::Schema, "field 'vector' has length " + std::to_string(rec.vector.size()) +
                                                    ", dataset length is " + std::to_string(feature_dim));
                    }
                    if (!feature_turns[rec.item_id].insert(rec.turn).second) {
                        fail(ErrorKind::Schema, "field 'turn' repeats turn " + std::to_string(rec.turn) + " of item " + rec.item_id);
                    }
                    break;
                }
                case RecordSchema::Score: {
                    if (row.value.is_object() && row.value.contains("value") && !row.value["value"].is_number() &&
                        !row.value["value"].is_string()) {
                        fail(ErrorKind::Schema, "field 'value' must hold exactly one number");
                    }
                    const auto s = row.value.get<TurnScore>();
                    if (auto [it, ok] = score_keys.emplace(std::make_tuple(s.item_id, s.turn, s.backbone_id), row.line); !ok) {
                        fail(ErrorKind::Schema, "field 'turn' duplicates (item, turn, backbone) from line " +
                                                    std::to_string(it->second));
                    }
                    break;
                }
                case RecordSchema::Label: check_label(row.value); break;
            }
        } catch (const Error& e) {
            report.issues.push_back({row.line, field_from_message(e.what()), e.what()});
        } catch (const nlohmann::json::exception& e) {
            report.issues.push_back({row.line, "", e.what()});
        }
    }
    for (const auto& [item, turns] : feature_turns) {
        int expect = 1;
        std::string missing;
        for (int t : turns) {
            for (; expect < t; ++expect) missing += " " + std::to_string(expect);
            expect = t + 1;
        }
        if (!missing.empty()) report.issues.push_back({0, "turn", "item " + item + " is missing turns" + missing});
    }
    std::sort(report.issues.begin(), report.issues.end(),
              [](const ValidationIssue& a, const ValidationIssue& b) { return a.line < b.line; });
    return report;
}

std::string sim_domain_name(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "sim-%02zu", index);
    return buf;
}

std::map<std::string, std::vector<QAItem>> simulate_corpus(const SimCorpusOptions& opt) {
    if (opt.domains == 0 || opt.items_per_domain == 0) fail(ErrorKind::InvalidArgument, "simulated corpus must be non-empty");
    if (!(opt.hallucination_rate >= 0.0 && opt.hallucination_rate <= 1.0)) {
        fail(ErrorKind::OutOfRange, "hallucination_rate must lie in [0, 1]");
    }
    static constexpr std::array<std::string_view, 6> kTopics{"arithmetic", "geography", "history",
                                                              "chemistry", "literature", "astronomy"};
    std::map<std::string, std::vector<QAItem>> out;
    for (std::size_t d = 0; d < opt.domains; ++d) {
        const std::string domain = sim_domain_name(d);
        const std::uint64_t dkey = derive_key(derive_key(opt.seed, 0x636f72707573ULL), domain);
        const std::size_t n = opt.items_per_domain;
        const auto n_hall = static_cast<std::size_t>(std::llround(opt.hallucination_rate * static_cast<double>(n)));
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        CounterRng(dkey, 1).shuffle(order);
        std::vector<int> labels(n, 0);
        for (std::size_t i = 0; i < n_hall; ++i) labels[order[i]] = 1;

        std::vector<QAItem> items;
        items.reserve(n);
        const std::string_view topic = kTopics[d % kTopics.size()];
        for (std::size_t i = 0; i < n; ++i) {
            CounterRng rng(dkey, 2 + i);
            char id[64];
            std::snprintf(id, sizeof id, "%s-%04zu", domain.c_str(), i);
            const auto truth = 100 + rng.below(9000);
            QAItem item;
            item.item_id = id;
            item.domain_id = domain;
            item.question = "[" + std::string(topic) + "] What is the registered value of record " + std::to_string(i) + "?";
            item.reference_answers = {std::to_string(truth)};
            const auto given = labels[i] ? truth + 1 + rng.below(500) : truth;
            item.generated_answer = "The value is " + std::to_string(given) + ".";
            item.label = labels[i];
            items.push_back(std::move(item));
        }
        out.emplace(domain, std::move(items));
    }
    return out;
}

}  // namespace spikescore
