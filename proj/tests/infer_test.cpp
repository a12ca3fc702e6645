#include "reqdep/errors.hpp"
#include "reqdep/infer.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "httplib.h"

using namespace reqdep;
using namespace reqdep::infer;
using testing_support::TempDir;

namespace {

const std::string kAnchor = "The UAV shall land when communication is restored";
const std::string kCandidate = "The UAV shall land when communication is lost";

std::size_t count_of(const std::string& hay, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
    return n;
}

std::vector<Shot> bundled_shots() { return load_shots(testing_support::data_dir() + "/shots.json"); }

std::string answer(const std::string& label, double conf = 0.9) {
    return "{\"label\": \"" + label + "\", \"confidence\": " + std::to_string(conf) + "}";
}

sustain::Meter manual_meter() {
    return sustain::Meter({50.0, sustain::MeterSource::Modeled}, std::make_shared<sustain::ManualClock>());
}

/// Fails every request once `budget` successful calls have been made.
class FailingAfter final : public ModelClient {
public:
    FailingAfter(ModelClient& inner, std::size_t budget) : inner_(inner), budget_(budget) {}
    ChatResponse complete(const ChatRequest& r) override {
        if (calls_++ >= budget_) throw TransportError("simulated outage");
        return inner_.complete(r);
    }
    std::size_t calls() const { return calls_; }

private:
    ModelClient& inner_;
    std::size_t budget_;
    std::atomic<std::size_t> calls_{0};
};

/// Fails the first `failures` requests, then answers Conflict.
class Flaky final : public ModelClient {
public:
    explicit Flaky(int failures) : failures_(failures) {}
    ChatResponse complete(const ChatRequest&) override {
        if (calls_++ < failures_) throw TransportError("connection reset");
        return {answer("Conflict"), {}};
    }
    int calls() const { return calls_; }

private:
    int failures_;
    std::atomic<int> calls_{0};
};

InferenceOptions fast_options(int runs = 3) {
    InferenceOptions o;
    o.runs = runs;
    o.retry.attempts = 1;
    o.retry.base_delay = std::chrono::milliseconds(0);
    return o;
}

std::vector<PairInput> four_pairs() {
    return {{"a1", "c1", "Anchor one", "Candidate one"},
            {"a1", "c2", "Anchor one", "Candidate two"},
            {"a2", "c3", "Anchor two", "Candidate three"},
            {"a2", "c4", "Anchor two", "Candidate four"}};
}

}  // namespace

TEST(Prompt, ZeroShotLayout) {
    const auto p = render_prompt({Strategy::ZeroShot, kAnchor, kCandidate, {}});
    EXPECT_TRUE(p.starts_with("Task context: You are a requirements analyst.\n"));
    EXPECT_NE(p.find("ANCHOR: \"" + kAnchor + "\"\n"), std::string::npos);
    EXPECT_NE(p.find("CANDIDATE: \"" + kCandidate + "\"\n"), std::string::npos);
    EXPECT_NE(p.find("Return only the following JSON format"), std::string::npos);
    EXPECT_EQ(p.find("Example"), std::string::npos);
    EXPECT_EQ(p.find("Thinking guidance"), std::string::npos);
}

TEST(Prompt, FewShotHasExactlyThreeExamples) {
    const auto p = render_prompt({Strategy::FewShot, kAnchor, kCandidate, bundled_shots()});
    EXPECT_EQ(count_of(p, "Example "), 3u);
    EXPECT_EQ(count_of(p, "Answer: {\"label\": "), 3u);
    EXPECT_NE(p.find("Example 3:"), std::string::npos);
    EXPECT_EQ(p.find("Example 4:"), std::string::npos);
    EXPECT_EQ(count_of(p, "ANCHOR: "), 1u);
    EXPECT_LT(p.find("Examples:"), p.find("ANCHOR: "));
    EXPECT_NE(p.find("\"Conflict\"|\"Neutral\""), std::string::npos);
}

TEST(Prompt, ChainOfThoughtHasGuidance) {
    const auto p = render_prompt({Strategy::ChainOfThought, kAnchor, kCandidate, {}});
    EXPECT_NE(p.find("Thinking guidance (internal only)"), std::string::npos);
    EXPECT_NE(p.find("Do NOT reveal reasoning"), std::string::npos);
    EXPECT_EQ(p.find("Example"), std::string::npos);
    EXPECT_LT(p.find("Thinking guidance"), p.find("ANCHOR: "));
}

TEST(Prompt, StrategiesDifferAndRenderingIsStable) {
    const auto shots = bundled_shots();
    const PromptSpec z{Strategy::ZeroShot, kAnchor, kCandidate, {}};
    const PromptSpec f{Strategy::FewShot, kAnchor, kCandidate, shots};
    const PromptSpec c{Strategy::ChainOfThought, kAnchor, kCandidate, {}};
    EXPECT_NE(render_prompt(z), render_prompt(f));
    EXPECT_NE(render_prompt(z), render_prompt(c));
    EXPECT_NE(render_prompt(f), render_prompt(c));
    for (const auto& s : {z, f, c}) EXPECT_EQ(render_prompt(s), render_prompt(s));
    EXPECT_GT(count_tokens(render_prompt(f)), count_tokens(render_prompt(z)));
}

TEST(Prompt, ShotsOnlyWithFewShot) {
    EXPECT_THROW(render_prompt({Strategy::FewShot, "a", "b", {}}), ValidationError);
    EXPECT_THROW(render_prompt({Strategy::ZeroShot, "a", "b", bundled_shots()}), ValidationError);
}

TEST(Shots, BundledFileAndSelection) {
    const auto shots = bundled_shots();
    ASSERT_EQ(shots.size(), 3u);
    EXPECT_EQ(shots[0].label, Label::Conflict);
    EXPECT_EQ(shots[1].label, Label::Neutral);
    EXPECT_EQ(select_shots(shots, 5, 1).size(), 3u);
    const auto two = select_shots(shots, 2, 42);
    EXPECT_EQ(two.size(), 2u);
    EXPECT_EQ(select_shots(shots, 2, 42)[0].candidate, two[0].candidate);
}

TEST(ParseResponse, Examples) {
    auto r = parse_response(R"({"label":"Conflict","confidence":0.92})");
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(r.answer->label, Label::Conflict);
    EXPECT_DOUBLE_EQ(r.answer->confidence, 0.92);

    r = parse_response(R"(Sure! {"label":"neutral","confidence":"0.6"})");
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(r.answer->label, Label::Neutral);
    EXPECT_DOUBLE_EQ(r.answer->confidence, 0.6);

    EXPECT_FALSE(parse_response(R"({"label":"Maybe"})").ok());
    EXPECT_FALSE(parse_response("I think they conflict").ok());
    EXPECT_FALSE(parse_response(R"({"label":"Conflict"})").ok());
    EXPECT_FALSE(parse_response(R"({"label":"Conflict","confidence":"high"})").ok());
}

TEST(ParseResponse, ClampsAndHandlesBracesInStrings) {
    auto r = parse_response(R"({"label":"Conflict","confidence":1.7})");
    ASSERT_TRUE(r.ok());
    EXPECT_DOUBLE_EQ(r.answer->confidence, 1.0);
    r = parse_response(R"(x {"note":"a } inside","label":"NEUTRAL","confidence":-3} {"label":"Conflict"})");
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(r.answer->label, Label::Neutral);
    EXPECT_DOUBLE_EQ(r.answer->confidence, 0.0);
}

TEST(Voting, MajorityWins) {
    ReplayClient client({}, {answer("Conflict"), answer("Conflict"), answer("Neutral")});
    auto meter = manual_meter();
    const auto r = classify_pair_voted(client, {Strategy::ZeroShot, "a", "b", {}}, fast_options(), meter);
    EXPECT_EQ(r.final_label, Label::Conflict);
    EXPECT_EQ(r.conflict_votes, 2);
    EXPECT_EQ(r.neutral_votes, 1);
    EXPECT_FALSE(r.tie);
    EXPECT_EQ(client.request_count(), 3u);
    for (const auto& req : client.requests()) EXPECT_EQ(req.temperature, 0.0);
}

TEST(Voting, UnparseableVoteTieFallsToRule) {
    ReplayClient client({}, {answer("Conflict"), "garbage", answer("Neutral")});
    auto meter = manual_meter();
    auto r = classify_pair_voted(client, {Strategy::ZeroShot, "a", "b", {}}, fast_options(), meter);
    EXPECT_TRUE(r.tie);
    EXPECT_EQ(r.final_label, Label::Neutral);
    EXPECT_FALSE(r.votes[1].label);
    EXPECT_FALSE(r.votes[1].error.empty());

    auto opts = fast_options();
    opts.tie_rule = TieRule::Conflict;
    r = classify_pair_voted(client, {Strategy::ZeroShot, "a", "b", {}}, opts, meter);
    EXPECT_EQ(r.final_label, Label::Conflict);
}

TEST(Voting, NoParsableVoteIsAnError) {
    ReplayClient client({}, {"nope"});
    auto meter = manual_meter();
    const auto r = classify_pair_voted(client, {Strategy::ZeroShot, "a", "b", {}}, fast_options(), meter);
    EXPECT_FALSE(r.ok());
    EXPECT_FALSE(r.error.empty());
}

TEST(Voting, EvenRunsRejected) {
    ReplayClient client({}, {answer("Neutral")});
    auto meter = manual_meter();
    EXPECT_THROW(classify_pair_voted(client, {Strategy::ZeroShot, "a", "b", {}}, fast_options(2), meter),
                 ValidationError);
}

TEST(Voting, ConcurrentRequestsGiveSameVotes) {
    ReplayClient client({}, {answer("Conflict")});
    auto meter = manual_meter();
    auto opts = fast_options(5);
    opts.max_in_flight = 3;
    const auto r = classify_pair_voted(client, {Strategy::ZeroShot, "a", "b", {}}, opts, meter);
    EXPECT_EQ(r.conflict_votes, 5);
    EXPECT_EQ(client.request_count(), 5u);
}

TEST(Replay, RulesMatchAnchorAndCandidateLines) {
    auto client = ReplayClient::from_file(testing_support::data_dir() + "/toy/replay.json");
    auto meter = manual_meter();
    const auto r = classify_pair_voted(client, {Strategy::FewShot, kAnchor, kCandidate, bundled_shots()},
                                       fast_options(), meter);
    EXPECT_EQ(r.final_label, Label::Conflict);
    const auto n = classify_pair_voted(client, {Strategy::ZeroShot, kCandidate, kAnchor, {}},
                                       fast_options(), meter);
    EXPECT_EQ(n.final_label, Label::Neutral);
}

TEST(Replay, NoDefaultAndNoMatchIsTransportError) {
    ReplayClient client({{"x", "y", {answer("Conflict")}}}, {});
    EXPECT_THROW(client.complete({"m", 0.0, render_prompt({Strategy::ZeroShot, "a", "b", {}})}),
                 TransportError);
}

TEST(Replay, ClockAdvancesByTokens) {
    ReplayClient client({}, {answer("Neutral")});
    client.set_seconds_per_token(0.01);
    auto clock = std::make_shared<sustain::ManualClock>();
    client.attach_clock(clock);
    const auto resp = client.complete({"m", 0.0, "one two three"});
    EXPECT_EQ(resp.usage.prompt_tokens, 3);
    EXPECT_NEAR(clock->now_seconds(), 0.01 * (3 + resp.usage.completion_tokens), 1e-12);
}

TEST(Batch, FourPairsThreeRunsIsTwelveRequests) {
    ReplayClient client({}, {answer("Neutral")});
    auto meter = manual_meter();
    const auto pairs = four_pairs();
    const auto out = classify_batch(client, pairs, Strategy::ZeroShot, {}, fast_options(), meter);
    EXPECT_EQ(out.size(), 4u);
    EXPECT_EQ(client.request_count(), 12u);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i].index, i);
}

TEST(Batch, ResumeAfterInterruptionSkipsJournaledPairs) {
    TempDir dir;
    const auto journal = dir / "classifications.jsonl";
    const auto pairs = four_pairs();
    ReplayClient first({}, {answer("Conflict")});
    FailingAfter outage(first, 6);  // pairs 1-2 succeed, pair 3 fails
    auto meter = manual_meter();
    EXPECT_THROW(classify_batch(outage, pairs, Strategy::ZeroShot, {}, fast_options(), meter, journal),
                 TransportError);
    EXPECT_EQ(read_journal(journal).size(), 2u);

    ReplayClient second({}, {answer("Neutral")});
    const auto out = classify_batch(second, pairs, Strategy::ZeroShot, {}, fast_options(), meter, journal);
    EXPECT_EQ(second.request_count(), 6u);
    ASSERT_EQ(out.size(), 4u);
    EXPECT_EQ(out[0].final_label, Label::Conflict);
    EXPECT_EQ(out[1].final_label, Label::Conflict);
    EXPECT_EQ(out[2].final_label, Label::Neutral);
    EXPECT_EQ(out[3].final_label, Label::Neutral);
    for (const auto& req : second.requests()) {
        EXPECT_NE(req.prompt.find("Anchor two"), std::string::npos);
    }
    EXPECT_EQ(read_journal(journal).size(), 4u);
}

TEST(Batch, TornJournalLineIsRedone) {
    TempDir dir;
    const auto journal = dir / "j.jsonl";
    const auto pairs = four_pairs();
    ReplayClient client({}, {answer("Neutral")});
    auto meter = manual_meter();
    const std::vector<PairInput> first_two(pairs.begin(), pairs.begin() + 2);
    classify_batch(client, first_two, Strategy::ZeroShot, {}, fast_options(), meter, journal);
    std::ofstream(journal, std::ios::app) << "{\"index\": 2, \"anchor";

    ReplayClient again({}, {answer("Neutral")});
    const auto out = classify_batch(again, pairs, Strategy::ZeroShot, {}, fast_options(), meter, journal);
    EXPECT_EQ(out.size(), 4u);
    EXPECT_EQ(again.request_count(), 6u);
    EXPECT_EQ(read_journal(journal).size(), 4u);
}

TEST(Batch, JournalRoundTripsResults) {
    ReplayClient client({}, {answer("Conflict", 0.75), "junk", answer("Neutral", 0.5)});
    auto meter = manual_meter();
    auto r = classify_pair_voted(client, {Strategy::ZeroShot, "a", "b", {}}, fast_options(), meter, "x", "y");
    const auto back = result_from_json(nlohmann::json::parse(to_json(r).dump()));
    EXPECT_EQ(to_json(back).dump(), to_json(r).dump());
}

TEST(Retry, RecoversWithinAttempts) {
    Flaky client(2);
    auto meter = manual_meter();
    auto opts = fast_options(1);
    opts.retry.attempts = 3;
    const auto r = classify_pair_voted(client, {Strategy::ZeroShot, "a", "b", {}}, opts, meter);
    EXPECT_EQ(r.final_label, Label::Conflict);
    EXPECT_EQ(client.calls(), 3);
}

TEST(Retry, ExhaustedAttemptsThrow) {
    Flaky client(10);
    auto meter = manual_meter();
    auto opts = fast_options(1);
    opts.retry.attempts = 3;
    opts.retry.base_delay = std::chrono::milliseconds(1);
    EXPECT_THROW(classify_pair_voted(client, {Strategy::ZeroShot, "a", "b", {}}, opts, meter),
                 TransportError);
    EXPECT_EQ(client.calls(), 3);
}

TEST(Http, PostsChatCompletionAndReadsContent) {
    httplib::Server server;
    std::string seen_auth;
    nlohmann::json seen_body;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        seen_body = nlohmann::json::parse(req.body);
        res.set_content(R"({"choices":[{"message":{"content":"{\"label\":\"Conflict\",\"confidence\":0.8}"}}],)"
                        R"("usage":{"prompt_tokens":11,"completion_tokens":7}})",
                        "application/json");
    });
    server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    const std::string base = "http://127.0.0.1:" + std::to_string(port);
    HttpChatClient client(base, "secret", std::chrono::seconds(5));
    const auto resp = client.complete({"mistral", 0.0, "hello"});
    EXPECT_EQ(seen_auth, "Bearer secret");
    EXPECT_EQ(seen_body["model"], "mistral");
    EXPECT_EQ(seen_body["temperature"], 0.0);
    EXPECT_EQ(seen_body["messages"][0]["content"], "hello");
    EXPECT_EQ(parse_response(resp.content).answer->label, Label::Conflict);
    EXPECT_EQ(resp.usage.prompt_tokens, 11);

    HttpChatClient broken(base + "/broken", "", std::chrono::seconds(5));
    EXPECT_THROW(broken.complete({"m", 0.0, "x"}), TransportError);

    server.stop();
    t.join();
    EXPECT_THROW(client.complete({"m", 0.0, "x"}), TransportError);
}

TEST(Http, RejectsNonHttpEndpoint) {
    EXPECT_THROW(HttpChatClient("https://example.com"), ConfigError);
}
