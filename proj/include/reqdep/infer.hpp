#pragma once

#include "reqdep/label.hpp"
#include "reqdep/sustain.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace reqdep::infer {

enum class Strategy { ZeroShot, FewShot, ChainOfThought };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);  // zeroshot | fewshot | cot

struct Shot {
    std::string anchor;
    std::string candidate;
    Label label = Label::Neutral;
};

struct PromptSpec {
    Strategy strategy = Strategy::ZeroShot;
    std::string anchor_text;
    std::string candidate_text;
    std::vector<Shot> shots;  // FewShot only

    /// Shots must be present exactly when the strategy is FewShot.
    void validate() const;
};

/// Deterministic prompt text for the strategy with anchor and candidate
/// embedded verbatim.
std::string render_prompt(const PromptSpec& spec);

/// JSON array of {"anchor", "candidate", "label"}.
std::vector<Shot> load_shots(const std::filesystem::path& path);
/// All shots when `n` covers them; otherwise `n` drawn by a seeded shuffle,
/// kept in file order.
std::vector<Shot> select_shots(std::span<const Shot> shots, std::size_t n, std::uint64_t seed);

struct ParsedAnswer {
    Label label;
    double confidence;
};

struct ParseOutcome {
    std::optional<ParsedAnswer> answer;
    std::string error;  // set when `answer` is empty

    bool ok() const { return answer.has_value(); }
};

/// Reads the first balanced {...} block of a model reply. Labels are
/// case-insensitive; confidence may be a number or numeric string and is
/// clamped to [0, 1]. Prose around the block is ignored.
ParseOutcome parse_response(std::string_view raw);

struct Usage {
    long prompt_tokens = 0;
    long completion_tokens = 0;
};

struct ChatRequest {
    std::string model;
    double temperature = 0.0;
    std::string prompt;
};

struct ChatResponse {
    std::string content;
    Usage usage;
};

/// Chat-completion style endpoint. Implementations throw TransportError when
/// a single attempt fails and must tolerate concurrent calls.
class ModelClient {
public:
    virtual ~ModelClient() = default;
    virtual ChatResponse complete(const ChatRequest& request) = 0;
};

nlohmann::json request_body(const ChatRequest& request);
/// Throws TransportError when the body lacks choices[0].message.content.
ChatResponse parse_response_body(const std::string& body);

/// POSTs `{model, temperature, messages:[{role:"user", content}]}` to an
/// http:// endpoint. `api_key`, when set, is sent as a Bearer token.
class HttpChatClient final : public ModelClient {
public:
    explicit HttpChatClient(std::string endpoint, std::string api_key = {},
                            std::chrono::seconds timeout = std::chrono::seconds(120));
    ChatResponse complete(const ChatRequest& request) override;

private:
    std::string base_;
    std::string path_;
    std::string api_key_;
    std::chrono::seconds timeout_;
};

/// Scripted stand-in for a model endpoint.
///
/// A rule matches when the prompt's ANCHOR line contains `anchor_contains`
/// and its CANDIDATE line contains `candidate_contains` (empty matches
/// anything). Each rule cycles through its responses; unmatched prompts cycle
/// through the default responses. Usage is counted in whitespace tokens. When
/// a clock is attached, each call advances it by
/// seconds_per_token * (prompt + completion tokens).
class ReplayClient final : public ModelClient {
public:
    struct Rule {
        std::string anchor_contains;
        std::string candidate_contains;
        std::vector<std::string> responses;
    };

    ReplayClient(std::vector<Rule> rules, std::vector<std::string> default_responses);
    /// {"default": [...], "rules": [{"anchor", "candidate", "responses"}],
    ///  "seconds_per_token": x}
    static ReplayClient from_json(const nlohmann::json& doc);
    static ReplayClient from_file(const std::filesystem::path& path);

    void attach_clock(std::shared_ptr<sustain::ManualClock> clock) { clock_ = std::move(clock); }
    double seconds_per_token() const { return seconds_per_token_; }
    void set_seconds_per_token(double s) { seconds_per_token_ = s; }

    ChatResponse complete(const ChatRequest& request) override;

    std::size_t request_count() const;
    std::vector<ChatRequest> requests() const;

private:
    std::vector<Rule> rules_;
    std::vector<std::string> default_;
    std::vector<std::size_t> cursor_;
    std::size_t default_cursor_ = 0;
    double seconds_per_token_ = 0.0;
    std::shared_ptr<sustain::ManualClock> clock_;
    std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
    std::vector<ChatRequest> log_;
};

/// Whitespace token count used for replay usage figures.
long count_tokens(std::string_view s);

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds base_delay{200};  // doubled after each failure
};

enum class TieRule { Neutral, Conflict };
TieRule parse_tie_rule(std::string_view name);

struct InferenceOptions {
    std::string model = "replay";
    int runs = 3;
    TieRule tie_rule = TieRule::Neutral;
    RetryPolicy retry;
    std::size_t max_in_flight = 1;
    std::string meter_label = "inference";
};

struct Vote {
    std::optional<Label> label;  // empty when the reply did not parse
    double confidence = 0.0;
    std::string raw_text;
    Usage usage;
    std::string error;
};

struct ClassificationResult {
    std::size_t index = 0;  // position in the batch
    std::string anchor_id;
    std::string candidate_id;
    std::optional<Label> final_label;  // empty when no vote parsed
    std::vector<Vote> votes;
    int conflict_votes = 0;
    int neutral_votes = 0;
    bool tie = false;
    std::string error;
    sustain::MeterReading meter;

    bool ok() const { return final_label.has_value(); }
    long prompt_tokens() const;
    long completion_tokens() const;
};

nlohmann::ordered_json to_json(const ClassificationResult& r);
ClassificationResult result_from_json(const nlohmann::json& j);

/// Sends `options.runs` requests at temperature 0 and takes the strict
/// majority of parsed votes; an even split falls to the tie rule. Throws
/// ValidationError for even `runs` and TransportError once a request has
/// failed `retry.attempts` times.
ClassificationResult classify_pair_voted(ModelClient& client, const PromptSpec& spec,
                                         const InferenceOptions& options, sustain::Meter& meter,
                                         std::string anchor_id = {}, std::string candidate_id = {});

struct PairInput {
    std::string anchor_id;
    std::string candidate_id;
    std::string anchor_text;
    std::string candidate_text;
};

/// Classifies `pairs` in order. With a journal path, results already in the
/// journal are reused and every new result is appended as one JSON line
/// before the next pair starts.
std::vector<ClassificationResult> classify_batch(
    ModelClient& client, std::span<const PairInput> pairs, Strategy strategy,
    std::span<const Shot> shots, const InferenceOptions& options, sustain::Meter& meter,
    const std::optional<std::filesystem::path>& journal = std::nullopt);

/// Parsed journal lines; a torn trailing line is ignored.
std::vector<ClassificationResult> read_journal(const std::filesystem::path& path);

}  // namespace reqdep::infer
