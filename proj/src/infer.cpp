#include "reqdep/infer.hpp"

#include "reqdep/errors.hpp"
#include "reqdep/fs.hpp"
#include "reqdep/text.hpp"

#include "httplib.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <random>
#include <sstream>
#include <thread>

namespace reqdep::infer {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::string_view kHeader =
    "Task context: You are a requirements analyst.\n"
    "Goal: Given an ANCHOR requirement and one CANDIDATE requirement, classify the candidate as:\n"
    " - Conflicts with the Anchor\n"
    " - Neutral to the Anchor\n"
    "\n"
    "Label definitions\n"
    "Conflict: Requirements cannot both be true/satisfied simultaneously.\n"
    "They impose incompatible or contradictory constraints.\n"
    "Neutral: Requirements describe different, unrelated or independent behaviour.\n";

constexpr std::string_view kThinkingGuidance =
    "Thinking guidance (internal only)\n"
    "1. Identify entities, constraints\n"
    "2. Compare names, quantities, conditions\n"
    "3. Decide conflict / neutral. Do NOT reveal reasoning\n";

constexpr std::string_view kZeroShotContract =
    "IMPORTANT:\n"
    "Return only the following JSON format — no extra text:\n"
    "{\n"
    "  \"label\": \"Conflict\" or \"Neutral\",\n"
    "  \"confidence\": <0–1>\n"
    "}\n";

constexpr std::string_view kFewShotContract =
    "MUST return your final answer strictly in the following JSON\n"
    "format. Do NOT include any text before or after the JSON:\n"
    "{\n"
    "  \"label\": \"Conflict\"|\"Neutral\",\n"
    "  \"confidence\": 0–1\n"
    "}\n";

constexpr std::string_view kCotContract =
    "MUST return your final answer strictly in the following JSON\n"
    "format. Do NOT include any text before or after the JSON:\n"
    "{\n"
    "  \"label\": \"Conflict\" or \"Neutral\",\n"
    "  \"confidence\": <0–1>\n"
    "}\n";

void append_pair(std::string& out, const std::string& anchor, const std::string& candidate) {
    out += "ANCHOR: \"" + anchor + "\"\n";
    out += "CANDIDATE: \"" + candidate + "\"\n";
}

// Line following `marker` (up to the newline) in a rendered prompt.
std::string line_after(std::string_view prompt, std::string_view marker) {
    // the last occurrence is the pair under test; shots use a different marker
    const auto pos = prompt.rfind(marker);
    if (pos == std::string_view::npos) return {};
    const auto start = pos + marker.size();
    const auto end = prompt.find('\n', start);
    return std::string(prompt.substr(start, end == std::string_view::npos ? end : end - start));
}

std::optional<std::string> first_balanced_block(std::string_view s) {
    const auto open = s.find('{');
    if (open == std::string_view::npos) return std::nullopt;
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = open; i < s.size(); ++i) {
        const char c = s[i];
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == '{') ++depth;
        else if (c == '}' && --depth == 0) return std::string(s.substr(open, i - open + 1));
    }
    return std::nullopt;
}

ChatResponse complete_with_retry(ModelClient& client, const ChatRequest& request,
                                 const RetryPolicy& retry) {
    const int attempts = std::max(1, retry.attempts);
    auto delay = retry.base_delay;
    std::string last_error;
    for (int attempt = 1; attempt <= attempts; ++attempt) {
        try {
            return client.complete(request);
        } catch (const TransportError& e) {
            last_error = e.what();
        }
        if (attempt < attempts && delay.count() > 0) {
            std::this_thread::sleep_for(delay);
            delay *= 2;
        }
    }
    throw TransportError("model request failed after " + std::to_string(attempts) +
                         " attempts: " + last_error);
}

}  // namespace

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::ZeroShot: return "zeroshot";
        case Strategy::FewShot: return "fewshot";
        case Strategy::ChainOfThought: return "cot";
    }
    return "?";
}

Strategy parse_strategy(std::string_view name) {
    const auto n = text::to_lower(name);
    if (n == "zeroshot" || n == "zero-shot" || n == "zs") return Strategy::ZeroShot;
    if (n == "fewshot" || n == "few-shot" || n == "fs") return Strategy::FewShot;
    if (n == "cot" || n == "chainofthought") return Strategy::ChainOfThought;
    throw ConfigError("unknown prompting strategy '" + std::string(name) + "'");
}

void PromptSpec::validate() const {
    if ((strategy == Strategy::FewShot) != !shots.empty()) {
        throw ValidationError("few-shot prompts need shots; other strategies must not carry any");
    }
}

std::string render_prompt(const PromptSpec& spec) {
    spec.validate();
    std::string out(kHeader);
    out += '\n';
    switch (spec.strategy) {
        case Strategy::ZeroShot:
            append_pair(out, spec.anchor_text, spec.candidate_text);
            out += '\n';
            out += kZeroShotContract;
            break;
        case Strategy::FewShot:
            out += "Examples:\n";
            for (std::size_t i = 0; i < spec.shots.size(); ++i) {
                const auto& shot = spec.shots[i];
                out += "Example " + std::to_string(i + 1) + ":\n";
                out += "Anchor: \"" + shot.anchor + "\"\n";
                out += "Candidate: \"" + shot.candidate + "\"\n";
                out += "Answer: {\"label\": \"" + std::string(to_string(shot.label)) +
                       "\", \"confidence\": 1.0}\n";
            }
            out += '\n';
            append_pair(out, spec.anchor_text, spec.candidate_text);
            out += '\n';
            out += kFewShotContract;
            break;
        case Strategy::ChainOfThought:
            out += kThinkingGuidance;
            out += '\n';
            append_pair(out, spec.anchor_text, spec.candidate_text);
            out += '\n';
            out += kCotContract;
            break;
    }
    return out;
}

std::vector<Shot> load_shots(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(fs::read_text(path));
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (!doc.is_array()) throw ParseError(path.string() + ": expected a JSON array of shots");
    std::vector<Shot> shots;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& o = doc[i];
        const std::string where = path.string() + " shot " + std::to_string(i + 1);
        if (!o.is_object() || !o.contains("anchor") || !o.contains("candidate") ||
            !o.contains("label")) {
            throw ParseError(where + ": expected {anchor, candidate, label}");
        }
        const auto label = parse_label(o["label"].get<std::string>());
        if (!label) throw ParseError(where + ": unknown label");
        shots.push_back({o["anchor"].get<std::string>(), o["candidate"].get<std::string>(), *label});
    }
    return shots;
}

std::vector<Shot> select_shots(std::span<const Shot> shots, std::size_t n, std::uint64_t seed) {
    if (n >= shots.size()) return {shots.begin(), shots.end()};
    std::vector<std::size_t> idx(shots.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    std::vector<Shot> out;
    for (auto i : idx) out.push_back(shots[i]);
    return out;
}

ParseOutcome parse_response(std::string_view raw) {
    const auto block = first_balanced_block(raw);
    if (!block) return {std::nullopt, "no JSON object in reply"};
    json obj;
    try {
        obj = json::parse(*block);
    } catch (const json::parse_error&) {
        return {std::nullopt, "malformed JSON object in reply"};
    }
    if (!obj.is_object() || !obj.contains("label") || !obj["label"].is_string()) {
        return {std::nullopt, "reply has no string \"label\""};
    }
    const auto label = parse_label(obj["label"].get<std::string>());
    if (!label) return {std::nullopt, "unknown label '" + obj["label"].get<std::string>() + "'"};
    if (!obj.contains("confidence")) return {std::nullopt, "reply has no \"confidence\""};

    double confidence = 0.0;
    const auto& c = obj["confidence"];
    if (c.is_number()) {
        confidence = c.get<double>();
    } else if (c.is_string()) {
        const auto s = text::trim(c.get<std::string>());
        std::size_t used = 0;
        try {
            confidence = std::stod(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != s.size()) return {std::nullopt, "unparseable confidence"};
    } else {
        return {std::nullopt, "unparseable confidence"};
    }
    if (!std::isfinite(confidence)) return {std::nullopt, "non-finite confidence"};
    return {ParsedAnswer{*label, std::clamp(confidence, 0.0, 1.0)}, {}};
}

nlohmann::json request_body(const ChatRequest& request) {
    return json{{"model", request.model},
                {"temperature", request.temperature},
                {"messages", json::array({json{{"role", "user"}, {"content", request.prompt}}})}};
}

ChatResponse parse_response_body(const std::string& body) {
    json doc;
    try {
        doc = json::parse(body);
    } catch (const json::parse_error& e) {
        throw TransportError(std::string("endpoint returned malformed JSON: ") + e.what());
    }
    try {
        ChatResponse r;
        r.content = doc.at("choices").at(0).at("message").at("content").get<std::string>();
        if (doc.contains("usage") && doc["usage"].is_object()) {
            r.usage.prompt_tokens = doc["usage"].value("prompt_tokens", 0L);
            r.usage.completion_tokens = doc["usage"].value("completion_tokens", 0L);
        }
        return r;
    } catch (const json::exception& e) {
        throw TransportError(std::string("endpoint reply lacks choices[0].message.content: ") +
                             e.what());
    }
}

HttpChatClient::HttpChatClient(std::string endpoint, std::string api_key,
                               std::chrono::seconds timeout)
    : api_key_(std::move(api_key)), timeout_(timeout) {
    if (!endpoint.starts_with("http://")) {
        throw ConfigError("endpoint must be an http:// URL, got '" + endpoint + "'");
    }
    const auto slash = endpoint.find('/', 7);
    base_ = slash == std::string::npos ? endpoint : endpoint.substr(0, slash);
    path_ = slash == std::string::npos ? "/v1/chat/completions" : endpoint.substr(slash);
}

ChatResponse HttpChatClient::complete(const ChatRequest& request) {
    httplib::Client cli(base_);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    cli.set_write_timeout(timeout_);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = cli.Post(path_, headers, request_body(request).dump(), "application/json");
    if (!res) {
        throw TransportError("POST " + base_ + path_ + " failed: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw TransportError("POST " + base_ + path_ + " returned HTTP " +
                             std::to_string(res->status));
    }
    return parse_response_body(res->body);
}

long count_tokens(std::string_view s) { return static_cast<long>(text::split_ws(s).size()); }

ReplayClient::ReplayClient(std::vector<Rule> rules, std::vector<std::string> default_responses)
    : rules_(std::move(rules)), default_(std::move(default_responses)), cursor_(rules_.size(), 0) {
    for (const auto& r : rules_) {
        if (r.responses.empty()) throw ConfigError("replay rule without responses");
    }
}

ReplayClient ReplayClient::from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ConfigError("replay script must be a JSON object");
    std::vector<Rule> rules;
    for (const auto& r : doc.value("rules", json::array())) {
        rules.push_back({r.value("anchor", ""), r.value("candidate", ""),
                         r.at("responses").get<std::vector<std::string>>()});
    }
    ReplayClient client(std::move(rules), doc.value("default", std::vector<std::string>{}));
    client.seconds_per_token_ = doc.value("seconds_per_token", 0.0);
    return client;
}

ReplayClient ReplayClient::from_file(const std::filesystem::path& path) {
    try {
        return from_json(json::parse(fs::read_text(path)));
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

ChatResponse ReplayClient::complete(const ChatRequest& request) {
    const std::string anchor = line_after(request.prompt, "ANCHOR: ");
    const std::string candidate = line_after(request.prompt, "CANDIDATE: ");
    ChatResponse r;
    {
        std::lock_guard lock(*mu_);
        log_.push_back(request);
        bool matched = false;
        for (std::size_t i = 0; i < rules_.size(); ++i) {
            const auto& rule = rules_[i];
            if (anchor.find(rule.anchor_contains) == std::string::npos ||
                candidate.find(rule.candidate_contains) == std::string::npos) {
                continue;
            }
            r.content = rule.responses[cursor_[i]++ % rule.responses.size()];
            matched = true;
            break;
        }
        if (!matched) {
            if (default_.empty()) throw TransportError("replay script has no response for prompt");
            r.content = default_[default_cursor_++ % default_.size()];
        }
    }
    r.usage.prompt_tokens = count_tokens(request.prompt);
    r.usage.completion_tokens = count_tokens(r.content);
    if (clock_) {
        clock_->advance(seconds_per_token_ *
                        static_cast<double>(r.usage.prompt_tokens + r.usage.completion_tokens));
    }
    return r;
}

std::size_t ReplayClient::request_count() const {
    std::lock_guard lock(*mu_);
    return log_.size();
}

std::vector<ChatRequest> ReplayClient::requests() const {
    std::lock_guard lock(*mu_);
    return log_;
}

TieRule parse_tie_rule(std::string_view name) {
    const auto label = parse_label(name);
    if (!label) throw ConfigError("tie rule must be Conflict or Neutral");
    return *label == Label::Conflict ? TieRule::Conflict : TieRule::Neutral;
}

long ClassificationResult::prompt_tokens() const {
    long n = 0;
    for (const auto& v : votes) n += v.usage.prompt_tokens;
    return n;
}

long ClassificationResult::completion_tokens() const {
    long n = 0;
    for (const auto& v : votes) n += v.usage.completion_tokens;
    return n;
}

ordered_json to_json(const ClassificationResult& r) {
    ordered_json votes = ordered_json::array();
    for (const auto& v : r.votes) {
        votes.push_back(ordered_json{
            {"label", v.label ? ordered_json(to_string(*v.label)) : ordered_json(nullptr)},
            {"confidence", v.confidence},
            {"raw_text", v.raw_text},
            {"prompt_tokens", v.usage.prompt_tokens},
            {"completion_tokens", v.usage.completion_tokens},
            {"error", v.error}});
    }
    return ordered_json{
        {"index", r.index},
        {"anchor_id", r.anchor_id},
        {"candidate_id", r.candidate_id},
        {"final_label", r.final_label ? ordered_json(to_string(*r.final_label)) : ordered_json(nullptr)},
        {"vote_counts", ordered_json{{"Conflict", r.conflict_votes}, {"Neutral", r.neutral_votes}}},
        {"tie", r.tie},
        {"error", r.error},
        {"votes", std::move(votes)},
        {"meter", sustain::to_json(r.meter)}};
}

ClassificationResult result_from_json(const nlohmann::json& j) {
    ClassificationResult r;
    r.index = j.at("index").get<std::size_t>();
    r.anchor_id = j.at("anchor_id").get<std::string>();
    r.candidate_id = j.at("candidate_id").get<std::string>();
    if (!j.at("final_label").is_null()) r.final_label = parse_label(j["final_label"].get<std::string>());
    r.conflict_votes = j.at("vote_counts").at("Conflict").get<int>();
    r.neutral_votes = j.at("vote_counts").at("Neutral").get<int>();
    r.tie = j.at("tie").get<bool>();
    r.error = j.at("error").get<std::string>();
    for (const auto& v : j.at("votes")) {
        Vote vote;
        if (!v.at("label").is_null()) vote.label = parse_label(v["label"].get<std::string>());
        vote.confidence = v.at("confidence").get<double>();
        vote.raw_text = v.at("raw_text").get<std::string>();
        vote.usage.prompt_tokens = v.at("prompt_tokens").get<long>();
        vote.usage.completion_tokens = v.at("completion_tokens").get<long>();
        vote.error = v.at("error").get<std::string>();
        r.votes.push_back(std::move(vote));
    }
    r.meter = sustain::reading_from_json(j.at("meter"));
    return r;
}

ClassificationResult classify_pair_voted(ModelClient& client, const PromptSpec& spec,
                                         const InferenceOptions& options, sustain::Meter& meter,
                                         std::string anchor_id, std::string candidate_id) {
    if (options.runs < 1 || options.runs % 2 == 0) {
        throw ValidationError("runs must be a positive odd number, got " +
                              std::to_string(options.runs));
    }
    const ChatRequest request{options.model, 0.0, render_prompt(spec)};

    ClassificationResult result;
    result.anchor_id = std::move(anchor_id);
    result.candidate_id = std::move(candidate_id);

    auto run_all = [&] {
        std::vector<ChatResponse> replies(static_cast<std::size_t>(options.runs));
        const std::size_t width = std::max<std::size_t>(1, options.max_in_flight);
        for (std::size_t start = 0; start < replies.size(); start += width) {
            const std::size_t end = std::min(replies.size(), start + width);
            if (width == 1) {
                replies[start] = complete_with_retry(client, request, options.retry);
                continue;
            }
            std::vector<std::future<ChatResponse>> inflight;
            for (std::size_t i = start; i < end; ++i) {
                inflight.push_back(std::async(std::launch::async, [&] {
                    return complete_with_retry(client, request, options.retry);
                }));
            }
            for (std::size_t i = start; i < end; ++i) replies[i] = inflight[i - start].get();
        }
        return replies;
    };
    auto [replies, reading] = meter.measure(options.meter_label, run_all);
    result.meter = std::move(reading);

    for (auto& reply : replies) {
        Vote vote;
        vote.raw_text = std::move(reply.content);
        vote.usage = reply.usage;
        const auto parsed = parse_response(vote.raw_text);
        if (parsed.ok()) {
            vote.label = parsed.answer->label;
            vote.confidence = parsed.answer->confidence;
            (vote.label == Label::Conflict ? result.conflict_votes : result.neutral_votes)++;
        } else {
            vote.error = parsed.error;
        }
        result.votes.push_back(std::move(vote));
    }

    if (result.conflict_votes + result.neutral_votes == 0) {
        result.error = "no vote could be parsed";
    } else if (result.conflict_votes > result.neutral_votes) {
        result.final_label = Label::Conflict;
    } else if (result.neutral_votes > result.conflict_votes) {
        result.final_label = Label::Neutral;
    } else {
        result.tie = true;
        result.final_label =
            options.tie_rule == TieRule::Conflict ? Label::Conflict : Label::Neutral;
    }
    return result;
}

std::vector<ClassificationResult> read_journal(const std::filesystem::path& path) {
    std::vector<ClassificationResult> out;
    if (!std::filesystem::exists(path)) return out;
    std::istringstream in(fs::read_text(path));
    std::string line;
    while (std::getline(in, line)) {
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(result_from_json(json::parse(line)));
        } catch (const json::exception&) {
            if (in.peek() == std::char_traits<char>::eof()) break;  // torn final write
            throw ParseError(path.string() + ": corrupt journal line");
        }
    }
    return out;
}

namespace {

// Drops a partial last line so appends start on a fresh line.
void repair_journal_tail(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) return;
    const auto content = fs::read_text(path);
    if (content.empty() || content.back() == '\n') return;
    const auto cut = content.rfind('\n');
    std::filesystem::resize_file(path, cut == std::string::npos ? 0 : cut + 1);
}

}  // namespace

std::vector<ClassificationResult> classify_batch(ModelClient& client,
                                                 std::span<const PairInput> pairs,
                                                 Strategy strategy, std::span<const Shot> shots,
                                                 const InferenceOptions& options,
                                                 sustain::Meter& meter,
                                                 const std::optional<std::filesystem::path>& journal) {
    std::map<std::size_t, ClassificationResult> done;
    std::ofstream sink;
    if (journal) {
        for (auto& r : read_journal(*journal)) {
            if (r.index < pairs.size() && pairs[r.index].anchor_id == r.anchor_id &&
                pairs[r.index].candidate_id == r.candidate_id) {
                done[r.index] = std::move(r);
            }
        }
        repair_journal_tail(*journal);
        if (journal->has_parent_path()) std::filesystem::create_directories(journal->parent_path());
        sink.open(*journal, std::ios::app | std::ios::binary);
        if (!sink) throw ConfigError("cannot open journal " + journal->string());
    }

    std::vector<ClassificationResult> out;
    out.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (auto it = done.find(i); it != done.end()) {
            out.push_back(std::move(it->second));
            continue;
        }
        const auto& p = pairs[i];
        PromptSpec spec{strategy, p.anchor_text, p.candidate_text, {}};
        if (strategy == Strategy::FewShot) spec.shots.assign(shots.begin(), shots.end());
        auto r = classify_pair_voted(client, spec, options, meter, p.anchor_id, p.candidate_id);
        r.index = i;
        if (sink.is_open()) {
            sink << to_json(r).dump() << '\n';
            sink.flush();
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace reqdep::infer
