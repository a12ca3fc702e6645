#include "reqdep/pipeline.hpp"

#include "reqdep/csv.hpp"
#include "reqdep/errors.hpp"
#include "reqdep/extract.hpp"
#include "reqdep/fs.hpp"
#include "reqdep/text.hpp"
#include "reqdep/vsr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <unordered_map>

namespace reqdep::pipeline {

namespace stdfs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// ---- config helpers -------------------------------------------------------

void reject_unknown(const json& obj, const std::string& where,
                    std::initializer_list<std::string_view> allowed) {
    if (!obj.is_object()) throw ConfigError((where.empty() ? "config" : where) + ": expected an object");
    for (const auto& item : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
            throw ConfigError("unknown config key '" + (where.empty() ? "" : where + ".") +
                              item.key() + "'");
        }
    }
}

template <class T>
T get_or(const json& obj, const std::string& key, const std::string& where, T fallback) {
    const auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return fallback;
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key '" + where + key + "' has the wrong type");
    }
}

template <class T>
std::optional<T> get_opt(const json& obj, const std::string& key, const std::string& where) {
    const auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    return get_or<T>(obj, key, where, T{});
}

stdfs::path resolve(const stdfs::path& base, const std::string& p) {
    stdfs::path path(p);
    return (path.is_absolute() ? path : base / path).lexically_normal();
}

std::optional<stdfs::path> get_path(const json& obj, const std::string& key,
                                    const std::string& where, const stdfs::path& base) {
    const auto s = get_opt<std::string>(obj, key, where);
    if (!s || s->empty()) return std::nullopt;
    return resolve(base, *s);
}

json section(const json& doc, const std::string& key) {
    const auto it = doc.find(key);
    return it == doc.end() || it->is_null() ? json::object() : *it;
}

bool safe_name(const std::string& s) {
    return !s.empty() && s != "." && s != ".." && s.find('/') == std::string::npos &&
           s.find('\\') == std::string::npos;
}

void require_file(const stdfs::path& p, const std::string& key) {
    if (!stdfs::is_regular_file(p)) {
        throw ConfigError("config key '" + key + "' names a missing file: " + p.string());
    }
}

// ---- stage plumbing -------------------------------------------------------

template <class F>
auto in_stage(std::string_view stage, F&& f) {
    const std::string tag = std::string(stage) + ": ";
    try {
        return f();
    } catch (const ParseError& e) {
        throw ParseError(tag + e.what());
    } catch (const IntegrityError& e) {
        throw IntegrityError(tag + e.what());
    } catch (const LookupError& e) {
        throw LookupError(tag + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(tag + e.what());
    } catch (const ValidationError& e) {
        throw ValidationError(tag + e.what());
    } catch (const TransportError& e) {
        throw TransportError(tag + e.what());
    } catch (const UndefinedSimilarity& e) {
        throw UndefinedSimilarity(tag + e.what());
    }
}

/// Meter plus the optional simulated clock that retrieval work advances.
struct MeterKit {
    std::shared_ptr<sustain::ManualClock> manual;
    std::unique_ptr<sustain::Meter> meter;
    double seconds_per_unit = 0.0;

    void work(double units) const {
        if (manual) manual->advance(units * seconds_per_unit);
    }
};

MeterKit make_meter(const ExperimentConfig& c) {
    MeterKit kit;
    std::shared_ptr<sustain::Clock> clock;
    if (c.sustainability.clock == "simulated") {
        kit.manual = std::make_shared<sustain::ManualClock>();
        kit.seconds_per_unit = c.sustainability.seconds_per_work_unit;
        clock = kit.manual;
    }
    kit.meter = std::make_unique<sustain::Meter>(
        sustain::MeterConfig{c.sustainability.power_watts, c.sustainability.meter_source},
        std::move(clock));
    return kit;
}

struct StageReading {
    std::string dataset;
    sustain::MeterReading reading;
};

stdfs::path meter_file(const ExperimentConfig& c, std::string_view stage) {
    return c.run_dir() / "meter" / (std::string(stage) + ".json");
}

void write_readings(const ExperimentConfig& c, std::string_view stage,
                    const std::vector<StageReading>& readings) {
    ordered_json arr = ordered_json::array();
    for (const auto& r : readings) {
        arr.push_back(ordered_json{{"dataset", r.dataset}, {"reading", sustain::to_json(r.reading)}});
    }
    const auto path = meter_file(c, stage);
    stdfs::create_directories(path.parent_path());
    fs::write_atomic(path, arr.dump(2) + "\n");
}

std::vector<StageReading> read_readings(const stdfs::path& path) {
    std::vector<StageReading> out;
    if (!stdfs::exists(path)) return out;
    for (const auto& r : json::parse(fs::read_text(path))) {
        out.push_back({r.at("dataset").get<std::string>(), sustain::reading_from_json(r.at("reading"))});
    }
    return out;
}

json read_json(const stdfs::path& path, std::string_view producer) {
    if (!stdfs::exists(path)) {
        throw LookupError("missing " + path.filename().string() + " (run the " +
                          std::string(producer) + " stage first)");
    }
    try {
        return json::parse(fs::read_text(path));
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

std::vector<json> read_jsonl(const stdfs::path& path, std::string_view producer) {
    if (!stdfs::exists(path)) {
        throw LookupError("missing " + path.filename().string() + " (run the " +
                          std::string(producer) + " stage first)");
    }
    std::vector<json> out;
    std::istringstream in(fs::read_text(path));
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (text::trim(line).empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw ParseError(path.string() + " line " + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

std::string jsonl(const std::vector<ordered_json>& lines) {
    std::string out;
    for (const auto& l : lines) out += l.dump() + "\n";
    return out;
}

stdfs::path corpus_file(const ExperimentConfig& c, const std::string& name, std::string_view kind) {
    return c.run_dir() / "corpus" / (name + "." + std::string(kind) + ".csv");
}

std::vector<corpus::Dataset> load_ingested(const ExperimentConfig& c) {
    std::vector<corpus::Dataset> out;
    for (const auto& d : c.datasets) {
        const auto req = corpus_file(c, d.name, "requirements");
        if (!stdfs::exists(req)) {
            throw LookupError("missing ingested corpus for '" + d.name + "' (run the ingest stage first)");
        }
        auto ds = corpus::load_requirements(req, corpus::Format::Csv, d.name);
        const auto pairs = corpus_file(c, d.name, "pairs");
        if (stdfs::exists(pairs)) corpus::attach_pairs(ds, pairs);
        out.push_back(std::move(ds));
    }
    return out;
}

/// Anchors of the labelled pairs in first-appearance order; every requirement
/// when the dataset carries no pairs.
std::vector<std::string> query_ids(const corpus::Dataset& ds) {
    std::vector<std::string> out;
    if (ds.pairs.empty()) {
        for (const auto& r : ds.requirements) out.push_back(r.id);
        return out;
    }
    std::set<std::string> seen;
    for (const auto& p : ds.pairs) {
        if (seen.insert(p.anchor_id).second) out.push_back(p.anchor_id);
    }
    return out;
}

ordered_json entities_json(const extract::EntitySet& set) {
    ordered_json arr = ordered_json::array();
    for (const auto& e : set.entities) {
        arr.push_back(ordered_json{{"kind", extract::to_string(e.kind)}, {"value", e.value}});
    }
    return arr;
}

std::map<std::string, std::vector<extract::EntitySet>> read_entities(const ExperimentConfig& c) {
    std::map<std::string, std::vector<extract::EntitySet>> out;
    for (const auto& line : read_jsonl(c.run_dir() / "entities.jsonl", "extract")) {
        extract::EntitySet set;
        set.requirement_id = line.at("id").get<std::string>();
        for (const auto& e : line.at("entities")) {
            set.entities.insert({extract::parse_kind(e.at("kind").get<std::string>()),
                                 e.at("value").get<std::string>()});
        }
        out[line.at("dataset").get<std::string>()].push_back(std::move(set));
    }
    return out;
}

std::unique_ptr<vsr::EmbeddingProvider> make_provider(const ExperimentConfig& c) {
    if (c.embedding.provider == "precomputed") {
        return std::make_unique<vsr::PrecomputedProvider>(*c.embedding.path, c.embedding.dim);
    }
    return std::make_unique<vsr::HashedProvider>(c.embedding.dim);
}

stdfs::path vector_file(const ExperimentConfig& c, const std::string& name) {
    return c.run_dir() / "vectors" / (name + ".tsv");
}

std::string pipeline_name(const ExperimentConfig& c) {
    return std::string(to_string(c.retrieval.pipeline));
}

// ---- retrieval records ----------------------------------------------------

struct Hit {
    std::string id;
    std::string text;
    double score = 0.0;
};

struct QueryRecord {
    std::string dataset;
    std::string anchor_id;
    std::string anchor_text;
    std::size_t candidate_count = 0;
    std::vector<std::string> relevant;
    std::vector<Hit> hits;
};

struct DatasetPlan {
    std::string name;
    std::size_t k = 0;
    std::string k_mode;
    std::size_t exhaustive = 0;
    std::size_t pruned = 0;
};

std::vector<QueryRecord> read_retrieval(const ExperimentConfig& c) {
    std::vector<QueryRecord> out;
    for (const auto& line : read_jsonl(c.run_dir() / "retrieval.jsonl", "retrieve")) {
        QueryRecord q;
        q.dataset = line.at("dataset").get<std::string>();
        q.anchor_id = line.at("anchor_id").get<std::string>();
        q.anchor_text = line.at("anchor_text").get<std::string>();
        q.candidate_count = line.at("candidate_count").get<std::size_t>();
        q.relevant = line.at("relevant").get<std::vector<std::string>>();
        for (const auto& h : line.at("hits")) {
            q.hits.push_back({h.at("id").get<std::string>(), h.at("text").get<std::string>(),
                              h.at("score").get<double>()});
        }
        out.push_back(std::move(q));
    }
    return out;
}

std::vector<DatasetPlan> read_plans(const json& meta) {
    std::vector<DatasetPlan> out;
    for (const auto& d : meta.at("datasets")) {
        out.push_back({d.at("name").get<std::string>(), d.at("k").get<std::size_t>(),
                       d.at("k_mode").get<std::string>(), d.at("exhaustive_pairs").get<std::size_t>(),
                       d.at("pruned_pairs").get<std::size_t>()});
    }
    return out;
}

const DatasetPlan& plan_for(const std::vector<DatasetPlan>& plans, const std::string& name) {
    for (const auto& p : plans) {
        if (p.name == name) return p;
    }
    throw IntegrityError("retrieval.meta.json has no entry for dataset '" + name + "'");
}

/// Pairs sent to classification: each query's top-k hits, in file order.
std::vector<infer::PairInput> classification_pairs(const std::vector<QueryRecord>& queries,
                                                   const std::vector<DatasetPlan>& plans,
                                                   std::vector<std::string>* datasets = nullptr) {
    std::vector<infer::PairInput> out;
    for (const auto& q : queries) {
        const auto k = plan_for(plans, q.dataset).k;
        for (std::size_t i = 0; i < std::min(k, q.hits.size()); ++i) {
            out.push_back({q.anchor_id, q.hits[i].id, q.anchor_text, q.hits[i].text});
            if (datasets) datasets->push_back(q.dataset);
        }
    }
    return out;
}

struct RecallInputs {
    metrics::Retrieved retrieved;
    corpus::GroundTruth truth;
};

RecallInputs recall_inputs(const std::vector<QueryRecord>& queries, const std::string& dataset) {
    RecallInputs in;
    for (const auto& q : queries) {
        if (q.dataset != dataset || q.relevant.empty()) continue;
        auto& ids = in.retrieved[q.anchor_id];
        for (const auto& h : q.hits) ids.push_back(h.id);
        in.truth[q.anchor_id] = {q.relevant.begin(), q.relevant.end()};
    }
    return in;
}

ordered_json curve_json(const metrics::RecallCurve& curve) {
    ordered_json arr = ordered_json::array();
    for (const auto& [k, r] : curve.points) arr.push_back(ordered_json::array({k, r}));
    return arr;
}

std::string classify_settings_key(const ExperimentConfig& c) {
    return ordered_json{{"model", c.inference.model},
                        {"strategy", to_string(c.inference.strategy)},
                        {"runs", c.inference.runs},
                        {"tie_rule", c.inference.tie_rule == infer::TieRule::Conflict ? "Conflict" : "Neutral"},
                        {"shot_count", c.inference.shot_count},
                        {"seed", c.seed}}
        .dump();
}

std::unique_ptr<infer::ModelClient> make_client(const ExperimentConfig& c,
                                                const std::shared_ptr<sustain::ManualClock>& clock) {
    if (c.inference.backend == "http") {
        const char* key = std::getenv("REQDEP_API_KEY");
        return std::make_unique<infer::HttpChatClient>(c.inference.endpoint, key ? key : "",
                                                       std::chrono::seconds(c.inference.timeout_s));
    }
    auto replay = std::make_unique<infer::ReplayClient>(infer::ReplayClient::from_file(*c.inference.replay));
    if (clock) replay->attach_clock(clock);
    return replay;
}

// ---- report helpers -------------------------------------------------------

std::string fixed(double v, int digits) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(digits) << v;
    return out.str();
}

std::string sci(double v) {
    std::ostringstream out;
    out << std::setprecision(4) << v;
    return out.str();
}

std::string percent_text(double pct) {
    const double rounded = std::round(pct * 10.0) / 10.0;
    std::string s = fixed(rounded, 1);
    if (s.size() > 2 && s.ends_with(".0")) s.resize(s.size() - 2);
    return s + "%";
}

}  // namespace

// ---- enums ----------------------------------------------------------------

std::string_view to_string(RetrievalPipeline p) {
    switch (p) {
        case RetrievalPipeline::Kgr: return "kgr";
        case RetrievalPipeline::KgrWeighted: return "kgr-weighted";
        case RetrievalPipeline::VsrFlat: return "vsr-flat";
        case RetrievalPipeline::VsrIvf: return "vsr-ivf";
    }
    return "?";
}

RetrievalPipeline parse_pipeline(std::string_view name) {
    const auto n = text::to_lower(name);
    if (n == "kgr") return RetrievalPipeline::Kgr;
    if (n == "kgr-weighted") return RetrievalPipeline::KgrWeighted;
    if (n == "vsr-flat" || n == "vsr") return RetrievalPipeline::VsrFlat;
    if (n == "vsr-ivf") return RetrievalPipeline::VsrIvf;
    throw ConfigError("unknown retrieval pipeline '" + std::string(name) + "'");
}

ReportFormat parse_report_format(std::string_view name) {
    const auto n = text::to_lower(name);
    if (n == "json") return ReportFormat::Json;
    if (n == "csv") return ReportFormat::Csv;
    if (n == "md" || n == "markdown") return ReportFormat::Markdown;
    throw ConfigError("unknown report format '" + std::string(name) + "'");
}

// ---- config ---------------------------------------------------------------

void ExperimentConfig::validate() const {
    if (!safe_name(run_id)) throw ConfigError("run_id must be a plain name, got '" + run_id + "'");
    if (datasets.empty()) throw ConfigError("config lists no datasets");
    std::set<std::string> names;
    for (std::size_t i = 0; i < datasets.size(); ++i) {
        const auto& d = datasets[i];
        const std::string key = "datasets." + std::to_string(i);
        if (!safe_name(d.name)) throw ConfigError(key + ".name must be a plain name");
        if (!names.insert(d.name).second) throw ConfigError("duplicate dataset name '" + d.name + "'");
        require_file(d.requirements, key + ".requirements");
        if (d.pairs) require_file(*d.pairs, key + ".pairs");
    }
    if (lexicon_dir && !stdfs::is_directory(*lexicon_dir)) {
        throw ConfigError("config key 'lexicon_dir' names a missing directory");
    }

    const auto& r = retrieval;
    if (r.k && *r.k < 1) throw ConfigError("retrieval.k must be >= 1 or \"elbow\"");
    if (r.k_max < 1) throw ConfigError("retrieval.k_max must be >= 1");
    if (!(r.elbow_epsilon >= 0.0)) throw ConfigError("retrieval.elbow_epsilon must be >= 0");
    r.weights.validate();
    for (const auto& [rel, w] : r.role_weights) {
        if (!(w >= 0.0)) {
            throw ConfigError("retrieval.role_weights." + std::string(kg::to_string(rel)) +
                              " must be >= 0");
        }
    }
    if (r.nlist && *r.nlist < 1) throw ConfigError("retrieval.nlist must be >= 1");
    if (r.nprobe && *r.nprobe < 1) throw ConfigError("retrieval.nprobe must be >= 1");

    if (embedding.provider != "hashed" && embedding.provider != "precomputed") {
        throw ConfigError("embedding.provider must be hashed or precomputed");
    }
    if (embedding.provider == "precomputed") {
        if (!embedding.path) throw ConfigError("embedding.path is required for precomputed vectors");
        require_file(*embedding.path, "embedding.path");
    }
    if (embedding.dim < 1 && embedding.provider == "hashed") {
        throw ConfigError("embedding.dim must be >= 1");
    }

    const auto& inf = inference;
    if (inf.backend == "replay") {
        if (!inf.replay) throw ConfigError("inference.replay is required for the replay backend");
        require_file(*inf.replay, "inference.replay");
    } else if (inf.backend == "http") {
        if (inf.endpoint.empty()) throw ConfigError("inference.endpoint is required for the http backend");
    } else {
        throw ConfigError("inference.backend must be replay or http");
    }
    if (inf.shots) require_file(*inf.shots, "inference.shots");
    if (inf.runs < 1 || inf.runs % 2 == 0) throw ConfigError("inference.runs must be a positive odd number");
    if (inf.shot_count < 1) throw ConfigError("inference.shot_count must be >= 1");
    if (inf.max_in_flight < 1) throw ConfigError("inference.max_in_flight must be >= 1");
    if (inf.retry.attempts < 1) throw ConfigError("inference.retry.attempts must be >= 1");
    if (inf.retry.base_delay.count() < 0) throw ConfigError("inference.retry.base_delay_ms must be >= 0");
    if (inf.timeout_s < 1) throw ConfigError("inference.timeout_s must be >= 1");

    const auto& s = sustainability;
    if (!(s.power_watts >= 0.0)) throw ConfigError("sustainability.power_watts must be >= 0");
    if (!(s.carbon_intensity_g_per_kwh >= 0.0)) {
        throw ConfigError("sustainability.carbon_intensity_g_per_kwh must be >= 0");
    }
    if (s.clock != "steady" && s.clock != "simulated") {
        throw ConfigError("sustainability.clock must be steady or simulated");
    }
    if (s.clock == "simulated" && inf.backend != "replay") {
        throw ConfigError("the simulated clock only works with the replay backend");
    }
    if (!(s.seconds_per_work_unit >= 0.0)) {
        throw ConfigError("sustainability.seconds_per_work_unit must be >= 0");
    }
    if (s.projection_e_per_kwh && !(*s.projection_e_per_kwh >= 0.0)) {
        throw ConfigError("sustainability.projection_e_per_kwh must be >= 0");
    }
    if (sweep.alpha.empty() || sweep.beta.empty() || sweep.gamma.empty()) {
        throw ConfigError("sweep grids must be non-empty");
    }
}

json apply_overrides(json doc, std::span<const std::string> overrides) {
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError("override '" + o + "' is not key=value");
        }
        const auto key = o.substr(0, eq);
        const auto raw = o.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::parse_error&) {
            value = raw;
        }
        json* node = &doc;
        std::size_t start = 0;
        while (true) {
            const auto dot = key.find('.', start);
            const auto part = key.substr(start, dot == std::string::npos ? dot : dot - start);
            if (part.empty()) throw ConfigError("override key '" + key + "' has an empty segment");
            json* next = nullptr;
            if (node->is_array()) {
                if (!text::is_number(part) || part.find('.') != std::string::npos) {
                    throw ConfigError("override key '" + key + "': '" + part + "' is not an index");
                }
                const auto idx = std::stoul(part);
                if (idx > node->size()) throw ConfigError("override key '" + key + "': index out of range");
                if (idx == node->size()) node->push_back(json::object());
                next = &(*node)[idx];
            } else {
                if (node->is_null()) *node = json::object();
                if (!node->is_object()) {
                    throw ConfigError("override key '" + key + "' descends into a scalar");
                }
                next = &(*node)[part];
            }
            if (dot == std::string::npos) {
                *next = value;
                break;
            }
            node = next;
            start = dot + 1;
        }
    }
    return doc;
}

ExperimentConfig config_from_json(const json& doc, const stdfs::path& base_dir) {
    ExperimentConfig c;
    try {
        reject_unknown(doc, "", {"run_id", "output_dir", "seed", "cross_source_dedup", "lexicon_dir",
                                 "datasets", "retrieval", "embedding", "inference",
                                 "sustainability", "sweep"});
        c.run_id = get_or<std::string>(doc, "run_id", "", c.run_id);
        c.output_dir = resolve(base_dir, get_or<std::string>(doc, "output_dir", "", "runs"));
        c.seed = get_or<std::uint64_t>(doc, "seed", "", c.seed);
        c.cross_source_dedup = get_or<bool>(doc, "cross_source_dedup", "", false);
        c.lexicon_dir = get_path(doc, "lexicon_dir", "", base_dir);

        const auto datasets = section(doc, "datasets");
        if (!datasets.is_array()) throw ConfigError("datasets must be an array");
        for (std::size_t i = 0; i < datasets.size(); ++i) {
            const auto& d = datasets[i];
            const std::string where = "datasets." + std::to_string(i);
            reject_unknown(d, where, {"name", "requirements", "format", "pairs"});
            DatasetConfig dc;
            dc.requirements = get_path(d, "requirements", where + ".", base_dir).value_or(stdfs::path{});
            if (dc.requirements.empty()) throw ConfigError(where + ".requirements is required");
            dc.name = get_or<std::string>(d, "name", where + ".", dc.requirements.stem().string());
            dc.format = corpus::parse_format(get_or<std::string>(d, "format", where + ".", "csv"));
            dc.pairs = get_path(d, "pairs", where + ".", base_dir);
            c.datasets.push_back(std::move(dc));
        }

        const auto r = section(doc, "retrieval");
        reject_unknown(r, "retrieval", {"pipeline", "k", "k_max", "elbow_epsilon", "recall_mode",
                                        "weights", "role_weights", "nlist", "nprobe"});
        auto& rc = c.retrieval;
        rc.pipeline = parse_pipeline(get_or<std::string>(r, "pipeline", "retrieval.", "kgr"));
        if (const auto it = r.find("k"); it != r.end() && !it->is_null()) {
            if (it->is_string()) {
                if (text::to_lower(it->get<std::string>()) != "elbow") {
                    throw ConfigError("retrieval.k must be a positive integer or \"elbow\"");
                }
                rc.k.reset();
            } else if (it->is_number_integer() && it->get<long long>() >= 1) {
                rc.k = it->get<std::size_t>();
            } else {
                throw ConfigError("retrieval.k must be a positive integer or \"elbow\"");
            }
        }
        const auto k_max = get_or<long long>(r, "k_max", "retrieval.", 20);
        if (k_max < 1) throw ConfigError("retrieval.k_max must be >= 1");
        rc.k_max = static_cast<std::size_t>(k_max);
        rc.elbow_epsilon = get_or<double>(r, "elbow_epsilon", "retrieval.", rc.elbow_epsilon);
        rc.recall_mode = metrics::parse_recall_mode(get_or<std::string>(r, "recall_mode", "retrieval.", "single"));
        const auto w = section(r, "weights");
        reject_unknown(w, "retrieval.weights", {"alpha", "beta", "gamma"});
        rc.weights.alpha = get_or<double>(w, "alpha", "retrieval.weights.", rc.weights.alpha);
        rc.weights.beta = get_or<double>(w, "beta", "retrieval.weights.", rc.weights.beta);
        rc.weights.gamma = get_or<double>(w, "gamma", "retrieval.weights.", rc.weights.gamma);
        const auto rw = section(r, "role_weights");
        if (!rw.is_object()) throw ConfigError("retrieval.role_weights must be an object");
        for (const auto& item : rw.items()) {
            rc.role_weights[kg::parse_relation(item.key())] =
                get_or<double>(rw, item.key(), "retrieval.role_weights.", 1.0);
        }
        for (const auto* key : {"nlist", "nprobe"}) {
            const auto v = get_opt<long long>(r, key, "retrieval.");
            if (v && *v < 1) throw ConfigError(std::string("retrieval.") + key + " must be >= 1");
            if (v) (std::string_view(key) == "nlist" ? rc.nlist : rc.nprobe) = static_cast<std::size_t>(*v);
        }

        const auto e = section(doc, "embedding");
        reject_unknown(e, "embedding", {"provider", "dim", "path"});
        c.embedding.provider = get_or<std::string>(e, "provider", "embedding.", "hashed");
        const auto dim = get_or<long long>(e, "dim", "embedding.", 768);
        if (dim < 0) throw ConfigError("embedding.dim must be >= 0");
        c.embedding.dim = static_cast<std::size_t>(dim);
        c.embedding.path = get_path(e, "path", "embedding.", base_dir);

        const auto inf = section(doc, "inference");
        reject_unknown(inf, "inference", {"backend", "endpoint", "replay", "model", "strategy", "shots",
                                          "shot_count", "runs", "tie_rule", "retry", "max_in_flight",
                                          "timeout_s"});
        auto& ic = c.inference;
        ic.backend = get_or<std::string>(inf, "backend", "inference.", "replay");
        ic.endpoint = get_or<std::string>(inf, "endpoint", "inference.", "");
        ic.replay = get_path(inf, "replay", "inference.", base_dir);
        ic.model = get_or<std::string>(inf, "model", "inference.", ic.model);
        ic.strategy = infer::parse_strategy(get_or<std::string>(inf, "strategy", "inference.", "zeroshot"));
        ic.shots = get_path(inf, "shots", "inference.", base_dir);
        const auto shot_count = get_or<long long>(inf, "shot_count", "inference.", 3);
        if (shot_count < 1) throw ConfigError("inference.shot_count must be >= 1");
        ic.shot_count = static_cast<std::size_t>(shot_count);
        ic.runs = get_or<int>(inf, "runs", "inference.", ic.runs);
        ic.tie_rule = infer::parse_tie_rule(get_or<std::string>(inf, "tie_rule", "inference.", "Neutral"));
        const auto retry = section(inf, "retry");
        reject_unknown(retry, "inference.retry", {"attempts", "base_delay_ms"});
        ic.retry.attempts = get_or<int>(retry, "attempts", "inference.retry.", 3);
        ic.retry.base_delay = std::chrono::milliseconds(
            get_or<long long>(retry, "base_delay_ms", "inference.retry.", 200));
        const auto in_flight = get_or<long long>(inf, "max_in_flight", "inference.", 1);
        if (in_flight < 1) throw ConfigError("inference.max_in_flight must be >= 1");
        ic.max_in_flight = static_cast<std::size_t>(in_flight);
        ic.timeout_s = get_or<int>(inf, "timeout_s", "inference.", ic.timeout_s);

        const auto s = section(doc, "sustainability");
        reject_unknown(s, "sustainability", {"power_watts", "meter_source", "carbon_intensity_g_per_kwh",
                                             "include_warmup", "eco_mode", "clock",
                                             "seconds_per_work_unit", "projection_e_per_kwh"});
        auto& sc = c.sustainability;
        sc.power_watts = get_or<double>(s, "power_watts", "sustainability.", sc.power_watts);
        sc.meter_source = sustain::parse_meter_source(
            get_or<std::string>(s, "meter_source", "sustainability.", "modeled"));
        sc.carbon_intensity_g_per_kwh = get_or<double>(s, "carbon_intensity_g_per_kwh", "sustainability.",
                                                       sc.carbon_intensity_g_per_kwh);
        sc.include_warmup = get_or<bool>(s, "include_warmup", "sustainability.", false);
        sc.eco_mode = sustain::parse_eco_mode(get_or<std::string>(s, "eco_mode", "sustainability.", "mean_f1"));
        sc.clock = get_or<std::string>(s, "clock", "sustainability.", sc.clock);
        sc.seconds_per_work_unit =
            get_or<double>(s, "seconds_per_work_unit", "sustainability.", sc.seconds_per_work_unit);
        sc.projection_e_per_kwh = get_opt<double>(s, "projection_e_per_kwh", "sustainability.");

        const auto sw = section(doc, "sweep");
        reject_unknown(sw, "sweep", {"alpha", "beta", "gamma"});
        c.sweep.alpha = get_or<std::vector<double>>(sw, "alpha", "sweep.", c.sweep.alpha);
        c.sweep.beta = get_or<std::vector<double>>(sw, "beta", "sweep.", c.sweep.beta);
        c.sweep.gamma = get_or<std::vector<double>>(sw, "gamma", "sweep.", c.sweep.gamma);
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const stdfs::path& path, std::span<const std::string> overrides) {
    json doc;
    try {
        doc = json::parse(fs::read_text(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    } catch (const LookupError& e) {
        throw ConfigError(e.what());
    }
    return config_from_json(apply_overrides(std::move(doc), overrides),
                            stdfs::absolute(path).parent_path());
}

ordered_json to_json(const ExperimentConfig& c) {
    auto opt_path = [](const std::optional<stdfs::path>& p) {
        return p ? ordered_json(p->string()) : ordered_json(nullptr);
    };
    ordered_json datasets = ordered_json::array();
    for (const auto& d : c.datasets) {
        datasets.push_back(ordered_json{{"name", d.name},
                                        {"requirements", d.requirements.string()},
                                        {"format", d.format == corpus::Format::Csv ? "csv" : "json"},
                                        {"pairs", opt_path(d.pairs)}});
    }
    ordered_json role_weights = ordered_json::object();
    for (const auto& [rel, w] : c.retrieval.role_weights) role_weights[std::string(kg::to_string(rel))] = w;
    const auto& r = c.retrieval;
    const auto& i = c.inference;
    const auto& s = c.sustainability;
    return ordered_json{
        {"run_id", c.run_id},
        {"output_dir", c.output_dir.string()},
        {"seed", c.seed},
        {"cross_source_dedup", c.cross_source_dedup},
        {"lexicon_dir", opt_path(c.lexicon_dir)},
        {"datasets", datasets},
        {"retrieval",
         {{"pipeline", to_string(r.pipeline)},
          {"k", r.k ? ordered_json(*r.k) : ordered_json("elbow")},
          {"k_max", r.k_max},
          {"elbow_epsilon", r.elbow_epsilon},
          {"recall_mode", metrics::to_string(r.recall_mode)},
          {"weights", {{"alpha", r.weights.alpha}, {"beta", r.weights.beta}, {"gamma", r.weights.gamma}}},
          {"role_weights", role_weights},
          {"nlist", r.nlist ? ordered_json(*r.nlist) : ordered_json(nullptr)},
          {"nprobe", r.nprobe ? ordered_json(*r.nprobe) : ordered_json(nullptr)}}},
        {"embedding",
         {{"provider", c.embedding.provider}, {"dim", c.embedding.dim}, {"path", opt_path(c.embedding.path)}}},
        {"inference",
         {{"backend", i.backend},
          {"endpoint", i.endpoint},
          {"replay", opt_path(i.replay)},
          {"model", i.model},
          {"strategy", to_string(i.strategy)},
          {"shots", opt_path(i.shots)},
          {"shot_count", i.shot_count},
          {"runs", i.runs},
          {"tie_rule", i.tie_rule == infer::TieRule::Conflict ? "Conflict" : "Neutral"},
          {"retry", {{"attempts", i.retry.attempts}, {"base_delay_ms", i.retry.base_delay.count()}}},
          {"max_in_flight", i.max_in_flight},
          {"timeout_s", i.timeout_s}}},
        {"sustainability",
         {{"power_watts", s.power_watts},
          {"meter_source", to_string(s.meter_source)},
          {"carbon_intensity_g_per_kwh", s.carbon_intensity_g_per_kwh},
          {"include_warmup", s.include_warmup},
          {"eco_mode", to_string(s.eco_mode)},
          {"clock", s.clock},
          {"seconds_per_work_unit", s.seconds_per_work_unit},
          {"projection_e_per_kwh",
           s.projection_e_per_kwh ? ordered_json(*s.projection_e_per_kwh) : ordered_json(nullptr)}}},
        {"sweep", {{"alpha", c.sweep.alpha}, {"beta", c.sweep.beta}, {"gamma", c.sweep.gamma}}}};
}

// ---- stages ---------------------------------------------------------------

void stage_ingest(const ExperimentConfig& c) {
    in_stage("ingest", [&] {
        auto kit = make_meter(c);
        std::vector<StageReading> readings;
        std::vector<corpus::Dataset> all;
        ordered_json stats = ordered_json::object();
        stdfs::create_directories(c.run_dir() / "corpus");
        for (const auto& d : c.datasets) {
            auto [ds, reading] = kit.meter->measure(
                "ingest:" + d.name,
                [&] {
                    auto raw = corpus::load_requirements(d.requirements, d.format, d.name);
                    if (d.pairs) corpus::attach_pairs(raw, *d.pairs);
                    auto clean = corpus::deduplicate(raw);
                    kit.work(static_cast<double>(raw.requirements.size()));
                    stats[d.name]["duplicates_removed"] =
                        raw.requirements.size() - clean.requirements.size();
                    return clean;
                },
                true);
            readings.push_back({d.name, reading});
            corpus::write_requirements_csv(ds, corpus_file(c, d.name, "requirements"));
            if (d.pairs) corpus::write_pairs_csv(ds.pairs, corpus_file(c, d.name, "pairs"));
            const auto st = corpus::dataset_stats(ds);
            auto& entry = stats[d.name];
            entry["requirements"] = ds.requirements.size();
            entry["conflict_count"] = st.conflict_count;
            entry["neutral_count"] = st.neutral_count;
            entry["avg_tokens_pair"] = {st.avg_tokens_pair.first, st.avg_tokens_pair.second};
            entry["vocabulary_size"] = st.vocabulary_size;
            all.push_back(std::move(ds));
        }
        if (c.cross_source_dedup) {
            corpus::Dataset unified{"unified", corpus::unify_sources(all), {}, {}};
            corpus::write_requirements_csv(unified, c.run_dir() / "corpus" / "unified.csv");
            stats["unified"]["requirements"] = unified.requirements.size();
        }
        fs::write_atomic(c.run_dir() / "corpus" / "stats.json", stats.dump(2) + "\n");
        fs::write_atomic(c.run_dir() / "config.json", to_json(c).dump(2) + "\n");
        write_readings(c, "ingest", readings);
    });
}

void stage_extract(const ExperimentConfig& c) {
    in_stage("extract", [&] {
        const auto datasets = load_ingested(c);
        const auto lexicon = c.lexicon_dir ? extract::Lexicon::load(*c.lexicon_dir)
                                           : extract::Lexicon::bundled();
        auto kit = make_meter(c);
        std::vector<StageReading> readings;
        std::vector<ordered_json> lines;
        for (const auto& ds : datasets) {
            auto [sets, reading] = kit.meter->measure(
                "extract:" + ds.source,
                [&] {
                    kit.work(static_cast<double>(ds.requirements.size()));
                    return extract::extract_all(ds, lexicon);
                },
                true);
            readings.push_back({ds.source, reading});
            for (const auto& s : sets) {
                lines.push_back(ordered_json{{"dataset", ds.source},
                                             {"id", s.requirement_id},
                                             {"entities", entities_json(s)}});
            }
        }
        fs::write_atomic(c.run_dir() / "entities.jsonl", jsonl(lines));
        write_readings(c, "extract", readings);
    });
}

void stage_index_kg(const ExperimentConfig& c) {
    in_stage("index-kg", [&] {
        const auto datasets = load_ingested(c);
        const auto sets = read_entities(c);
        auto kit = make_meter(c);
        auto [graph, reading] = kit.meter->measure(
            "index:kg",
            [&] {
                kg::GraphBuilder builder;
                for (const auto& ds : datasets) {
                    const auto it = sets.find(ds.source);
                    const std::vector<extract::EntitySet> none;
                    const auto& s = it == sets.end() ? none : it->second;
                    builder.add(ds, s);
                    for (const auto& e : s) kit.work(static_cast<double>(e.entities.size()));
                }
                return std::move(builder).build();
            },
            true);
        std::ostringstream out;
        kg::write_graph(graph, out);
        fs::write_atomic(c.run_dir() / "graph.tsv", out.str());
        write_readings(c, "index-kg", {{"*", reading}});
    });
}

void stage_index_vsr(const ExperimentConfig& c) {
    in_stage("index-vsr", [&] {
        const auto datasets = load_ingested(c);
        const auto provider = make_provider(c);
        const auto kind = c.retrieval.pipeline == RetrievalPipeline::VsrIvf ? vsr::IndexKind::IVF
                                                                            : vsr::IndexKind::Flat;
        vsr::IvfParams params;
        params.nlist = c.retrieval.nlist;
        params.nprobe = c.retrieval.nprobe;
        params.seed = c.seed;
        auto kit = make_meter(c);
        std::vector<StageReading> readings;
        stdfs::create_directories(c.run_dir() / "vectors");
        for (const auto& ds : datasets) {
            if (ds.requirements.empty()) throw ValidationError("dataset '" + ds.source + "' is empty");
            auto [index, reading] = kit.meter->measure(
                "index:vsr:" + ds.source,
                [&] {
                    const auto vectors = vsr::embed_all(ds, *provider);
                    kit.work(static_cast<double>(vectors.size()));
                    return vsr::build_index(vectors, kind, params);
                },
                true);
            readings.push_back({ds.source, reading});
            std::ostringstream out;
            vsr::write_index(index, out);
            fs::write_atomic(vector_file(c, ds.source), out.str());
        }
        write_readings(c, "index-vsr", readings);
    });
}

void stage_retrieve(const ExperimentConfig& c) {
    in_stage("retrieve", [&] {
        const auto datasets = load_ingested(c);
        const auto& rc = c.retrieval;
        const auto pipe = pipeline_name(c);
        std::optional<kg::KnowledgeGraph> graph;
        if (is_kgr(rc.pipeline)) {
            const auto path = c.run_dir() / "graph.tsv";
            if (!stdfs::exists(path)) throw LookupError("missing graph.tsv (run the index-kg stage first)");
            std::istringstream in(fs::read_text(path));
            graph = kg::read_graph(in);
        }

        auto kit = make_meter(c);
        std::vector<StageReading> readings;
        std::vector<ordered_json> lines;
        ordered_json plans = ordered_json::array();
        const std::size_t depth = rc.depth();

        for (const auto& ds : datasets) {
            std::optional<vsr::VectorIndex> index;
            std::unordered_map<std::string, std::size_t> position;
            if (!graph) {
                const auto path = vector_file(c, ds.source);
                if (!stdfs::exists(path)) {
                    throw LookupError("missing vectors for '" + ds.source + "' (run the index-vsr stage first)");
                }
                std::istringstream in(fs::read_text(path));
                index = vsr::read_index(in);
                for (std::size_t i = 0; i < index->size(); ++i) position[index->id(i)] = i;
            }

            std::vector<QueryRecord> records;
            for (const auto& q : query_ids(ds)) {
                QueryRecord rec;
                rec.dataset = ds.source;
                rec.anchor_id = q;
                rec.anchor_text = ds.at(q).text;
                if (const auto it = ds.ground_truth.find(q); it != ds.ground_truth.end()) {
                    rec.relevant.assign(it->second.begin(), it->second.end());
                }
                ordered_json hits = ordered_json::array();
                auto reading = kit.meter->measure("retrieval:" + pipe + ":" + ds.source, [&] {
                    if (graph) {
                        rec.candidate_count = kg::candidate_count(*graph, q, ds.source);
                        const auto ranked =
                            rc.pipeline == RetrievalPipeline::KgrWeighted
                                ? kg::retrieve_kgr_weighted(*graph, q, ds.source, depth, rc.weights,
                                                            rc.role_weights)
                                : kg::retrieve_kgr(*graph, q, ds.source, depth, rc.weights);
                        kit.work(static_cast<double>(rec.candidate_count + 1));
                        for (const auto& s : ranked) {
                            rec.hits.push_back({s.candidate_id, ds.at(s.candidate_id).text, s.score});
                            ordered_json h{{"id", s.candidate_id},
                                           {"text", rec.hits.back().text},
                                           {"score", s.score},
                                           {"s_e", s.shared_entities},
                                           {"s_t", s.matched_types},
                                           {"d", s.hops},
                                           {"s_d", s.proximity}};
                            if (s.weighted_overlap) h["weighted_overlap"] = *s.weighted_overlap;
                            hits.push_back(std::move(h));
                        }
                        return;
                    }
                    const auto it = position.find(q);
                    if (it == position.end()) throw LookupError("no vector for requirement '" + q + "'");
                    const auto i = it->second;
                    const auto v = index->vector(i);
                    vsr::EmbeddingVector query{q, {v.begin(), v.end()}, index->norm(i)};
                    std::optional<std::size_t> nprobe;
                    if (rc.nprobe) nprobe = std::min(*rc.nprobe, std::max<std::size_t>(1, index->nlist()));
                    const auto found = vsr::search_topk(*index, query, depth, nprobe);
                    rec.candidate_count = index->size() - 1;
                    double units = static_cast<double>(index->size());
                    if (index->kind() == vsr::IndexKind::IVF) {
                        const double probes = static_cast<double>(nprobe.value_or(index->default_nprobe()));
                        const double lists = static_cast<double>(index->nlist());
                        units = lists + std::ceil(static_cast<double>(index->size()) * probes / lists);
                    }
                    kit.work(units);
                    for (const auto& h : found) {
                        rec.hits.push_back({h.id, ds.at(h.id).text, h.score});
                        hits.push_back(ordered_json{{"id", h.id}, {"text", rec.hits.back().text}, {"score", h.score}});
                    }
                });
                readings.push_back({ds.source, reading});
                lines.push_back(ordered_json{{"dataset", ds.source},
                                             {"anchor_id", rec.anchor_id},
                                             {"anchor_text", rec.anchor_text},
                                             {"candidate_count", rec.candidate_count},
                                             {"relevant", rec.relevant},
                                             {"hits", std::move(hits)}});
                records.push_back(std::move(rec));
            }

            const auto inputs = recall_inputs(records, ds.source);
            ordered_json curve_points = ordered_json::array();
            std::size_t k = rc.k.value_or(rc.k_max);
            if (!inputs.truth.empty()) {
                const auto curve = metrics::recall_curve(inputs.retrieved, inputs.truth, rc.k_max, rc.recall_mode);
                curve_points = curve_json(curve);
                if (!rc.k) k = metrics::select_k_elbow(curve, rc.elbow_epsilon);
            }
            std::size_t pruned = 0;
            for (const auto& r : records) pruned += std::min(k, r.candidate_count);
            plans.push_back(ordered_json{{"name", ds.source},
                                         {"k", k},
                                         {"k_mode", rc.k ? "fixed" : "elbow"},
                                         {"k_max", rc.k_max},
                                         {"queries", records.size()},
                                         {"queries_with_conflicts", inputs.truth.size()},
                                         {"curve", std::move(curve_points)},
                                         {"exhaustive_pairs", ds.pairs.size()},
                                         {"pruned_pairs", pruned}});
        }

        fs::write_atomic(c.run_dir() / "retrieval.jsonl", jsonl(lines));
        const ordered_json meta{{"pipeline", pipe},
                                {"recall_mode", metrics::to_string(rc.recall_mode)},
                                {"datasets", std::move(plans)}};
        fs::write_atomic(c.run_dir() / "retrieval.meta.json", meta.dump(2) + "\n");
        write_readings(c, "retrieve", readings);
    });
}

void stage_classify(const ExperimentConfig& c) {
    in_stage("classify", [&] {
        const auto meta = read_json(c.run_dir() / "retrieval.meta.json", "retrieve");
        const auto queries = read_retrieval(c);
        const auto pairs = classification_pairs(queries, read_plans(meta));

        const auto journal = c.run_dir() / "classifications.jsonl";
        const auto settings_path = c.run_dir() / "classify.meta.json";
        const auto settings = classify_settings_key(c);
        if (stdfs::exists(journal) && stdfs::exists(settings_path) &&
            text::trim(fs::read_text(settings_path)) != settings) {
            throw ConfigError("classifications.jsonl was produced with different inference settings; "
                              "remove it or use another run_id");
        }
        fs::write_atomic(settings_path, settings + "\n");

        std::vector<infer::Shot> shots;
        if (c.inference.strategy == infer::Strategy::FewShot) {
            const auto path = c.inference.shots.value_or(extract::default_data_dir() / "shots.json");
            const auto all = infer::load_shots(path);
            shots = infer::select_shots(all, c.inference.shot_count, c.seed);
            if (shots.empty()) throw ConfigError("few-shot prompting needs at least one shot in " + path.string());
        }

        auto kit = make_meter(c);
        auto client = make_client(c, kit.manual);
        infer::InferenceOptions options;
        options.model = c.inference.model;
        options.runs = c.inference.runs;
        options.tie_rule = c.inference.tie_rule;
        options.retry = c.inference.retry;
        options.max_in_flight = c.inference.max_in_flight;
        options.meter_label = "inference:" + c.inference.model + ":" + std::string(to_string(c.inference.strategy));
        infer::classify_batch(*client, pairs, c.inference.strategy, shots, options, *kit.meter, journal);
    });
}

void stage_evaluate(const ExperimentConfig& c) {
    in_stage("evaluate", [&] {
        const auto meta = read_json(c.run_dir() / "retrieval.meta.json", "retrieve");
        const auto queries = read_retrieval(c);
        const auto plans = read_plans(meta);
        std::vector<std::string> pair_dataset;
        const auto pairs = classification_pairs(queries, plans, &pair_dataset);

        const auto journal = c.run_dir() / "classifications.jsonl";
        if (!stdfs::exists(journal)) throw LookupError("missing classifications.jsonl (run the classify stage first)");
        auto results = infer::read_journal(journal);
        std::map<std::size_t, infer::ClassificationResult> by_index;
        for (auto& r : results) by_index[r.index] = std::move(r);
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const auto it = by_index.find(i);
            if (it == by_index.end() || it->second.anchor_id != pairs[i].anchor_id ||
                it->second.candidate_id != pairs[i].candidate_id) {
                throw LookupError("classifications.jsonl is incomplete or stale at pair " +
                                  std::to_string(i + 1) + " (rerun the classify stage)");
            }
        }

        std::map<std::string, std::set<std::string>> truth_of;  // anchor key -> G(q)
        for (const auto& q : queries) {
            truth_of[q.dataset + "\x1f" + q.anchor_id] = {q.relevant.begin(), q.relevant.end()};
        }

        const auto pipe = pipeline_name(c);
        const auto recall_mode = metrics::parse_recall_mode(meta.at("recall_mode").get<std::string>());
        sustain::SustainabilityReport report(c.sustainability.carbon_intensity_g_per_kwh,
                                             c.sustainability.include_warmup);
        for (const auto* stage : {"ingest", "extract", "index-kg", "index-vsr", "retrieve"}) {
            const bool relevant_index = (std::string_view(stage) != "index-kg" || is_kgr(c.retrieval.pipeline)) &&
                                        (std::string_view(stage) != "index-vsr" || !is_kgr(c.retrieval.pipeline));
            if (!relevant_index) continue;
            for (const auto& r : read_readings(meter_file(c, stage))) report.add(r.dataset, pipe, r.reading);
        }

        double inference_energy = 0.0;
        ordered_json datasets = ordered_json::array();
        sustain::ModelSummary model;
        model.mode = c.sustainability.eco_mode;
        std::size_t exhaustive_total = 0;
        std::size_t pruned_total = 0;

        for (const auto& plan : plans) {
            std::vector<Label> predicted;
            std::vector<Label> truth;
            std::size_t n_pairs = 0;
            std::size_t errors = 0;
            std::size_t ties = 0;
            for (std::size_t i = 0; i < pairs.size(); ++i) {
                if (pair_dataset[i] != plan.name) continue;
                const auto& r = by_index.at(i);
                ++n_pairs;
                report.add(plan.name, pipe, r.meter);
                inference_energy += r.meter.energy_kwh;
                if (r.tie) ++ties;
                if (!r.ok()) {
                    ++errors;
                    continue;
                }
                predicted.push_back(*r.final_label);
                const auto& g = truth_of.at(plan.name + "\x1f" + r.anchor_id);
                truth.push_back(g.count(r.candidate_id) ? Label::Conflict : Label::Neutral);
            }

            const auto inputs = recall_inputs(queries, plan.name);
            ordered_json recall = nullptr;
            ordered_json curve = ordered_json::array();
            if (!inputs.truth.empty()) {
                recall = metrics::recall_at_k(inputs.retrieved, inputs.truth, plan.k, recall_mode);
                const auto rc = metrics::recall_curve(inputs.retrieved, inputs.truth,
                                                      std::max(plan.k, c.retrieval.k_max), recall_mode);
                curve = curve_json(rc);
                fs::write_atomic(c.run_dir() / ("curve-" + plan.name + ".csv"), metrics::curve_csv(rc));
            }

            ordered_json classification = nullptr;
            if (!predicted.empty()) {
                const auto prf = metrics::macro_prf(predicted, truth);
                ordered_json per_class = ordered_json::array();
                for (const auto& cs : prf.per_class) {
                    per_class.push_back(ordered_json{{"class", cs.name},
                                                     {"tp", cs.counts.tp},
                                                     {"fp", cs.counts.fp},
                                                     {"fn", cs.counts.fn},
                                                     {"tn", cs.counts.tn},
                                                     {"precision", cs.precision},
                                                     {"recall", cs.recall},
                                                     {"f1", cs.f1}});
                }
                classification = ordered_json{{"macro_precision", prf.macro_precision},
                                              {"macro_recall", prf.macro_recall},
                                              {"macro_f1", prf.macro_f1},
                                              {"per_class", std::move(per_class)}};
                fs::write_atomic(c.run_dir() / ("confusion-" + plan.name + ".csv"), metrics::confusion_csv(prf));
                model.datasets.push_back(plan.name);
                model.f1.push_back(prf.macro_f1);
                model.carbon_kg.push_back(report.totals(plan.name, pipe).carbon_kg);
            }

            exhaustive_total += plan.exhaustive;
            pruned_total += plan.pruned;
            const auto totals = report.totals(plan.name, pipe);
            datasets.push_back(ordered_json{
                {"name", plan.name},
                {"k", plan.k},
                {"k_mode", plan.k_mode},
                {"queries_with_conflicts", inputs.truth.size()},
                {"recall_at_k", recall},
                {"curve", std::move(curve)},
                {"exhaustive_pairs", plan.exhaustive},
                {"pruned_pairs", plan.pruned},
                {"classified_pairs", n_pairs},
                {"classification_errors", errors},
                {"ties", ties},
                {"classification", std::move(classification)},
                {"energy_kwh", totals.energy_kwh},
                {"carbon_kg", totals.carbon_kg},
                {"latency_s", totals.latency_s},
                {"mean_latency_s", totals.mean_latency_s()}});
        }

        if (!model.datasets.empty()) report.set_model(c.inference.model, model);

        ordered_json workload{{"exhaustive_pairs", exhaustive_total}, {"pruned_pairs", pruned_total}};
        if (exhaustive_total > 0 && pruned_total <= exhaustive_total) {
            const double e_per = c.sustainability.projection_e_per_kwh.value_or(
                pairs.empty() ? 0.0 : inference_energy / static_cast<double>(pairs.size()));
            const auto projection = sustain::project_workload(exhaustive_total, pruned_total, e_per,
                                                              c.sustainability.carbon_intensity_g_per_kwh);
            report.set_projection(projection);
            workload["reduction"] = projection.reduction;
        } else {
            workload["reduction"] = nullptr;
            workload["note"] = exhaustive_total == 0
                                   ? "no labelled pairs, so no exhaustive baseline"
                                   : "retrieval keeps more pairs than are labelled; projection skipped";
        }

        const ordered_json metrics_doc{{"run_id", c.run_id},
                                       {"pipeline", pipe},
                                       {"model", c.inference.model},
                                       {"strategy", to_string(c.inference.strategy)},
                                       {"runs", c.inference.runs},
                                       {"recall_mode", metrics::to_string(recall_mode)},
                                       {"datasets", std::move(datasets)},
                                       {"workload", std::move(workload)}};
        fs::write_atomic(c.run_dir() / "metrics.json", metrics_doc.dump(2) + "\n");
        fs::write_atomic(c.run_dir() / "sustainability.json", report.to_json().dump(2) + "\n");
        fs::write_atomic(c.run_dir() / "sustainability.csv", report.to_csv());
    });
}

// ---- report ---------------------------------------------------------------

std::string Delta::text() const {
    return percent_text(percent) + (reduction ? " reduction" : " overhead");
}

Delta compare(double value, double baseline) {
    if (!(baseline > 0.0)) throw ValidationError("percentage delta needs a positive baseline");
    if (value <= baseline) return {sustain::reduction_pct(baseline, value), true};
    return {sustain::overhead_pct(baseline, value), false};
}

void emit_report(std::span<const stdfs::path> run_dirs, const std::set<ReportFormat>& formats,
                 const stdfs::path& out_dir) {
    if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
    struct Run {
        json metrics;
        json sustain;
    };
    std::vector<Run> runs;
    for (const auto& dir : run_dirs) {
        std::vector<std::string> missing;
        if (!stdfs::exists(dir / "retrieval.jsonl")) missing.push_back("retrieve");
        if (!stdfs::exists(dir / "classifications.jsonl")) missing.push_back("classify");
        if (!stdfs::exists(dir / "metrics.json") || !stdfs::exists(dir / "sustainability.json")) {
            missing.push_back("evaluate");
        }
        if (!missing.empty()) {
            std::string list;
            for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
            throw LookupError("run " + dir.string() + " lacks artifacts from stages: " + list);
        }
        runs.push_back({read_json(dir / "metrics.json", "evaluate"),
                        read_json(dir / "sustainability.json", "evaluate")});
    }

    struct Row {
        std::string run, dataset, pipeline, strategy, model;
        std::size_t k = 0;
        std::optional<double> recall, f1;
        double energy = 0, carbon = 0, latency = 0, mean_latency = 0;
        std::size_t pruned = 0, exhaustive = 0;
    };
    std::vector<Row> rows;
    ordered_json runs_json = ordered_json::array();
    for (const auto& run : runs) {
        const auto& m = run.metrics;
        const auto run_id = m.at("run_id").get<std::string>();
        for (const auto& d : m.at("datasets")) {
            Row row;
            row.run = run_id;
            row.dataset = d.at("name").get<std::string>();
            row.pipeline = m.at("pipeline").get<std::string>();
            row.strategy = m.at("strategy").get<std::string>();
            row.model = m.at("model").get<std::string>();
            row.k = d.at("k").get<std::size_t>();
            if (!d.at("recall_at_k").is_null()) row.recall = d["recall_at_k"].get<double>();
            if (!d.at("classification").is_null()) row.f1 = d["classification"].at("macro_f1").get<double>();
            row.energy = d.at("energy_kwh").get<double>();
            row.carbon = d.at("carbon_kg").get<double>();
            row.latency = d.at("latency_s").get<double>();
            row.mean_latency = d.at("mean_latency_s").get<double>();
            row.pruned = d.at("pruned_pairs").get<std::size_t>();
            row.exhaustive = d.at("exhaustive_pairs").get<std::size_t>();
            rows.push_back(std::move(row));
        }
        ordered_json models = ordered_json::object();
        for (const auto& item : run.sustain.at("per_model").items()) {
            models[item.key()] = item.value();
        }
        runs_json.push_back(ordered_json{{"run_id", run_id},
                                         {"pipeline", m.at("pipeline")},
                                         {"model", m.at("model")},
                                         {"strategy", m.at("strategy")},
                                         {"workload", m.at("workload")},
                                         {"per_model", std::move(models)},
                                         {"projection", run.sustain.at("projection")}});
    }

    struct Comparison {
        const Row* subject;
        const Row* baseline;
        std::optional<Delta> energy, carbon, latency;
    };
    std::vector<Comparison> comparisons;
    auto safe_compare = [](double v, double b) -> std::optional<Delta> {
        if (!(b > 0.0)) return std::nullopt;
        return compare(v, b);
    };
    if (runs.size() > 1) {
        for (const auto& subject : rows) {
            if (subject.run != rows.front().run) continue;
            for (const auto& other : rows) {
                if (other.run == subject.run || other.dataset != subject.dataset) continue;
                comparisons.push_back({&subject, &other, safe_compare(subject.energy, other.energy),
                                       safe_compare(subject.carbon, other.carbon),
                                       safe_compare(subject.latency, other.latency)});
            }
        }
    }

    auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
    auto delta_json = [](const std::optional<Delta>& d) {
        if (!d) return ordered_json(nullptr);
        return ordered_json{{"percent", d->percent}, {"kind", d->reduction ? "reduction" : "overhead"},
                            {"text", d->text()}};
    };

    stdfs::create_directories(out_dir);
    if (formats.count(ReportFormat::Json)) {
        ordered_json rows_json = ordered_json::array();
        for (const auto& r : rows) {
            rows_json.push_back(ordered_json{{"run_id", r.run},
                                             {"dataset", r.dataset},
                                             {"pipeline", r.pipeline},
                                             {"strategy", r.strategy},
                                             {"model", r.model},
                                             {"k", r.k},
                                             {"recall_at_k", opt(r.recall)},
                                             {"macro_f1", opt(r.f1)},
                                             {"energy_kwh", r.energy},
                                             {"carbon_kg", r.carbon},
                                             {"latency_s", r.latency},
                                             {"mean_latency_s", r.mean_latency},
                                             {"pruned_pairs", r.pruned},
                                             {"exhaustive_pairs", r.exhaustive}});
        }
        ordered_json cmp = ordered_json::array();
        for (const auto& cpr : comparisons) {
            cmp.push_back(ordered_json{{"dataset", cpr.subject->dataset},
                                       {"run_id", cpr.subject->run},
                                       {"baseline_run_id", cpr.baseline->run},
                                       {"energy", delta_json(cpr.energy)},
                                       {"carbon", delta_json(cpr.carbon)},
                                       {"latency", delta_json(cpr.latency)}});
        }
        const ordered_json doc{{"runs", std::move(runs_json)}, {"rows", std::move(rows_json)}, {"comparisons", std::move(cmp)}};
        fs::write_atomic(out_dir / "report.json", doc.dump(2) + "\n");
    }

    if (formats.count(ReportFormat::Csv)) {
        std::ostringstream out;
        csv::write_row(out, {"run_id", "dataset", "pipeline", "strategy", "model", "k", "recall_at_k",
                             "macro_f1", "energy_kwh", "carbon_kg", "latency_s", "mean_latency_s",
                             "pruned_pairs", "exhaustive_pairs"});
        auto num = [](const std::optional<double>& v) { return v ? text::format_double(*v) : std::string(); };
        for (const auto& r : rows) {
            csv::write_row(out, {r.run, r.dataset, r.pipeline, r.strategy, r.model, std::to_string(r.k),
                                 num(r.recall), num(r.f1), text::format_double(r.energy),
                                 text::format_double(r.carbon), text::format_double(r.latency),
                                 text::format_double(r.mean_latency), std::to_string(r.pruned),
                                 std::to_string(r.exhaustive)});
        }
        fs::write_atomic(out_dir / "report.csv", out.str());
    }

    if (formats.count(ReportFormat::Markdown)) {
        std::ostringstream md;
        auto cell = [](const std::optional<double>& v) { return v ? fixed(*v, 3) : std::string("n/a"); };
        md << "# Retrieval and classification report\n\n";
        md << "## Pipeline comparison\n\n";
        md << "| run | dataset | pipeline | strategy | K | Recall@K | macro F1 | energy (kWh) | carbon (kg CO2e) "
              "| latency (s) | mean latency (s) |\n";
        md << "|---|---|---|---|---|---|---|---|---|---|---|\n";
        for (const auto& r : rows) {
            md << "| " << r.run << " | " << r.dataset << " | " << r.pipeline << " | " << r.strategy << " | "
               << r.k << " | " << cell(r.recall) << " | " << cell(r.f1) << " | " << sci(r.energy) << " | "
               << sci(r.carbon) << " | " << fixed(r.latency, 3) << " | " << fixed(r.mean_latency, 4) << " |\n";
        }
        if (!comparisons.empty()) {
            md << "\n## Relative differences\n\n";
            for (const auto& cpr : comparisons) {
                auto line = [&](const char* what, const std::optional<Delta>& d, double a, double b) {
                    md << "- " << cpr.subject->dataset << ", " << what << ": " << cpr.subject->run << " "
                       << sci(a) << " vs " << cpr.baseline->run << " " << sci(b) << " -> "
                       << (d ? d->text() : std::string("undefined (zero baseline)")) << "\n";
                };
                line("energy", cpr.energy, cpr.subject->energy, cpr.baseline->energy);
                line("carbon", cpr.carbon, cpr.subject->carbon, cpr.baseline->carbon);
                line("latency", cpr.latency, cpr.subject->latency, cpr.baseline->latency);
            }
        }
        md << "\n## EcoScore\n\n";
        bool any_model = false;
        for (const auto& run : runs) {
            for (const auto& item : run.sustain.at("per_model").items()) {
                any_model = true;
                const auto& m = item.value();
                md << "- " << run.metrics.at("run_id").get<std::string>() << ", model " << item.key()
                   << ": mean F1 " << fixed(m.at("mean_f1").get<double>(), 3) << ", total carbon "
                   << sci(m.at("total_carbon_kg").get<double>()) << " kg, EcoScore ("
                   << m.at("ecoscore_mode").get<std::string>() << ") "
                   << (m.at("ecoscore").is_null() ? std::string("undefined (zero carbon)")
                                                  : fixed(m["ecoscore"].get<double>(), 3))
                   << "\n";
            }
        }
        if (any_model) {
            md << "\nsum_f1 divides the summed per-dataset macro F1 by total carbon and mean_f1 divides "
                  "the mean. They differ by a factor equal to the number of datasets; published "
                  "model-level summaries follow the mean_f1 arithmetic.\n";
        } else {
            md << "No classified pairs, so no EcoScore.\n";
        }
        md << "\n## Workload projection\n\n";
        for (const auto& run : runs) {
            const auto& p = run.sustain.at("projection");
            const auto id = run.metrics.at("run_id").get<std::string>();
            if (p.empty()) {
                md << "- " << id << ": not available";
                const auto& w = run.metrics.at("workload");
                if (w.contains("note")) md << " (" << w["note"].get<std::string>() << ")";
                md << "\n";
                continue;
            }
            md << "- " << id << ": exhaustive " << p.at("n_all").get<std::size_t>() << " pairs -> "
               << sci(p.at("e_vanilla_kwh").get<double>()) << " kWh; pruned "
               << p.at("n_pruned").get<std::size_t>() << " pairs -> " << sci(p.at("e_pruned_kwh").get<double>())
               << " kWh; reduction " << percent_text(p.at("reduction").get<double>() * 100.0)
               << " at " << sci(p.at("e_per_kwh").get<double>()) << " kWh per inference\n";
        }
        fs::write_atomic(out_dir / "report.md", md.str());
    }
}

RunSummary run_experiment(const ExperimentConfig& config) {
    config.validate();
    stage_ingest(config);
    stage_extract(config);
    if (is_kgr(config.retrieval.pipeline)) {
        stage_index_kg(config);
    } else {
        stage_index_vsr(config);
    }
    stage_retrieve(config);
    stage_classify(config);
    stage_evaluate(config);
    const stdfs::path dir = config.run_dir();
    in_stage("report", [&] {
        emit_report(std::span<const stdfs::path>(&dir, 1),
                    {ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown}, dir);
    });

    RunSummary summary{dir, 0, 0};
    const auto metrics_doc = json::parse(fs::read_text(dir / "metrics.json"));
    for (const auto& d : metrics_doc.at("datasets")) {
        summary.classified_pairs += d.at("classified_pairs").get<std::size_t>();
        summary.classification_errors += d.at("classification_errors").get<std::size_t>();
    }
    return summary;
}

// ---- sweep ----------------------------------------------------------------

std::vector<SweepRow> sweep_weights(const ExperimentConfig& c) {
    return in_stage("sweep-weights", [&] {
        stdfs::create_directories(c.run_dir());
        std::vector<corpus::Dataset> datasets;
        for (const auto& d : c.datasets) {
            auto ds = corpus::load_requirements(d.requirements, d.format, d.name);
            if (d.pairs) corpus::attach_pairs(ds, *d.pairs);
            datasets.push_back(corpus::deduplicate(ds));
        }
        const auto lexicon = c.lexicon_dir ? extract::Lexicon::load(*c.lexicon_dir)
                                           : extract::Lexicon::bundled();
        kg::GraphBuilder builder;
        for (const auto& ds : datasets) builder.add(ds, extract::extract_all(ds, lexicon));
        const auto graph = std::move(builder).build();
        const std::size_t k = c.retrieval.k.value_or(c.retrieval.k_max);

        std::vector<SweepRow> rows;
        for (const double a : c.sweep.alpha) {
            for (const double b : c.sweep.beta) {
                for (const double g : c.sweep.gamma) {
                    const kg::ScoreWeights w{a, b, g};
                    try {
                        w.validate();
                    } catch (const ConfigError&) {
                        continue;  // all-zero point
                    }
                    for (const auto& ds : datasets) {
                        metrics::Retrieved retrieved;
                        for (const auto& [q, relevant] : ds.ground_truth) {
                            if (relevant.empty()) continue;
                            auto& ids = retrieved[q];
                            const auto ranked =
                                c.retrieval.pipeline == RetrievalPipeline::KgrWeighted
                                    ? kg::retrieve_kgr_weighted(graph, q, ds.source, k, w, c.retrieval.role_weights)
                                    : kg::retrieve_kgr(graph, q, ds.source, k, w);
                            for (const auto& s : ranked) ids.push_back(s.candidate_id);
                        }
                        corpus::GroundTruth truth;
                        for (const auto& [q, relevant] : ds.ground_truth) {
                            if (!relevant.empty()) truth[q] = relevant;
                        }
                        SweepRow row{a, b, g, ds.source, k, std::nullopt};
                        if (!truth.empty()) {
                            row.recall = metrics::recall_at_k(retrieved, truth, k, c.retrieval.recall_mode);
                        }
                        rows.push_back(std::move(row));
                    }
                }
            }
        }

        std::ostringstream out;
        csv::write_row(out, {"alpha", "beta", "gamma", "dataset", "k", "recall_at_k"});
        for (const auto& r : rows) {
            csv::write_row(out, {text::format_double(r.alpha), text::format_double(r.beta),
                                 text::format_double(r.gamma), r.dataset, std::to_string(r.k),
                                 r.recall ? text::format_double(*r.recall) : std::string()});
        }
        fs::write_atomic(c.run_dir() / "sweep.csv", out.str());
        return rows;
    });
}

}  // namespace reqdep::pipeline
