#include "reqdep/corpus.hpp"

#include "reqdep/csv.hpp"
#include "reqdep/errors.hpp"
#include "reqdep/fs.hpp"
#include "reqdep/text.hpp"

#include "json.hpp"

#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace reqdep::corpus {

using nlohmann::json;

const Requirement* Dataset::find(std::string_view id) const {
    for (const auto& r : requirements) {
        if (r.id == id) return &r;
    }
    return nullptr;
}

const Requirement& Dataset::at(std::string_view id) const {
    if (const auto* r = find(id)) return *r;
    throw LookupError("requirement '" + std::string(id) + "' not found in source '" + source + "'");
}

Format parse_format(std::string_view name) {
    const auto lowered = text::to_lower(name);
    if (lowered == "csv") return Format::Csv;
    if (lowered == "json") return Format::Json;
    throw ConfigError("unknown requirements format '" + std::string(name) + "'");
}

namespace {

std::string default_source(const std::filesystem::path& path, std::string source) {
    return source.empty() ? path.stem().string() : source;
}

void add_requirement(Dataset& ds, std::unordered_set<std::string>& seen, std::string id,
                     std::string body, const std::string& where) {
    if (text::trim(id).empty()) throw ParseError(where + ": empty id");
    if (text::trim(body).empty()) throw ParseError(where + ": empty text");
    if (!seen.insert(id).second) throw IntegrityError(where + ": duplicate id '" + id + "'");
    ds.requirements.push_back({std::move(id), ds.source, std::move(body)});
}

}  // namespace

Dataset load_requirements(const std::filesystem::path& path, Format format, std::string source) {
    Dataset ds;
    ds.source = default_source(path, std::move(source));
    std::unordered_set<std::string> seen;

    if (format == Format::Csv) {
        const auto rows = csv::read_file(path);
        if (rows.empty()) throw ParseError(path.string() + ": missing header");
        const auto& header = rows.front().fields;
        if (header.size() != 2 || text::trim(header[0]) != "id" || text::trim(header[1]) != "text") {
            throw ParseError(path.string() + ": header must be 'id,text'");
        }
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const auto& row = rows[i];
            const std::string where = path.string() + " row " + std::to_string(i) + " (line " +
                                      std::to_string(row.line) + ")";
            if (row.fields.size() != 2) {
                throw ParseError(where + ": expected 2 fields, got " +
                                 std::to_string(row.fields.size()));
            }
            add_requirement(ds, seen, row.fields[0], row.fields[1], where);
        }
        return ds;
    }

    json doc;
    try {
        doc = json::parse(fs::read_text(path));
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (!doc.is_array()) throw ParseError(path.string() + ": expected a JSON array");
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& obj = doc[i];
        const std::string where = path.string() + " row " + std::to_string(i + 1);
        if (!obj.is_object() || !obj.contains("id") || !obj.contains("text") ||
            !obj["id"].is_string() || !obj["text"].is_string()) {
            throw ParseError(where + ": expected {\"id\": string, \"text\": string}");
        }
        add_requirement(ds, seen, obj["id"].get<std::string>(), obj["text"].get<std::string>(),
                        where);
    }
    return ds;
}

GroundTruth build_ground_truth(std::span<const RequirementPair> pairs) {
    GroundTruth g;
    for (const auto& p : pairs) {
        if (p.label == Label::Conflict) g[p.anchor_id].insert(p.candidate_id);
    }
    return g;
}

LoadedPairs load_pairs(const std::filesystem::path& path, const Dataset& companion) {
    const auto rows = csv::read_file(path);
    if (rows.empty()) throw ParseError(path.string() + ": missing header");
    const auto& header = rows.front().fields;
    if (header.size() != 3 || text::trim(header[0]) != "anchor_id" ||
        text::trim(header[1]) != "candidate_id" || text::trim(header[2]) != "label") {
        throw ParseError(path.string() + ": header must be 'anchor_id,candidate_id,label'");
    }

    std::unordered_set<std::string_view> ids;
    for (const auto& r : companion.requirements) ids.insert(r.id);

    LoadedPairs out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& row = rows[i];
        const std::string where = path.string() + " row " + std::to_string(i) + " (line " +
                                  std::to_string(row.line) + ")";
        if (row.fields.size() != 3) {
            throw ParseError(where + ": expected 3 fields, got " + std::to_string(row.fields.size()));
        }
        const auto label = parse_label(row.fields[2]);
        if (!label) throw ParseError(where + ": unknown label '" + row.fields[2] + "'");
        RequirementPair pair{row.fields[0], row.fields[1], *label};
        for (const auto* id : {&pair.anchor_id, &pair.candidate_id}) {
            if (!ids.contains(*id)) {
                throw IntegrityError(where + ": unknown requirement id '" + *id + "' in source '" +
                                     companion.source + "'");
            }
        }
        if (pair.anchor_id == pair.candidate_id) {
            throw IntegrityError(where + ": anchor and candidate are the same requirement");
        }
        out.pairs.push_back(std::move(pair));
    }
    out.ground_truth = build_ground_truth(out.pairs);
    return out;
}

void attach_pairs(Dataset& dataset, const std::filesystem::path& path) {
    auto loaded = load_pairs(path, dataset);
    dataset.pairs = std::move(loaded.pairs);
    dataset.ground_truth = std::move(loaded.ground_truth);
}

Dataset deduplicate(const Dataset& dataset) {
    Dataset out;
    out.source = dataset.source;
    std::unordered_map<std::string, std::string> survivor_by_text;
    std::unordered_map<std::string, std::string> remap;
    for (const auto& r : dataset.requirements) {
        auto [it, inserted] = survivor_by_text.emplace(text::normalize(r.text), r.id);
        remap[r.id] = it->second;
        if (inserted) out.requirements.push_back(r);
    }
    for (const auto& p : dataset.pairs) {
        RequirementPair q = p;
        if (auto it = remap.find(q.anchor_id); it != remap.end()) q.anchor_id = it->second;
        if (auto it = remap.find(q.candidate_id); it != remap.end()) q.candidate_id = it->second;
        if (q.anchor_id == q.candidate_id) continue;
        out.pairs.push_back(std::move(q));
    }
    out.ground_truth = build_ground_truth(out.pairs);
    return out;
}

std::vector<Requirement> unify_sources(std::span<const Dataset> datasets) {
    std::vector<Requirement> out;
    std::unordered_set<std::string> seen;
    for (const auto& ds : datasets) {
        for (const auto& r : ds.requirements) {
            if (seen.insert(text::normalize(r.text)).second) out.push_back(r);
        }
    }
    return out;
}

std::vector<std::string> stat_tokens(std::string_view body) {
    return text::split_ws(text::normalize(body));
}

StatsRecord dataset_stats(const Dataset& dataset) {
    StatsRecord s;
    std::unordered_map<std::string_view, std::size_t> lengths;
    std::unordered_set<std::string> vocab;
    for (const auto& r : dataset.requirements) {
        auto tokens = stat_tokens(r.text);
        lengths[r.id] = tokens.size();
        for (auto& t : tokens) vocab.insert(std::move(t));
    }
    s.vocabulary_size = vocab.size();

    double anchor_sum = 0.0;
    double candidate_sum = 0.0;
    for (const auto& p : dataset.pairs) {
        (p.label == Label::Conflict ? s.conflict_count : s.neutral_count)++;
        auto a = lengths.find(p.anchor_id);
        auto c = lengths.find(p.candidate_id);
        if (a == lengths.end() || c == lengths.end()) {
            throw IntegrityError("pair references unknown id in source '" + dataset.source + "'");
        }
        anchor_sum += static_cast<double>(a->second);
        candidate_sum += static_cast<double>(c->second);
    }
    if (!dataset.pairs.empty()) {
        const auto n = static_cast<double>(dataset.pairs.size());
        s.avg_tokens_pair = {anchor_sum / n, candidate_sum / n};
    }
    return s;
}

void write_requirements_csv(const Dataset& dataset, const std::filesystem::path& path) {
    std::ostringstream out;
    csv::write_row(out, {"id", "text"});
    for (const auto& r : dataset.requirements) csv::write_row(out, {r.id, r.text});
    fs::write_atomic(path, out.str());
}

void write_pairs_csv(std::span<const RequirementPair> pairs, const std::filesystem::path& path) {
    std::ostringstream out;
    csv::write_row(out, {"anchor_id", "candidate_id", "label"});
    for (const auto& p : pairs) {
        csv::write_row(out, {p.anchor_id, p.candidate_id, std::string(to_string(p.label))});
    }
    fs::write_atomic(path, out.str());
}

}  // namespace reqdep::corpus
