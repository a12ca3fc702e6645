#pragma once

#include "reqdep/label.hpp"

#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace reqdep::corpus {

struct Requirement {
    std::string id;
    std::string source;
    std::string text;

    friend bool operator==(const Requirement&, const Requirement&) = default;
};

struct RequirementPair {
    std::string anchor_id;
    std::string candidate_id;
    Label label = Label::Neutral;

    friend bool operator==(const RequirementPair&, const RequirementPair&) = default;
};

/// G(q): for each anchor, the candidates labelled Conflict.
using GroundTruth = std::map<std::string, std::set<std::string>>;

/// One source's requirements and labelled pairs.
///
/// Requirements keep input order. `ground_truth` is always derivable from
/// `pairs` (see build_ground_truth) and is kept in sync by every operation
/// in this module.
struct Dataset {
    std::string source;
    std::vector<Requirement> requirements;
    std::vector<RequirementPair> pairs;
    GroundTruth ground_truth;

    const Requirement* find(std::string_view id) const;
    const Requirement& at(std::string_view id) const;
    bool contains(std::string_view id) const { return find(id) != nullptr; }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct StatsRecord {
    std::size_t conflict_count = 0;
    std::size_t neutral_count = 0;
    /// Mean whitespace-token length of (anchor text, candidate text) over pairs.
    std::pair<double, double> avg_tokens_pair{0.0, 0.0};
    std::size_t vocabulary_size = 0;
};

enum class Format { Csv, Json };

/// Parses `csv` / `json` (case-insensitive); throws ConfigError otherwise.
Format parse_format(std::string_view name);

/// Reads `id,text` CSV or a JSON array of {"id","text"} objects.
/// Throws ParseError naming the row for malformed rows and IntegrityError on
/// duplicate ids.
Dataset load_requirements(const std::filesystem::path& path, Format format,
                          std::string source = {});

struct LoadedPairs {
    std::vector<RequirementPair> pairs;
    GroundTruth ground_truth;
};

/// Reads `anchor_id,candidate_id,label` CSV. Every id must resolve in
/// `companion` (IntegrityError otherwise); labels are case-insensitive.
LoadedPairs load_pairs(const std::filesystem::path& path, const Dataset& companion);

/// Convenience: load_pairs and attach the result to `dataset`.
void attach_pairs(Dataset& dataset, const std::filesystem::path& path);

GroundTruth build_ground_truth(std::span<const RequirementPair> pairs);

/// Collapses requirements whose normalized text coincides onto the first-seen
/// id, remaps pairs and drops self-pairs created by the remap.
Dataset deduplicate(const Dataset& dataset);

/// Unique requirements across several sources (first source wins). Per-source
/// datasets are left untouched; this is the cross-source view used when one
/// shared index over all corpora is wanted.
std::vector<Requirement> unify_sources(std::span<const Dataset> datasets);

/// Whitespace tokens of the normalized text.
std::vector<std::string> stat_tokens(std::string_view text);

StatsRecord dataset_stats(const Dataset& dataset);

void write_requirements_csv(const Dataset& dataset, const std::filesystem::path& path);
void write_pairs_csv(std::span<const RequirementPair> pairs, const std::filesystem::path& path);

}  // namespace reqdep::corpus
