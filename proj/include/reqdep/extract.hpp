#pragma once

#include "reqdep/corpus.hpp"

#include <compare>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace reqdep::extract {

enum class EntityKind { Actor, Action, Object, Attribute, Condition };

inline constexpr EntityKind kAllKinds[] = {EntityKind::Actor, EntityKind::Action,
                                           EntityKind::Object, EntityKind::Attribute,
                                           EntityKind::Condition};

std::string_view to_string(EntityKind kind);
EntityKind parse_kind(std::string_view name);

struct Entity {
    EntityKind kind;
    std::string value;

    friend auto operator<=>(const Entity&, const Entity&) = default;
};

struct EntitySet {
    std::string requirement_id;
    std::set<Entity> entities;

    bool empty() const { return entities.empty(); }
    friend bool operator==(const EntitySet&, const EntitySet&) = default;
};

/// Word lists backing the extractor. Each file holds one entry per line;
/// blank lines and lines starting with '#' are ignored.
struct Lexicon {
    std::unordered_set<std::string> stopwords;
    std::unordered_map<std::string, std::string> irregular;  // form -> lemma
    std::unordered_set<std::string> e_final;                 // lemmas ending in "e"

    /// Loads stopwords.txt, irregular_lemmas.txt and e_final_stems.txt from `dir`.
    static Lexicon load(const std::filesystem::path& dir);

    /// The lexicon shipped in data/. $REQDEP_DATA_DIR overrides the location.
    static const Lexicon& bundled();
};

std::filesystem::path default_data_dir();

/// Lowercased, punctuation-trimmed whitespace tokens. Punctuation between two
/// alphanumerics ("2.5", "e-mail") is kept.
std::vector<std::string> normalize_tokens(std::string_view text);

/// Rule-based lemma of a normalized token.
std::string lemmatize(std::string_view token, const Lexicon& lexicon = Lexicon::bundled());

EntitySet extract_entities(const corpus::Requirement& req,
                           const Lexicon& lexicon = Lexicon::bundled());

std::vector<EntitySet> extract_all(const corpus::Dataset& dataset,
                                   const Lexicon& lexicon = Lexicon::bundled());

}  // namespace reqdep::extract
