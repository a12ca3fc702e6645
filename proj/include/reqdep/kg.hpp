#pragma once

#include "reqdep/corpus.hpp"
#include "reqdep/extract.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace reqdep::kg {

using extract::Entity;
using extract::EntityKind;

/// Edge type from a requirement to one of its entities. Each relation
/// touches exactly one entity kind.
enum class Relation { HasActor, HasAction, HasObject, HasAttribute, HasCondition };

Relation relation_for(EntityKind kind);
std::string_view to_string(Relation rel);
Relation parse_relation(std::string_view name);

struct RequirementNode {
    std::string source;
    std::string id;
};

struct Edge {
    std::uint32_t requirement;
    std::uint32_t entity;
    Relation relation;
};

/// Bipartite requirement/entity graph, immutable once built.
class KnowledgeGraph {
public:
    std::size_t requirement_count() const { return requirements_.size(); }
    std::size_t requirement_count(std::string_view source) const;
    std::size_t entity_count() const { return entities_.size(); }
    std::size_t edge_count() const;

    std::optional<std::uint32_t> find_requirement(std::string_view source,
                                                  std::string_view id) const;
    /// Throws LookupError for unknown nodes.
    std::uint32_t requirement_index(std::string_view source, std::string_view id) const;
    std::optional<std::uint32_t> find_entity(const Entity& e) const;

    const RequirementNode& requirement(std::uint32_t r) const { return requirements_[r]; }
    const Entity& entity(std::uint32_t e) const { return entities_[e]; }

    /// Sorted entity indices adjacent to requirement `r`.
    std::span<const std::uint32_t> entities_of(std::uint32_t r) const { return req_adj_[r]; }
    /// Sorted requirement indices adjacent to entity `e`.
    std::span<const std::uint32_t> requirements_of(std::uint32_t e) const { return ent_adj_[e]; }

    /// Number of requirements of `source` adjacent to `e`.
    std::size_t document_frequency(const Entity& e, std::string_view source) const;

    std::vector<Edge> edges() const;

private:
    friend class GraphBuilder;

    std::vector<RequirementNode> requirements_;
    std::map<std::pair<std::string, std::string>, std::uint32_t, std::less<>> req_index_;
    std::vector<Entity> entities_;
    std::map<Entity, std::uint32_t> entity_index_;
    std::vector<std::vector<std::uint32_t>> req_adj_;
    std::vector<std::vector<std::uint32_t>> ent_adj_;
    std::map<std::string, std::size_t, std::less<>> source_sizes_;
};

class GraphBuilder {
public:
    void add_requirement(const std::string& source, const std::string& id);
    /// Entity node with no edges yet; add_edge creates missing entities itself.
    void add_entity(const Entity& entity);
    /// The requirement must have been added first.
    void add_edge(const std::string& source, const std::string& id, const Entity& entity);
    /// Adds every requirement of `dataset` and the edges of `entity_sets`.
    /// Throws IntegrityError when an entity set names an unknown requirement.
    void add(const corpus::Dataset& dataset, std::span<const extract::EntitySet> entity_sets);

    KnowledgeGraph build() &&;

private:
    KnowledgeGraph g_;
};

KnowledgeGraph build_graph(const corpus::Dataset& dataset,
                           std::span<const extract::EntitySet> entity_sets);

struct ScoreWeights {
    double alpha = 1.0;
    double beta = 0.5;
    double gamma = 0.25;

    /// Throws ConfigError on negative or all-zero weights.
    void validate() const;
};

/// Per-relation multipliers for the inverse-frequency variant; relations not
/// present weigh 1.
using RoleWeights = std::map<Relation, double>;

struct ScoredCandidate {
    std::string candidate_id;
    int shared_entities = 0;   // s_e
    int matched_types = 0;     // s_t
    int hops = 0;              // d, 0 when unreachable
    double proximity = 0.0;    // s_d
    double score = 0.0;
    std::optional<double> weighted_overlap;
};

/// Breadth-first hop count over the undirected graph; nullopt when unreachable.
/// Same node gives 0.
std::optional<int> shortest_path_len(const KnowledgeGraph& graph, std::string_view source,
                                     std::string_view q, std::string_view j);

/// Validates q != j.
ScoredCandidate score_candidate(const KnowledgeGraph& graph, std::string_view source,
                                std::string_view q, std::string_view j,
                                const ScoreWeights& weights);

/// Knowledge-graph retrieval: candidates are the same-source requirements
/// sharing at least one entity with q; top k by score, ties by ascending id.
std::vector<ScoredCandidate> retrieve_kgr(const KnowledgeGraph& graph, std::string_view q,
                                          std::string_view source, std::size_t k,
                                          const ScoreWeights& weights);

/// As retrieve_kgr, with the shared-entity count replaced by
/// sum over shared e of role_weight(e) * ln(N_source / df(e)).
std::vector<ScoredCandidate> retrieve_kgr_weighted(const KnowledgeGraph& graph,
                                                   std::string_view q, std::string_view source,
                                                   std::size_t k, const ScoreWeights& weights,
                                                   const RoleWeights& role_weights);

/// Size of the candidate set before top-k truncation.
std::size_t candidate_count(const KnowledgeGraph& graph, std::string_view q,
                            std::string_view source);

/// Line format: ENT<TAB>kind<TAB>value, REQ<TAB>source<TAB>id, and
/// EDGE<TAB>req_id<TAB>type<TAB>kind<TAB>value. An EDGE refers to the most
/// recent REQ line with that id.
void write_graph(const KnowledgeGraph& graph, std::ostream& out);
KnowledgeGraph read_graph(std::istream& in);

}  // namespace reqdep::kg
