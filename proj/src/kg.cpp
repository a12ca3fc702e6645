#include "reqdep/kg.hpp"

#include "reqdep/errors.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace reqdep::kg {

namespace {

constexpr std::pair<Relation, std::string_view> kRelationNames[] = {
    {Relation::HasActor, "HAS_ACTOR"},         {Relation::HasAction, "HAS_ACTION"},
    {Relation::HasObject, "HAS_OBJECT"},       {Relation::HasAttribute, "HAS_ATTRIBUTE"},
    {Relation::HasCondition, "HAS_CONDITION"},
};

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find('\t', start);
        out.push_back(line.substr(start, pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

bool ranks_before(const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.candidate_id < b.candidate_id;
}

// Hop distances from `from` to each node in `targets`, stopping as soon as all
// targets are settled. Requirement r is node r; entity e is node R + e.
std::unordered_map<std::uint32_t, int> bfs_distances(const KnowledgeGraph& g, std::uint32_t from,
                                                     const std::unordered_set<std::uint32_t>& targets) {
    std::unordered_map<std::uint32_t, int> found;
    if (targets.empty()) return found;
    const auto R = static_cast<std::uint32_t>(g.requirement_count());
    std::vector<int> dist(g.requirement_count() + g.entity_count(), -1);
    std::deque<std::uint32_t> queue{from};
    dist[from] = 0;
    if (targets.contains(from)) found[from] = 0;
    while (!queue.empty() && found.size() < targets.size()) {
        const auto node = queue.front();
        queue.pop_front();
        auto visit = [&](std::uint32_t next) {
            if (dist[next] >= 0) return;
            dist[next] = dist[node] + 1;
            if (next < R && targets.contains(next)) found[next] = dist[next];
            queue.push_back(next);
        };
        if (node < R) {
            for (auto e : g.entities_of(node)) visit(R + e);
        } else {
            for (auto r : g.requirements_of(node - R)) visit(r);
        }
    }
    return found;
}

struct Overlap {
    std::vector<std::uint32_t> shared;  // entity indices
    int matched_types = 0;
};

Overlap overlap(const KnowledgeGraph& g, std::uint32_t q, std::uint32_t j) {
    Overlap o;
    const auto a = g.entities_of(q);
    const auto b = g.entities_of(j);
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(o.shared));
    // Relation is a function of entity kind, so matching relation types are
    // the distinct kinds among shared entities.
    bool seen[5] = {};
    for (auto e : o.shared) seen[static_cast<int>(g.entity(e).kind)] = true;
    for (bool s : seen) o.matched_types += s ? 1 : 0;
    return o;
}

ScoredCandidate assemble(const KnowledgeGraph& g, const Overlap& o, std::uint32_t j,
                         std::optional<int> hops, const ScoreWeights& w,
                         std::optional<double> weighted_overlap) {
    ScoredCandidate c;
    c.candidate_id = g.requirement(j).id;
    c.shared_entities = static_cast<int>(o.shared.size());
    c.matched_types = o.matched_types;
    c.hops = hops.value_or(0);
    c.proximity = c.hops > 0 ? 1.0 / c.hops : 0.0;
    c.weighted_overlap = weighted_overlap;
    const double overlap_term = weighted_overlap ? *weighted_overlap : c.shared_entities;
    c.score = w.alpha * overlap_term + w.beta * c.matched_types + w.gamma * c.proximity;
    return c;
}

std::vector<std::uint32_t> candidate_set(const KnowledgeGraph& g, std::uint32_t q,
                                         std::string_view source) {
    std::vector<std::uint32_t> out;
    for (auto e : g.entities_of(q)) {
        for (auto r : g.requirements_of(e)) {
            if (r != q && g.requirement(r).source == source) out.push_back(r);
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<ScoredCandidate> rank(const KnowledgeGraph& g, std::string_view q,
                                  std::string_view source, std::size_t k,
                                  const ScoreWeights& weights, const RoleWeights* role_weights) {
    if (k == 0) throw ValidationError("k must be >= 1");
    weights.validate();
    const auto qi = g.requirement_index(source, q);
    if (g.entities_of(qi).empty()) return {};

    const auto candidates = candidate_set(g, qi, source);
    const std::unordered_set<std::uint32_t> targets(candidates.begin(), candidates.end());
    const auto distances = bfs_distances(g, qi, targets);
    const double n_source = static_cast<double>(g.requirement_count(source));

    std::vector<ScoredCandidate> scored;
    scored.reserve(candidates.size());
    for (auto j : candidates) {
        const auto o = overlap(g, qi, j);
        std::optional<int> hops;
        if (auto it = distances.find(j); it != distances.end()) hops = it->second;
        std::optional<double> weighted;
        if (role_weights) {
            double sum = 0.0;
            for (auto e : o.shared) {
                const auto& ent = g.entity(e);
                const auto rw = role_weights->find(relation_for(ent.kind));
                const double role = rw == role_weights->end() ? 1.0 : rw->second;
                const double df = static_cast<double>(g.document_frequency(ent, source));
                sum += role * std::log(n_source / df);
            }
            weighted = sum;
        }
        scored.push_back(assemble(g, o, j, hops, weights, weighted));
    }
    const std::size_t keep = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep),
                      scored.end(), ranks_before);
    scored.resize(keep);
    return scored;
}

}  // namespace

Relation relation_for(EntityKind kind) {
    switch (kind) {
        case EntityKind::Actor: return Relation::HasActor;
        case EntityKind::Action: return Relation::HasAction;
        case EntityKind::Object: return Relation::HasObject;
        case EntityKind::Attribute: return Relation::HasAttribute;
        case EntityKind::Condition: return Relation::HasCondition;
    }
    return Relation::HasObject;
}

std::string_view to_string(Relation rel) {
    for (const auto& [r, name] : kRelationNames) {
        if (r == rel) return name;
    }
    return "?";
}

Relation parse_relation(std::string_view name) {
    for (const auto& [r, n] : kRelationNames) {
        if (n == name) return r;
    }
    throw ParseError("unknown relation type '" + std::string(name) + "'");
}

std::size_t KnowledgeGraph::requirement_count(std::string_view source) const {
    auto it = source_sizes_.find(source);
    return it == source_sizes_.end() ? 0 : it->second;
}

std::size_t KnowledgeGraph::edge_count() const {
    std::size_t n = 0;
    for (const auto& adj : req_adj_) n += adj.size();
    return n;
}

std::optional<std::uint32_t> KnowledgeGraph::find_requirement(std::string_view source,
                                                              std::string_view id) const {
    auto it = req_index_.find(std::pair<std::string, std::string>(source, id));
    if (it == req_index_.end()) return std::nullopt;
    return it->second;
}

std::uint32_t KnowledgeGraph::requirement_index(std::string_view source,
                                                std::string_view id) const {
    if (auto r = find_requirement(source, id)) return *r;
    throw LookupError("requirement node '" + std::string(id) + "' not in graph source '" +
                      std::string(source) + "'");
}

std::optional<std::uint32_t> KnowledgeGraph::find_entity(const Entity& e) const {
    auto it = entity_index_.find(e);
    if (it == entity_index_.end()) return std::nullopt;
    return it->second;
}

std::size_t KnowledgeGraph::document_frequency(const Entity& e, std::string_view source) const {
    const auto idx = find_entity(e);
    if (!idx) return 0;
    std::size_t n = 0;
    for (auto r : ent_adj_[*idx]) n += requirements_[r].source == source ? 1 : 0;
    return n;
}

std::vector<Edge> KnowledgeGraph::edges() const {
    std::vector<Edge> out;
    for (std::uint32_t r = 0; r < req_adj_.size(); ++r) {
        for (auto e : req_adj_[r]) out.push_back({r, e, relation_for(entities_[e].kind)});
    }
    return out;
}

void GraphBuilder::add_requirement(const std::string& source, const std::string& id) {
    auto [it, inserted] = g_.req_index_.emplace(std::make_pair(source, id),
                                                static_cast<std::uint32_t>(g_.requirements_.size()));
    if (!inserted) throw IntegrityError("duplicate requirement node '" + id + "' in '" + source + "'");
    g_.requirements_.push_back({source, id});
    g_.req_adj_.emplace_back();
    ++g_.source_sizes_[source];
}

void GraphBuilder::add_entity(const Entity& entity) {
    auto [it, inserted] = g_.entity_index_.emplace(entity,
                                                   static_cast<std::uint32_t>(g_.entities_.size()));
    if (inserted) {
        g_.entities_.push_back(entity);
        g_.ent_adj_.emplace_back();
    }
}

void GraphBuilder::add_edge(const std::string& source, const std::string& id,
                            const Entity& entity) {
    const auto r = g_.find_requirement(source, id);
    if (!r) throw IntegrityError("edge references unknown requirement '" + id + "'");
    add_entity(entity);
    const auto e = g_.entity_index_.at(entity);
    g_.req_adj_[*r].push_back(e);
    g_.ent_adj_[e].push_back(*r);
}

void GraphBuilder::add(const corpus::Dataset& dataset,
                       std::span<const extract::EntitySet> entity_sets) {
    for (const auto& r : dataset.requirements) add_requirement(dataset.source, r.id);
    for (const auto& set : entity_sets) {
        if (!g_.find_requirement(dataset.source, set.requirement_id)) {
            throw IntegrityError("entity set for unknown requirement '" + set.requirement_id +
                                 "' in source '" + dataset.source + "'");
        }
        for (const auto& e : set.entities) add_edge(dataset.source, set.requirement_id, e);
    }
}

KnowledgeGraph GraphBuilder::build() && {
    // Entity indices are renumbered in (kind, value) order so the graph is
    // independent of insertion order.
    std::vector<std::uint32_t> renumber(g_.entities_.size());
    std::vector<Entity> sorted;
    sorted.reserve(g_.entities_.size());
    {
        std::uint32_t next = 0;
        for (auto& [entity, idx] : g_.entity_index_) {
            renumber[idx] = next;
            idx = next++;
            sorted.push_back(entity);
        }
    }
    std::vector<std::vector<std::uint32_t>> ent_adj(sorted.size());
    for (std::size_t old = 0; old < g_.ent_adj_.size(); ++old) {
        ent_adj[renumber[old]] = std::move(g_.ent_adj_[old]);
    }
    g_.entities_ = std::move(sorted);
    g_.ent_adj_ = std::move(ent_adj);
    for (auto& adj : g_.req_adj_) {
        for (auto& e : adj) e = renumber[e];
        std::sort(adj.begin(), adj.end());
        adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
    }
    for (auto& adj : g_.ent_adj_) {
        std::sort(adj.begin(), adj.end());
        adj.erase(std::unique(adj.begin(), adj.end()), adj.end());
    }
    return std::move(g_);
}

KnowledgeGraph build_graph(const corpus::Dataset& dataset,
                           std::span<const extract::EntitySet> entity_sets) {
    GraphBuilder b;
    b.add(dataset, entity_sets);
    return std::move(b).build();
}

void ScoreWeights::validate() const {
    if (alpha < 0 || beta < 0 || gamma < 0) throw ConfigError("score weights must be non-negative");
    if (alpha == 0 && beta == 0 && gamma == 0) throw ConfigError("score weights are all zero");
}

std::optional<int> shortest_path_len(const KnowledgeGraph& graph, std::string_view source,
                                     std::string_view q, std::string_view j) {
    const auto qi = graph.requirement_index(source, q);
    const auto ji = graph.requirement_index(source, j);
    const auto found = bfs_distances(graph, qi, {ji});
    if (auto it = found.find(ji); it != found.end()) return it->second;
    return std::nullopt;
}

ScoredCandidate score_candidate(const KnowledgeGraph& graph, std::string_view source,
                                std::string_view q, std::string_view j,
                                const ScoreWeights& weights) {
    weights.validate();
    const auto qi = graph.requirement_index(source, q);
    const auto ji = graph.requirement_index(source, j);
    if (qi == ji) throw ValidationError("cannot score a requirement against itself");
    const auto found = bfs_distances(graph, qi, {ji});
    std::optional<int> hops;
    if (auto it = found.find(ji); it != found.end()) hops = it->second;
    return assemble(graph, overlap(graph, qi, ji), ji, hops, weights, std::nullopt);
}

std::vector<ScoredCandidate> retrieve_kgr(const KnowledgeGraph& graph, std::string_view q,
                                          std::string_view source, std::size_t k,
                                          const ScoreWeights& weights) {
    return rank(graph, q, source, k, weights, nullptr);
}

std::vector<ScoredCandidate> retrieve_kgr_weighted(const KnowledgeGraph& graph,
                                                   std::string_view q, std::string_view source,
                                                   std::size_t k, const ScoreWeights& weights,
                                                   const RoleWeights& role_weights) {
    for (const auto& [rel, w] : role_weights) {
        if (!(w >= 0)) throw ConfigError("role weight for " + std::string(to_string(rel)) + " is negative");
    }
    return rank(graph, q, source, k, weights, &role_weights);
}

std::size_t candidate_count(const KnowledgeGraph& graph, std::string_view q,
                            std::string_view source) {
    return candidate_set(graph, graph.requirement_index(source, q), source).size();
}

void write_graph(const KnowledgeGraph& graph, std::ostream& out) {
    for (std::uint32_t e = 0; e < graph.entity_count(); ++e) {
        const auto& ent = graph.entity(e);
        out << "ENT\t" << extract::to_string(ent.kind) << '\t' << ent.value << '\n';
    }
    for (std::uint32_t r = 0; r < graph.requirement_count(); ++r) {
        const auto& node = graph.requirement(r);
        out << "REQ\t" << node.source << '\t' << node.id << '\n';
        for (auto e : graph.entities_of(r)) {
            const auto& ent = graph.entity(e);
            out << "EDGE\t" << node.id << '\t' << to_string(relation_for(ent.kind)) << '\t'
                << extract::to_string(ent.kind) << '\t' << ent.value << '\n';
        }
    }
}

KnowledgeGraph read_graph(std::istream& in) {
    GraphBuilder b;
    std::map<std::string, std::string> last_source_for_id;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split_tabs(line);
        const std::string where = "graph line " + std::to_string(lineno);
        if (f[0] == "ENT" && f.size() == 3) {
            b.add_entity(Entity{extract::parse_kind(f[1]), f[2]});
        } else if (f[0] == "REQ" && f.size() == 3) {
            b.add_requirement(f[1], f[2]);
            last_source_for_id[f[2]] = f[1];
        } else if (f[0] == "EDGE" && f.size() == 5) {
            const auto kind = extract::parse_kind(f[3]);
            if (parse_relation(f[2]) != relation_for(kind)) {
                throw IntegrityError(where + ": relation " + f[2] + " cannot point at " + f[3]);
            }
            auto src = last_source_for_id.find(f[1]);
            if (src == last_source_for_id.end()) {
                throw IntegrityError(where + ": edge before REQ line for '" + f[1] + "'");
            }
            b.add_edge(src->second, f[1], Entity{kind, f[4]});
        } else {
            throw ParseError(where + ": unrecognised record");
        }
    }
    return std::move(b).build();
}

}  // namespace reqdep::kg
