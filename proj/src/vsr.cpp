#include "reqdep/vsr.hpp"

#include "reqdep/errors.hpp"
#include "reqdep/extract.hpp"
#include "reqdep/fs.hpp"
#include "reqdep/text.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace reqdep::vsr {

namespace {

double dot(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

std::vector<float> parse_floats(std::string_view s, const std::string& where) {
    std::vector<float> out;
    for (const auto& tok : text::split_ws(s)) {
        float v = 0.0f;
        auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v)) {
            throw ParseError(where + ": bad float '" + tok + "'");
        }
        out.push_back(v);
    }
    return out;
}

void write_floats(std::ostream& out, std::span<const float> v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out << ' ';
        out << text::format_float(v[i]);
    }
}

std::size_t parse_dim_line(const std::string& line, const std::string& where) {
    const auto parts = text::split_ws(line);
    std::size_t dim = 0;
    if (parts.size() != 2 || parts[0] != "DIM" ||
        std::from_chars(parts[1].data(), parts[1].data() + parts[1].size(), dim).ec != std::errc() ||
        dim == 0) {
        throw ParseError(where + ": first line must be 'DIM <D>'");
    }
    return dim;
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

std::size_t ceil_sqrt(std::size_t n) {
    auto r = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
    while (r * r < n) ++r;
    while (r > 0 && (r - 1) * (r - 1) >= n) --r;
    return r;
}

// Deterministic Fisher-Yates; std::shuffle's draw sequence is unspecified.
std::vector<std::uint32_t> permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::uint32_t> p(n);
    std::iota(p.begin(), p.end(), 0u);
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng() % i;
        std::swap(p[i - 1], p[j]);
    }
    return p;
}

}  // namespace

double l2_norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

void normalize(EmbeddingVector& v) {
    const double n = l2_norm(v.values);
    if (!(n > 0.0)) {
        throw UndefinedSimilarity("embedding for '" + v.requirement_id + "' is the zero vector");
    }
    for (auto& x : v.values) x = static_cast<float>(x / n);
    v.norm = l2_norm(v.values);
}

double cosine(std::span<const float> u, std::span<const float> v) {
    if (u.size() != v.size()) {
        throw ValidationError("dimension mismatch: " + std::to_string(u.size()) + " vs " +
                              std::to_string(v.size()));
    }
    const double nu = l2_norm(u);
    const double nv = l2_norm(v);
    if (!(nu > 0.0) || !(nv > 0.0)) throw UndefinedSimilarity("cosine of a zero vector");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

PrecomputedProvider::PrecomputedProvider(const std::filesystem::path& path,
                                         std::size_t expected_dim) {
    std::istringstream in(fs::read_text(path));
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path.string() + ": empty embeddings file");
    dim_ = parse_dim_line(line, path.string());
    if (expected_dim != 0 && expected_dim != dim_) {
        throw ConfigError(path.string() + ": embeddings have dimension " + std::to_string(dim_) +
                          ", configured " + std::to_string(expected_dim));
    }
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = path.string() + " line " + std::to_string(lineno);
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError(where + ": expected '<id>\\t<floats>'");
        auto values = parse_floats(std::string_view(line).substr(tab + 1), where);
        if (values.size() != dim_) {
            throw ConfigError(where + ": expected " + std::to_string(dim_) + " values, got " +
                              std::to_string(values.size()));
        }
        table_[line.substr(0, tab)] = std::move(values);
    }
}

PrecomputedProvider::PrecomputedProvider(std::size_t dim,
                                         std::unordered_map<std::string, std::vector<float>> table)
    : dim_(dim), table_(std::move(table)) {
    for (const auto& [id, v] : table_) {
        if (v.size() != dim_) throw ConfigError("embedding '" + id + "' has wrong dimension");
    }
}

std::vector<float> PrecomputedProvider::raw(const corpus::Requirement& req) const {
    auto it = table_.find(req.id);
    if (it == table_.end()) throw LookupError("no precomputed embedding for '" + req.id + "'");
    return it->second;
}

HashedProvider::HashedProvider(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw ConfigError("embedding dimension must be positive");
}

std::vector<float> HashedProvider::raw(const corpus::Requirement& req) const {
    std::vector<float> v(dim_, 0.0f);
    const auto tokens = extract::normalize_tokens(req.text);
    auto add = [&](std::string_view feature) {
        const auto h = text::fnv1a64(feature);
        v[h % dim_] += ((h >> 32) & 1U) ? -1.0f : 1.0f;
    };
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        add(tokens[i]);
        if (i + 1 < tokens.size()) add(tokens[i] + " " + tokens[i + 1]);
    }
    return v;
}

EmbeddingVector embed(const corpus::Requirement& req, const EmbeddingProvider& provider) {
    EmbeddingVector v{req.id, provider.raw(req), 0.0};
    if (v.values.size() != provider.dimension()) {
        throw ConfigError("provider returned dimension " + std::to_string(v.values.size()) +
                          " for '" + req.id + "'");
    }
    normalize(v);
    return v;
}

std::vector<EmbeddingVector> embed_all(const corpus::Dataset& dataset,
                                       const EmbeddingProvider& provider) {
    std::vector<EmbeddingVector> out;
    out.reserve(dataset.requirements.size());
    for (const auto& r : dataset.requirements) out.push_back(embed(r, provider));
    return out;
}

void write_embeddings(std::span<const EmbeddingVector> vectors, std::ostream& out) {
    const std::size_t dim = vectors.empty() ? 0 : vectors.front().values.size();
    out << "DIM " << dim << '\n';
    for (const auto& v : vectors) {
        out << v.requirement_id << '\t';
        write_floats(out, v.values);
        out << '\n';
    }
}

std::string_view to_string(IndexKind kind) { return kind == IndexKind::Flat ? "flat" : "ivf"; }

void VectorIndex::add(const EmbeddingVector& v) {
    ids_.push_back(v.requirement_id);
    data_.insert(data_.end(), v.values.begin(), v.values.end());
    norms_.push_back(l2_norm(v.values));
}

VectorIndex build_index(std::span<const EmbeddingVector> vectors, IndexKind kind,
                        const IvfParams& params) {
    if (vectors.empty()) throw ValidationError("cannot build an index over zero vectors");
    VectorIndex index;
    index.kind_ = kind;
    index.dim_ = vectors.front().values.size();
    for (const auto& v : vectors) {
        if (v.values.size() != index.dim_) {
            throw ValidationError("vector '" + v.requirement_id + "' has dimension " +
                                  std::to_string(v.values.size()) + ", expected " +
                                  std::to_string(index.dim_));
        }
        index.add(v);
    }
    if (kind == IndexKind::Flat) return index;

    const std::size_t n = vectors.size();
    const std::size_t nlist = params.nlist.value_or(ceil_sqrt(n));
    if (nlist == 0 || nlist > n) {
        throw ConfigError("nlist " + std::to_string(nlist) + " must be in [1, " +
                          std::to_string(n) + "]");
    }
    index.nprobe_ = params.nprobe.value_or(std::max<std::size_t>(1, ceil_div(nlist, 8)));
    if (index.nprobe_ == 0) throw ConfigError("nprobe must be >= 1");
    const std::size_t dim = index.dim_;

    // Spherical k-means: centroids are kept at unit length and points go to
    // the centroid of largest dot product (lowest index on ties).
    std::vector<float> centroids(nlist * dim);
    const auto order = permutation(n, params.seed);
    for (std::size_t c = 0; c < nlist; ++c) {
        const auto src = index.vector(order[c]);
        const double nrm = index.norms_[order[c]];
        for (std::size_t d = 0; d < dim; ++d) {
            centroids[c * dim + d] = nrm > 0 ? static_cast<float>(src[d] / nrm) : src[d];
        }
    }
    auto centroid = [&](std::size_t c) {
        return std::span<const float>(centroids).subspan(c * dim, dim);
    };
    std::vector<std::uint32_t> assign(n, 0);
    auto assign_all = [&] {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t best = 0;
            double best_dot = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < nlist; ++c) {
                const double d = dot(centroid(c), index.vector(i));
                if (d > best_dot) {
                    best_dot = d;
                    best = static_cast<std::uint32_t>(c);
                }
            }
            changed |= assign[i] != best;
            assign[i] = best;
        }
        return changed;
    };
    assign_all();
    for (int iter = 0; iter < params.max_iterations; ++iter) {
        std::vector<double> sums(nlist * dim, 0.0);
        std::vector<std::size_t> counts(nlist, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto v = index.vector(i);
            for (std::size_t d = 0; d < dim; ++d) sums[assign[i] * dim + d] += v[d];
            ++counts[assign[i]];
        }
        for (std::size_t c = 0; c < nlist; ++c) {
            if (counts[c] == 0) continue;  // keep the previous centroid
            double nrm = 0.0;
            for (std::size_t d = 0; d < dim; ++d) nrm += sums[c * dim + d] * sums[c * dim + d];
            nrm = std::sqrt(nrm);
            if (nrm == 0.0) continue;
            for (std::size_t d = 0; d < dim; ++d) {
                centroids[c * dim + d] = static_cast<float>(sums[c * dim + d] / nrm);
            }
        }
        if (!assign_all()) break;
    }

    index.centroids_ = std::move(centroids);
    index.lists_.assign(nlist, {});
    for (std::size_t i = 0; i < n; ++i) index.lists_[assign[i]].push_back(static_cast<std::uint32_t>(i));
    return index;
}

std::vector<VectorHit> search_topk(const VectorIndex& index, const EmbeddingVector& query,
                                   std::size_t k, std::optional<std::size_t> nprobe) {
    if (k == 0) throw ValidationError("k must be >= 1");
    if (query.values.size() != index.dimension()) {
        throw ValidationError("query dimension " + std::to_string(query.values.size()) +
                              " does not match index dimension " +
                              std::to_string(index.dimension()));
    }
    const double qnorm = l2_norm(query.values);
    if (!(qnorm > 0.0)) throw UndefinedSimilarity("query is the zero vector");

    std::vector<VectorHit> hits;
    auto consider = [&](std::size_t i) {
        if (index.id(i) == query.requirement_id) return;
        if (!(index.norm(i) > 0.0)) return;
        const double s = std::clamp(dot(query.values, index.vector(i)) / (qnorm * index.norm(i)),
                                    -1.0, 1.0);
        hits.push_back({index.id(i), s});
    };

    if (index.kind() == IndexKind::Flat) {
        for (std::size_t i = 0; i < index.size(); ++i) consider(i);
    } else {
        const std::size_t probes = std::min(nprobe.value_or(index.default_nprobe()), index.nlist());
        if (probes == 0) throw ConfigError("nprobe must be >= 1");
        std::vector<std::pair<double, std::uint32_t>> order;
        order.reserve(index.nlist());
        for (std::size_t c = 0; c < index.nlist(); ++c) {
            order.emplace_back(dot(index.centroid(c), query.values), static_cast<std::uint32_t>(c));
        }
        std::stable_sort(order.begin(), order.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t p = 0; p < probes; ++p) {
            for (auto i : index.posting_list(order[p].second)) consider(i);
        }
    }

    auto before = [](const VectorHit& a, const VectorHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    };
    const std::size_t keep = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(),
                      before);
    hits.resize(keep);
    return hits;
}

void write_index(const VectorIndex& index, std::ostream& out) {
    out << "DIM " << index.dim_ << '\n';
    for (std::size_t i = 0; i < index.size(); ++i) {
        out << index.ids_[i] << '\t';
        write_floats(out, index.vector(i));
        out << '\n';
    }
    if (index.kind_ != IndexKind::IVF) return;
    for (std::size_t c = 0; c < index.nlist(); ++c) {
        out << "CENTROID\t" << c << '\t';
        write_floats(out, index.centroid(c));
        out << '\n';
    }
    for (std::size_t c = 0; c < index.nlist(); ++c) {
        for (auto i : index.lists_[c]) out << "ASSIGN\t" << index.ids_[i] << '\t' << c << '\n';
    }
}

VectorIndex read_index(std::istream& in) {
    VectorIndex index;
    std::string line;
    if (!std::getline(in, line)) throw ParseError("index: empty input");
    index.dim_ = parse_dim_line(line, "index");
    std::unordered_map<std::string, std::uint32_t> by_id;
    std::vector<std::pair<std::size_t, std::vector<float>>> centroids;
    std::vector<std::pair<std::string, std::size_t>> assigns;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = "index line " + std::to_string(lineno);
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError(where + ": missing tab");
        const std::string head = line.substr(0, tab);
        const std::string rest = line.substr(tab + 1);
        if (head == "CENTROID" || head == "ASSIGN") {
            const auto tab2 = rest.find('\t');
            if (tab2 == std::string::npos) throw ParseError(where + ": malformed " + head);
            const std::string a = rest.substr(0, tab2);
            const std::string b = rest.substr(tab2 + 1);
            if (head == "CENTROID") {
                auto v = parse_floats(b, where);
                if (v.size() != index.dim_) throw ParseError(where + ": centroid dimension mismatch");
                centroids.emplace_back(std::stoul(a), std::move(v));
            } else {
                assigns.emplace_back(a, std::stoul(b));
            }
            continue;
        }
        auto v = parse_floats(rest, where);
        if (v.size() != index.dim_) throw ParseError(where + ": dimension mismatch");
        by_id[head] = static_cast<std::uint32_t>(index.size());
        index.add(EmbeddingVector{head, std::move(v), 0.0});
    }
    if (centroids.empty()) return index;

    index.kind_ = IndexKind::IVF;
    std::sort(centroids.begin(), centroids.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        if (centroids[c].first != c) throw ParseError("index: centroid ids are not 0..nlist-1");
        index.centroids_.insert(index.centroids_.end(), centroids[c].second.begin(),
                                centroids[c].second.end());
    }
    index.lists_.assign(centroids.size(), {});
    std::vector<int> seen(index.size(), 0);
    for (const auto& [id, c] : assigns) {
        auto it = by_id.find(id);
        if (it == by_id.end() || c >= centroids.size()) {
            throw IntegrityError("index: bad ASSIGN record for '" + id + "'");
        }
        index.lists_[c].push_back(it->second);
        ++seen[it->second];
    }
    if (std::any_of(seen.begin(), seen.end(), [](int s) { return s != 1; })) {
        throw IntegrityError("index: every vector must be assigned to exactly one cluster");
    }
    for (auto& l : index.lists_) std::sort(l.begin(), l.end());
    index.nprobe_ = std::max<std::size_t>(1, ceil_div(index.nlist(), 8));
    return index;
}

}  // namespace reqdep::vsr
