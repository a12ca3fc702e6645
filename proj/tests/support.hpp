#pragma once

// Test-side helpers: scratch directories, seeded generators and brute-force
// oracles that recompute library results from first principles.

#include "reqdep/corpus.hpp"
#include "reqdep/extract.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace testing_support {

namespace stdfs = std::filesystem;

class TempDir {
public:
    TempDir() {
        static std::mt19937_64 rng(std::random_device{}());
        path_ = stdfs::temp_directory_path() / ("reqdep-test-" + std::to_string(rng()));
        stdfs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        stdfs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const stdfs::path& path() const { return path_; }
    stdfs::path operator/(const std::string& name) const { return path_ / name; }

    stdfs::path write(const std::string& name, const std::string& content) const {
        const auto p = path_ / name;
        stdfs::create_directories(p.parent_path());
        std::ofstream(p, std::ios::binary) << content;
        return p;
    }

private:
    stdfs::path path_;
};

inline std::string slurp(const stdfs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string data_dir() { return REQDEP_TEST_DATA; }

// ---- generators -----------------------------------------------------------

using Rng = std::mt19937_64;

inline std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {  // inclusive
    return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

inline std::string rid(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "r%04zu", i);
    return buf;
}

/// Random entity assignment: every requirement gets up to `max_per_req`
/// entities drawn from a pool of `pool` values per kind.
inline std::vector<reqdep::extract::EntitySet> random_entity_sets(Rng& rng, std::size_t n,
                                                                  std::size_t pool,
                                                                  std::size_t max_per_req) {
    using reqdep::extract::Entity;
    using reqdep::extract::kAllKinds;
    std::vector<reqdep::extract::EntitySet> out;
    for (std::size_t i = 0; i < n; ++i) {
        reqdep::extract::EntitySet s;
        s.requirement_id = rid(i);
        const auto count = uniform(rng, 0, max_per_req);
        for (std::size_t e = 0; e < count; ++e) {
            const auto kind = kAllKinds[rng() % 5];
            s.entities.insert(Entity{kind, "v" + std::to_string(uniform(rng, 0, pool - 1))});
        }
        out.push_back(std::move(s));
    }
    return out;
}

inline reqdep::corpus::Dataset dataset_of(const std::string& source, std::size_t n) {
    reqdep::corpus::Dataset ds;
    ds.source = source;
    for (std::size_t i = 0; i < n; ++i) ds.requirements.push_back({rid(i), source, "text " + rid(i)});
    return ds;
}

// ---- oracles --------------------------------------------------------------

struct OracleScore {
    std::string id;
    double score;
    int shared;
    int types;
};

/// Scores every other requirement from raw entity sets: two requirements that
/// share an entity are two hops apart in the bipartite graph.
inline std::vector<OracleScore> kgr_oracle(const std::vector<reqdep::extract::EntitySet>& sets,
                                           const std::string& q, std::size_t k, double a,
                                           double b, double g) {
    const reqdep::extract::EntitySet* query = nullptr;
    for (const auto& s : sets) {
        if (s.requirement_id == q) query = &s;
    }
    std::vector<OracleScore> all;
    if (!query || query->entities.empty()) return all;
    for (const auto& s : sets) {
        if (s.requirement_id == q) continue;
        int shared = 0;
        std::set<int> kinds;
        for (const auto& e : s.entities) {
            if (query->entities.count(e)) {
                ++shared;
                kinds.insert(static_cast<int>(e.kind));
            }
        }
        if (shared == 0) continue;
        const int types = static_cast<int>(kinds.size());
        all.push_back({s.requirement_id, a * shared + b * types + g * 0.5, shared, types});
    }
    std::sort(all.begin(), all.end(), [](const OracleScore& x, const OracleScore& y) {
        return x.score != y.score ? x.score > y.score : x.id < y.id;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

inline double cosine_oracle(const std::vector<float>& u, const std::vector<float>& v) {
    long double dot = 0, nu = 0, nv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += static_cast<long double>(u[i]) * v[i];
        nu += static_cast<long double>(u[i]) * u[i];
        nv += static_cast<long double>(v[i]) * v[i];
    }
    return static_cast<double>(dot / (std::sqrt(nu) * std::sqrt(nv)));
}

/// Macro P/R/F1 from an explicit confusion matrix.
struct OraclePrf {
    double p, r, f1;
};
inline OraclePrf prf_oracle(const std::vector<int>& pred, const std::vector<int>& truth, int classes) {
    std::vector<std::vector<long>> m(classes, std::vector<long>(classes, 0));
    for (std::size_t i = 0; i < pred.size(); ++i) m[truth[i]][pred[i]]++;
    double sp = 0, sr = 0, sf = 0;
    for (int c = 0; c < classes; ++c) {
        long col = 0, row = 0;
        for (int o = 0; o < classes; ++o) {
            col += m[o][c];
            row += m[c][o];
        }
        const double p = col ? static_cast<double>(m[c][c]) / col : 0.0;
        const double r = row ? static_cast<double>(m[c][c]) / row : 0.0;
        const double f = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
        sp += p;
        sr += r;
        sf += f;
    }
    return {sp / classes, sr / classes, sf / classes};
}

}  // namespace testing_support
