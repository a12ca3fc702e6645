#include "reqdep/errors.hpp"
#include "reqdep/extract.hpp"
#include "reqdep/vsr.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

using namespace reqdep;
using namespace reqdep::vsr;
using testing_support::Rng;
using testing_support::TempDir;

namespace {

// Independent FNV-1a and feature hashing, written from the algorithm definition.
std::uint64_t fnv(const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<float> hash_oracle(const std::string& text, std::size_t dim) {
    std::vector<float> v(dim, 0.0f);
    const auto toks = extract::normalize_tokens(text);
    std::vector<std::string> feats(toks.begin(), toks.end());
    for (std::size_t i = 0; i + 1 < toks.size(); ++i) feats.push_back(toks[i] + " " + toks[i + 1]);
    for (const auto& f : feats) {
        const auto h = fnv(f);
        v[h % dim] += (h >> 32) & 1 ? -1.0f : 1.0f;
    }
    return v;
}

EmbeddingVector vec(const std::string& id, std::vector<float> values) {
    EmbeddingVector v{id, std::move(values), 0.0};
    normalize(v);
    return v;
}

std::vector<EmbeddingVector> random_vectors(Rng& rng, std::size_t n, std::size_t dim) {
    std::normal_distribution<float> g(0.0f, 1.0f);
    std::vector<EmbeddingVector> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<float> v(dim);
        for (auto& x : v) x = g(rng);
        out.push_back(vec(testing_support::rid(i), std::move(v)));
    }
    return out;
}

std::vector<VectorHit> brute_force(const std::vector<EmbeddingVector>& all, const EmbeddingVector& q,
                                   std::size_t k) {
    std::vector<VectorHit> hits;
    for (const auto& v : all) {
        if (v.requirement_id == q.requirement_id) continue;
        hits.push_back({v.requirement_id, testing_support::cosine_oracle(q.values, v.values)});
    }
    std::sort(hits.begin(), hits.end(), [](const VectorHit& a, const VectorHit& b) {
        return a.score != b.score ? a.score > b.score : a.id < b.id;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
}

std::vector<std::string> ids(const std::vector<VectorHit>& hits) {
    std::vector<std::string> out;
    for (const auto& h : hits) out.push_back(h.id);
    return out;
}

}  // namespace

TEST(Cosine, Examples) {
    EXPECT_DOUBLE_EQ(cosine(std::vector<float>{1, 0}, std::vector<float>{1, 0}), 1.0);
    EXPECT_DOUBLE_EQ(cosine(std::vector<float>{1, 0}, std::vector<float>{0, 1}), 0.0);
    EXPECT_NEAR(cosine(std::vector<float>{1, 1}, std::vector<float>{1, 0}), 0.7071, 1e-4);
}

TEST(Cosine, Errors) {
    EXPECT_THROW(cosine(std::vector<float>{0, 0}, std::vector<float>{1, 0}), UndefinedSimilarity);
    EXPECT_THROW(cosine(std::vector<float>{1, 0, 0}, std::vector<float>{1, 0}), ValidationError);
}

TEST(HashedProvider, MatchesIndependentHashing) {
    const HashedProvider p(8);
    for (const std::string text : {"The UAV shall land", "Log every request within 2 seconds", "a"}) {
        EXPECT_EQ(p.raw({"x", "s", text}), hash_oracle(text, 8)) << text;
    }
}

TEST(HashedProvider, IdenticalTextsIdenticalVectors) {
    const HashedProvider p(64);
    const auto a = embed({"a", "s", "The UAV shall land automatically"}, p);
    const auto b = embed({"b", "s", "The UAV shall land automatically"}, p);
    EXPECT_EQ(a.values, b.values);
    EXPECT_NEAR(l2_norm(a.values), 1.0, 1e-6);
}

TEST(HashedProvider, OneTokenChangeLowersCosine) {
    const HashedProvider p(8);
    const std::string t1 = "The UAV shall land when communication is restored";
    const std::string t2 = "The UAV shall land when communication is lost";
    const double lib = cosine(p.raw({"a", "s", t1}), p.raw({"b", "s", t2}));
    const double oracle = testing_support::cosine_oracle(hash_oracle(t1, 8), hash_oracle(t2, 8));
    EXPECT_NEAR(lib, oracle, 1e-9);
    EXPECT_LT(lib, 1.0);
}

TEST(HashedProvider, ZeroDimensionRejected) { EXPECT_THROW(HashedProvider(0), ConfigError); }

TEST(PrecomputedProvider, LookupNormalizesFileVector) {
    TempDir dir;
    const auto path = dir.write("emb.tsv", "DIM 3\nr1\t3 0 4\nr2\t1 1 1\n");
    const PrecomputedProvider p(path);
    EXPECT_EQ(p.dimension(), 3u);
    const auto v = embed({"r1", "s", "ignored"}, p);
    EXPECT_FLOAT_EQ(v.values[0], 0.6f);
    EXPECT_FLOAT_EQ(v.values[1], 0.0f);
    EXPECT_FLOAT_EQ(v.values[2], 0.8f);
}

TEST(PrecomputedProvider, MissingIdAndDimensionMismatch) {
    TempDir dir;
    const auto path = dir.write("emb.tsv", "DIM 2\nr1\t1 0\n");
    const PrecomputedProvider p(path);
    EXPECT_THROW(p.raw({"r9", "s", "x"}), LookupError);
    EXPECT_THROW(PrecomputedProvider(path, 768), ConfigError);
    EXPECT_THROW(PrecomputedProvider(dir.write("bad.tsv", "DIM 2\nr1\t1 0 3\n")), ConfigError);
}

TEST(BuildIndex, FlatHoldsEveryVector) {
    Rng rng(1);
    const auto all = random_vectors(rng, 10, 16);
    const auto idx = build_index(all, IndexKind::Flat);
    EXPECT_EQ(idx.size(), 10u);
    EXPECT_EQ(idx.dimension(), 16u);
}

TEST(BuildIndex, IvfPartitionsAllIds) {
    Rng rng(2);
    const auto all = random_vectors(rng, 100, 16);
    const auto idx = build_index(all, IndexKind::IVF, {.nlist = 10});
    EXPECT_EQ(idx.nlist(), 10u);
    std::multiset<std::uint32_t> seen;
    for (std::size_t c = 0; c < idx.nlist(); ++c) {
        for (auto i : idx.posting_list(c)) seen.insert(i);
    }
    EXPECT_EQ(seen.size(), 100u);
    EXPECT_EQ(std::set<std::uint32_t>(seen.begin(), seen.end()).size(), 100u);
}

TEST(BuildIndex, IvfDefaults) {
    Rng rng(3);
    const auto idx = build_index(random_vectors(rng, 100, 8), IndexKind::IVF);
    EXPECT_EQ(idx.nlist(), 10u);
    EXPECT_EQ(idx.default_nprobe(), 2u);
}

TEST(BuildIndex, Errors) {
    Rng rng(4);
    const auto all = random_vectors(rng, 5, 8);
    EXPECT_THROW(build_index(all, IndexKind::IVF, {.nlist = 6}), ConfigError);
    EXPECT_THROW(build_index(all, IndexKind::IVF, {.nlist = 0}), ConfigError);
    EXPECT_THROW(build_index(std::vector<EmbeddingVector>{}, IndexKind::Flat), ValidationError);
    auto mixed = all;
    mixed.push_back(vec("odd", {1, 2}));
    EXPECT_THROW(build_index(mixed, IndexKind::Flat), ValidationError);
}

TEST(Search, DuplicateTextRanksFirst) {
    const HashedProvider p(128);
    corpus::Dataset ds{"s",
                       {{"a", "s", "The pump shall stop when pressure is high"},
                        {"b", "s", "The pump shall stop when pressure is high"},
                        {"c", "s", "Operators review mission logs"},
                        {"d", "s", "The camera captures images"}},
                       {},
                       {}};
    const auto all = embed_all(ds, p);
    const auto idx = build_index(all, IndexKind::Flat);
    const auto hits = search_topk(idx, all[0], 2);
    ASSERT_EQ(hits.size(), 2u);
    EXPECT_EQ(hits[0].id, "b");
    EXPECT_NEAR(hits[0].score, 1.0, 1e-6);
}

TEST(Search, FlatMatchesBruteForce) {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto n = testing_support::uniform(rng, 2, 60);
        const auto all = random_vectors(rng, n, 12);
        const auto idx = build_index(all, IndexKind::Flat);
        const auto k = testing_support::uniform(rng, 1, 10);
        for (const auto& q : all) {
            const auto lib = search_topk(idx, q, k);
            const auto ref = brute_force(all, q, k);
            ASSERT_EQ(ids(lib), ids(ref));
            for (std::size_t i = 0; i < lib.size(); ++i) EXPECT_NEAR(lib[i].score, ref[i].score, 1e-6);
        }
    }
}

TEST(Search, IvfWithAllListsProbedEqualsFlat) {
    Rng rng(6);
    const auto all = random_vectors(rng, 40, 10);
    const auto flat = build_index(all, IndexKind::Flat);
    const auto full = build_index(all, IndexKind::IVF, {.nlist = 40});
    const auto some = build_index(all, IndexKind::IVF, {.nlist = 7});
    for (const auto& q : all) {
        EXPECT_EQ(search_topk(full, q, 5, 40), search_topk(flat, q, 5));
        EXPECT_EQ(search_topk(some, q, 5, 7), search_topk(flat, q, 5));
    }
}

TEST(Search, IvfRecallNonDecreasingInNprobe) {
    Rng rng(7);
    const auto all = random_vectors(rng, 120, 8);
    const auto flat = build_index(all, IndexKind::Flat);
    const auto ivf = build_index(all, IndexKind::IVF, {.nlist = 11});
    for (const auto& q : all) {
        const auto truth = ids(search_topk(flat, q, 5));
        const std::set<std::string> want(truth.begin(), truth.end());
        std::size_t prev = 0;
        for (std::size_t probe = 1; probe <= 11; ++probe) {
            std::size_t found = 0;
            for (const auto& h : search_topk(ivf, q, 5, probe)) found += want.count(h.id);
            EXPECT_GE(found, prev) << q.requirement_id << " nprobe=" << probe;
            prev = found;
        }
        EXPECT_EQ(prev, want.size());
    }
}

TEST(Search, OutputInvariants) {
    Rng rng(8);
    for (int trial = 0; trial < 30; ++trial) {
        const auto n = testing_support::uniform(rng, 1, 50);
        const auto all = random_vectors(rng, n, 6);
        const auto kind = trial % 2 ? IndexKind::IVF : IndexKind::Flat;
        const auto idx = build_index(all, kind);
        const auto k = testing_support::uniform(rng, 1, 60);
        const auto hits = search_topk(idx, all[0], k, kind == IndexKind::IVF ? idx.nlist() : 1);
        EXPECT_EQ(hits.size(), std::min(k, n - 1));
        std::set<std::string> uniq;
        for (std::size_t i = 0; i < hits.size(); ++i) {
            uniq.insert(hits[i].id);
            EXPECT_NE(hits[i].id, all[0].requirement_id);
            EXPECT_GE(hits[i].score, -1.0);
            EXPECT_LE(hits[i].score, 1.0);
            if (i > 0) EXPECT_GE(hits[i - 1].score, hits[i].score);
        }
        EXPECT_EQ(uniq.size(), hits.size());
    }
}

TEST(Search, Errors) {
    Rng rng(9);
    const auto all = random_vectors(rng, 4, 4);
    const auto idx = build_index(all, IndexKind::Flat);
    EXPECT_THROW(search_topk(idx, all[0], 0), ValidationError);
    EXPECT_THROW(search_topk(idx, vec("q", {1, 0}), 1), ValidationError);
    EXPECT_THROW(search_topk(idx, EmbeddingVector{"z", {0, 0, 0, 0}, 0.0}, 1), UndefinedSimilarity);
}

TEST(IndexFile, RoundTripPreservesSearchResults) {
    Rng rng(10);
    const auto all = random_vectors(rng, 30, 8);
    for (auto kind : {IndexKind::Flat, IndexKind::IVF}) {
        const auto idx = build_index(all, kind);
        std::stringstream buf;
        write_index(idx, buf);
        const auto back = read_index(buf);
        EXPECT_EQ(back.kind(), kind);
        EXPECT_EQ(back.size(), idx.size());
        EXPECT_EQ(back.nlist(), idx.nlist());
        for (const auto& q : all) EXPECT_EQ(search_topk(back, q, 4), search_topk(idx, q, 4));
    }
}

TEST(IndexBuild, DeterministicForFixedSeed) {
    Rng rng(11);
    const auto all = random_vectors(rng, 64, 8);
    const auto a = build_index(all, IndexKind::IVF);
    const auto b = build_index(all, IndexKind::IVF);
    for (std::size_t c = 0; c < a.nlist(); ++c) EXPECT_EQ(a.posting_list(c), b.posting_list(c));
}
