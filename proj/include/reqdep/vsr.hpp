#pragma once

#include "reqdep/corpus.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace reqdep::vsr {

struct EmbeddingVector {
    std::string requirement_id;
    std::vector<float> values;
    double norm = 0.0;  // cached L2 norm of `values`
};

double l2_norm(std::span<const float> v);

/// Scales `v` to unit length in place. Throws UndefinedSimilarity for zero vectors.
void normalize(EmbeddingVector& v);

/// dot(u, v) / (|u| |v|). Throws ValidationError on dimension mismatch and
/// UndefinedSimilarity when either norm is zero.
double cosine(std::span<const float> u, std::span<const float> v);

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::size_t dimension() const = 0;
    /// Raw (not yet normalized) embedding for a requirement.
    virtual std::vector<float> raw(const corpus::Requirement& req) const = 0;
};

/// Vectors produced offline by any sentence encoder.
///
/// File format: first line `DIM <D>`, then one `<id>\t<f1> <f2> ... <fD>` line
/// per requirement.
class PrecomputedProvider final : public EmbeddingProvider {
public:
    /// `expected_dim` of 0 accepts the file's DIM; anything else must match it.
    explicit PrecomputedProvider(const std::filesystem::path& path, std::size_t expected_dim = 0);
    PrecomputedProvider(std::size_t dim, std::unordered_map<std::string, std::vector<float>> table);

    std::size_t dimension() const override { return dim_; }
    std::vector<float> raw(const corpus::Requirement& req) const override;

private:
    std::size_t dim_ = 0;
    std::unordered_map<std::string, std::vector<float>> table_;
};

/// Signed feature hashing of token unigrams and bigrams into `dim` buckets.
/// Bucket = fnv1a64(feature) mod dim; the sign is bit 32 of the same hash.
/// Bigram features are the two tokens joined by one space.
class HashedProvider final : public EmbeddingProvider {
public:
    explicit HashedProvider(std::size_t dim = 768);

    std::size_t dimension() const override { return dim_; }
    std::vector<float> raw(const corpus::Requirement& req) const override;

private:
    std::size_t dim_;
};

/// Provider output, L2-normalized.
EmbeddingVector embed(const corpus::Requirement& req, const EmbeddingProvider& provider);
std::vector<EmbeddingVector> embed_all(const corpus::Dataset& dataset,
                                       const EmbeddingProvider& provider);

void write_embeddings(std::span<const EmbeddingVector> vectors, std::ostream& out);

enum class IndexKind { Flat, IVF };

std::string_view to_string(IndexKind kind);

struct IvfParams {
    std::optional<std::size_t> nlist;   // default ceil(sqrt(N))
    std::optional<std::size_t> nprobe;  // default max(1, ceil(nlist / 8))
    std::uint64_t seed = 42;
    int max_iterations = 25;
};

/// Exhaustive (Flat) or k-means-partitioned (IVF) cosine index.
class VectorIndex {
public:
    IndexKind kind() const { return kind_; }
    std::size_t size() const { return ids_.size(); }
    std::size_t dimension() const { return dim_; }
    const std::string& id(std::size_t i) const { return ids_[i]; }
    std::span<const float> vector(std::size_t i) const {
        return std::span<const float>(data_).subspan(i * dim_, dim_);
    }
    double norm(std::size_t i) const { return norms_[i]; }

    std::size_t nlist() const { return lists_.size(); }
    std::size_t default_nprobe() const { return nprobe_; }
    std::span<const float> centroid(std::size_t c) const {
        return std::span<const float>(centroids_).subspan(c * dim_, dim_);
    }
    const std::vector<std::uint32_t>& posting_list(std::size_t c) const { return lists_[c]; }

private:
    friend VectorIndex build_index(std::span<const EmbeddingVector>, IndexKind, const IvfParams&);
    friend VectorIndex read_index(std::istream&);
    friend void write_index(const VectorIndex&, std::ostream&);

    void add(const EmbeddingVector& v);

    IndexKind kind_ = IndexKind::Flat;
    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<float> data_;
    std::vector<double> norms_;
    std::vector<float> centroids_;
    std::vector<std::vector<std::uint32_t>> lists_;
    std::size_t nprobe_ = 1;
};

/// Throws ValidationError on an empty input or mixed dimensions and
/// ConfigError when nlist is 0 or exceeds the vector count.
VectorIndex build_index(std::span<const EmbeddingVector> vectors, IndexKind kind,
                        const IvfParams& params = {});

struct VectorHit {
    std::string id;
    double score = 0.0;  // cosine

    friend bool operator==(const VectorHit&, const VectorHit&) = default;
};

/// Top-k by descending cosine, ties by ascending id; the query's own id is
/// skipped. IVF scans the `nprobe` clusters whose centroids are closest to
/// the query (index default when unset).
std::vector<VectorHit> search_topk(const VectorIndex& index, const EmbeddingVector& query,
                                   std::size_t k, std::optional<std::size_t> nprobe = std::nullopt);

/// Embeddings file format plus `CENTROID\t<c>\t<floats>` and `ASSIGN\t<id>\t<c>`
/// records for IVF indexes.
void write_index(const VectorIndex& index, std::ostream& out);
VectorIndex read_index(std::istream& in);

}  // namespace reqdep::vsr
