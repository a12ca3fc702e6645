#pragma once

#include "reqdep/corpus.hpp"
#include "reqdep/label.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace reqdep::metrics {

enum class RecallMode { SingleConflict, MultiLabel };

std::string_view to_string(RecallMode mode);
RecallMode parse_recall_mode(std::string_view name);

/// Ranked candidate ids per query.
using Retrieved = std::map<std::string, std::vector<std::string>>;

/// Recall@K over the queries of `truth`.
///
/// SingleConflict: share of queries with at least one relevant id in the top K.
/// MultiLabel: mean over queries of |top K ∩ G(q)| / |G(q)|.
///
/// Throws ValidationError when `truth` is empty, a query has an empty G(q),
/// or a query is missing from `retrieved`.
double recall_at_k(const Retrieved& retrieved, const corpus::GroundTruth& truth, std::size_t k,
                   RecallMode mode);

struct RecallCurve {
    std::vector<std::pair<std::size_t, double>> points;  // (K, recall), K = 1..K_max
    RecallMode mode = RecallMode::SingleConflict;
};

RecallCurve recall_curve(const Retrieved& retrieved, const corpus::GroundTruth& truth,
                         std::size_t k_max, RecallMode mode);

/// Smallest K whose gain to K+1 is below `epsilon`; the last K when every
/// gain clears it. Throws ValidationError on empty or decreasing curves.
std::size_t select_k_elbow(const RecallCurve& curve, double epsilon = 0.005);

struct ClassCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t tn = 0;
};

struct ClassScores {
    std::string name;
    ClassCounts counts;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// One-vs-rest counts per declared class. 0/0 ratios are 0.
struct PrfResult {
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::vector<ClassScores> per_class;
    std::size_t total = 0;
};

/// Throws ValidationError on length mismatch, empty input, or a label
/// outside `classes`.
PrfResult macro_prf(std::span<const std::string> predicted, std::span<const std::string> truth,
                    std::span<const std::string> classes);

/// Conflict/Neutral convenience overload.
PrfResult macro_prf(std::span<const Label> predicted, std::span<const Label> truth);

/// `K,recall` rows.
std::string curve_csv(const RecallCurve& curve);
/// `class,tp,fp,fn,tn` rows.
std::string confusion_csv(const PrfResult& result);

}  // namespace reqdep::metrics
