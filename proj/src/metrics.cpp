#include "reqdep/metrics.hpp"

#include "reqdep/csv.hpp"
#include "reqdep/errors.hpp"
#include "reqdep/text.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>

namespace reqdep::metrics {

std::string_view to_string(RecallMode mode) {
    return mode == RecallMode::SingleConflict ? "single" : "multi";
}

RecallMode parse_recall_mode(std::string_view name) {
    const auto n = text::to_lower(name);
    if (n == "single" || n == "singleconflict") return RecallMode::SingleConflict;
    if (n == "multi" || n == "multilabel") return RecallMode::MultiLabel;
    throw ConfigError("unknown recall mode '" + std::string(name) + "'");
}

double recall_at_k(const Retrieved& retrieved, const corpus::GroundTruth& truth, std::size_t k,
                   RecallMode mode) {
    if (truth.empty()) throw ValidationError("Recall@K needs at least one query");
    double sum = 0.0;
    for (const auto& [query, relevant] : truth) {
        if (relevant.empty()) throw ValidationError("query '" + query + "' has no relevant ids");
        auto it = retrieved.find(query);
        if (it == retrieved.end()) throw ValidationError("query '" + query + "' was not retrieved");
        const auto& ranked = it->second;
        const std::size_t depth = std::min(k, ranked.size());
        std::size_t hits = 0;
        for (std::size_t i = 0; i < depth; ++i) hits += relevant.contains(ranked[i]) ? 1 : 0;
        if (mode == RecallMode::SingleConflict) {
            sum += hits > 0 ? 1.0 : 0.0;
        } else {
            sum += static_cast<double>(hits) / static_cast<double>(relevant.size());
        }
    }
    return sum / static_cast<double>(truth.size());
}

RecallCurve recall_curve(const Retrieved& retrieved, const corpus::GroundTruth& truth,
                         std::size_t k_max, RecallMode mode) {
    if (k_max == 0) throw ValidationError("k_max must be >= 1");
    RecallCurve curve;
    curve.mode = mode;
    for (std::size_t k = 1; k <= k_max; ++k) {
        curve.points.emplace_back(k, recall_at_k(retrieved, truth, k, mode));
    }
    return curve;
}

std::size_t select_k_elbow(const RecallCurve& curve, double epsilon) {
    const auto& pts = curve.points;
    if (pts.empty()) throw ValidationError("elbow selection on an empty curve");
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (pts[i].first <= pts[i - 1].first || pts[i].second < pts[i - 1].second) {
            throw ValidationError("Recall@K curve must be increasing in K and non-decreasing in recall");
        }
    }
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        if (pts[i + 1].second - pts[i].second < epsilon) return pts[i].first;
    }
    return pts.back().first;
}

PrfResult macro_prf(std::span<const std::string> predicted, std::span<const std::string> truth,
                    std::span<const std::string> classes) {
    if (predicted.size() != truth.size()) throw ValidationError("prediction/truth length mismatch");
    if (predicted.empty()) throw ValidationError("macro P/R/F1 needs at least one instance");
    if (classes.empty()) throw ValidationError("no classes declared");

    std::unordered_map<std::string_view, std::size_t> index;
    for (std::size_t c = 0; c < classes.size(); ++c) index.emplace(classes[c], c);
    auto class_of = [&](std::string_view label) {
        auto it = index.find(label);
        if (it == index.end()) {
            throw ValidationError("label '" + std::string(label) + "' is not a declared class");
        }
        return it->second;
    };

    PrfResult out;
    out.total = predicted.size();
    out.per_class.resize(classes.size());
    for (std::size_t c = 0; c < classes.size(); ++c) out.per_class[c].name = classes[c];
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const auto p = class_of(predicted[i]);
        const auto t = class_of(truth[i]);
        for (std::size_t c = 0; c < classes.size(); ++c) {
            auto& k = out.per_class[c].counts;
            if (p == c && t == c) ++k.tp;
            else if (p == c) ++k.fp;
            else if (t == c) ++k.fn;
            else ++k.tn;
        }
    }

    auto ratio = [](std::size_t num, std::size_t den) {
        return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    for (auto& s : out.per_class) {
        s.precision = ratio(s.counts.tp, s.counts.tp + s.counts.fp);
        s.recall = ratio(s.counts.tp, s.counts.tp + s.counts.fn);
        s.f1 = (s.precision + s.recall) == 0.0
                   ? 0.0
                   : 2.0 * s.precision * s.recall / (s.precision + s.recall);
        out.macro_precision += s.precision;
        out.macro_recall += s.recall;
        out.macro_f1 += s.f1;
    }
    const auto n = static_cast<double>(out.per_class.size());
    out.macro_precision /= n;
    out.macro_recall /= n;
    out.macro_f1 /= n;
    return out;
}

PrfResult macro_prf(std::span<const Label> predicted, std::span<const Label> truth) {
    std::vector<std::string> p;
    std::vector<std::string> t;
    for (auto l : predicted) p.emplace_back(to_string(l));
    for (auto l : truth) t.emplace_back(to_string(l));
    const std::vector<std::string> classes{"Conflict", "Neutral"};
    return macro_prf(p, t, classes);
}

std::string curve_csv(const RecallCurve& curve) {
    std::ostringstream out;
    csv::write_row(out, {"K", "recall"});
    for (const auto& [k, r] : curve.points) {
        csv::write_row(out, {std::to_string(k), text::format_double(r)});
    }
    return out.str();
}

std::string confusion_csv(const PrfResult& result) {
    std::ostringstream out;
    csv::write_row(out, {"class", "tp", "fp", "fn", "tn"});
    for (const auto& s : result.per_class) {
        csv::write_row(out, {s.name, std::to_string(s.counts.tp), std::to_string(s.counts.fp),
                             std::to_string(s.counts.fn), std::to_string(s.counts.tn)});
    }
    return out.str();
}

}  // namespace reqdep::metrics
