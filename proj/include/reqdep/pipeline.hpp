#pragma once

#include "reqdep/corpus.hpp"
#include "reqdep/infer.hpp"
#include "reqdep/kg.hpp"
#include "reqdep/metrics.hpp"
#include "reqdep/sustain.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace reqdep::pipeline {

enum class RetrievalPipeline { Kgr, KgrWeighted, VsrFlat, VsrIvf };

std::string_view to_string(RetrievalPipeline p);  // kgr | kgr-weighted | vsr-flat | vsr-ivf
RetrievalPipeline parse_pipeline(std::string_view name);
inline bool is_kgr(RetrievalPipeline p) {
    return p == RetrievalPipeline::Kgr || p == RetrievalPipeline::KgrWeighted;
}

struct DatasetConfig {
    std::string name;
    std::filesystem::path requirements;
    corpus::Format format = corpus::Format::Csv;
    std::optional<std::filesystem::path> pairs;
};

struct RetrievalConfig {
    RetrievalPipeline pipeline = RetrievalPipeline::Kgr;
    std::optional<std::size_t> k = 3;  // empty: choose by elbow
    std::size_t k_max = 20;
    double elbow_epsilon = 0.005;
    metrics::RecallMode recall_mode = metrics::RecallMode::SingleConflict;
    kg::ScoreWeights weights;
    kg::RoleWeights role_weights;
    std::optional<std::size_t> nlist;
    std::optional<std::size_t> nprobe;

    /// Retrieval depth: enough for both the classification cut and the recall curve.
    std::size_t depth() const { return std::max(k.value_or(0), k_max); }
};

struct EmbeddingConfig {
    std::string provider = "hashed";  // hashed | precomputed
    std::size_t dim = 768;
    std::optional<std::filesystem::path> path;
};

struct InferenceConfig {
    std::string backend = "replay";  // replay | http
    std::string endpoint;
    std::optional<std::filesystem::path> replay;
    std::string model = "replay";
    infer::Strategy strategy = infer::Strategy::ZeroShot;
    std::optional<std::filesystem::path> shots;
    std::size_t shot_count = 3;
    int runs = 3;
    infer::TieRule tie_rule = infer::TieRule::Neutral;
    infer::RetryPolicy retry;
    std::size_t max_in_flight = 1;
    int timeout_s = 120;
};

struct SustainConfig {
    double power_watts = 50.0;
    sustain::MeterSource meter_source = sustain::MeterSource::Modeled;
    double carbon_intensity_g_per_kwh = sustain::kDefaultCarbonIntensity;
    bool include_warmup = false;
    sustain::EcoMode eco_mode = sustain::EcoMode::MeanF1;
    /// "steady" times real work. "simulated" advances a manual clock by
    /// seconds_per_work_unit per unit of retrieval work and by the replay
    /// backend's seconds_per_token, which makes reports reproducible.
    std::string clock = "steady";
    double seconds_per_work_unit = 1e-4;
    /// Per-inference energy for the workload projection; measured mean when unset.
    std::optional<double> projection_e_per_kwh;
};

struct SweepConfig {
    std::vector<double> alpha{0.5, 1.0, 2.0};
    std::vector<double> beta{0.0, 0.5, 1.0};
    std::vector<double> gamma{0.0, 0.25, 0.5};
};

struct ExperimentConfig {
    std::string run_id = "run";
    std::filesystem::path output_dir = "runs";
    std::uint64_t seed = 42;
    bool cross_source_dedup = false;
    std::optional<std::filesystem::path> lexicon_dir;
    std::vector<DatasetConfig> datasets;
    RetrievalConfig retrieval;
    EmbeddingConfig embedding;
    InferenceConfig inference;
    SustainConfig sustainability;
    SweepConfig sweep;

    std::filesystem::path run_dir() const { return output_dir / run_id; }
    /// Throws ConfigError naming the offending key.
    void validate() const;
};

/// Applies `key.path=value` overrides. The value is parsed as JSON when it
/// parses, otherwise taken as a string. Numeric path segments index arrays.
nlohmann::json apply_overrides(nlohmann::json doc, std::span<const std::string> overrides);
/// Relative paths resolve against `base_dir`. Unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& doc,
                                  const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path,
                             std::span<const std::string> overrides = {});
nlohmann::ordered_json to_json(const ExperimentConfig& config);

// Stages. Each one reads the previous stage's files from the run directory
// and writes its own; errors are rethrown with the stage name prefixed.
void stage_ingest(const ExperimentConfig& config);
void stage_extract(const ExperimentConfig& config);
void stage_index_kg(const ExperimentConfig& config);
void stage_index_vsr(const ExperimentConfig& config);
void stage_retrieve(const ExperimentConfig& config);
void stage_classify(const ExperimentConfig& config);
void stage_evaluate(const ExperimentConfig& config);

enum class ReportFormat { Json, Csv, Markdown };
ReportFormat parse_report_format(std::string_view name);  // json | csv | md

/// Writes report.{json,csv,md} into `out_dir` from the evaluated runs. More
/// than one run adds the pipeline comparison and its percentage deltas.
/// Throws LookupError listing the stages whose artifacts are missing.
void emit_report(std::span<const std::filesystem::path> run_dirs,
                 const std::set<ReportFormat>& formats, const std::filesystem::path& out_dir);

struct RunSummary {
    std::filesystem::path run_dir;
    std::size_t classified_pairs = 0;
    std::size_t classification_errors = 0;
};

/// All stages in order, then every report format into the run directory.
RunSummary run_experiment(const ExperimentConfig& config);

/// Relative change of `value` against `baseline`, phrased the way the report
/// prints it: "75% reduction", "46.2% overhead".
struct Delta {
    double percent = 0.0;
    bool reduction = true;
    std::string text() const;
};
Delta compare(double value, double baseline);

struct SweepRow {
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
    std::string dataset;
    std::size_t k = 0;
    std::optional<double> recall;  // empty when the dataset has no conflicts
};

/// Grid over the configured alpha/beta/gamma values, scoring KGR recall at
/// the configured k (k_max when k is elbow). Writes sweep.csv to the run dir.
std::vector<SweepRow> sweep_weights(const ExperimentConfig& config);

}  // namespace reqdep::pipeline
