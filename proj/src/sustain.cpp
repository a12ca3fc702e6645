#include "reqdep/sustain.hpp"

#include "reqdep/csv.hpp"
#include "reqdep/errors.hpp"
#include "reqdep/fs.hpp"
#include "reqdep/text.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace reqdep::sustain {

using nlohmann::ordered_json;

std::string_view to_string(MeterSource source) {
    return source == MeterSource::Modeled ? "modeled" : "hardware";
}

MeterSource parse_meter_source(std::string_view name) {
    const auto n = text::to_lower(name);
    if (n == "modeled") return MeterSource::Modeled;
    if (n == "hardware" || n == "hardwarecounter") return MeterSource::HardwareCounter;
    throw ConfigError("unknown meter source '" + std::string(name) + "'");
}

ordered_json to_json(const MeterReading& r) {
    return ordered_json{{"label", r.label},
                        {"duration_s", r.duration_s},
                        {"energy_kwh", r.energy_kwh},
                        {"source", to_string(r.source)},
                        {"warmup", r.warmup}};
}

MeterReading reading_from_json(const nlohmann::json& j) {
    MeterReading r;
    r.label = j.at("label").get<std::string>();
    r.duration_s = j.at("duration_s").get<double>();
    r.energy_kwh = j.at("energy_kwh").get<double>();
    r.source = parse_meter_source(j.at("source").get<std::string>());
    r.warmup = j.value("warmup", false);
    return r;
}

double modeled_energy_kwh(double power_w, double duration_s) {
    return power_w * duration_s / kJoulesPerKwh;
}

std::int64_t SteadyClock::now_ns() {
    using namespace std::chrono;
    return duration_cast<nanoseconds>(steady_clock::now().time_since_epoch()).count();
}

std::int64_t ManualClock::now_ns() {
    std::lock_guard lock(mu_);
    return now_;
}

void ManualClock::advance(double seconds) {
    if (!(seconds >= 0.0)) throw ValidationError("clock cannot move backwards");
    std::lock_guard lock(mu_);
    now_ += std::llround(seconds * 1e9);
}

PowercapCounter::PowercapCounter(std::filesystem::path zone_dir) : dir_(std::move(zone_dir)) {}

namespace {
std::optional<double> read_number(const std::filesystem::path& p) {
    std::ifstream in(p);
    double v = 0;
    if (!(in >> v)) return std::nullopt;
    return v;
}
}  // namespace

std::optional<double> PowercapCounter::joules() {
    if (auto uj = read_number(dir_ / "energy_uj")) return *uj / 1e6;
    return std::nullopt;
}

double PowercapCounter::range_joules() {
    return read_number(dir_ / "max_energy_range_uj").value_or(0.0) / 1e6;
}

Meter::Meter(MeterConfig config, std::shared_ptr<Clock> clock,
             std::shared_ptr<EnergyCounter> counter)
    : config_(config), source_(config.source), clock_(std::move(clock)),
      counter_(std::move(counter)) {
    if (!(config_.power_watts >= 0.0)) throw ConfigError("power_watts must be non-negative");
    if (!clock_) clock_ = std::make_shared<SteadyClock>();
    if (source_ == MeterSource::HardwareCounter) {
        if (!counter_) counter_ = std::make_shared<PowercapCounter>();
        if (!counter_->joules()) {
            std::cerr << "warning: hardware energy counter unavailable; using modeled energy at "
                      << config_.power_watts << " W\n";
            source_ = MeterSource::Modeled;
            counter_.reset();
        }
    }
}

Meter::Span::Span(Meter& m) : m_(m) {
    if (m_.owner_ == std::this_thread::get_id()) {
        throw std::logic_error("metered sections cannot nest");
    }
    m_.active_.lock();
    m_.owner_ = std::this_thread::get_id();
}

Meter::Span::~Span() {
    m_.owner_ = std::thread::id();
    m_.active_.unlock();
}

std::optional<double> Meter::start_energy() {
    if (source_ != MeterSource::HardwareCounter) return std::nullopt;
    return counter_->joules();
}

MeterReading Meter::finish(const std::string& label, std::int64_t t0, std::optional<double> e0,
                           bool warmup) {
    MeterReading r;
    r.label = label;
    r.warmup = warmup;
    r.duration_s = static_cast<double>(std::max<std::int64_t>(0, clock_->now_ns() - t0)) / 1e9;
    if (source_ == MeterSource::HardwareCounter && e0) {
        if (auto e1 = counter_->joules()) {
            double joules = *e1 - *e0;
            if (joules < 0) joules += counter_->range_joules();
            r.source = MeterSource::HardwareCounter;
            r.energy_kwh = std::max(0.0, joules) / kJoulesPerKwh;
            return r;
        }
    }
    r.source = MeterSource::Modeled;
    r.energy_kwh = modeled_energy_kwh(config_.power_watts, r.duration_s);
    return r;
}

double carbon_of(double energy_kwh, double intensity_g_per_kwh) {
    if (!(energy_kwh >= 0.0) || !(intensity_g_per_kwh >= 0.0)) {
        throw ValidationError("energy and carbon intensity must be non-negative");
    }
    return energy_kwh * intensity_g_per_kwh / 1000.0;
}

std::string_view to_string(EcoMode mode) { return mode == EcoMode::SumF1 ? "sum_f1" : "mean_f1"; }

EcoMode parse_eco_mode(std::string_view name) {
    const auto n = text::to_lower(name);
    if (n == "sum_f1" || n == "sumf1") return EcoMode::SumF1;
    if (n == "mean_f1" || n == "meanf1") return EcoMode::MeanF1;
    throw ConfigError("unknown EcoScore mode '" + std::string(name) + "'");
}

double ecoscore(std::span<const double> f1, std::span<const double> carbon, EcoMode mode) {
    if (f1.empty() || f1.size() != carbon.size()) {
        throw ValidationError("EcoScore needs equal-length, non-empty F1 and carbon lists");
    }
    const double total_carbon = std::accumulate(carbon.begin(), carbon.end(), 0.0);
    if (total_carbon == 0.0) throw std::domain_error("EcoScore undefined: total carbon is zero");
    const double total_f1 = std::accumulate(f1.begin(), f1.end(), 0.0);
    const double numerator = mode == EcoMode::SumF1 ? total_f1 : total_f1 / static_cast<double>(f1.size());
    return numerator / total_carbon;
}

WorkloadProjection project_workload(std::size_t n_all, std::size_t n_pruned, double e_per_kwh,
                                    double intensity) {
    if (n_pruned > n_all) throw ValidationError("pruned count exceeds exhaustive count");
    if (!(e_per_kwh >= 0.0)) throw ValidationError("per-inference energy must be non-negative");
    WorkloadProjection p;
    p.n_all = n_all;
    p.n_pruned = n_pruned;
    p.e_per_kwh = e_per_kwh;
    p.e_vanilla_kwh = static_cast<double>(n_all) * e_per_kwh;
    p.e_pruned_kwh = static_cast<double>(n_pruned) * e_per_kwh;
    p.reduction = n_all == 0 ? 0.0 : 1.0 - static_cast<double>(n_pruned) / static_cast<double>(n_all);
    p.intensity_g_per_kwh = intensity;
    p.carbon_vanilla_kg = carbon_of(p.e_vanilla_kwh, intensity);
    p.carbon_pruned_kg = carbon_of(p.e_pruned_kwh, intensity);
    return p;
}

ordered_json to_json(const WorkloadProjection& p) {
    return ordered_json{{"n_all", p.n_all},
                        {"n_pruned", p.n_pruned},
                        {"e_per_kwh", p.e_per_kwh},
                        {"e_vanilla_kwh", p.e_vanilla_kwh},
                        {"e_pruned_kwh", p.e_pruned_kwh},
                        {"reduction", p.reduction},
                        {"carbon_intensity_g_per_kwh", p.intensity_g_per_kwh},
                        {"carbon_vanilla_kg", p.carbon_vanilla_kg},
                        {"carbon_pruned_kg", p.carbon_pruned_kg}};
}

double reduction_pct(double baseline, double value) {
    if (baseline == 0.0) throw std::domain_error("reduction relative to a zero baseline");
    return (1.0 - value / baseline) * 100.0;
}

double overhead_pct(double baseline, double value) {
    if (baseline == 0.0) throw std::domain_error("overhead relative to a zero baseline");
    return (value / baseline - 1.0) * 100.0;
}

double ModelSummary::mean_f1() const {
    return f1.empty() ? 0.0 : std::accumulate(f1.begin(), f1.end(), 0.0) / static_cast<double>(f1.size());
}

double ModelSummary::total_carbon_kg() const {
    return std::accumulate(carbon_kg.begin(), carbon_kg.end(), 0.0);
}

std::optional<double> ModelSummary::ecoscore() const {
    if (f1.empty() || total_carbon_kg() == 0.0) return std::nullopt;
    return sustain::ecoscore(f1, carbon_kg, mode);
}

SustainabilityReport::SustainabilityReport(double intensity, bool include_warmup)
    : intensity_(intensity), include_warmup_(include_warmup) {
    if (!(intensity >= 0.0)) throw ConfigError("carbon intensity must be non-negative");
}

void SustainabilityReport::add(const std::string& dataset, const std::string& pipeline,
                               const MeterReading& r) {
    runs_.push_back({dataset, pipeline, r});
}

Totals SustainabilityReport::totals(const std::string& dataset, const std::string& pipeline) const {
    Totals t;
    for (const auto& e : runs_) {
        if (e.dataset != dataset || e.pipeline != pipeline) continue;
        if (e.reading.warmup && !include_warmup_) continue;
        t.energy_kwh += e.reading.energy_kwh;
        t.latency_s += e.reading.duration_s;
        ++t.readings;
    }
    t.carbon_kg = carbon_of(t.energy_kwh, intensity_);
    return t;
}

std::vector<std::pair<std::string, std::string>> SustainabilityReport::groups() const {
    std::vector<std::pair<std::string, std::string>> out;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& e : runs_) {
        if (seen.emplace(e.dataset, e.pipeline).second) out.emplace_back(e.dataset, e.pipeline);
    }
    return out;
}

void SustainabilityReport::set_model(const std::string& model, ModelSummary summary) {
    models_[model] = std::move(summary);
}

ordered_json SustainabilityReport::to_json() const {
    ordered_json j;
    j["carbon_intensity_g_per_kwh"] = intensity_;
    j["include_warmup"] = include_warmup_;
    ordered_json runs = ordered_json::array();
    for (const auto& e : runs_) {
        auto r = sustain::to_json(e.reading);
        r["dataset"] = e.dataset;
        r["pipeline"] = e.pipeline;
        r["carbon_kg"] = carbon_of(e.reading.energy_kwh, intensity_);
        runs.push_back(std::move(r));
    }
    j["runs"] = std::move(runs);

    ordered_json per_dataset = ordered_json::object();
    for (const auto& [dataset, pipeline] : groups()) {
        const auto t = totals(dataset, pipeline);
        per_dataset[dataset][pipeline] = ordered_json{{"energy_kwh", t.energy_kwh},
                                                      {"carbon_kg", t.carbon_kg},
                                                      {"latency_s", t.latency_s},
                                                      {"mean_latency_s", t.mean_latency_s()},
                                                      {"readings", t.readings}};
    }
    j["per_dataset"] = std::move(per_dataset);

    ordered_json per_model = ordered_json::object();
    for (const auto& [model, s] : models_) {
        ordered_json m{{"datasets", s.datasets},
                       {"f1", s.f1},
                       {"carbon_kg", s.carbon_kg},
                       {"mean_f1", s.mean_f1()},
                       {"total_carbon_kg", s.total_carbon_kg()},
                       {"ecoscore_mode", to_string(s.mode)}};
        const auto eco = s.ecoscore();
        m["ecoscore"] = eco ? ordered_json(*eco) : ordered_json(nullptr);
        m["ecoscore_note"] =
            "sum_f1 divides the summed per-dataset macro F1 by total carbon; mean_f1 divides the "
            "mean macro F1 by total carbon. The two differ by a factor equal to the number of "
            "datasets; published model-level summaries use the mean_f1 arithmetic.";
        per_model[model] = std::move(m);
    }
    j["per_model"] = std::move(per_model);
    j["projection"] = projection_ ? sustain::to_json(*projection_) : ordered_json::object();
    return j;
}

std::string SustainabilityReport::to_csv() const {
    std::ostringstream out;
    csv::write_row(out, {"dataset", "pipeline", "label", "warmup", "duration_s", "energy_kwh",
                         "carbon_kg", "source"});
    for (const auto& e : runs_) {
        csv::write_row(out, {e.dataset, e.pipeline, e.reading.label,
                             e.reading.warmup ? "true" : "false",
                             text::format_double(e.reading.duration_s),
                             text::format_double(e.reading.energy_kwh),
                             text::format_double(carbon_of(e.reading.energy_kwh, intensity_)),
                             std::string(to_string(e.reading.source))});
    }
    return out.str();
}

}  // namespace reqdep::sustain
