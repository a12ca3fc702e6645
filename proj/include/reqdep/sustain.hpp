#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include "json.hpp"

namespace reqdep::sustain {

enum class MeterSource { Modeled, HardwareCounter };

std::string_view to_string(MeterSource source);
MeterSource parse_meter_source(std::string_view name);

struct MeterReading {
    std::string label;  // e.g. "retrieval:kgr:pure", "inference:mistral:zeroshot"
    double duration_s = 0.0;
    double energy_kwh = 0.0;
    MeterSource source = MeterSource::Modeled;
    bool warmup = false;

    friend bool operator==(const MeterReading&, const MeterReading&) = default;
};

nlohmann::ordered_json to_json(const MeterReading& r);
MeterReading reading_from_json(const nlohmann::json& j);

inline constexpr double kJoulesPerKwh = 3.6e6;

/// Energy of a modeled span: power_w * duration_s / 3.6e6.
double modeled_energy_kwh(double power_w, double duration_s);

/// Integer nanoseconds keep span lengths independent of the clock's offset.
class Clock {
public:
    virtual ~Clock() = default;
    virtual std::int64_t now_ns() = 0;
    double now_seconds() { return static_cast<double>(now_ns()) / 1e9; }
};

class SteadyClock final : public Clock {
public:
    std::int64_t now_ns() override;
};

/// Clock that only moves when told to. Makes metered runs reproducible.
class ManualClock final : public Clock {
public:
    std::int64_t now_ns() override;
    /// Rounds to whole nanoseconds. Throws ValidationError for negative steps.
    void advance(double seconds);

private:
    std::mutex mu_;
    std::int64_t now_ = 0;
};

/// Cumulative energy source (e.g. RAPL powercap). Returns nullopt when the
/// counter is unreadable.
class EnergyCounter {
public:
    virtual ~EnergyCounter() = default;
    virtual std::optional<double> joules() = 0;
    /// Counter wrap-around point in joules, 0 when unknown.
    virtual double range_joules() { return 0.0; }
};

/// Reads /sys/class/powercap/<zone>/energy_uj.
class PowercapCounter final : public EnergyCounter {
public:
    explicit PowercapCounter(std::filesystem::path zone_dir =
                                 "/sys/class/powercap/intel-rapl:0");
    std::optional<double> joules() override;
    double range_joules() override;

private:
    std::filesystem::path dir_;
};

struct MeterConfig {
    double power_watts = 50.0;
    MeterSource source = MeterSource::Modeled;
};

/// Times and prices sections of work. One section is active at a time;
/// concurrent callers wait their turn and a nested call on the same thread
/// throws std::logic_error.
class Meter {
public:
    /// Throws ConfigError for negative power. A HardwareCounter request
    /// without a readable counter falls back to Modeled with a warning.
    explicit Meter(MeterConfig config, std::shared_ptr<Clock> clock = nullptr,
                   std::shared_ptr<EnergyCounter> counter = nullptr);

    const MeterConfig& config() const { return config_; }
    MeterSource effective_source() const { return source_; }
    Clock& clock() { return *clock_; }

    template <class Work>
    auto measure(const std::string& label, Work&& work, bool warmup = false) {
        Span span(*this);
        const std::int64_t t0 = clock_->now_ns();
        const auto e0 = start_energy();
        if constexpr (std::is_void_v<std::invoke_result_t<Work>>) {
            std::forward<Work>(work)();
            return finish(label, t0, e0, warmup);
        } else {
            auto result = std::forward<Work>(work)();
            auto reading = finish(label, t0, e0, warmup);
            return std::pair{std::move(result), std::move(reading)};
        }
    }

private:
    class Span {
    public:
        explicit Span(Meter& m);
        ~Span();
        Span(const Span&) = delete;
        Span& operator=(const Span&) = delete;

    private:
        Meter& m_;
    };

    std::optional<double> start_energy();
    MeterReading finish(const std::string& label, std::int64_t t0, std::optional<double> e0,
                        bool warmup);

    MeterConfig config_;
    MeterSource source_;
    std::shared_ptr<Clock> clock_;
    std::shared_ptr<EnergyCounter> counter_;
    std::mutex active_;
    std::atomic<std::thread::id> owner_{};
};

/// Free-function form: runs `work` under `meter` and returns (result, reading).
template <class Work>
auto meter_section(const std::string& label, Work&& work, Meter& meter, bool warmup = false) {
    return meter.measure(label, std::forward<Work>(work), warmup);
}

inline constexpr double kDefaultCarbonIntensity = 475.0;  // gCO2e per kWh

/// kgCO2e for `energy_kwh` at `intensity_g_per_kwh`. Both must be >= 0.
double carbon_of(double energy_kwh, double intensity_g_per_kwh = kDefaultCarbonIntensity);

enum class EcoMode { SumF1, MeanF1 };
std::string_view to_string(EcoMode mode);
EcoMode parse_eco_mode(std::string_view name);

/// SumF1: sum(F1) / sum(carbon). MeanF1: mean(F1) / sum(carbon).
/// Throws ValidationError on length mismatch or empty input and
/// std::domain_error when total carbon is zero.
double ecoscore(std::span<const double> f1_per_dataset, std::span<const double> carbon_per_dataset,
                EcoMode mode);

struct WorkloadProjection {
    std::size_t n_all = 0;
    std::size_t n_pruned = 0;
    double e_per_kwh = 0.0;
    double e_vanilla_kwh = 0.0;
    double e_pruned_kwh = 0.0;
    double reduction = 0.0;  // fraction
    double intensity_g_per_kwh = kDefaultCarbonIntensity;
    double carbon_vanilla_kg = 0.0;
    double carbon_pruned_kg = 0.0;
};

/// Exhaustive vs pruned inference energy. Throws ValidationError when
/// n_pruned > n_all or e_per_kwh < 0.
WorkloadProjection project_workload(std::size_t n_all, std::size_t n_pruned, double e_per_kwh,
                                    double intensity_g_per_kwh = kDefaultCarbonIntensity);

nlohmann::ordered_json to_json(const WorkloadProjection& p);

/// Percent saved going from `baseline` to `value`: (1 - value/baseline) * 100.
double reduction_pct(double baseline, double value);
/// Percent extra going from `baseline` to `value`: (value/baseline - 1) * 100.
double overhead_pct(double baseline, double value);

struct Totals {
    double energy_kwh = 0.0;
    double carbon_kg = 0.0;
    double latency_s = 0.0;
    std::size_t readings = 0;  // R_{d,p}

    double mean_latency_s() const { return readings ? latency_s / readings : 0.0; }
};

struct ModelSummary {
    std::vector<std::string> datasets;
    std::vector<double> f1;
    std::vector<double> carbon_kg;
    EcoMode mode = EcoMode::MeanF1;

    double mean_f1() const;
    double total_carbon_kg() const;
    /// nullopt when total carbon is zero.
    std::optional<double> ecoscore() const;
};

/// Readings grouped per (dataset, pipeline) with carbon totals and model-level
/// EcoScore. Warm-up readings are listed but left out of totals unless
/// `include_warmup` is set.
class SustainabilityReport {
public:
    explicit SustainabilityReport(double intensity_g_per_kwh = kDefaultCarbonIntensity,
                                  bool include_warmup = false);

    void add(const std::string& dataset, const std::string& pipeline, const MeterReading& r);
    Totals totals(const std::string& dataset, const std::string& pipeline) const;
    std::vector<std::pair<std::string, std::string>> groups() const;

    void set_model(const std::string& model, ModelSummary summary);
    void set_projection(WorkloadProjection p) { projection_ = p; }

    double intensity() const { return intensity_; }

    /// Keys: runs[], per_dataset{}, per_model{}, projection{}.
    nlohmann::ordered_json to_json() const;
    /// Flat rows: dataset,pipeline,label,warmup,duration_s,energy_kwh,carbon_kg,source.
    std::string to_csv() const;

private:
    struct Entry {
        std::string dataset;
        std::string pipeline;
        MeterReading reading;
    };
    double intensity_;
    bool include_warmup_;
    std::vector<Entry> runs_;
    std::map<std::string, ModelSummary> models_;
    std::optional<WorkloadProjection> projection_;
};

}  // namespace reqdep::sustain
