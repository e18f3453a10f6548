#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "linse/case.h"
#include "linse/estimator.h"
#include "linse/measurement.h"
#include "linse/network.h"

namespace linse {

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Relative standard deviations per measurement class. A reading's sigma is
/// `fraction * max(|true value|, floor_base)`.
struct SigmaTable {
    double pmu_voltage = 0.0002;
    double pmu_current = 0.0002;
    double rtu_voltage = 0.004;
    double rtu_injection = 0.01;
    double rtu_flow = 0.01;
    double floor_base = 0.1;  // pu

    double fraction(ReadingKind kind) const;
    double sigma_for(ReadingKind kind, double true_value) const;
};

/// `uniform` draws from [z_t - sigma, z_t + sigma]; `gaussian` from
/// N(z_t, sigma^2); `none` returns the truth (sigmas still assigned).
enum class NoiseModel { uniform, gaussian, none };

NoiseModel parse_noise_model(std::string_view text);

struct PlacementCounts {
    std::size_t pmu_voltage = 0;  // PMU buses (one V phasor each)
    std::size_t pmu_current = 0;  // PMU branch current phasors
    std::size_t rtu_voltage = 0;  // RTU buses with |V|
    std::size_t rtu_injection = 0;
    std::size_t rtu_flow = 0;
};

/// Device counts used for the bundled IEEE/PEGASE systems, keyed by bus count.
std::optional<PlacementCounts> standard_counts(std::size_t bus_count);

struct PlacementRequirements {
    std::vector<int> pmu_buses;
    std::vector<int> injection_buses;
};

/// Deterministic placement reproducing the requested counts where the
/// topology allows it.
///
/// PMU buses: the reference bus and any required buses first, then by
/// descending degree. Each PMU bus meters its V phasor and the currents of
/// its incident branches until the current budget is spent.
/// RTU buses: required injection buses first, then a greedy dominating set
/// (every bus metered or next to an injection), then by descending degree;
/// enough buses are taken to carry the requested injections and flows.
/// Each bus without its own V phasor or injection first gets a flow metered
/// toward it from an RTU neighbour; remaining flows are spread round-robin
/// over the RTU buses' incident branches.
/// Values and sigmas of the returned readings are zero.
std::vector<RawReading> standard_placement(NetworkCase const& network, PlacementCounts const& counts,
                                         PlacementRequirements const& required = {});

PlacementCounts count_placement(std::span<RawReading const> readings);

double true_value(RawReading const& reading, NetworkCase const& network, TruthTables const& truth);

/// Reading value implied by the state: PMU quantities from the linear current
/// models, |V| and S = V conj(I) for RTU quantities.
double estimated_value(RawReading const& reading, NetworkCase const& network, NetworkModel const& model,
                       std::span<double const> x);

std::vector<RawReading> generate_readings(NetworkCase const& network, TruthTables const& truth,
                                          std::span<RawReading const> placement, SigmaTable const& sigmas,
                                          NoiseModel noise, std::mt19937_64& rng);

struct ReadingSelector {
    std::optional<Device> device;
    ReadingKind kind = ReadingKind::v_real;
    int bus = 0;
    std::optional<int> other_bus;
    std::optional<std::size_t> branch;
};

struct BadDataSpec {
    ReadingSelector selector;
    double alteration = 0.0;
};

/// Position of the single reading matching `selector`; throws ConfigError on
/// zero or several matches.
std::size_t find_reading(std::span<RawReading const> readings, NetworkCase const& network,
                         ReadingSelector const& selector);

/// value <- value * (1 + alteration) on each selected reading.
std::vector<RawReading> inject_bad_data(std::vector<RawReading> readings, NetworkCase const& network,
                                        std::span<BadDataSpec const> specs);

/// Sum of squared state errors over all 2N-1 state entries.
double index_sigma2x(std::span<double const> estimate, std::span<double const> truth);

/// Ratio of squared estimated-value errors to squared raw-reading errors over
/// the original readings. Returns nullopt (exact fit) when the readings
/// carry no error at all.
std::optional<double> index_xi(NetworkCase const& network, NetworkModel const& model, std::span<double const> estimate,
                               std::span<RawReading const> readings, TruthTables const& truth);

struct PolarPhasor {
    double magnitude = 0.0;
    double sigma_magnitude = 0.0;
    double angle = 0.0;  // rad
    double sigma_angle = 0.0;
};

struct RectangularPhasor {
    double real = 0.0;
    double sigma_real = 0.0;
    double imag = 0.0;
    double sigma_imag = 0.0;
};

/// First-order error propagation of a polar PMU phasor into rectangular parts.
RectangularPhasor polar_to_rectangular(PolarPhasor const& phasor);

struct ScenarioConfig {
    std::filesystem::path case_path;
    std::optional<std::filesystem::path> measurements_path;
    PlacementRequirements required;
    std::optional<PlacementCounts> counts;
    SigmaTable sigmas;
    NoiseModel noise = NoiseModel::uniform;
    std::size_t trials = 100;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    std::vector<BadDataSpec> bad_data;
    EstimatorOptions estimator;
};

/// Parses a campaign config; relative paths resolve against `base_dir`.
ScenarioConfig parse_scenario_config(std::string_view text, std::filesystem::path const& base_dir);
ScenarioConfig load_scenario_config(std::filesystem::path const& path);

struct TrialResult {
    std::size_t trial = 0;
    double sigma2x = 0.0;
    std::optional<double> xi;
    double solve_ms = 0.0;
    double detect_ms = 0.0;
    std::size_t iterations = 0;
    bool converged = true;
    std::vector<BadDataEvent> events;
    std::string error;

    bool ok() const { return error.empty(); }
};

struct Aggregate {
    std::size_t count = 0;
    double mean = 0.0;
    double stddev = 0.0;
};

Aggregate aggregate(std::span<double const> values);

struct CampaignResult {
    std::vector<TrialResult> trials;
    std::vector<int> planted_reading_ids;
    std::size_t row_count = 0;
    std::size_t state_dim = 0;
    Aggregate sigma2x;
    Aggregate xi;
    Aggregate solve_ms;
    Aggregate detect_ms;
    // Per-bus estimate of the first successful trial, for plotting.
    std::vector<Complex> first_trial_voltage;
    std::vector<Complex> true_voltage;
    std::vector<int> bus_ids;
};

/// Loaded case, models, truth and placement shared by every trial.
struct Scenario {
    NetworkCase network;
    NetworkModel model;
    TruthTables truth;
    std::vector<RawReading> placement;
};

Scenario prepare_scenario(ScenarioConfig const& config);

/// Readings of trial `trial`: its own rng stream derived from (seed, trial),
/// so results do not depend on execution order.
std::vector<RawReading> trial_readings(Scenario const& scenario, ScenarioConfig const& config, std::size_t trial,
                                       bool with_bad_data = true);

TrialResult run_trial(Scenario const& scenario, ScenarioConfig const& config, std::size_t trial);

CampaignResult run_campaign(ScenarioConfig const& config);
CampaignResult run_campaign(Scenario const& scenario, ScenarioConfig const& config);

void write_campaign_csv(std::ostream& out, CampaignResult const& result);
/// Columns: bus id, |dV_R|, |dV_I|.
void write_state_errors(std::ostream& out, std::span<int const> bus_ids, std::span<Complex const> estimate,
                        std::span<Complex const> truth);

std::string report_to_json(EstimationReport const& report, MeasurementModel const& model, NetworkCase const& network,
                           std::optional<double> sigma2x = std::nullopt, std::optional<double> xi = std::nullopt);

}  // namespace linse
