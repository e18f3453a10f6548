#include "linse/harness.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace linse {

double SigmaTable::fraction(ReadingKind kind) const {
    switch (kind) {
        case ReadingKind::v_real:
        case ReadingKind::v_imag:
            return pmu_voltage;
        case ReadingKind::i_real_inj:
        case ReadingKind::i_imag_inj:
        case ReadingKind::i_real_flow:
        case ReadingKind::i_imag_flow:
            return pmu_current;
        case ReadingKind::v_mag:
            return rtu_voltage;
        case ReadingKind::p_inj:
        case ReadingKind::q_inj:
            return rtu_injection;
        case ReadingKind::p_flow:
        case ReadingKind::q_flow:
            return rtu_flow;
    }
    return 0.0;
}

double SigmaTable::sigma_for(ReadingKind kind, double true_value) const {
    return fraction(kind) * std::max(std::abs(true_value), floor_base);
}

NoiseModel parse_noise_model(std::string_view text) {
    if (text == "uniform") {
        return NoiseModel::uniform;
    }
    if (text == "gaussian") {
        return NoiseModel::gaussian;
    }
    if (text == "none") {
        return NoiseModel::none;
    }
    throw ConfigError("unknown noise model '" + std::string(text) + "'");
}

std::optional<PlacementCounts> standard_counts(std::size_t bus_count) {
    switch (bus_count) {
        case 14: return PlacementCounts{5, 14, 11, 10, 36};
        case 57: return PlacementCounts{13, 40, 47, 50, 112};
        case 118: return PlacementCounts{19, 76, 106, 96, 298};
        case 2869: return PlacementCounts{409, 1362, 2652, 2596, 5134};
        case 13659: return PlacementCounts{1557, 5294, 12870, 12786, 25682};
        default: return std::nullopt;
    }
}

namespace {

struct Topology {
    std::vector<std::vector<std::size_t>> incident;  // branch positions per bus
    std::vector<std::set<std::size_t>> neighbours;
};

Topology topology_of(NetworkCase const& network) {
    Topology topo;
    topo.incident.resize(network.bus_count());
    topo.neighbours.resize(network.bus_count());
    for (std::size_t k = 0; k < network.branches.size(); ++k) {
        std::size_t f = network.bus_index(network.branches[k].from_bus);
        std::size_t t = network.bus_index(network.branches[k].to_bus);
        topo.incident[f].push_back(k);
        topo.incident[t].push_back(k);
        topo.neighbours[f].insert(t);
        topo.neighbours[t].insert(f);
    }
    return topo;
}

void push_reading(std::vector<RawReading>& out, Device device, ReadingKind kind, int bus,
                  std::optional<std::size_t> branch = std::nullopt) {
    RawReading r;
    r.id = static_cast<int>(out.size());
    r.device = device;
    r.kind = kind;
    r.bus = bus;
    r.branch = branch;
    out.push_back(r);
}

std::vector<std::size_t> pick_pmu_buses(NetworkCase const& network, Topology const& topo,
                                        PlacementCounts const& counts, PlacementRequirements const& required) {
    std::size_t const n = network.bus_count();
    std::vector<std::size_t> chosen;
    std::vector<bool> taken(n, false);
    auto take = [&](std::size_t b) {
        if (!taken[b]) {
            taken[b] = true;
            chosen.push_back(b);
        }
    };
    take(network.reference_index());
    for (int id : required.pmu_buses) {
        take(network.bus_index(id));
    }
    std::vector<std::size_t> by_degree(n);
    std::iota(by_degree.begin(), by_degree.end(), std::size_t{0});
    std::stable_sort(by_degree.begin(), by_degree.end(), [&](std::size_t a, std::size_t b) {
        return topo.incident[a].size() > topo.incident[b].size();
    });
    for (std::size_t b : by_degree) {
        if (chosen.size() >= counts.pmu_voltage) {
            break;
        }
        take(b);
    }
    return chosen;
}

}  // namespace

std::vector<RawReading> standard_placement(NetworkCase const& network, PlacementCounts const& counts,
                                         PlacementRequirements const& required) {
    Topology topo = topology_of(network);
    std::size_t const n = network.bus_count();
    std::vector<RawReading> out;

    std::vector<std::size_t> pmu = pick_pmu_buses(network, topo, counts, required);
    for (std::size_t b : pmu) {
        push_reading(out, Device::pmu, ReadingKind::v_real, network.buses[b].id);
        push_reading(out, Device::pmu, ReadingKind::v_imag, network.buses[b].id);
    }
    std::size_t channels = 0;
    for (std::size_t b : pmu) {
        for (std::size_t k : topo.incident[b]) {
            if (channels == counts.pmu_current) {
                break;
            }
            push_reading(out, Device::pmu, ReadingKind::i_real_flow, network.buses[b].id, k);
            push_reading(out, Device::pmu, ReadingKind::i_imag_flow, network.buses[b].id, k);
            ++channels;
        }
    }

    // RTU order: required injection buses, then a greedy dominating set so
    // that every bus is metered or adjacent to an injection, then by degree.
    std::vector<std::size_t> order;
    std::vector<bool> listed(n, false);
    std::vector<bool> covered(n, false);
    auto list = [&](std::size_t b) {
        listed[b] = true;
        order.push_back(b);
        covered[b] = true;
        for (std::size_t nb : topo.neighbours[b]) {
            covered[nb] = true;
        }
    };
    for (int id : required.injection_buses) {
        std::size_t b = network.bus_index(id);
        if (!listed[b]) {
            list(b);
        }
    }
    auto gain = [&](std::size_t b) {
        std::size_t g = covered[b] ? 0 : 1;
        for (std::size_t nb : topo.neighbours[b]) {
            g += covered[nb] ? 0 : 1;
        }
        return g;
    };
    while (std::find(covered.begin(), covered.end(), false) != covered.end()) {
        std::size_t best = n;
        for (std::size_t b = 0; b < n; ++b) {
            if (listed[b]) {
                continue;
            }
            if (best == n || gain(b) > gain(best) ||
                (gain(b) == gain(best) && topo.incident[b].size() > topo.incident[best].size())) {
                best = b;
            }
        }
        list(best);
    }
    std::vector<std::size_t> rest;
    for (std::size_t b = 0; b < n; ++b) {
        if (!listed[b]) {
            rest.push_back(b);
        }
    }
    std::stable_sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) {
        return topo.incident[a].size() > topo.incident[b].size();
    });
    order.insert(order.end(), rest.begin(), rest.end());

    std::size_t rtu_count = std::max({counts.rtu_voltage, counts.rtu_injection, required.injection_buses.size()});
    rtu_count = std::min(rtu_count, n);
    auto flow_capacity = [&](std::size_t k) {
        std::size_t sum = 0;
        for (std::size_t i = 0; i < k; ++i) {
            sum += topo.incident[order[i]].size();
        }
        return sum;
    };
    while (rtu_count < n && flow_capacity(rtu_count) < counts.rtu_flow) {
        ++rtu_count;
    }
    std::vector<std::size_t> rtu(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(rtu_count));

    for (std::size_t b : rtu) {
        push_reading(out, Device::rtu, ReadingKind::v_mag, network.buses[b].id);
    }
    for (std::size_t i = 0; i < std::min(counts.rtu_injection, rtu.size()); ++i) {
        int id = network.buses[rtu[i]].id;
        push_reading(out, Device::rtu, ReadingKind::p_inj, id);
        push_reading(out, Device::rtu, ReadingKind::q_inj, id);
    }
    // Buses without their own V phasor or injection first get one flow
    // metered toward them from an RTU neighbour; the rest is round-robin.
    std::vector<bool> is_rtu(n, false);
    for (std::size_t b : rtu) {
        is_rtu[b] = true;
    }
    std::vector<bool> anchored(n, false);
    for (std::size_t b : pmu) {
        anchored[b] = true;
    }
    for (std::size_t i = 0; i < std::min(counts.rtu_injection, rtu.size()); ++i) {
        anchored[rtu[i]] = true;
    }
    std::set<std::pair<std::size_t, std::size_t>> metered;  // (bus, branch)
    std::size_t flows = 0;
    auto meter = [&](std::size_t b, std::size_t k) {
        if (flows == counts.rtu_flow || !metered.insert({b, k}).second) {
            return;
        }
        push_reading(out, Device::rtu, ReadingKind::p_flow, network.buses[b].id, k);
        push_reading(out, Device::rtu, ReadingKind::q_flow, network.buses[b].id, k);
        ++flows;
    };
    auto far_end = [&](std::size_t b, std::size_t k) {
        std::size_t f = network.bus_index(network.branches[k].from_bus);
        return f == b ? network.bus_index(network.branches[k].to_bus) : f;
    };
    for (std::size_t b = 0; b < n; ++b) {
        if (anchored[b]) {
            continue;
        }
        for (std::size_t k : topo.incident[b]) {
            std::size_t other = far_end(b, k);
            if (is_rtu[other]) {
                meter(other, k);
                break;
            }
        }
    }
    for (std::size_t pass = 0; flows < counts.rtu_flow; ++pass) {
        bool any = false;
        for (std::size_t b : rtu) {
            if (pass < topo.incident[b].size()) {
                meter(b, topo.incident[b][pass]);
                any = true;
            }
        }
        if (!any) {
            break;
        }
    }
    return out;
}

PlacementCounts count_placement(std::span<RawReading const> readings) {
    PlacementCounts c;
    for (RawReading const& r : readings) {
        switch (r.kind) {
            case ReadingKind::v_real: ++c.pmu_voltage; break;
            case ReadingKind::i_real_inj:
            case ReadingKind::i_real_flow: ++c.pmu_current; break;
            case ReadingKind::v_mag: ++c.rtu_voltage; break;
            case ReadingKind::p_inj: ++c.rtu_injection; break;
            case ReadingKind::p_flow: ++c.rtu_flow; break;
            default: break;
        }
    }
    return c;
}

double true_value(RawReading const& r, NetworkCase const& network, TruthTables const& truth) {
    std::size_t bus = network.bus_index(r.bus);
    auto side = [&] { return flow_side(network, r); };
    switch (r.kind) {
        case ReadingKind::v_real: return truth.voltage[bus].real();
        case ReadingKind::v_imag: return truth.voltage[bus].imag();
        case ReadingKind::i_real_inj: return truth.injection_current[bus].real();
        case ReadingKind::i_imag_inj: return truth.injection_current[bus].imag();
        case ReadingKind::i_real_flow: return truth.flow_current(*r.branch, side()).real();
        case ReadingKind::i_imag_flow: return truth.flow_current(*r.branch, side()).imag();
        case ReadingKind::v_mag: return std::abs(truth.voltage[bus]);
        case ReadingKind::p_inj: return truth.injection_power[bus].real();
        case ReadingKind::q_inj: return truth.injection_power[bus].imag();
        case ReadingKind::p_flow: return truth.flow_power(*r.branch, side()).real();
        case ReadingKind::q_flow: return truth.flow_power(*r.branch, side()).imag();
    }
    return 0.0;
}

double estimated_value(RawReading const& r, NetworkCase const& network, NetworkModel const& model,
                       std::span<double const> x) {
    StateLayout const& layout = model.layout();
    std::size_t bus = network.bus_index(r.bus);
    auto vi = layout.imag_index(bus);
    Complex v{x[layout.real_index(bus)], vi ? x[*vi] : 0.0};
    auto current = [&] {
        return is_flow(r.kind) ? model.flow_current(*r.branch, flow_side(network, r), x)
                               : model.injected_current(bus, x);
    };
    switch (r.kind) {
        case ReadingKind::v_real: return v.real();
        case ReadingKind::v_imag: return v.imag();
        case ReadingKind::i_real_inj:
        case ReadingKind::i_real_flow: return current().real();
        case ReadingKind::i_imag_inj:
        case ReadingKind::i_imag_flow: return current().imag();
        case ReadingKind::v_mag: return std::abs(v);
        case ReadingKind::p_inj:
        case ReadingKind::p_flow: return (v * std::conj(current())).real();
        case ReadingKind::q_inj:
        case ReadingKind::q_flow: return (v * std::conj(current())).imag();
    }
    return 0.0;
}

std::vector<RawReading> generate_readings(NetworkCase const& network, TruthTables const& truth,
                                          std::span<RawReading const> placement, SigmaTable const& sigmas,
                                          NoiseModel noise, std::mt19937_64& rng) {
    std::vector<RawReading> out(placement.begin(), placement.end());
    for (RawReading& r : out) {
        double z_true = true_value(r, network, truth);
        double sigma = sigmas.sigma_for(r.kind, z_true);
        r.sigma = sigma;
        r.value = z_true;
        if (sigma == 0.0) {
            continue;
        }
        switch (noise) {
            case NoiseModel::uniform:
                r.value += std::uniform_real_distribution<double>(-sigma, sigma)(rng);
                break;
            case NoiseModel::gaussian:
                r.value += std::normal_distribution<double>(0.0, sigma)(rng);
                break;
            case NoiseModel::none:
                break;
        }
    }
    return out;
}

std::size_t find_reading(std::span<RawReading const> readings, NetworkCase const& network,
                         ReadingSelector const& selector) {
    std::optional<std::size_t> found;
    std::size_t matches = 0;
    for (std::size_t i = 0; i < readings.size(); ++i) {
        RawReading const& r = readings[i];
        if (r.kind != selector.kind || r.bus != selector.bus) {
            continue;
        }
        if (selector.device && r.device != *selector.device) {
            continue;
        }
        if (selector.branch && r.branch != selector.branch) {
            continue;
        }
        if (selector.other_bus) {
            if (!r.branch) {
                continue;
            }
            Branch const& br = network.branches[*r.branch];
            int other = br.from_bus == r.bus ? br.to_bus : br.from_bus;
            if (other != *selector.other_bus) {
                continue;
            }
        }
        found = i;
        ++matches;
    }
    std::string where = std::string(to_string(selector.kind)) + " at bus " + std::to_string(selector.bus) +
                        (selector.other_bus ? " toward bus " + std::to_string(*selector.other_bus) : "");
    if (matches == 0) {
        throw ConfigError("no reading matches selector " + where);
    }
    if (matches > 1) {
        throw ConfigError("selector " + where + " matches " + std::to_string(matches) + " readings");
    }
    return *found;
}

std::vector<RawReading> inject_bad_data(std::vector<RawReading> readings, NetworkCase const& network,
                                        std::span<BadDataSpec const> specs) {
    for (BadDataSpec const& spec : specs) {
        if (!std::isfinite(spec.alteration)) {
            throw ConfigError("bad-data alteration must be finite");
        }
        std::size_t i = find_reading(readings, network, spec.selector);
        readings[i].value *= 1.0 + spec.alteration;
    }
    return readings;
}

double index_sigma2x(std::span<double const> estimate, std::span<double const> truth) {
    if (estimate.size() != truth.size()) {
        throw std::invalid_argument("state dimension mismatch in sigma2x index");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < estimate.size(); ++i) {
        double d = estimate[i] - truth[i];
        sum += d * d;
    }
    return sum;
}

std::optional<double> index_xi(NetworkCase const& network, NetworkModel const& model, std::span<double const> estimate,
                               std::span<RawReading const> readings, TruthTables const& truth) {
    double numerator = 0.0;
    double denominator = 0.0;
    for (RawReading const& r : readings) {
        double z_true = true_value(r, network, truth);
        double z_hat = estimated_value(r, network, model, estimate);
        numerator += (z_hat - z_true) * (z_hat - z_true);
        denominator += (r.value - z_true) * (r.value - z_true);
    }
    if (denominator == 0.0) {
        return std::nullopt;
    }
    return numerator / denominator;
}

RectangularPhasor polar_to_rectangular(PolarPhasor const& p) {
    double c = std::cos(p.angle);
    double s = std::sin(p.angle);
    RectangularPhasor out;
    out.real = p.magnitude * c;
    out.imag = p.magnitude * s;
    out.sigma_real = std::hypot(c * p.sigma_magnitude, p.magnitude * s * p.sigma_angle);
    out.sigma_imag = std::hypot(s * p.sigma_magnitude, p.magnitude * c * p.sigma_angle);
    return out;
}

namespace {

BadDataMode parse_mode(std::string_view text) {
    if (text == "correct") {
        return BadDataMode::correct;
    }
    if (text == "remove") {
        return BadDataMode::remove;
    }
    throw ConfigError("unknown bad-data mode '" + std::string(text) + "'");
}

SolverKind parse_solver(std::string_view text) {
    if (text == "normal") {
        return SolverKind::normal_equations;
    }
    if (text == "orthogonal") {
        return SolverKind::orthogonal;
    }
    throw ConfigError("unknown solver '" + std::string(text) + "'");
}

}  // namespace

ScenarioConfig parse_scenario_config(std::string_view text, std::filesystem::path const& base_dir) {
    ScenarioConfig config;
    try {
        auto doc = nlohmann::json::parse(text.begin(), text.end());
        auto resolve = [&](std::string const& p) {
            std::filesystem::path path(p);
            return path.is_absolute() ? path : base_dir / path;
        };
        config.case_path = resolve(doc.at("case").get<std::string>());
        if (doc.contains("measurements")) {
            config.measurements_path = resolve(doc.at("measurements").get<std::string>());
        }
        if (doc.contains("placement")) {
            auto const& p = doc.at("placement");
            std::string recipe = p.value("recipe", "standard");
            if (recipe != "standard") {
                throw ConfigError("unknown placement recipe '" + recipe + "'");
            }
            config.required.pmu_buses = p.value("pmu_buses", std::vector<int>{});
            config.required.injection_buses = p.value("injection_buses", std::vector<int>{});
            if (p.contains("counts")) {
                auto const& c = p.at("counts");
                config.counts = PlacementCounts{c.at("pmu_voltage").get<std::size_t>(),
                                                c.at("pmu_current").get<std::size_t>(),
                                                c.at("rtu_voltage").get<std::size_t>(),
                                                c.at("rtu_injection").get<std::size_t>(),
                                                c.at("rtu_flow").get<std::size_t>()};
            }
        }
        if (doc.contains("sigmas")) {
            auto const& s = doc.at("sigmas");
            config.sigmas.pmu_voltage = s.value("pmu_voltage", config.sigmas.pmu_voltage);
            config.sigmas.pmu_current = s.value("pmu_current", config.sigmas.pmu_current);
            config.sigmas.rtu_voltage = s.value("rtu_voltage", config.sigmas.rtu_voltage);
            config.sigmas.rtu_injection = s.value("rtu_injection", config.sigmas.rtu_injection);
            config.sigmas.rtu_flow = s.value("rtu_flow", config.sigmas.rtu_flow);
            config.sigmas.floor_base = s.value("floor_base", config.sigmas.floor_base);
        }
        for (double f : {config.sigmas.pmu_voltage, config.sigmas.pmu_current, config.sigmas.rtu_voltage,
                         config.sigmas.rtu_injection, config.sigmas.rtu_flow, config.sigmas.floor_base}) {
            if (!(f > 0.0)) {
                throw ConfigError("sigma table entries must be positive");
            }
        }
        config.noise = parse_noise_model(doc.value("noise", std::string("uniform")));
        config.trials = doc.value("trials", std::size_t{100});
        if (config.trials < 1) {
            throw ConfigError("trials must be at least 1");
        }
        config.seed = doc.value("seed", std::uint64_t{1});
        config.threads = std::max<std::size_t>(1, doc.value("threads", std::size_t{1}));
        for (auto const& b : doc.value("bad_data", nlohmann::json::array())) {
            BadDataSpec spec;
            if (b.contains("device")) {
                spec.selector.device = parse_device(b.at("device").get<std::string>());
            }
            spec.selector.kind = parse_reading_kind(b.at("kind").get<std::string>());
            spec.selector.bus = b.at("bus").get<int>();
            if (b.contains("other_bus")) {
                spec.selector.other_bus = b.at("other_bus").get<int>();
            }
            if (b.contains("branch")) {
                spec.selector.branch = b.at("branch").get<std::size_t>();
            }
            spec.alteration = b.at("alteration").get<double>();
            if (!std::isfinite(spec.alteration)) {
                throw ConfigError("bad-data alteration must be finite");
            }
            config.bad_data.push_back(spec);
        }
        if (doc.contains("estimator")) {
            auto const& e = doc.at("estimator");
            config.estimator.threshold = e.value("q", config.estimator.threshold);
            config.estimator.mode = parse_mode(e.value("mode", std::string("correct")));
            config.estimator.max_iterations = e.value("max_iterations", config.estimator.max_iterations);
            config.estimator.solver = parse_solver(e.value("solver", std::string("normal")));
        }
    } catch (nlohmann::json::exception const& e) {
        throw ConfigError(std::string("invalid scenario config: ") + e.what());
    } catch (MeasurementError const& e) {
        throw ConfigError(e.what());
    }
    return config;
}

ScenarioConfig load_scenario_config(std::filesystem::path const& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_scenario_config(buffer.str(), path.parent_path());
}

Aggregate aggregate(std::span<double const> values) {
    Aggregate a;
    a.count = values.size();
    if (values.empty()) {
        return a;
    }
    a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) {
            ss += (v - a.mean) * (v - a.mean);
        }
        a.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return a;
}

Scenario prepare_scenario(ScenarioConfig const& config) {
    NetworkCase network = rotate_to_reference(load_case(config.case_path));
    NetworkModel model(network);
    TruthTables truth = true_measurement_values(network, model);
    std::vector<RawReading> placement;
    if (config.measurements_path) {
        placement = load_readings(config.measurements_path->string(), network);
    } else {
        auto counts = config.counts ? config.counts : standard_counts(network.bus_count());
        if (!counts) {
            throw ConfigError("no placement counts for a " + std::to_string(network.bus_count()) +
                              "-bus case; give placement.counts");
        }
        placement = standard_placement(network, *counts, config.required);
    }
    return Scenario{std::move(network), std::move(model), std::move(truth), std::move(placement)};
}

std::vector<RawReading> trial_readings(Scenario const& scenario, ScenarioConfig const& config, std::size_t trial,
                                       bool with_bad_data) {
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(trial), static_cast<std::uint32_t>(trial >> 32)};
    std::mt19937_64 rng(seq);
    auto readings = generate_readings(scenario.network, scenario.truth, scenario.placement, config.sigmas,
                                      config.noise, rng);
    if (with_bad_data && !config.bad_data.empty()) {
        readings = inject_bad_data(std::move(readings), scenario.network, config.bad_data);
    }
    return readings;
}

TrialResult run_trial(Scenario const& scenario, ScenarioConfig const& config, std::size_t trial) {
    TrialResult result;
    result.trial = trial;
    try {
        auto readings = trial_readings(scenario, config, trial);
        MeasurementModel model = assemble(scenario.network, scenario.model, readings);
        EstimationReport report = run(model, config.estimator);
        result.sigma2x = index_sigma2x(report.state.x, scenario.truth.state);
        result.xi = index_xi(scenario.network, scenario.model, report.state.x, readings, scenario.truth);
        result.solve_ms = report.solve_ms;
        result.detect_ms = report.detect_ms;
        result.iterations = report.iterations;
        result.converged = report.converged;
        result.events = std::move(report.events);
    } catch (std::exception const& e) {
        result.error = e.what();
    }
    return result;
}

CampaignResult run_campaign(ScenarioConfig const& config) { return run_campaign(prepare_scenario(config), config); }

CampaignResult run_campaign(Scenario const& scenario, ScenarioConfig const& config) {
    CampaignResult result;
    result.trials.resize(config.trials);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t t = next++; t < config.trials; t = next++) {
            result.trials[t] = run_trial(scenario, config, t);
        }
    };
    std::size_t threads = std::min(config.threads, config.trials);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t i = 0; i < threads; ++i) {
            pool.emplace_back(worker);
        }
    }

    std::vector<double> sigma2x;
    std::vector<double> xi;
    std::vector<double> solve;
    std::vector<double> detect;
    for (TrialResult const& t : result.trials) {
        if (!t.ok()) {
            continue;
        }
        sigma2x.push_back(t.sigma2x);
        if (t.xi) {
            xi.push_back(*t.xi);
        }
        solve.push_back(t.solve_ms);
        detect.push_back(t.detect_ms);
    }
    result.sigma2x = aggregate(sigma2x);
    result.xi = aggregate(xi);
    result.solve_ms = aggregate(solve);
    result.detect_ms = aggregate(detect);

    auto readings = trial_readings(scenario, config, 0, false);
    for (BadDataSpec const& spec : config.bad_data) {
        result.planted_reading_ids.push_back(readings[find_reading(readings, scenario.network, spec.selector)].id);
    }
    for (Bus const& bus : scenario.network.buses) {
        result.bus_ids.push_back(bus.id);
    }
    result.true_voltage = scenario.truth.voltage;
    auto first = std::find_if(result.trials.begin(), result.trials.end(), [](TrialResult const& t) { return t.ok(); });
    if (first != result.trials.end()) {
        auto first_readings = trial_readings(scenario, config, first->trial);
        MeasurementModel model = assemble(scenario.network, scenario.model, first_readings);
        result.row_count = model.rows.size();
        result.state_dim = model.state_dim();
        EstimationReport report = run(model, config.estimator);
        result.first_trial_voltage = voltages_from_state(report.state.layout, report.state.x);
    }
    return result;
}

void write_campaign_csv(std::ostream& out, CampaignResult const& result) {
    out << "trial,sigma2_x,xi,solve_ms,detect_ms,iterations,events\n";
    out << std::setprecision(10);
    for (TrialResult const& t : result.trials) {
        out << t.trial << ',';
        if (t.ok()) {
            out << t.sigma2x << ',';
            if (t.xi) {
                out << *t.xi;
            } else {
                out << "exact";
            }
            out << ',' << t.solve_ms << ',' << t.detect_ms << ',' << t.iterations << ',' << t.events.size() << '\n';
        } else {
            out << "nan,nan,nan,nan,0,0\n";
        }
    }
}

void write_state_errors(std::ostream& out, std::span<int const> bus_ids, std::span<Complex const> estimate,
                        std::span<Complex const> truth) {
    out << "# bus |dV_R| |dV_I|\n" << std::setprecision(10);
    for (std::size_t b = 0; b < bus_ids.size(); ++b) {
        Complex d = estimate[b] - truth[b];
        out << bus_ids[b] << ' ' << std::abs(d.real()) << ' ' << std::abs(d.imag()) << '\n';
    }
}

std::string report_to_json(EstimationReport const& report, MeasurementModel const& model, NetworkCase const& network,
                           std::optional<double> sigma2x, std::optional<double> xi) {
    using nlohmann::json;
    auto number = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    json doc;
    doc["converged"] = report.converged;
    doc["detection_possible"] = report.detection_possible;
    doc["iterations"] = report.iterations;
    doc["solve_ms"] = report.solve_ms;
    doc["detect_ms"] = report.detect_ms;
    json state = json::array();
    for (std::size_t b = 0; b < network.bus_count(); ++b) {
        Complex v = report.state.voltage(b);
        state.push_back({{"bus", network.buses[b].id},
                         {"v_r", v.real()},
                         {"v_i", v.imag()},
                         {"vm", std::abs(v)},
                         {"va_deg", std::arg(v) * 180.0 / std::numbers::pi}});
    }
    doc["state"] = std::move(state);
    json rows = json::array();
    for (std::size_t i = 0; i < model.rows.size(); ++i) {
        rows.push_back({{"row", i},
                        {"kind", to_string(model.rows[i].kind)},
                        {"z", report.z[i]},
                        {"variance", model.rows[i].variance},
                        {"residual", number(report.residuals[i])},
                        {"normalized_residual", number(report.normalized_residuals[i])},
                        {"sources", model.rows[i].sources}});
    }
    doc["rows"] = std::move(rows);
    json events = json::array();
    for (BadDataEvent const& e : report.events) {
        events.push_back({{"iteration", e.iteration},
                          {"row", e.row},
                          {"normalized_residual", e.normalized_residual},
                          {"original_z", e.original_z},
                          {"corrected_z", e.corrected_z},
                          {"removed", e.removed},
                          {"sources", e.sources}});
    }
    doc["events"] = std::move(events);
    if (sigma2x) {
        doc["sigma2_x"] = *sigma2x;
    }
    if (xi) {
        doc["xi"] = *xi;
    }
    return doc.dump(1);
}

}  // namespace linse
