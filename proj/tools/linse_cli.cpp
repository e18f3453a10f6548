#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "linse/harness.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUnobservable = 2;
constexpr int kExitNotConverged = 3;
constexpr int kExitInput = 4;

struct EstimateArgs {
    std::string case_path;
    std::string measurements;
    double q = 3.0;
    std::string mode = "correct";
    std::string solver = "normal";
    std::size_t max_iterations = 50;
    std::string out;
    std::string state_errors;
};

struct CampaignArgs {
    std::string config;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> trials;
    std::optional<std::string> noise;
    std::optional<std::size_t> threads;
};

struct MakeArgs {
    std::string case_path;
    std::string recipe = "standard";
    std::uint64_t seed = 1;
    std::string noise = "uniform";
    std::string out;
};

void write_file(std::filesystem::path const& path, std::string const& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw linse::ConfigError("cannot write " + path.string());
    }
    out << text;
}

int cmd_estimate(EstimateArgs const& a) {
    using namespace linse;
    NetworkCase network = rotate_to_reference(load_case(a.case_path));
    NetworkModel net_model(network);
    auto readings = load_readings(a.measurements, network);
    MeasurementModel model = assemble(network, net_model, readings);

    EstimatorOptions options;
    options.threshold = a.q;
    options.mode = a.mode == "remove" ? BadDataMode::remove : BadDataMode::correct;
    options.solver = a.solver == "orthogonal" ? SolverKind::orthogonal : SolverKind::normal_equations;
    options.max_iterations = a.max_iterations;
    EstimationReport report = run(model, options);

    // The case file carries a voltage profile; treat it as truth for the indices.
    TruthTables truth = true_measurement_values(network, net_model);
    double s2x = index_sigma2x(report.state.x, truth.state);
    auto xi = index_xi(network, net_model, report.state.x, readings, truth);
    std::string json = report_to_json(report, model, network, s2x, xi);
    if (a.out.empty()) {
        std::cout << json << '\n';
    } else {
        write_file(a.out, json + "\n");
    }
    if (!a.state_errors.empty()) {
        std::ofstream out(a.state_errors);
        std::vector<int> ids;
        for (Bus const& b : network.buses) {
            ids.push_back(b.id);
        }
        write_state_errors(out, ids, voltages_from_state(report.state.layout, report.state.x), truth.voltage);
    }
    std::cerr << model.rows.size() << " rows, " << model.state_dim() << " states, " << report.events.size()
              << " bad-data events, " << report.iterations << " solves\n";
    return report.converged ? kExitOk : kExitNotConverged;
}

int cmd_campaign(CampaignArgs const& a) {
    using namespace linse;
    ScenarioConfig config = load_scenario_config(a.config);
    if (a.seed) {
        config.seed = *a.seed;
    }
    if (a.trials) {
        if (*a.trials < 1) {
            throw ConfigError("trials must be at least 1");
        }
        config.trials = *a.trials;
    }
    if (a.noise) {
        config.noise = parse_noise_model(*a.noise);
    }
    if (a.threads) {
        config.threads = std::max<std::size_t>(1, *a.threads);
    }
    CampaignResult result = run_campaign(config);

    std::filesystem::path dir(a.out_dir);
    std::filesystem::create_directories(dir);
    {
        std::ofstream csv(dir / "campaign.csv");
        write_campaign_csv(csv, result);
    }
    if (!result.first_trial_voltage.empty()) {
        std::ofstream dat(dir / "state_errors.dat");
        write_state_errors(dat, result.bus_ids, result.first_trial_voltage, result.true_voltage);
    }

    std::size_t failed = 0;
    std::size_t not_converged = 0;
    std::size_t events = 0;
    nlohmann::json errors = nlohmann::json::array();
    for (TrialResult const& t : result.trials) {
        if (!t.ok()) {
            ++failed;
            errors.push_back({{"trial", t.trial}, {"error", t.error}});
        } else if (!t.converged) {
            ++not_converged;
        }
        events += t.events.size();
    }
    auto agg = [](Aggregate const& g) { return nlohmann::json{{"count", g.count}, {"mean", g.mean}, {"stddev", g.stddev}}; };
    nlohmann::json summary{{"trials", result.trials.size()},
                           {"failed", failed},
                           {"not_converged", not_converged},
                           {"rows", result.row_count},
                           {"states", result.state_dim},
                           {"events", events},
                           {"planted_reading_ids", result.planted_reading_ids},
                           {"sigma2_x", agg(result.sigma2x)},
                           {"xi", agg(result.xi)},
                           {"solve_ms", agg(result.solve_ms)},
                           {"detect_ms", agg(result.detect_ms)},
                           {"errors", errors}};
    write_file(dir / "summary.json", summary.dump(1) + "\n");

    std::printf("trials %zu  failed %zu  rows %zu  states %zu\n", result.trials.size(), failed, result.row_count,
                result.state_dim);
    std::printf("sigma2_x mean %.4e  sd %.4e\n", result.sigma2x.mean, result.sigma2x.stddev);
    std::printf("xi       mean %.4f  sd %.4f\n", result.xi.mean, result.xi.stddev);
    std::printf("solve    mean %.3f ms  detect mean %.3f ms\n", result.solve_ms.mean, result.detect_ms.mean);
    if (failed == result.trials.size()) {
        return kExitInput;
    }
    return not_converged > 0 ? kExitNotConverged : kExitOk;
}

int cmd_make(MakeArgs const& a) {
    using namespace linse;
    if (a.recipe != "standard") {
        throw ConfigError("unknown recipe '" + a.recipe + "'");
    }
    ScenarioConfig config;
    config.case_path = a.case_path;
    config.seed = a.seed;
    config.noise = parse_noise_model(a.noise);
    Scenario scenario = prepare_scenario(config);
    auto readings = trial_readings(scenario, config, 0, false);
    write_file(a.out, readings_to_json(readings, scenario.network) + "\n");
    PlacementCounts c = count_placement(readings);
    std::fprintf(stderr, "PMU V %zu, PMU I %zu, RTU V %zu, RTU inj %zu, RTU flow %zu\n", c.pmu_voltage,
                 c.pmu_current, c.rtu_voltage, c.rtu_injection, c.rtu_flow);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Linear PMU/RTU state estimator"};
    app.require_subcommand(1);

    EstimateArgs est;
    auto* estimate = app.add_subcommand("estimate", "Estimate the state from one measurement set");
    estimate->add_option("--case", est.case_path, "MATPOWER .m or JSON case")->required();
    estimate->add_option("--measurements", est.measurements, "Measurement-set JSON")->required();
    estimate->add_option("--q", est.q, "LNR threshold")->check(CLI::PositiveNumber);
    estimate->add_option("--mode", est.mode)->check(CLI::IsMember({"correct", "remove"}));
    estimate->add_option("--solver", est.solver)->check(CLI::IsMember({"normal", "orthogonal"}));
    estimate->add_option("--max-iterations", est.max_iterations)->check(CLI::PositiveNumber);
    estimate->add_option("--out", est.out, "Report JSON (stdout when omitted)");
    estimate->add_option("--state-errors", est.state_errors, "Per-bus |dV_R| |dV_I| against the case profile");

    CampaignArgs camp;
    auto* campaign = app.add_subcommand("campaign", "Run a Monte Carlo campaign");
    campaign->add_option("--config", camp.config)->required();
    campaign->add_option("--out-dir", camp.out_dir)->required();
    campaign->add_option("--seed", camp.seed);
    campaign->add_option("--trials", camp.trials);
    campaign->add_option("--noise", camp.noise)->check(CLI::IsMember({"uniform", "gaussian", "none"}));
    campaign->add_option("--threads", camp.threads);

    MakeArgs make;
    auto* make_cmd = app.add_subcommand("make-measurements", "Write a noisy measurement set for a case");
    make_cmd->add_option("--case", make.case_path)->required();
    make_cmd->add_option("--recipe", make.recipe)->check(CLI::IsMember({"standard"}));
    make_cmd->add_option("--seed", make.seed);
    make_cmd->add_option("--noise", make.noise)->check(CLI::IsMember({"uniform", "gaussian", "none"}));
    make_cmd->add_option("--out", make.out)->required();

    try {
        app.parse(argc, argv);
    } catch (CLI::ParseError const& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (*estimate) {
            return cmd_estimate(est);
        }
        if (*campaign) {
            return cmd_campaign(camp);
        }
        return cmd_make(make);
    } catch (linse::UnobservableError const& e) {
        std::cerr << "unobservable: " << e.what() << '\n';
        return kExitUnobservable;
    } catch (std::exception const& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    }
}
