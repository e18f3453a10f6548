#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fixtures.h"
#include "linse/harness.h"

using namespace linse;

namespace {

ScenarioConfig quick_config(std::string const& name, std::size_t trials) {
    ScenarioConfig config = load_scenario_config(fixtures::config(name));
    config.trials = trials;
    return config;
}

}  // namespace

TEST_CASE("sigma table") {
    SigmaTable s;
    CHECK(s.fraction(ReadingKind::v_real) == 0.0002);
    CHECK(s.fraction(ReadingKind::i_imag_flow) == 0.0002);
    CHECK(s.fraction(ReadingKind::v_mag) == 0.004);
    CHECK(s.fraction(ReadingKind::q_inj) == 0.01);
    CHECK(s.fraction(ReadingKind::p_flow) == 0.01);
    CHECK(s.sigma_for(ReadingKind::p_inj, 2.0) == doctest::Approx(0.02));
    CHECK(s.sigma_for(ReadingKind::p_inj, -2.0) == doctest::Approx(0.02));
    CHECK(s.sigma_for(ReadingKind::p_inj, 0.0) == doctest::Approx(0.01 * s.floor_base));
}

TEST_CASE("noise stays within the uniform range") {
    NetworkCase c = rotate_to_reference(load_case(fixtures::data("case14.m")));
    NetworkModel m(c);
    TruthTables t = true_measurement_values(c, m);
    auto placement = load_readings(fixtures::data("case14_hand.json").string(), c);
    std::mt19937_64 rng(4);
    auto readings = generate_readings(c, t, placement, SigmaTable{}, NoiseModel::uniform, rng);
    for (auto const& r : readings) {
        double truth = true_value(r, c, t);
        CHECK(std::abs(r.value - truth) <= r.sigma);
        if (r.kind == ReadingKind::v_real && r.bus == 1) {
            // true V = (1.06, 0) at the reference
            CHECK(r.value >= truth * (1.0 - 0.0002));
            CHECK(r.value <= truth * (1.0 + 0.0002));
        }
    }
    std::mt19937_64 rng0(4);
    auto exact = generate_readings(c, t, placement, SigmaTable{}, NoiseModel::none, rng0);
    for (auto const& r : exact) {
        CHECK(r.value == true_value(r, c, t));
        CHECK(r.sigma > 0.0);
    }
}

TEST_CASE("fixed seed reproduces readings") {
    ScenarioConfig config = quick_config("ieee14_clean.json", 3);
    Scenario s = prepare_scenario(config);
    auto a = trial_readings(s, config, 2);
    auto b = trial_readings(s, config, 2);
    auto other = trial_readings(s, config, 1);
    REQUIRE(a.size() == b.size());
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].value == b[i].value);
        differs = differs || a[i].value != other[i].value;
    }
    CHECK(differs);
}

TEST_CASE("bad data injection") {
    NetworkCase c = rotate_to_reference(load_case(fixtures::data("case14.m")));
    auto readings = load_readings(fixtures::data("case14_hand.json").string(), c);
    for (std::size_t i = 0; i < readings.size(); ++i) {
        readings[i].value = 1.0 + 0.01 * static_cast<double>(i);
        readings[i].sigma = 0.01;
    }
    SUBCASE("alteration scales only the selected reading") {
        BadDataSpec spec{{Device::pmu, ReadingKind::v_real, 1, std::nullopt, std::nullopt}, 0.3};
        auto out = inject_bad_data(readings, c, std::span<BadDataSpec const>(&spec, 1));
        std::size_t hit = find_reading(readings, c, spec.selector);
        for (std::size_t i = 0; i < out.size(); ++i) {
            CHECK(out[i].value == (i == hit ? readings[i].value * 1.3 : readings[i].value));
        }
    }
    SUBCASE("zero alteration is the identity") {
        BadDataSpec spec{{Device::rtu, ReadingKind::p_inj, 5, std::nullopt, std::nullopt}, 0.0};
        auto out = inject_bad_data(readings, c, std::span<BadDataSpec const>(&spec, 1));
        for (std::size_t i = 0; i < out.size(); ++i) {
            CHECK(out[i].value == readings[i].value);
        }
    }
    SUBCASE("flow selector uses the far bus") {
        ReadingSelector sel{Device::pmu, ReadingKind::i_real_flow, 6, 5, std::nullopt};
        std::size_t i = find_reading(readings, c, sel);
        CHECK(readings[i].bus == 6);
    }
    SUBCASE("ambiguous and empty selectors") {
        ReadingSelector ambiguous{Device::rtu, ReadingKind::p_flow, 7, std::nullopt, std::nullopt};
        CHECK_THROWS_AS(find_reading(readings, c, ambiguous), ConfigError);
        ReadingSelector none{Device::pmu, ReadingKind::v_real, 2, std::nullopt, std::nullopt};
        CHECK_THROWS_AS(find_reading(readings, c, none), ConfigError);
    }
}

TEST_CASE("performance indices") {
    std::vector<double> truth{1.0, 0.9, 0.1};
    CHECK(index_sigma2x(truth, truth) == 0.0);
    std::vector<double> off{1.0, 0.901, 0.1};
    CHECK(index_sigma2x(off, truth) == doctest::Approx(1e-6));
    std::vector<double> short_state{1.0};
    CHECK_THROWS(index_sigma2x(short_state, truth));

    NetworkCase c = rotate_to_reference(load_case(fixtures::data("case14.m")));
    NetworkModel m(c);
    TruthTables t = true_measurement_values(c, m);
    auto placement = load_readings(fixtures::data("case14_hand.json").string(), c);
    std::mt19937_64 rng(1);
    auto exact = generate_readings(c, t, placement, SigmaTable{}, NoiseModel::none, rng);
    CHECK_FALSE(index_xi(c, m, t.state, exact, t).has_value());

    // estimated values equal to the readings give xi = 1: use readings that
    // are exactly what a perturbed state predicts
    std::vector<double> x = t.state;
    x[3] += 1e-3;
    auto shifted = exact;
    for (auto& r : shifted) {
        r.value = estimated_value(r, c, m, x);
    }
    CHECK(index_xi(c, m, x, shifted, t).value() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("standard placement reproduces the requested counts") {
    for (char const* name : {"case14.m", "case57.m", "case118.m"}) {
        CAPTURE(name);
        NetworkCase c = rotate_to_reference(load_case(fixtures::data(name)));
        PlacementCounts want = *standard_counts(c.bus_count());
        PlacementCounts got = count_placement(standard_placement(c, want));
        CHECK(got.pmu_voltage == want.pmu_voltage);
        CHECK(got.pmu_current == want.pmu_current);
        CHECK(got.rtu_injection == want.rtu_injection);
        CHECK(got.rtu_flow == want.rtu_flow);
        CHECK(got.rtu_voltage >= want.rtu_voltage);
    }
}

TEST_CASE("config parsing") {
    SUBCASE("defaults") {
        ScenarioConfig c = parse_scenario_config(R"({"case": "x.m"})", "/base");
        CHECK(c.case_path == std::filesystem::path("/base/x.m"));
        CHECK(c.trials == 100);
        CHECK(c.noise == NoiseModel::uniform);
        CHECK(c.estimator.threshold == 3.0);
        CHECK(c.estimator.max_iterations == 50);
    }
    SUBCASE("bad data and estimator") {
        ScenarioConfig c = parse_scenario_config(
            R"({"case": "/abs.m", "noise": "gaussian", "trials": 7,
                "estimator": {"q": 4, "mode": "remove"},
                "bad_data": [{"kind": "P_flow", "bus": 7, "other_bus": 8, "alteration": 0.3}]})",
            "/base");
        CHECK(c.case_path == std::filesystem::path("/abs.m"));
        CHECK(c.noise == NoiseModel::gaussian);
        CHECK(c.trials == 7);
        CHECK(c.estimator.threshold == 4.0);
        CHECK(c.estimator.mode == BadDataMode::remove);
        REQUIRE(c.bad_data.size() == 1);
        CHECK(c.bad_data[0].selector.other_bus == 8);
    }
    SUBCASE("invalid") {
        CHECK_THROWS_AS(parse_scenario_config(R"({"case": "x.m", "trials": 0})", "."), ConfigError);
        CHECK_THROWS_AS(parse_scenario_config(R"({"case": "x.m", "noise": "pink"})", "."), ConfigError);
        CHECK_THROWS_AS(parse_scenario_config(R"({"case": "x.m", "sigmas": {"rtu_flow": -1}})", "."), ConfigError);
        CHECK_THROWS_AS(parse_scenario_config(R"({"trials": 3})", "."), ConfigError);
        CHECK_THROWS_AS(parse_scenario_config("{", "."), ConfigError);
    }
}

TEST_CASE("campaign aggregates and csv") {
    ScenarioConfig config = quick_config("ieee14_clean.json", 1);
    CampaignResult r = run_campaign(config);
    REQUIRE(r.trials.size() == 1);
    CHECK(r.sigma2x.count == 1);
    CHECK(r.row_count == 129);
    CHECK(r.state_dim == 27);
    std::ostringstream a;
    write_campaign_csv(a, r);
    std::ostringstream b;
    write_campaign_csv(b, run_campaign(config));
    std::string text = a.str();
    CHECK(text.rfind("trial,sigma2_x,xi,solve_ms,detect_ms,iterations,events\n", 0) == 0);
    auto fields_without_timing = [](std::string const& s) {
        std::string line = s.substr(s.find('\n') + 1);
        std::istringstream in(line);
        std::string trial, s2x, xi;
        std::getline(in, trial, ',');
        std::getline(in, s2x, ',');
        std::getline(in, xi, ',');
        return trial + s2x + xi;
    };
    CHECK(fields_without_timing(text) == fields_without_timing(b.str()));
}

TEST_CASE("parallel campaign equals serial campaign") {
    ScenarioConfig config = quick_config("ieee14_case2.json", 12);
    Scenario s = prepare_scenario(config);
    config.threads = 1;
    CampaignResult serial = run_campaign(s, config);
    config.threads = 4;
    CampaignResult parallel = run_campaign(s, config);
    REQUIRE(serial.trials.size() == parallel.trials.size());
    for (std::size_t i = 0; i < serial.trials.size(); ++i) {
        CHECK(serial.trials[i].sigma2x == parallel.trials[i].sigma2x);
        CHECK(serial.trials[i].xi == parallel.trials[i].xi);
        CHECK(serial.trials[i].events.size() == parallel.trials[i].events.size());
    }
    CHECK(serial.sigma2x.mean == parallel.sigma2x.mean);
}

TEST_CASE("trial failures are recorded and the campaign continues") {
    ScenarioConfig config = quick_config("ieee14_clean.json", 2);
    Scenario s = prepare_scenario(config);
    s.placement.resize(3);  // too few readings to observe the grid
    CampaignResult r = run_campaign(s, config);
    REQUIRE(r.trials.size() == 2);
    for (auto const& t : r.trials) {
        CHECK_FALSE(t.ok());
    }
    CHECK(r.sigma2x.count == 0);
}

TEST_CASE("clean trials beat the raw measurements") {
    for (char const* name : {"ieee14_clean.json", "ieee57_clean.json", "ieee118_clean.json"}) {
        CAPTURE(name);
        CampaignResult r = run_campaign(quick_config(name, 10));
        for (auto const& t : r.trials) {
            REQUIRE(t.ok());
            REQUIRE(t.xi.has_value());
            CHECK(*t.xi < 1.0);
        }
    }
}

TEST_CASE("state error file layout") {
    std::ostringstream out;
    std::vector<int> ids{4, 9};
    std::vector<Complex> est{{1.0, 0.1}, {0.9, -0.2}};
    std::vector<Complex> truth{{1.001, 0.1}, {0.9, -0.1995}};
    write_state_errors(out, ids, est, truth);
    std::istringstream in(out.str());
    std::string header;
    std::getline(in, header);
    int id = 0;
    double dr = 0.0;
    double di = 0.0;
    in >> id >> dr >> di;
    CHECK(id == 4);
    CHECK(dr == doctest::Approx(1e-3));
    CHECK(di == doctest::Approx(0.0));
}
