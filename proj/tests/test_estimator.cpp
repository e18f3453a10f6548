#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <thread>

#include "fixtures.h"
#include "linse/estimator.h"
#include "linse/harness.h"
#include "oracles.h"

using namespace linse;

namespace {

// One bus, one state (V_R of the reference bus), rows measuring it directly.
MeasurementModel scalar_model(std::vector<double> const& z, std::vector<double> const& sigma) {
    MeasurementModel model;
    model.layout = StateLayout(1, 0);
    model.reference_bus = 1;
    for (std::size_t i = 0; i < z.size(); ++i) {
        MeasurementRow row;
        row.id = i;
        row.kind = RowKind::pmu_v_real;
        row.z = z[i];
        row.variance = sigma[i] * sigma[i];
        row.coeffs.add(0, 1.0);
        row.sources = {static_cast<int>(i)};
        model.rows.push_back(row);
    }
    return model;
}

struct Assembled {
    NetworkCase network;
    NetworkModel net_model;
    TruthTables truth;
    std::vector<RawReading> readings;
    MeasurementModel model;
};

Assembled assembled(std::string const& name, NoiseModel noise, std::uint64_t seed = 21) {
    NetworkCase c = rotate_to_reference(load_case(fixtures::data(name)));
    NetworkModel m(c);
    TruthTables t = true_measurement_values(c, m);
    std::vector<RawReading> placement;
    if (name == "case14.m") {
        placement = load_readings(fixtures::data("case14_hand.json").string(), c);
    } else {
        placement = standard_placement(c, *standard_counts(c.bus_count()));
    }
    std::mt19937_64 rng(seed);
    auto readings = generate_readings(c, t, placement, SigmaTable{}, noise, rng);
    MeasurementModel model = assemble(c, m, readings);
    return {std::move(c), std::move(m), std::move(t), std::move(readings), std::move(model)};
}

}  // namespace

TEST_CASE("identity system returns the measurements") {
    MeasurementModel model;
    model.layout = StateLayout(2, 0);  // V_R1, V_R2, V_I2
    std::vector<double> z{1.02, 0.97, -0.04};
    for (std::size_t i = 0; i < 3; ++i) {
        MeasurementRow row;
        row.id = i;
        row.z = z[i];
        row.variance = 1.0;
        row.coeffs.add(i, 1.0);
        row.sources = {static_cast<int>(i)};
        model.rows.push_back(row);
    }
    StateVector x = solve_wls(model);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(x.x[i] == doctest::Approx(z[i]).epsilon(1e-15));
    }
    // every row is critical
    for (double o : residual_covariance_diag(model)) {
        CHECK(o == doctest::Approx(0.0));
    }
}

TEST_CASE("two readings of one state") {
    MeasurementModel model = scalar_model({1.3, 1.0}, {0.1, 0.1});
    StateVector x = solve_wls(model);
    CHECK(std::abs(x.x[0] - 1.15) <= 1e-12);
    auto omega = residual_covariance_diag(model);
    CHECK(std::abs(omega[0] - 0.005) <= 1e-12);
    CHECK(std::abs(omega[1] - 0.005) <= 1e-12);

    LnrOutcome clean = lnr_step(model, x);
    CHECK(clean.status == LnrStatus::clean);
    CHECK_FALSE(clean.event.has_value());
    CHECK(std::abs(clean.normalized_residuals[0] - 0.15 / std::sqrt(0.005)) <= 1e-12);
}

TEST_CASE("gross error on one of two readings") {
    MeasurementModel model = scalar_model({2.0, 1.0}, {0.1, 0.1});
    StateVector x = solve_wls(model);
    LnrOutcome out = lnr_step(model, x);
    REQUIRE(out.status == LnrStatus::bad_data);
    REQUIRE(out.event.has_value());
    // equal residuals: the tie goes to the lower row
    CHECK(out.event->row == 0);
    CHECK(std::abs(out.event->normalized_residual - 0.5 / std::sqrt(0.005)) <= 1e-12);
    CHECK(std::abs(out.event->corrected_z - 1.0) <= 1e-12);
    CHECK(out.event->sources == std::vector<int>{0});
}

TEST_CASE("single reading is critical and undetectable") {
    MeasurementModel model = scalar_model({1.0}, {0.1});
    CHECK(residual_covariance_diag(model)[0] == 0.0);
    EstimationReport report = run(model);
    CHECK_FALSE(report.detection_possible);
    CHECK(report.events.empty());
    CHECK(std::isnan(report.normalized_residuals[0]));
}

TEST_CASE("all residuals zero gives no event") {
    MeasurementModel model = scalar_model({1.0, 1.0, 1.0}, {0.1, 0.2, 0.1});
    EstimationReport report = run(model);
    CHECK(report.events.empty());
    CHECK(report.iterations == 1);
    CHECK(report.converged);
}

TEST_CASE("threshold is strict and configurable") {
    MeasurementModel model = scalar_model({1.3, 1.0}, {0.1, 0.1});
    EstimatorOptions options;
    options.threshold = 2.0;
    EstimationReport report = run(model, options);
    REQUIRE_FALSE(report.events.empty());
    CHECK(report.events.front().normalized_residual == doctest::Approx(0.15 / std::sqrt(0.005)));
    options.threshold = 0.15 / std::sqrt(0.005) + 1e-9;
    CHECK(run(model, options).events.empty());
}

TEST_CASE("correction loop on a small redundant set") {
    // three readings of one state, one gross error
    MeasurementModel model = scalar_model({1.0, 1.6, 1.01}, {0.01, 0.01, 0.01});
    EstimationReport report = run(model);
    REQUIRE_FALSE(report.events.empty());
    CHECK(report.events.front().row == 1);
    CHECK(report.events.front().iteration == 1);
    // corrected value moves strictly toward the clean readings
    CHECK(std::abs(report.events.front().corrected_z - 1.005) < std::abs(1.6 - 1.005));
    CHECK(report.converged);
    CHECK(std::abs(report.state.x[0] - 1.005) < 0.01);
}

TEST_CASE("removal mode drops the flagged row") {
    MeasurementModel model = scalar_model({1.0, 1.6, 1.01, 0.99}, {0.01, 0.01, 0.01, 0.01});
    EstimatorOptions options;
    options.mode = BadDataMode::remove;
    EstimationReport report = run(model, options);
    REQUIRE(report.events.size() == 1);
    CHECK(report.events[0].removed);
    CHECK(report.events[0].row == 1);
    CHECK(report.state.x[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::isnan(report.normalized_residuals[1]));
}

TEST_CASE("iteration cap flags non-convergence") {
    MeasurementModel model = scalar_model({1.0, 1.6, 1.01, 2.5}, {0.01, 0.01, 0.01, 0.01});
    EstimatorOptions options;
    options.max_iterations = 1;
    EstimationReport report = run(model, options);
    CHECK(report.iterations == 1);
    CHECK(report.events.size() == 1);
    CHECK_FALSE(report.converged);
}

TEST_CASE("unobservable set reports the pivot") {
    MeasurementModel model;
    model.layout = StateLayout(2, 0);
    MeasurementRow row;
    row.z = 1.0;
    row.variance = 1e-4;
    row.coeffs.add(0, 1.0);
    row.sources = {0};
    model.rows.push_back(row);
    row.id = 1;
    row.coeffs = LinearForm{};
    row.coeffs.add(1, 1.0);
    row.coeffs.add(2, 1.0);
    row.sources = {1};
    model.rows.push_back(row);
    try {
        solve_wls(model);
        FAIL("expected UnobservableError");
    } catch (UnobservableError const& e) {
        CHECK(e.state_index() >= 1);
        CHECK(e.state_index() <= 2);
    }
}

TEST_CASE("non-finite input is rejected") {
    MeasurementModel model = scalar_model({1.0, std::numeric_limits<double>::quiet_NaN()}, {0.1, 0.1});
    CHECK_THROWS_AS(solve_wls(model), EstimatorInputError);
}

TEST_CASE("zero-noise readings recover the truth") {
    for (char const* name : {"case14.m", "case57.m", "case118.m"}) {
        CAPTURE(name);
        auto a = assembled(name, NoiseModel::none);
        StateVector x = solve_wls(a.model);
        double worst = 0.0;
        for (std::size_t i = 0; i < x.x.size(); ++i) {
            worst = std::max(worst, std::abs(x.x[i] - a.truth.state[i]));
        }
        CHECK(worst <= 1e-8);
    }
}

TEST_CASE("solution matches the dense normal equations and satisfies optimality") {
    for (char const* name : {"case14.m", "case57.m", "case118.m"}) {
        CAPTURE(name);
        auto a = assembled(name, NoiseModel::uniform);
        oracle::DenseSystem d = oracle::dense(a.model);
        Eigen::VectorXd x_oracle = oracle::dense_wls(d);
        for (SolverKind kind : {SolverKind::normal_equations, SolverKind::orthogonal}) {
            StateVector x = solve_wls(a.model, kind);
            Eigen::Map<Eigen::VectorXd const> xv(x.x.data(), static_cast<Eigen::Index>(x.x.size()));
            CHECK((xv - x_oracle).cwiseAbs().maxCoeff() <= 1e-9);
            // H^T R^-1 (z - H x) = 0
            Eigen::VectorXd r = d.z - d.h * xv;
            Eigen::VectorXd grad = d.h.transpose() * d.r.cwiseInverse().asDiagonal() * r;
            Eigen::VectorXd rhs = d.h.transpose() * d.r.cwiseInverse().asDiagonal() * d.z;
            CHECK(grad.cwiseAbs().maxCoeff() <= 1e-8 * std::max(1.0, rhs.cwiseAbs().maxCoeff()));
        }
    }
}

TEST_CASE("residual covariance matches the dense oracle") {
    for (char const* name : {"case14.m", "case57.m", "case118.m"}) {
        CAPTURE(name);
        auto a = assembled(name, NoiseModel::uniform);
        oracle::DenseSystem d = oracle::dense(a.model);
        Eigen::VectorXd expected = oracle::dense_omega(d);
        for (SolverKind kind : {SolverKind::normal_equations, SolverKind::orthogonal}) {
            auto omega = residual_covariance_diag(a.model, kind);
            double worst_abs = 0.0;
            double worst_rel = 0.0;
            for (std::size_t i = 0; i < omega.size(); ++i) {
                double e = std::max(0.0, expected(static_cast<Eigen::Index>(i)));
                double diff = std::abs(omega[i] - e);
                worst_abs = std::max(worst_abs, diff);
                worst_rel = std::max(worst_rel, diff / a.model.rows[i].variance);
                CHECK(omega[i] <= a.model.rows[i].variance * (1.0 + 1e-12));
                CHECK(omega[i] >= 0.0);
            }
            CHECK(worst_abs <= 1e-9);
            CHECK(worst_rel <= 1e-6);
        }
    }
}

TEST_CASE("solver shared across threads gives identical results") {
    auto a = assembled("case57.m", NoiseModel::uniform);
    WlsSolver solver(a.model);
    std::vector<double> z;
    for (auto const& row : a.model.rows) {
        z.push_back(row.z);
    }
    StateVector serial = solver.solve(z);
    std::vector<StateVector> results(4);
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < results.size(); ++t) {
            pool.emplace_back([&, t] { results[t] = solver.solve(z); });
        }
    }
    for (auto const& r : results) {
        CHECK(r.x == serial.x);
    }
}

TEST_CASE("estimation is deterministic") {
    auto a = assembled("case118.m", NoiseModel::uniform);
    EstimationReport r1 = run(a.model);
    EstimationReport r2 = run(a.model);
    CHECK(r1.state.x == r2.state.x);
    CHECK(r1.residuals == r2.residuals);
    CHECK(r1.events.size() == r2.events.size());
}

TEST_CASE("a planted gross PMU error is flagged first") {
    auto a = assembled("case14.m", NoiseModel::uniform);
    std::size_t target = 0;  // PMU V_R at bus 1 is the first row
    REQUIRE(a.model.rows[target].kind == RowKind::pmu_v_real);
    MeasurementModel bad = a.model;
    double clean_z = bad.rows[target].z;
    bad.rows[target].z *= 1.3;
    EstimationReport report = run(bad);
    REQUIRE_FALSE(report.events.empty());
    CHECK(report.events.front().row == target);
    CHECK(std::abs(report.events.front().corrected_z - clean_z) < std::abs(bad.rows[target].z - clean_z));
}
