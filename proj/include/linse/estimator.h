#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "linse/measurement.h"
#include "linse/network.h"

namespace linse {

/// The gain matrix is singular: the measurement set does not observe the
/// state entry `state_index` (first zero pivot in elimination order).
class UnobservableError : public std::runtime_error {
  public:
    UnobservableError(std::string const& what, std::size_t state_index)
        : std::runtime_error(what), state_index_(state_index) {}
    std::size_t state_index() const noexcept { return state_index_; }

  private:
    std::size_t state_index_;
};

class EstimatorInputError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Rectangular bus voltages; the reference imaginary part is fixed at 0.
struct StateVector {
    StateLayout layout;
    std::vector<double> x;

    double v_real(std::size_t bus) const { return x[layout.real_index(bus)]; }
    double v_imag(std::size_t bus) const;
    Complex voltage(std::size_t bus) const { return {v_real(bus), v_imag(bus)}; }
};

enum class SolverKind { normal_equations, orthogonal };
enum class BadDataMode { correct, remove };

struct EstimatorOptions {
    double threshold = 3.0;
    BadDataMode mode = BadDataMode::correct;
    std::size_t max_iterations = 50;
    SolverKind solver = SolverKind::normal_equations;
    // Rows with Omega_ii below this fraction of R_ii are treated as critical.
    double criticality_floor = 1e-10;
};

struct BadDataEvent {
    std::size_t iteration = 0;
    std::size_t row = 0;
    double normalized_residual = 0.0;
    double original_z = 0.0;
    double corrected_z = 0.0;
    bool removed = false;
    std::vector<int> sources;
};

struct EstimationReport {
    StateVector state;
    std::vector<double> z;  // final measurement vector after corrections
    std::vector<double> residuals;
    std::vector<double> normalized_residuals;  // NaN for critical or removed rows
    std::vector<BadDataEvent> events;
    std::size_t iterations = 0;
    bool converged = true;
    bool detection_possible = true;
    double solve_ms = 0.0;
    double detect_ms = 0.0;
};

/// Factorized linear WLS problem for a fixed H and R.
///
/// Corrections only touch z, so one factorization serves every LNR
/// iteration. Safe to share between threads once constructed.
class WlsSolver {
  public:
    explicit WlsSolver(MeasurementModel const& model, SolverKind kind = SolverKind::normal_equations);
    /// Solver over a subset of rows (used by removal mode).
    WlsSolver(MeasurementModel const& model, std::span<bool const> active,
              SolverKind kind = SolverKind::normal_equations);
    ~WlsSolver();
    WlsSolver(WlsSolver&&) noexcept;
    WlsSolver& operator=(WlsSolver&&) noexcept;

    std::size_t state_dim() const;
    std::size_t row_count() const;

    /// x = G^-1 H^T R^-1 z for the full-length z (inactive rows ignored).
    StateVector solve(std::span<double const> z) const;
    /// Omega_ii = R_ii - h_i^T G^-1 h_i for every row, clamped at 0.
    /// Inactive rows get NaN.
    std::vector<double> residual_covariance_diag() const;
    /// h_i^T x for every row.
    std::vector<double> predict(std::span<double const> x) const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

StateVector solve_wls(MeasurementModel const& model, SolverKind kind = SolverKind::normal_equations);
std::vector<double> residual_covariance_diag(MeasurementModel const& model,
                                             SolverKind kind = SolverKind::normal_equations);

enum class LnrStatus { clean, bad_data, undetectable };

struct LnrOutcome {
    LnrStatus status = LnrStatus::clean;
    std::optional<BadDataEvent> event;
    std::vector<double> normalized_residuals;
};

/// Largest-normalized-residual test over rows that are active and not
/// critical. Ties on the maximum go to the lowest row id. On detection the
/// event carries the corrected value z - (R_ii / Omega_ii) r_i.
LnrOutcome lnr_step(std::span<double const> z, std::span<double const> variance, std::span<double const> residuals,
                    std::span<double const> omega, EstimatorOptions const& options,
                    std::span<bool const> active = {});

/// Convenience overload: residuals and Omega computed from `model` at `state`.
LnrOutcome lnr_step(MeasurementModel const& model, StateVector const& state,
                    EstimatorOptions const& options = {});

/// Solve, test, correct (or remove) until clean or `max_iterations` solves.
/// Throws UnobservableError for singular gain matrices.
EstimationReport run(MeasurementModel const& model, EstimatorOptions const& options = {});

}  // namespace linse
