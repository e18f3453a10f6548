#include "linse/estimator.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <Eigen/SparseQR>

namespace linse {

namespace {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
using Clock = std::chrono::steady_clock;

// D_j below this fraction of the matching diagonal entry of G marks a
// direction the measurements do not see.
constexpr double kPivotFloor = 1e-11;
constexpr double kRefineTolerance = 1e-10;
constexpr int kMaxRefineSteps = 3;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

double inf_norm(Eigen::VectorXd const& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

}  // namespace

double StateVector::v_imag(std::size_t bus) const {
    auto vi = layout.imag_index(bus);
    return vi ? x[*vi] : 0.0;
}

struct WlsSolver::Impl {
    SolverKind kind = SolverKind::normal_equations;
    StateLayout layout;
    std::size_t n = 0;
    std::size_t m = 0;
    std::vector<bool> active;
    Eigen::VectorXd variance;
    Eigen::VectorXd weight;
    SparseMatrix h;
    Eigen::SparseMatrix<double, Eigen::RowMajor, int> h_rows;
    SparseMatrix gain;

    // normal equations
    Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt;
    std::vector<int> to_permuted;  // original state index -> elimination position
    std::vector<int> etree_parent;
    Eigen::VectorXd pivots;

    // orthogonal
    Eigen::SparseQR<SparseMatrix, Eigen::COLAMDOrdering<int>> qr;
    SparseMatrix r_factor;

    void build(MeasurementModel const& model, std::span<bool const> mask) {
        layout = model.layout;
        n = model.state_dim();
        m = model.rows.size();
        active.assign(m, true);
        if (!mask.empty()) {
            if (mask.size() != m) {
                throw EstimatorInputError("active mask length does not match the row count");
            }
            std::copy(mask.begin(), mask.end(), active.begin());
        }
        variance.resize(static_cast<Eigen::Index>(m));
        weight.resize(static_cast<Eigen::Index>(m));
        std::vector<Eigen::Triplet<double>> triplets;
        for (std::size_t i = 0; i < m; ++i) {
            MeasurementRow const& row = model.rows[i];
            if (!(row.variance > 0.0) || !std::isfinite(row.variance) || !std::isfinite(row.z)) {
                throw EstimatorInputError("row " + std::to_string(i) + " has a non-finite value or nonpositive variance");
            }
            if (row.coeffs.empty()) {
                throw EstimatorInputError("row " + std::to_string(i) + " has no coefficients");
            }
            variance[static_cast<Eigen::Index>(i)] = row.variance;
            weight[static_cast<Eigen::Index>(i)] = active[i] ? 1.0 / row.variance : 0.0;
            for (auto const& t : row.coeffs.terms()) {
                if (t.index >= n || !std::isfinite(t.coeff)) {
                    throw EstimatorInputError("row " + std::to_string(i) + " has an invalid coefficient");
                }
                triplets.emplace_back(static_cast<int>(i), static_cast<int>(t.index), t.coeff);
            }
        }
        h.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
        h.setFromTriplets(triplets.begin(), triplets.end());
        h_rows = h;

        if (kind == SolverKind::normal_equations) {
            factorize_normal();
        } else {
            factorize_orthogonal();
        }
    }

    [[noreturn]] void unobservable(std::size_t state_index) const {
        throw UnobservableError("measurement set does not observe state entry " + std::to_string(state_index) +
                                    " (zero pivot in the gain matrix)",
                                state_index);
    }

    void factorize_normal() {
        SparseMatrix weighted = weight.asDiagonal() * h;
        gain = SparseMatrix(h.transpose()) * weighted;
        gain.makeCompressed();
        ldlt.compute(gain);

        auto const& perm = ldlt.permutationP();
        to_permuted.assign(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            to_permuted[i] = perm.indices()[static_cast<Eigen::Index>(i)];
        }
        pivots = ldlt.vectorD();
        std::vector<std::size_t> from_permuted(n);
        for (std::size_t i = 0; i < n; ++i) {
            from_permuted[static_cast<std::size_t>(to_permuted[i])] = i;
        }
        for (std::size_t j = 0; j < n; ++j) {
            std::size_t original = from_permuted[j];
            double diag = gain.coeff(static_cast<Eigen::Index>(original), static_cast<Eigen::Index>(original));
            double d = pivots[static_cast<Eigen::Index>(j)];
            if (!(diag > 0.0) || !(d > kPivotFloor * diag) || !std::isfinite(d)) {
                unobservable(original);
            }
        }
        if (ldlt.info() != Eigen::Success) {
            unobservable(from_permuted.empty() ? 0 : from_permuted.front());
        }

        SparseMatrix const& lower = ldlt.matrixL().nestedExpression();
        etree_parent.assign(n, static_cast<int>(n));
        for (int j = 0; j < lower.outerSize(); ++j) {
            int parent = static_cast<int>(n);
            for (SparseMatrix::InnerIterator it(lower, j); it; ++it) {
                if (it.row() > j) {
                    parent = std::min(parent, static_cast<int>(it.row()));
                }
            }
            etree_parent[static_cast<std::size_t>(j)] = parent;
        }
    }

    void factorize_orthogonal() {
        Eigen::VectorXd root_weight = weight.cwiseSqrt();
        SparseMatrix scaled = root_weight.asDiagonal() * h;
        scaled.makeCompressed();
        qr.compute(scaled);
        if (qr.info() != Eigen::Success || static_cast<std::size_t>(qr.rank()) < n) {
            std::size_t position = qr.info() == Eigen::Success ? static_cast<std::size_t>(qr.rank()) : 0;
            Eigen::VectorXd unit = Eigen::VectorXd::Unit(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(position));
            Eigen::VectorXd original = qr.colsPermutation() * unit;
            Eigen::Index where = 0;
            original.cwiseAbs().maxCoeff(&where);
            unobservable(static_cast<std::size_t>(where));
        }
        r_factor = qr.matrixR().topLeftCorner(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        r_factor.makeCompressed();
    }

    Eigen::VectorXd solve_normal(Eigen::VectorXd const& rhs) const {
        Eigen::VectorXd x = ldlt.solve(rhs);
        double scale = inf_norm(rhs);
        for (int step = 0; step < kMaxRefineSteps; ++step) {
            Eigen::VectorXd defect = rhs - gain * x;
            if (inf_norm(defect) <= kRefineTolerance * scale) {
                break;
            }
            x += ldlt.solve(defect);
        }
        return x;
    }

    // h^T G^-1 h through the unit lower factor: the forward solve touches only
    // the elimination-tree ancestors of h's nonzeros.
    double quadratic_form_normal(Eigen::Index row, std::vector<double>& work, std::vector<char>& mark,
                                 std::vector<int>& reach) const {
        SparseMatrix const& lower = ldlt.matrixL().nestedExpression();
        reach.clear();
        for (decltype(h_rows)::InnerIterator it(h_rows, row); it; ++it) {
            int j = to_permuted[static_cast<std::size_t>(it.col())];
            work[static_cast<std::size_t>(j)] += it.value();
            while (j < static_cast<int>(n) && !mark[static_cast<std::size_t>(j)]) {
                mark[static_cast<std::size_t>(j)] = 1;
                reach.push_back(j);
                j = etree_parent[static_cast<std::size_t>(j)];
            }
        }
        std::sort(reach.begin(), reach.end());
        double sum = 0.0;
        for (int j : reach) {
            double wj = work[static_cast<std::size_t>(j)];
            if (wj != 0.0) {
                for (SparseMatrix::InnerIterator it(lower, j); it; ++it) {
                    if (it.row() > j) {
                        work[static_cast<std::size_t>(it.row())] -= it.value() * wj;
                    }
                }
                sum += wj * wj / pivots[j];
            }
        }
        for (int j : reach) {
            work[static_cast<std::size_t>(j)] = 0.0;
            mark[static_cast<std::size_t>(j)] = 0;
        }
        return sum;
    }

    double quadratic_form_orthogonal(Eigen::Index row) const {
        Eigen::VectorXd hv = Eigen::VectorXd(h_rows.row(row).transpose());
        Eigen::VectorXd permuted = qr.colsPermutation().transpose() * hv;
        Eigen::VectorXd u = r_factor.transpose().triangularView<Eigen::Lower>().solve(permuted);
        return u.squaredNorm();
    }
};

WlsSolver::WlsSolver(MeasurementModel const& model, SolverKind kind) : WlsSolver(model, {}, kind) {}

WlsSolver::WlsSolver(MeasurementModel const& model, std::span<bool const> active, SolverKind kind)
    : impl_(std::make_unique<Impl>()) {
    impl_->kind = kind;
    impl_->build(model, active);
}

WlsSolver::~WlsSolver() = default;
WlsSolver::WlsSolver(WlsSolver&&) noexcept = default;
WlsSolver& WlsSolver::operator=(WlsSolver&&) noexcept = default;

std::size_t WlsSolver::state_dim() const { return impl_->n; }
std::size_t WlsSolver::row_count() const { return impl_->m; }

StateVector WlsSolver::solve(std::span<double const> z) const {
    Impl const& s = *impl_;
    if (z.size() != s.m) {
        throw EstimatorInputError("measurement vector length does not match the model");
    }
    Eigen::Map<Eigen::VectorXd const> zv(z.data(), static_cast<Eigen::Index>(z.size()));
    if (!zv.allFinite()) {
        throw EstimatorInputError("non-finite measurement value");
    }
    Eigen::VectorXd x;
    if (s.kind == SolverKind::normal_equations) {
        Eigen::VectorXd rhs = s.h.transpose() * s.weight.cwiseProduct(zv);
        x = s.solve_normal(rhs);
    } else {
        Eigen::VectorXd scaled = s.weight.cwiseSqrt().cwiseProduct(zv);
        x = s.qr.solve(scaled);
    }
    return {s.layout, std::vector<double>(x.data(), x.data() + x.size())};
}

std::vector<double> WlsSolver::predict(std::span<double const> x) const {
    Impl const& s = *impl_;
    Eigen::Map<Eigen::VectorXd const> xv(x.data(), static_cast<Eigen::Index>(x.size()));
    Eigen::VectorXd hx = s.h_rows * xv;
    return {hx.data(), hx.data() + hx.size()};
}

std::vector<double> WlsSolver::residual_covariance_diag() const {
    Impl const& s = *impl_;
    std::vector<double> omega(s.m, std::numeric_limits<double>::quiet_NaN());
    std::vector<double> work(s.n, 0.0);
    std::vector<char> mark(s.n, 0);
    std::vector<int> reach;
    for (std::size_t i = 0; i < s.m; ++i) {
        if (!s.active[i]) {
            continue;
        }
        auto row = static_cast<Eigen::Index>(i);
        double projected = s.kind == SolverKind::normal_equations ? s.quadratic_form_normal(row, work, mark, reach)
                                                                  : s.quadratic_form_orthogonal(row);
        omega[i] = std::max(0.0, s.variance[row] - projected);
    }
    return omega;
}

StateVector solve_wls(MeasurementModel const& model, SolverKind kind) {
    std::vector<double> z;
    z.reserve(model.rows.size());
    for (auto const& row : model.rows) {
        z.push_back(row.z);
    }
    return WlsSolver(model, kind).solve(z);
}

std::vector<double> residual_covariance_diag(MeasurementModel const& model, SolverKind kind) {
    return WlsSolver(model, kind).residual_covariance_diag();
}

LnrOutcome lnr_step(std::span<double const> z, std::span<double const> variance, std::span<double const> residuals,
                    std::span<double const> omega, EstimatorOptions const& options, std::span<bool const> active) {
    std::size_t m = z.size();
    LnrOutcome outcome;
    outcome.normalized_residuals.assign(m, std::numeric_limits<double>::quiet_NaN());
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < m; ++i) {
        if (!active.empty() && !active[i]) {
            continue;
        }
        if (!(omega[i] >= options.criticality_floor * variance[i]) || omega[i] <= 0.0) {
            continue;
        }
        double rn = std::abs(residuals[i]) / std::sqrt(omega[i]);
        outcome.normalized_residuals[i] = rn;
        if (!best || rn > outcome.normalized_residuals[*best]) {
            best = i;
        }
    }
    if (!best) {
        outcome.status = LnrStatus::undetectable;
        return outcome;
    }
    double rn_max = outcome.normalized_residuals[*best];
    if (!(rn_max > options.threshold)) {
        outcome.status = LnrStatus::clean;
        return outcome;
    }
    BadDataEvent event;
    event.row = *best;
    event.normalized_residual = rn_max;
    event.original_z = z[*best];
    if (options.mode == BadDataMode::correct) {
        event.corrected_z = z[*best] - variance[*best] / omega[*best] * residuals[*best];
    } else {
        event.corrected_z = z[*best];
        event.removed = true;
    }
    outcome.status = LnrStatus::bad_data;
    outcome.event = std::move(event);
    return outcome;
}

LnrOutcome lnr_step(MeasurementModel const& model, StateVector const& state, EstimatorOptions const& options) {
    WlsSolver solver(model, options.solver);
    std::vector<double> z;
    std::vector<double> variance;
    for (auto const& row : model.rows) {
        z.push_back(row.z);
        variance.push_back(row.variance);
    }
    std::vector<double> predicted = solver.predict(state.x);
    std::vector<double> residuals(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        residuals[i] = z[i] - predicted[i];
    }
    LnrOutcome outcome = lnr_step(z, variance, residuals, solver.residual_covariance_diag(), options);
    if (outcome.event) {
        outcome.event->sources = model.rows[outcome.event->row].sources;
    }
    return outcome;
}

EstimationReport run(MeasurementModel const& model, EstimatorOptions const& options) {
    EstimationReport report;
    std::size_t const m = model.rows.size();
    std::vector<double> variance;
    report.z.reserve(m);
    for (auto const& row : model.rows) {
        report.z.push_back(row.z);
        variance.push_back(row.variance);
    }
    std::size_t const max_iterations = std::max<std::size_t>(1, options.max_iterations);

    auto t0 = Clock::now();
    WlsSolver solver(model, options.solver);
    report.solve_ms += elapsed_ms(t0);
    t0 = Clock::now();
    std::vector<double> omega = solver.residual_covariance_diag();
    report.detect_ms += elapsed_ms(t0);

    std::unique_ptr<bool[]> active(new bool[m]);
    std::fill(active.get(), active.get() + m, true);
    std::span<bool const> active_view(active.get(), m);

    for (std::size_t iteration = 1; iteration <= max_iterations; ++iteration) {
        t0 = Clock::now();
        report.state = solver.solve(report.z);
        std::vector<double> predicted = solver.predict(report.state.x);
        report.residuals.assign(m, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            report.residuals[i] = report.z[i] - predicted[i];
        }
        report.solve_ms += elapsed_ms(t0);
        report.iterations = iteration;

        t0 = Clock::now();
        LnrOutcome outcome = lnr_step(report.z, variance, report.residuals, omega, options, active_view);
        report.normalized_residuals = std::move(outcome.normalized_residuals);
        report.detect_ms += elapsed_ms(t0);

        if (outcome.status == LnrStatus::undetectable) {
            report.detection_possible = false;
            break;
        }
        if (outcome.status == LnrStatus::clean) {
            break;
        }
        BadDataEvent event = std::move(*outcome.event);
        event.iteration = iteration;
        event.sources = model.rows[event.row].sources;
        if (options.mode == BadDataMode::correct) {
            report.z[event.row] = event.corrected_z;
        } else {
            active[event.row] = false;
            t0 = Clock::now();
            solver = WlsSolver(model, active_view, options.solver);
            report.solve_ms += elapsed_ms(t0);
            t0 = Clock::now();
            omega = solver.residual_covariance_diag();
            report.detect_ms += elapsed_ms(t0);
        }
        report.events.push_back(std::move(event));
        if (iteration == max_iterations) {
            report.converged = false;
        }
    }
    return report;
}

}  // namespace linse
