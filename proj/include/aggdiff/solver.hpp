#pragma once

// Damped Newton iteration for the implicit line systems and the 1D time step
// with a posteriori CFL control for S1.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aggdiff/analysis.hpp"
#include "aggdiff/scheme1d.hpp"

namespace aggdiff {

enum class JacobianMode { Analytic, FiniteDifference };

struct NewtonConfig {
    /// Absolute tolerance on the max-norm of the scaled residual R dt.
    double tolerance = 1e-10;
    int max_iterations = 50;
    JacobianMode jacobian = JacobianMode::Analytic;
    /// Relative forward-difference step for FiniteDifference mode.
    double fd_step = 1e-7;
    int max_halvings = 30;
    /// CFL halvings allowed per S1 step.
    int max_cfl_retries = 20;

    void validate() const {
        if (!(tolerance > 0.0)) throw ConfigError("Newton tolerance must be positive");
        if (max_iterations < 1) throw ConfigError("Newton needs at least one iteration");
        if (!(fd_step > 0.0)) throw ConfigError("finite-difference step must be positive");
    }
};

struct NewtonReport {
    std::vector<double> solution;
    int iterations = 0;
    double residual_norm = 0.0;
    int linear_solves = 0;
};

inline double max_norm(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) {
        if (std::isnan(x)) return std::numeric_limits<double>::quiet_NaN();
        m = std::max(m, std::abs(x));
    }
    return m;
}

/// Forward-difference Jacobian, column j perturbed by h max(|x_j|, 1).
template <class Residual>
Eigen::MatrixXd assemble_jacobian(Residual&& residual, std::span<const double> x, double h = 1e-7) {
    const auto n = static_cast<Eigen::Index>(x.size());
    std::vector<double> xp(x.begin(), x.end());
    const std::vector<double> r0 = residual(std::span<const double>(xp));
    Eigen::MatrixXd J(static_cast<Eigen::Index>(r0.size()), n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        const double step = h * std::max(std::abs(x[ju]), 1.0);
        xp[ju] = x[ju] + step;
        const std::vector<double> r1 = residual(std::span<const double>(xp));
        xp[ju] = x[ju];
        for (Eigen::Index i = 0; i < J.rows(); ++i) {
            J(i, j) = (r1[static_cast<std::size_t>(i)] - r0[static_cast<std::size_t>(i)]) / step;
        }
    }
    return J;
}

inline std::vector<double> solve_dense(const Eigen::MatrixXd& J, std::span<const double> rhs) {
    const Eigen::Map<const Eigen::VectorXd> b(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
    const Eigen::VectorXd x = J.partialPivLu().solve(b);
    return {x.data(), x.data() + x.size()};
}

/// Thomas algorithm; falls back to pivoted dense LU if a pivot degenerates.
inline std::vector<double> solve_tridiagonal(const std::vector<double>& lower,
                                             const std::vector<double>& diag,
                                             const std::vector<double>& upper,
                                             std::span<const double> rhs) {
    const std::size_t n = diag.size();
    std::vector<double> c(n), d(n);
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        scale = std::max({scale, std::abs(lower[i]), std::abs(diag[i]), std::abs(upper[i])});
    }
    bool ok = true;
    double beta = diag[0];
    for (std::size_t i = 0; i < n && ok; ++i) {
        if (i > 0) beta = diag[i] - lower[i] * c[i - 1];
        if (!(std::abs(beta) > 1e-14 * scale)) {
            ok = false;
            break;
        }
        c[i] = upper[i] / beta;
        d[i] = (rhs[i] - (i > 0 ? lower[i] * d[i - 1] : 0.0)) / beta;
    }
    if (ok) {
        for (std::size_t i = n - 1; i-- > 0;) d[i] -= c[i] * d[i + 1];
        return d;
    }
    const auto N = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(N, N);
    for (Eigen::Index i = 0; i < N; ++i) {
        const auto iu = static_cast<std::size_t>(i);
        J(i, i) = diag[iu];
        if (i > 0) J(i, i - 1) = lower[iu];
        if (i + 1 < N) J(i, i + 1) = upper[iu];
    }
    return solve_dense(J, rhs);
}

/// Damped Newton iteration. `linear_step(x, r)` returns the correction d with
/// J(x) d = r; the update is x - lambda d with lambda halved while the residual
/// max-norm grows.
template <class Residual, class LinearStep>
NewtonReport newton_solve(Residual&& residual, LinearStep&& linear_step, std::vector<double> guess,
                          const NewtonConfig& cfg) {
    cfg.validate();
    NewtonReport rep;
    std::vector<double> x = std::move(guess);
    std::vector<double> r = residual(std::span<const double>(x));
    double norm = max_norm(r);
    if (std::isnan(norm)) throw NumericalError("residual is NaN at the initial guess");
    std::vector<double> best = x;
    double best_norm = norm;
    std::vector<double> trial(x.size());
    while (norm > cfg.tolerance) {
        if (rep.iterations >= cfg.max_iterations) {
            throw ConvergenceError("Newton did not converge in " + std::to_string(cfg.max_iterations) +
                                       " iterations (residual " + std::to_string(best_norm) + ")",
                                   best, best_norm);
        }
        ++rep.iterations;
        const std::vector<double> d = linear_step(std::span<const double>(x), std::span<const double>(r));
        ++rep.linear_solves;
        for (double v : d) {
            if (!std::isfinite(v)) throw NumericalError("Newton correction is not finite");
        }
        double lambda = 1.0;
        std::vector<double> rt;
        double tn = 0.0;
        for (int k = 0; k <= cfg.max_halvings; ++k) {
            for (std::size_t i = 0; i < x.size(); ++i) trial[i] = x[i] - lambda * d[i];
            rt = residual(std::span<const double>(trial));
            tn = max_norm(rt);
            if (!std::isnan(tn) && tn < norm) break;
            lambda *= 0.5;
        }
        if (std::isnan(tn)) throw NumericalError("residual is NaN along the Newton direction");
        x.swap(trial);
        r = std::move(rt);
        norm = tn;
        if (norm < best_norm) {
            best_norm = norm;
            best = x;
        }
    }
    rep.solution = std::move(x);
    rep.residual_norm = norm;
    return rep;
}

/// Newton with a forward-difference dense Jacobian.
template <class Residual>
NewtonReport newton_solve(Residual&& residual, std::vector<double> guess, const NewtonConfig& cfg) {
    auto step = [&](std::span<const double> x, std::span<const double> r) {
        return solve_dense(assemble_jacobian(residual, x, cfg.fd_step), r);
    };
    return newton_solve(residual, step, std::move(guess), cfg);
}

/// Solve one line problem starting from its old level.
inline NewtonReport solve_line(const LineProblem& p, const NewtonConfig& cfg) {
    auto res = [&p](std::span<const double> x) { return p.residual(x); };
    if (cfg.jacobian == JacobianMode::FiniteDifference) {
        return newton_solve(res, p.old, cfg);
    }
    if (p.tridiagonal()) {
        std::vector<double> lo, di, up;
        auto step = [&](std::span<const double> x, std::span<const double> r) {
            p.jacobian_tridiagonal(x, lo, di, up);
            return solve_tridiagonal(lo, di, up, r);
        };
        return newton_solve(res, step, p.old, cfg);
    }
    auto step = [&p](std::span<const double> x, std::span<const double> r) {
        return solve_dense(p.jacobian(x), r);
    };
    return newton_solve(res, step, p.old, cfg);
}

// ---------------------------------------------------------------------------
// Time step

struct StepOutcome {
    DensityField field;
    int iterations = 0;          ///< Newton iterations, summed over line solves
    double residual_norm = 0.0;  ///< worst final residual over line solves
    double dt_used = 0.0;
    int cfl_retries = 0;
    double energy_before = 0.0;
    double energy_after = 0.0;
    int line_systems = 0;   ///< line problems solved in the accepted attempt
    int linear_solves = 0;  ///< Newton linear solves in the accepted attempt
};

inline double energy_of(std::span<const double> rho, const PreparedModel& pm) {
    return discrete_energy(rho, pm.grid(), pm.energy(), pm.confinement, pm.kernel).total;
}

/// One implicit step of S1 or S2 in 1D. S1 re-checks the positivity CFL bound
/// with the converged velocities and halves dt (up to cfg.max_cfl_retries
/// times) until it holds.
inline StepOutcome advance_step_1d(const DensityField& rho_old, double dt_request,
                                   const SchemeConfig& scheme, const PreparedModel& pm,
                                   const NewtonConfig& cfg = {}) {
    scheme.validate();
    if (!(rho_old.grid() == pm.grid())) throw ShapeError("field and model grids differ");
    if (pm.grid().dimension() != 1) throw ShapeError("advance_step_1d needs a 1D grid");
    if (!(dt_request > 0.0)) throw ConfigError("time step must be positive");
    const double floor = -10.0 * cfg.tolerance;
    double dt = dt_request;
    for (int attempt = 0; attempt <= cfg.max_cfl_retries; ++attempt, dt *= 0.5) {
        const auto p = make_line_problem_1d(scheme, pm, rho_old.values(), dt);
        const NewtonReport rep = solve_line(p, cfg);
        const double lowest = *std::min_element(rep.solution.begin(), rep.solution.end());
        if (scheme.kind == SchemeKind::S1) {
            const auto u = p.velocities(rep.solution);
            if (dt > max_stable_dt(SchemeKind::S1, u, p.dx) || lowest < floor) continue;
        } else if (lowest < floor) {
            throw StepError("S2 step produced a negative density " + std::to_string(lowest));
        }
        StepOutcome out{DensityField(pm.grid(), rep.solution, -floor)};
        out.iterations = rep.iterations;
        out.residual_norm = rep.residual_norm;
        out.dt_used = dt;
        out.cfl_retries = attempt;
        out.energy_before = energy_of(rho_old.values(), pm);
        out.energy_after = energy_of(out.field.values(), pm);
        out.line_systems = 1;
        out.linear_solves = rep.linear_solves;
        return out;
    }
    throw StepError("S1 step: CFL condition still violated after " +
                    std::to_string(cfg.max_cfl_retries) + " halvings of dt");
}

}  // namespace aggdiff
