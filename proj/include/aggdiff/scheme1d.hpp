#pragma once

// One-dimensional finite-volume residuals for the two implicit schemes:
// S1 (minmod reconstruction from the old level, second order in space) and
// S2 (first-order upwinding of the unknown itself).

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "aggdiff/kernels.hpp"
#include "aggdiff/model.hpp"

namespace aggdiff {

enum class SchemeKind { S1, S2 };

struct SchemeConfig {
    SchemeKind kind = SchemeKind::S1;
    /// Stage rule for the convolution; empty means "choose from definiteness".
    std::optional<StageRule> stage;
    double theta = 2.0;

    void validate() const {
        if (!(theta >= 1.0 && theta <= 2.0)) throw ConfigError("limiter theta must lie in [1, 2]");
    }
};

/// Floor used for H' and H'' near vacuum.
inline constexpr double kVacuumFloor = std::numeric_limits<double>::epsilon();

/// Everything derived once from a model: V on the grid, the kernel table, its
/// definiteness class and the stage rule in force.
struct PreparedModel {
    ModelSpec model;
    std::vector<double> confinement;
    KernelTable kernel;
    DefinitenessClass definiteness;
    StageSelection stage;

    [[nodiscard]] const Grid& grid() const noexcept { return model.grid; }
    [[nodiscard]] const InternalEnergy& energy() const noexcept { return model.energy; }
    [[nodiscard]] double stage_weight() const noexcept { return aggdiff::stage_weight(stage.rule); }
    /// True when rows of a 2D field can be advanced independently.
    [[nodiscard]] bool rows_decouple() const noexcept {
        return kernel.absent() || stage.rule == StageRule::Explicit;
    }
};

inline PreparedModel prepare_model(const ModelSpec& model,
                                   std::optional<StageRule> user_override = std::nullopt) {
    model.validate();
    auto kernel = tabulate_kernel(model);
    auto cls = classify_definiteness(kernel, model.grid);
    auto stage = select_stage_rule(cls, user_override);
    return PreparedModel{model, sample_confinement(model.potentials, model.grid),
                         std::move(kernel), std::move(cls), stage};
}

// ---------------------------------------------------------------------------
// Building blocks

[[nodiscard]] constexpr double minmod(double a, double b, double c) noexcept {
    if (a > 0.0 && b > 0.0 && c > 0.0) return std::min({a, b, c});
    if (a < 0.0 && b < 0.0 && c < 0.0) return std::max({a, b, c});
    return 0.0;
}

/// East and west face values of the piecewise-linear reconstruction.
struct Faces {
    std::vector<double> east;
    std::vector<double> west;
};

/// Limited slopes from theta-weighted one-sided and centred differences. The
/// two wall cells get slope zero. The slope is kept as a per-cell increment,
/// so dx cancels and a face next to vacuum comes out as exactly zero rather
/// than a rounding-level negative.
inline Faces reconstruct_faces(std::span<const double> rho, [[maybe_unused]] double dx, double theta = 2.0) {
    const std::size_t n = rho.size();
    Faces f{std::vector<double>(rho.begin(), rho.end()), std::vector<double>(rho.begin(), rho.end())};
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double fwd = rho[i + 1] - rho[i];
        const double bwd = rho[i] - rho[i - 1];
        const double d = minmod(theta * fwd, 0.5 * (rho[i + 1] - rho[i - 1]), theta * bwd);
        f.east[i] = rho[i] + 0.5 * d;
        f.west[i] = rho[i] - 0.5 * d;
    }
    return f;
}

/// H' with the vacuum floor applied.
[[nodiscard]] inline double regularized_first(const InternalEnergy& e, double rho) noexcept {
    return e.first(std::max(rho, kVacuumFloor));
}

/// d/drho of the regularized H'; zero below the floor.
[[nodiscard]] inline double regularized_second(const InternalEnergy& e, double rho) noexcept {
    return rho > kVacuumFloor ? e.second(rho) : 0.0;
}

/// xi_i = H'(max(rho_i, eps)) + V_i + (W * rho_conv)_i.
inline std::vector<double> chemical_potential(std::span<const double> rho_new,
                                              std::span<const double> rho_conv,
                                              const InternalEnergy& energy,
                                              std::span<const double> confinement,
                                              const KernelTable& kernel) {
    const std::size_t n = rho_new.size();
    if (confinement.size() != n || rho_conv.size() != n) {
        throw ShapeError("chemical potential: mismatched lengths");
    }
    std::vector<double> xi(n);
    std::vector<double> conv;
    if (!kernel.absent()) conv = convolve(kernel, rho_conv);
    for (std::size_t i = 0; i < n; ++i) {
        xi[i] = regularized_first(energy, rho_new[i]) + confinement[i] + (conv.empty() ? 0.0 : conv[i]);
    }
    return xi;
}

/// u_{i+1/2} = -(xi_{i+1} - xi_i) / dx on the interior faces.
inline std::vector<double> face_velocities(std::span<const double> xi, double dx) {
    std::vector<double> u(xi.size() > 0 ? xi.size() - 1 : 0);
    for (std::size_t f = 0; f < u.size(); ++f) u[f] = -(xi[f + 1] - xi[f]) / dx;
    return u;
}

/// Upwind fluxes on all faces including the two walls (where F = 0).
/// `faces` is required for S1 and ignored for S2.
inline std::vector<double> assemble_flux(SchemeKind kind, std::span<const double> u,
                                         std::span<const double> rho_new,
                                         const Faces* faces = nullptr) {
    const std::size_t n = rho_new.size();
    if (u.size() + 1 != n) throw ShapeError("flux: velocity/density length mismatch");
    if (kind == SchemeKind::S1 && (faces == nullptr || faces->east.size() != n)) {
        throw ShapeError("flux: S1 needs reconstructed faces");
    }
    std::vector<double> F(n + 1, 0.0);
    for (std::size_t f = 0; f + 1 < n; ++f) {
        const double up = std::max(u[f], 0.0);
        const double dn = std::min(u[f], 0.0);
        F[f + 1] = kind == SchemeKind::S1 ? faces->east[f] * up + faces->west[f + 1] * dn
                                          : rho_new[f] * up + rho_new[f + 1] * dn;
    }
    return F;
}

/// Largest time step allowed by the positivity condition for these face
/// velocities: dx / (2 max u) for order 2, dx / max(u+_{i+1/2} - u-_{i-1/2})
/// for order 1, unbounded for S2.
inline double max_stable_dt(SchemeKind kind, std::span<const double> u, double dx, int order = 2) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    if (kind == SchemeKind::S2) return inf;
    double worst = 0.0;
    if (order == 1) {
        // Cell i sees outflow through its right face (u+) and left face (-u-).
        const std::size_t n = u.size() + 1;
        for (std::size_t i = 0; i < n; ++i) {
            const double right = i < u.size() ? std::max(u[i], 0.0) : 0.0;
            const double left = i > 0 ? -std::min(u[i - 1], 0.0) : 0.0;
            worst = std::max(worst, right + left);
        }
        return worst > 0.0 ? dx / worst : inf;
    }
    for (double v : u) worst = std::max(worst, std::abs(v));
    return worst > 0.0 ? dx / (2.0 * worst) : inf;
}

// ---------------------------------------------------------------------------
// The per-line nonlinear system

/// Implicit update of one line of cells:
///
///   G_i(rho) = rho_i - old_i + dt/dx (F_{i+1/2} - F_{i-1/2}),
///   xi_i(rho) = H'(rho_i) + fixed_i + coupling * sum_k w_{i-k} rho_k,
///
/// where `fixed` collects V and every convolution contribution that does not
/// depend on the unknown. G is the residual R scaled by dt.
struct LineProblem {
    SchemeKind kind = SchemeKind::S1;
    InternalEnergy energy;
    double dx = 1.0;
    double dt = 1.0;
    std::vector<double> old;
    std::vector<double> fixed;
    /// Kernel line, element o + n is offset o (|o| <= n). Empty when coupling is 0.
    std::vector<double> kernel;
    double coupling = 0.0;
    Faces faces;  ///< S1 reconstruction of `old`

    [[nodiscard]] std::size_t size() const noexcept { return old.size(); }
    [[nodiscard]] bool tridiagonal() const noexcept { return coupling == 0.0 || kernel.empty(); }

    [[nodiscard]] double w(std::ptrdiff_t o) const noexcept {
        return kernel[static_cast<std::size_t>(o + static_cast<std::ptrdiff_t>(size()))];
    }

    [[nodiscard]] std::vector<double> xi(std::span<const double> rho) const {
        const std::size_t n = size();
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = regularized_first(energy, rho[i]) + fixed[i];
        if (!tridiagonal()) {
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    s += w(static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(k)) * rho[k];
                }
                out[i] += coupling * s;
            }
        }
        return out;
    }

    /// Differences are taken term by term, so a constant added to `fixed`
    /// cancels exactly whenever its sums are exact.
    [[nodiscard]] std::vector<double> velocities(std::span<const double> rho) const {
        const std::size_t n = size();
        std::vector<double> h(n), s(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) h[i] = regularized_first(energy, rho[i]);
        if (!tridiagonal()) {
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    acc += w(static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(k)) * rho[k];
                }
                s[i] = coupling * acc;
            }
        }
        std::vector<double> u(n > 0 ? n - 1 : 0);
        for (std::size_t f = 0; f < u.size(); ++f) {
            u[f] = -((h[f + 1] - h[f]) + (fixed[f + 1] - fixed[f]) + (s[f + 1] - s[f])) / dx;
        }
        return u;
    }

    [[nodiscard]] std::vector<double> flux(std::span<const double> rho) const {
        return assemble_flux(kind, velocities(rho), rho, &faces);
    }

    /// Scaled residual G = R dt.
    [[nodiscard]] std::vector<double> residual(std::span<const double> rho) const {
        const std::size_t n = size();
        const auto F = flux(rho);
        const double r = dt / dx;
        std::vector<double> g(n);
        for (std::size_t i = 0; i < n; ++i) g[i] = rho[i] - old[i] + r * (F[i + 1] - F[i]);
        return g;
    }

    /// Upwind weight a_f = dF/du on face f (mean of both sides when u = 0).
    [[nodiscard]] double upwind_weight(std::size_t f, double u, std::span<const double> rho) const {
        const double left = kind == SchemeKind::S1 ? faces.east[f] : rho[f];
        const double right = kind == SchemeKind::S1 ? faces.west[f + 1] : rho[f + 1];
        if (u > 0.0) return left;
        if (u < 0.0) return right;
        return 0.5 * (left + right);
    }

    /// Analytic Jacobian of G, dense.
    [[nodiscard]] Eigen::MatrixXd jacobian(std::span<const double> rho) const {
        const std::size_t n = size();
        const auto N = static_cast<Eigen::Index>(n);
        Eigen::MatrixXd J = Eigen::MatrixXd::Identity(N, N);
        const auto u = velocities(rho);
        const double r = dt / dx;
        std::vector<double> h(n);
        for (std::size_t i = 0; i < n; ++i) h[i] = regularized_second(energy, rho[i]);
        std::vector<double> dF(n);
        for (std::size_t f = 0; f + 1 < n; ++f) {
            const double a = upwind_weight(f, u[f], rho);
            // dF_f / drho_j for every j
            for (std::size_t j = 0; j < n; ++j) {
                double dxi = 0.0;  // d(xi_{f+1} - xi_f) / drho_j
                if (j == f + 1) dxi += h[j];
                if (j == f) dxi -= h[j];
                if (!tridiagonal()) {
                    dxi += coupling * (w(static_cast<std::ptrdiff_t>(f + 1) - static_cast<std::ptrdiff_t>(j)) -
                                       w(static_cast<std::ptrdiff_t>(f) - static_cast<std::ptrdiff_t>(j)));
                }
                dF[j] = -a * dxi / dx;
            }
            if (kind == SchemeKind::S2) {
                dF[f] += std::max(u[f], 0.0);
                dF[f + 1] += std::min(u[f], 0.0);
            }
            // Face f is the east face of cell f and the west face of cell f + 1.
            const auto fi = static_cast<Eigen::Index>(f);
            for (std::size_t j = 0; j < n; ++j) {
                const auto jj = static_cast<Eigen::Index>(j);
                J(fi, jj) += r * dF[j];
                J(fi + 1, jj) -= r * dF[j];
            }
        }
        return J;
    }

    /// Analytic Jacobian as three diagonals (valid only when tridiagonal()).
    /// lower[i] = J(i, i-1), diag[i] = J(i, i), upper[i] = J(i, i+1).
    void jacobian_tridiagonal(std::span<const double> rho, std::vector<double>& lower,
                              std::vector<double>& diag, std::vector<double>& upper) const {
        const std::size_t n = size();
        lower.assign(n, 0.0);
        diag.assign(n, 1.0);
        upper.assign(n, 0.0);
        const auto u = velocities(rho);
        const double r = dt / dx;
        for (std::size_t f = 0; f + 1 < n; ++f) {
            const double a = upwind_weight(f, u[f], rho);
            double dl = a * regularized_second(energy, rho[f]) / dx;       // dF_f / drho_f
            double dr = -a * regularized_second(energy, rho[f + 1]) / dx;  // dF_f / drho_{f+1}
            if (kind == SchemeKind::S2) {
                dl += std::max(u[f], 0.0);
                dr += std::min(u[f], 0.0);
            }
            diag[f] += r * dl;
            upper[f] += r * dr;
            lower[f + 1] -= r * dl;
            diag[f + 1] -= r * dr;
        }
    }
};

/// Assemble the line problem for a full 1D field. `rho_old` is also the level
/// used for the S1 reconstruction; `c` is the stage weight of the new level.
inline LineProblem make_line_problem_1d(const SchemeConfig& scheme, const PreparedModel& pm,
                                        std::span<const double> rho_old, double dt,
                                        std::optional<double> c_override = std::nullopt) {
    const Grid& g = pm.grid();
    if (g.dimension() != 1) throw ShapeError("1D line problem on a 2D grid");
    if (rho_old.size() != g.size()) throw ShapeError("field does not match the grid");
    const double c = c_override.value_or(pm.stage_weight());
    LineProblem p;
    p.kind = scheme.kind;
    p.energy = pm.energy();
    p.dx = g.dx();
    p.dt = dt;
    p.old.assign(rho_old.begin(), rho_old.end());
    p.fixed = pm.confinement;
    if (!pm.kernel.absent()) {
        const auto conv = convolve(pm.kernel, rho_old);
        for (std::size_t i = 0; i < p.fixed.size(); ++i) p.fixed[i] += (1.0 - c) * conv[i];
        if (c != 0.0) {
            const auto line = pm.kernel.line();
            p.kernel.assign(line.begin(), line.end());
            p.coupling = c * pm.kernel.cell_measure();
        }
    }
    if (scheme.kind == SchemeKind::S1) p.faces = reconstruct_faces(rho_old, g.dx(), scheme.theta);
    return p;
}

/// R_i = (rho_new - rho_old)_i / dt + (F_{i+1/2} - F_{i-1/2}) / dx for a 1D model.
inline std::vector<double> residual(const SchemeConfig& scheme, std::span<const double> rho_new,
                                    std::span<const double> rho_old, double dt,
                                    const PreparedModel& pm) {
    const auto p = make_line_problem_1d(scheme, pm, rho_old, dt);
    auto g = p.residual(rho_new);
    for (double& v : g) v /= dt;
    return g;
}

}  // namespace aggdiff
