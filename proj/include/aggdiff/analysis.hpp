#pragma once

// Diagnostics: discrete free energy, closed-form reference solutions, L1
// errors, convergence orders and first moments.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "aggdiff/kernels.hpp"
#include "aggdiff/model.hpp"

namespace aggdiff {

struct EnergyBreakdown {
    double internal = 0.0;
    double confinement = 0.0;
    double interaction = 0.0;
    double total = 0.0;
};

/// E = mu (sum H(rho_i) + sum V_i rho_i + (mu/2) sum_{i,k} W_{i-k} rho_i rho_k),
/// mu the cell measure. Cells slightly below zero (solver round-off) count as
/// vacuum in the internal term.
inline EnergyBreakdown discrete_energy(std::span<const double> rho, const Grid& grid,
                                       const InternalEnergy& energy,
                                       std::span<const double> confinement,
                                       const KernelTable& kernel) {
    if (rho.size() != grid.size() || confinement.size() != grid.size()) {
        throw ShapeError("energy: field, confinement and grid differ");
    }
    const double mu = grid.cell_measure();
    EnergyBreakdown e;
    for (std::size_t i = 0; i < rho.size(); ++i) {
        e.internal += energy.value(std::max(rho[i], 0.0));
        e.confinement += confinement[i] * rho[i];
    }
    e.internal *= mu;
    e.confinement *= mu;
    if (!kernel.absent()) {
        const auto conv = grid.dimension() == 2 && grid.cells() > 32 ? convolve_fft(kernel, rho)
                                                                     : convolve(kernel, rho);
        double s = 0.0;
        for (std::size_t i = 0; i < rho.size(); ++i) s += rho[i] * conv[i];
        e.interaction = 0.5 * mu * s;
    }
    e.total = e.internal + e.confinement + e.interaction;
    return e;
}

inline EnergyBreakdown discrete_energy(const DensityField& rho, const InternalEnergy& energy,
                                       std::span<const double> confinement,
                                       const KernelTable& kernel) {
    return discrete_energy(rho.values(), rho.grid(), energy, confinement, kernel);
}

// ---------------------------------------------------------------------------
// Reference solutions

enum class ReferenceKind { HeatKernel, Barenblatt, FokkerPlanckTransient, FokkerPlanckSteady };

/// Closed-form densities. `mass` scales the heat kernel and Fokker-Planck
/// profiles (default 1) and fixes K for the Barenblatt profile, where it is
/// mandatory.
struct ReferenceSolution {
    ReferenceKind kind = ReferenceKind::HeatKernel;
    double diffusion = 1.0;
    double exponent = 2.0;
    int dimension = 1;
    std::optional<double> mass;
};

struct BarenblattConstants {
    double alpha, beta, kappa, gamma;
    double a;  ///< mass = a K^gamma
};

inline BarenblattConstants barenblatt_constants(double m, int n, double D) {
    if (!(m > 1.0)) throw ConfigError("Barenblatt profile needs m > 1");
    const double nd = n;
    BarenblattConstants c{};
    c.alpha = nd / (nd * (m - 1.0) + 2.0);
    c.beta = c.alpha / nd;
    c.kappa = c.beta * (m - 1.0) / (2.0 * D * m);
    c.gamma = 1.0 / (m - 1.0) + 0.5 * nd;
    const double q = m / (m - 1.0);
    c.a = std::pow(std::numbers::pi / c.kappa, 0.5 * nd) * std::tgamma(q) / std::tgamma(q + 0.5 * nd);
    return c;
}

/// K such that the Barenblatt profile carries `mass`.
inline double barenblatt_height(double m, int n, double D, double mass) {
    const auto c = barenblatt_constants(m, n, D);
    return std::pow(mass / c.a, 1.0 / c.gamma);
}

/// Value at time t and squared radius r2 = |x|^2.
inline double reference_eval_r2(const ReferenceSolution& ref, double t, double r2) {
    const double D = ref.diffusion;
    const double n = ref.dimension;
    switch (ref.kind) {
        case ReferenceKind::HeatKernel: {
            if (!(t > 0.0)) throw DomainError("heat kernel needs t > 0");
            return ref.mass.value_or(1.0) * std::pow(4.0 * std::numbers::pi * D * t, -0.5 * n) *
                   std::exp(-r2 / (4.0 * D * t));
        }
        case ReferenceKind::Barenblatt: {
            if (!(t > 0.0)) throw DomainError("Barenblatt profile needs t > 0");
            if (!ref.mass) throw ConfigError("Barenblatt profile needs a mass to fix K");
            const auto c = barenblatt_constants(ref.exponent, ref.dimension, D);
            const double K = barenblatt_height(ref.exponent, ref.dimension, D, *ref.mass);
            const double xi2 = r2 * std::pow(t, -2.0 * c.beta);
            const double base = std::max(K - c.kappa * xi2, 0.0);
            return std::pow(t, -c.alpha) * std::pow(base, 1.0 / (ref.exponent - 1.0));
        }
        case ReferenceKind::FokkerPlanckTransient: {
            if (!(t > 0.0)) throw DomainError("transient Fokker-Planck profile needs t > 0");
            const double s = 1.0 - std::exp(-2.0 * t);
            return ref.mass.value_or(1.0) * std::pow(2.0 * std::numbers::pi * D * s, -0.5 * n) *
                   std::exp(-r2 / (2.0 * D * s));
        }
        case ReferenceKind::FokkerPlanckSteady:
            return ref.mass.value_or(1.0) * std::pow(2.0 * std::numbers::pi * D, -0.5 * n) *
                   std::exp(-r2 / (2.0 * D));
    }
    return 0.0;
}

inline double reference_eval(const ReferenceSolution& ref, double t, std::span<const double> x) {
    if (x.size() != static_cast<std::size_t>(ref.dimension)) {
        throw ShapeError("reference point has the wrong dimension");
    }
    double r2 = 0.0;
    for (double v : x) r2 += v * v;
    return reference_eval_r2(ref, t, r2);
}

/// Reference sampled at the cell centres of `grid`.
inline std::vector<double> sample_reference(const ReferenceSolution& ref, double t, const Grid& grid) {
    if (grid.dimension() != ref.dimension) throw ShapeError("reference and grid dimensions differ");
    std::vector<double> out(grid.size());
    const int n = grid.cells();
    if (grid.dimension() == 1) {
        for (int i = 0; i < n; ++i) {
            const double x = grid.center(i);
            out[static_cast<std::size_t>(i)] = reference_eval_r2(ref, t, x * x);
        }
    } else {
        for (int j = 0; j < n; ++j) {
            const double y = grid.center(j);
            for (int i = 0; i < n; ++i) {
                const double x = grid.center(i);
                out[grid.index(i, j)] = reference_eval_r2(ref, t, x * x + y * y);
            }
        }
    }
    return out;
}

/// sum |rho_i - rho*(t, x_i)| times the cell measure.
inline double l1_error(const DensityField& rho, const ReferenceSolution& ref, double t) {
    const auto exact = sample_reference(ref, t, rho.grid());
    double s = 0.0;
    for (std::size_t i = 0; i < exact.size(); ++i) s += std::abs(rho[i] - exact[i]);
    return s * rho.grid().cell_measure();
}

/// L1 distance between two fields on the same grid.
inline double l1_distance(const DensityField& a, const DensityField& b) {
    if (!(a.grid() == b.grid())) throw ShapeError("l1 distance between different grids");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s * a.grid().cell_measure();
}

/// log2(e_{l-1} / e_l) per refinement; empty where either error is zero.
inline std::vector<std::optional<double>> convergence_order(std::span<const double> errors) {
    std::vector<std::optional<double>> out;
    for (std::size_t l = 1; l < errors.size(); ++l) {
        if (errors[l] > 0.0 && errors[l - 1] > 0.0) {
            out.emplace_back(std::log2(errors[l - 1] / errors[l]));
        } else {
            out.emplace_back(std::nullopt);
        }
    }
    return out;
}

/// Unnormalised first moment, one component per axis.
inline std::vector<double> first_moment(const DensityField& rho) {
    const Grid& g = rho.grid();
    const int n = g.cells();
    const double mu = g.cell_measure();
    if (g.dimension() == 1) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += g.center(i) * rho[static_cast<std::size_t>(i)];
        return {s * mu};
    }
    double sx = 0.0, sy = 0.0;
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            const double v = rho.at(i, j);
            sx += g.center(i) * v;
            sy += g.center(j) * v;
        }
    }
    return {sx * mu, sy * mu};
}

}  // namespace aggdiff
