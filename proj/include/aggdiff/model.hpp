#pragma once

// Equation instances: internal energy densities, confinement and interaction
// potentials, the computational grid and the cell-averaged density field.

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "aggdiff/error.hpp"

namespace aggdiff {

/// Uniform partition of [-L, L]^d with 2M cells per axis.
///
/// Cells are indexed from 0; the centre of cell i is -L + dx (i + 1/2).
/// Two-dimensional fields are stored row-major with the x index fastest:
/// entry (i, j) lives at j * cells() + i, so "row j" is contiguous.
class Grid {
public:
    Grid(int dimension, double half_width, int cells_per_half)
        : dimension_(dimension), half_width_(half_width), cells_per_half_(cells_per_half) {
        if (dimension != 1 && dimension != 2) {
            throw ConfigError("grid dimension must be 1 or 2");
        }
        if (!(half_width > 0.0) || !std::isfinite(half_width)) {
            throw ConfigError("grid half-width must be positive and finite");
        }
        if (cells_per_half < 1) {
            throw ConfigError("grid needs at least one cell per half-axis");
        }
    }

    [[nodiscard]] int dimension() const noexcept { return dimension_; }
    [[nodiscard]] double half_width() const noexcept { return half_width_; }
    [[nodiscard]] int cells_per_half() const noexcept { return cells_per_half_; }
    /// Cells along one axis (2M).
    [[nodiscard]] int cells() const noexcept { return 2 * cells_per_half_; }
    [[nodiscard]] double dx() const noexcept { return half_width_ / cells_per_half_; }
    [[nodiscard]] double center(int i) const noexcept {
        // Written as an offset from the midpoint so mirrored cells are exact negatives.
        return dx() * (static_cast<double>(i) + 0.5 - static_cast<double>(cells_per_half_));
    }
    /// Total number of cells (2M)^d.
    [[nodiscard]] std::size_t size() const noexcept {
        const auto n = static_cast<std::size_t>(cells());
        return dimension_ == 1 ? n : n * n;
    }
    /// Cell measure dx^d.
    [[nodiscard]] double cell_measure() const noexcept {
        return dimension_ == 1 ? dx() : dx() * dx();
    }
    [[nodiscard]] std::size_t index(int i, int j) const noexcept {
        return static_cast<std::size_t>(j) * static_cast<std::size_t>(cells()) +
               static_cast<std::size_t>(i);
    }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    int dimension_;
    double half_width_;
    int cells_per_half_;
};

// ---------------------------------------------------------------------------
// Internal energy densities

enum class EnergyKind { Entropy, Power, PowerPlusEntropy };

/// Convex internal energy density H(rho).
///
///  - Entropy:           H = D (rho log rho - rho)
///  - Power:             H = D rho^m / (m - 1)
///  - PowerPlusEntropy:  H = D (rho^m / (m - 1) + eps (rho log rho - rho))
///
/// The flocking model's noise strength sigma is carried as D.
struct InternalEnergy {
    EnergyKind kind = EnergyKind::Entropy;
    double diffusion = 1.0;
    double exponent = 2.0;
    double regularization = 0.0;

    static InternalEnergy entropy(double diffusion) {
        return checked({EnergyKind::Entropy, diffusion, 1.0, 0.0});
    }
    static InternalEnergy power(double diffusion, double exponent) {
        return checked({EnergyKind::Power, diffusion, exponent, 0.0});
    }
    static InternalEnergy power_plus_entropy(double diffusion, double exponent, double eps) {
        return checked({EnergyKind::PowerPlusEntropy, diffusion, exponent, eps});
    }

    [[nodiscard]] bool has_entropy_part() const noexcept {
        return kind == EnergyKind::Entropy ||
               (kind == EnergyKind::PowerPlusEntropy && regularization > 0.0);
    }
    [[nodiscard]] bool has_power_part() const noexcept { return kind != EnergyKind::Entropy; }

    /// H(rho) for rho >= 0 with the limit convention H(0) = 0.
    [[nodiscard]] double value(double rho) const noexcept {
        double h = 0.0;
        if (has_power_part()) h += std::pow(rho, exponent) / (exponent - 1.0);
        if (has_entropy_part() && rho > 0.0) {
            h += entropy_weight() * (rho * std::log(rho) - rho);
        }
        return diffusion * h;
    }
    /// H'(rho), only meaningful for rho > 0 (or for pure power kinds).
    [[nodiscard]] double first(double rho) const noexcept {
        double d = 0.0;
        if (has_power_part()) d += exponent / (exponent - 1.0) * std::pow(rho, exponent - 1.0);
        if (has_entropy_part()) d += entropy_weight() * std::log(rho);
        return diffusion * d;
    }
    /// H''(rho), only meaningful for rho > 0 (or for power kinds with m >= 2).
    [[nodiscard]] double second(double rho) const noexcept {
        double d = 0.0;
        if (has_power_part()) d += exponent * std::pow(rho, exponent - 2.0);
        if (has_entropy_part()) d += entropy_weight() / rho;
        return diffusion * d;
    }

    friend bool operator==(const InternalEnergy&, const InternalEnergy&) = default;

private:
    [[nodiscard]] double entropy_weight() const noexcept {
        return kind == EnergyKind::Entropy ? 1.0 : regularization;
    }
    static InternalEnergy checked(InternalEnergy e) {
        if (!(e.diffusion > 0.0)) throw ConfigError("diffusion strength D must be positive");
        if (e.kind != EnergyKind::Entropy && !(e.exponent > 1.0)) {
            throw ConfigError("power-law exponent m must exceed 1");
        }
        if (e.regularization < 0.0) throw ConfigError("entropy regularization must be >= 0");
        return e;
    }
};

struct EnergyTriple {
    double value;
    std::optional<double> first;   ///< empty where H' is singular
    std::optional<double> second;  ///< empty where H'' is singular
};

/// (H, H', H'') at a non-negative density. At rho = 0 the entropy part makes
/// H' and H'' undefined (and m < 2 makes H'' undefined); those slots are left
/// empty so callers go through vacuum regularization.
inline EnergyTriple eval_internal_energy(const InternalEnergy& energy, double rho) {
    if (!(rho >= 0.0)) throw DomainError("internal energy evaluated at negative density");
    EnergyTriple out{energy.value(rho), std::nullopt, std::nullopt};
    if (rho > 0.0) {
        out.first = energy.first(rho);
        out.second = energy.second(rho);
        return out;
    }
    if (energy.has_entropy_part()) return out;
    out.first = 0.0;
    if (energy.exponent > 2.0) {
        out.second = 0.0;
    } else if (energy.exponent == 2.0) {
        out.second = 2.0 * energy.diffusion;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Potentials

namespace confinement {
struct None {
    friend bool operator==(const None&, const None&) = default;
};
/// c |x|^2 / 2
struct Quadratic {
    double coefficient = 1.0;
    friend bool operator==(const Quadratic&, const Quadratic&) = default;
};
/// alpha (|x|^4 / 4 - |x|^2 / 2)
struct Bistable {
    double alpha = 1.0;
    friend bool operator==(const Bistable&, const Bistable&) = default;
};
/// One value per cell, in field storage order.
struct Tabulated {
    std::vector<double> values;
    friend bool operator==(const Tabulated&, const Tabulated&) = default;
};
}  // namespace confinement

using Confinement =
    std::variant<confinement::None, confinement::Quadratic, confinement::Bistable,
                 confinement::Tabulated>;

namespace interaction {
struct None {
    friend bool operator==(const None&, const None&) = default;
};
/// sign |x|^2 / 2 with sign = +1 (attractive) or -1 (repulsive)
struct Quadratic {
    int sign = 1;
    friend bool operator==(const Quadratic&, const Quadratic&) = default;
};
/// sign (2 pi sigma^2)^(-d/2) exp(-|x|^2 / (2 sigma^2))
struct Gaussian {
    double sigma = 1.0;
    int sign = -1;
    friend bool operator==(const Gaussian&, const Gaussian&) = default;
};
/// coefficient |x|^exponent; negative exponents give integrable singularities
/// and should be tabulated in singular (cell-averaged) mode.
struct Power {
    double coefficient = 1.0;
    double exponent = 1.0;
    friend bool operator==(const Power&, const Power&) = default;
};
/// Offset-indexed values for offsets -(2M-1)..(2M-1) per axis, most negative
/// offset first; in 2D the x offset runs fastest.
struct Tabulated {
    std::vector<double> values;
    friend bool operator==(const Tabulated&, const Tabulated&) = default;
};
}  // namespace interaction

using Interaction = std::variant<interaction::None, interaction::Quadratic,
                                 interaction::Gaussian, interaction::Power,
                                 interaction::Tabulated>;

struct PotentialSpec {
    Confinement confinement = confinement::None{};
    Interaction interaction = interaction::None{};
    /// Use cell-averaged kernel values (for kernels singular at the origin).
    bool singular_interaction = false;
};

/// Confinement potential at a point; `r2` is |x|^2.
inline double confinement_value(const Confinement& v, double r2) {
    return std::visit(
        [r2](const auto& p) -> double {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, confinement::None>) {
                return 0.0;
            } else if constexpr (std::is_same_v<T, confinement::Quadratic>) {
                return 0.5 * p.coefficient * r2;
            } else if constexpr (std::is_same_v<T, confinement::Bistable>) {
                return p.alpha * (0.25 * r2 * r2 - 0.5 * r2);
            } else {
                throw ConfigError("tabulated confinement has no pointwise formula");
            }
        },
        v);
}

/// Interaction potential at a point in `dimension` dimensions; `r2` is |x|^2.
inline double interaction_value(const Interaction& w, double r2, int dimension) {
    return std::visit(
        [r2, dimension](const auto& p) -> double {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, interaction::None>) {
                return 0.0;
            } else if constexpr (std::is_same_v<T, interaction::Quadratic>) {
                return 0.5 * p.sign * r2;
            } else if constexpr (std::is_same_v<T, interaction::Gaussian>) {
                const double var = p.sigma * p.sigma;
                return p.sign * std::pow(2.0 * std::numbers::pi * var, -0.5 * dimension) *
                       std::exp(-r2 / (2.0 * var));
            } else if constexpr (std::is_same_v<T, interaction::Power>) {
                return p.coefficient * std::pow(r2, 0.5 * p.exponent);
            } else {
                throw ConfigError("tabulated interaction has no pointwise formula");
            }
        },
        w);
}

[[nodiscard]] inline bool is_absent(const Interaction& w) noexcept {
    return std::holds_alternative<interaction::None>(w);
}

/// Confinement sampled at cell centres (V_i = V(x_i)); None gives zeros.
inline std::vector<double> sample_confinement(const Confinement& v, const Grid& grid) {
    if (const auto* tab = std::get_if<confinement::Tabulated>(&v)) {
        if (tab->values.size() != grid.size()) {
            throw ShapeError("tabulated confinement has " + std::to_string(tab->values.size()) +
                             " entries, grid has " + std::to_string(grid.size()) + " cells");
        }
        return tab->values;
    }
    std::vector<double> out(grid.size(), 0.0);
    if (std::holds_alternative<confinement::None>(v)) return out;
    const int n = grid.cells();
    if (grid.dimension() == 1) {
        for (int i = 0; i < n; ++i) {
            const double x = grid.center(i);
            out[static_cast<std::size_t>(i)] = confinement_value(v, x * x);
        }
    } else {
        for (int j = 0; j < n; ++j) {
            const double y = grid.center(j);
            for (int i = 0; i < n; ++i) {
                const double x = grid.center(i);
                out[grid.index(i, j)] = confinement_value(v, x * x + y * y);
            }
        }
    }
    return out;
}

inline std::vector<double> sample_confinement(const PotentialSpec& spec, const Grid& grid) {
    return sample_confinement(spec.confinement, grid);
}

// ---------------------------------------------------------------------------
// Model specification and density field

/// One equation instance: the triple (H, V, W) on a grid.
struct ModelSpec {
    InternalEnergy energy;
    PotentialSpec potentials;
    Grid grid;

    ModelSpec(InternalEnergy e, PotentialSpec p, Grid g)
        : energy(e), potentials(std::move(p)), grid(g) {
        validate();
    }

    void validate() const {
        if (const auto* tab = std::get_if<confinement::Tabulated>(&potentials.confinement)) {
            if (tab->values.size() != grid.size()) {
                throw ShapeError("tabulated confinement does not match the grid");
            }
        }
        if (const auto* tab = std::get_if<interaction::Tabulated>(&potentials.interaction)) {
            const std::size_t per_axis = static_cast<std::size_t>(2 * grid.cells() - 1);
            const std::size_t expected = grid.dimension() == 1 ? per_axis : per_axis * per_axis;
            if (tab->values.size() != expected) {
                throw ShapeError("tabulated interaction needs " + std::to_string(expected) +
                                 " offset values");
            }
            const auto& w = tab->values;
            for (std::size_t k = 0; k < expected; ++k) {
                if (w[k] != w[expected - 1 - k]) {
                    throw KernelError("tabulated interaction is not symmetric at entry " +
                                      std::to_string(k));
                }
            }
        }
    }
};

/// Cell averages of a density on a grid. Values are non-negative up to the
/// tolerance passed at construction (zero by default).
class DensityField {
public:
    DensityField(Grid grid, std::vector<double> values, double negative_tolerance = 0.0)
        : grid_(grid), values_(std::move(values)) {
        if (values_.size() != grid_.size()) {
            throw ShapeError("density field has " + std::to_string(values_.size()) +
                             " values, grid has " + std::to_string(grid_.size()) + " cells");
        }
        for (std::size_t k = 0; k < values_.size(); ++k) {
            if (!(values_[k] >= -negative_tolerance)) {
                throw DomainError("density must be non-negative (cell " + std::to_string(k) +
                                  " holds " + std::to_string(values_[k]) + ")");
            }
        }
    }

    static DensityField zeros(const Grid& grid) {
        return DensityField(grid, std::vector<double>(grid.size(), 0.0));
    }

    [[nodiscard]] const Grid& grid() const noexcept { return grid_; }
    [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
    [[nodiscard]] const std::vector<double>& data() const noexcept { return values_; }
    [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
    [[nodiscard]] double operator[](std::size_t k) const noexcept { return values_[k]; }
    [[nodiscard]] double at(int i, int j) const noexcept { return values_[grid_.index(i, j)]; }

    [[nodiscard]] double mass() const noexcept {
        double s = 0.0;
        for (double v : values_) s += v;
        return s * grid_.cell_measure();
    }
    [[nodiscard]] double min() const noexcept {
        double m = std::numeric_limits<double>::infinity();
        for (double v : values_) m = v < m ? v : m;
        return m;
    }

private:
    Grid grid_;
    std::vector<double> values_;
};

}  // namespace aggdiff
