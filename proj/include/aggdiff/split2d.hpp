#pragma once

// Two-dimensional steps built from 1D line solves: plain dimensional
// splitting when rows decouple, and the sequential row-by-row sweep when the
// convolution stage involves the unknown.

#include <algorithm>
#include <complex>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "aggdiff/solver.hpp"

namespace aggdiff {

enum class Axis { X, Y };

inline const char* axis_name(Axis a) noexcept { return a == Axis::X ? "x" : "y"; }

/// Result of one directional pass over a 2D field.
struct AxisReport {
    std::vector<double> field;
    int iterations = 0;
    double residual_norm = 0.0;
    int line_systems = 0;
    int linear_solves = 0;
    /// False when some line violated the S1 positivity bound or undershot.
    bool admissible = true;
};

/// Called after every sweep stage with the 0-based line index and the field.
using StageObserver = std::function<void(int, std::span<const double>)>;

namespace detail {

/// A rectangular nx-by-ny block of cells with spacing dx on both axes,
/// row-major with x fastest.
struct Plane {
    int nx = 0;
    int ny = 0;
    double dx = 1.0;

    [[nodiscard]] std::size_t at(int i, int j) const noexcept {
        return static_cast<std::size_t>(j) * static_cast<std::size_t>(nx) + static_cast<std::size_t>(i);
    }
    [[nodiscard]] int lines(Axis a) const noexcept { return a == Axis::X ? ny : nx; }
    [[nodiscard]] int length(Axis a) const noexcept { return a == Axis::X ? nx : ny; }
    [[nodiscard]] std::size_t cell(Axis a, int line, int k) const noexcept {
        return a == Axis::X ? at(k, line) : at(line, k);
    }
    [[nodiscard]] std::vector<double> get(std::span<const double> f, Axis a, int line) const {
        std::vector<double> out(static_cast<std::size_t>(length(a)));
        for (int k = 0; k < length(a); ++k) out[static_cast<std::size_t>(k)] = f[cell(a, line, k)];
        return out;
    }
    void put(std::span<double> f, Axis a, int line, std::span<const double> v) const {
        for (int k = 0; k < length(a); ++k) f[cell(a, line, k)] = v[static_cast<std::size_t>(k)];
    }
};

/// Kernel value W(along, across) with `along` the offset on the pass axis.
inline double kernel_at(const KernelTable& w, Axis a, int along, int across) {
    return a == Axis::X ? w(along, across) : w(across, along);
}

/// Kernel seen inside one line, laid out for LineProblem (element o + n is offset o).
inline std::vector<double> line_kernel(const KernelTable& w, Axis a, int n) {
    std::vector<double> out(static_cast<std::size_t>(2 * n + 1));
    for (int o = -n; o <= n; ++o) {
        const int oc = std::clamp(o, -w.cells(), w.cells());
        out[static_cast<std::size_t>(o + n)] = kernel_at(w, a, oc, 0);
    }
    return out;
}

/// 2D convolution restricted to a plane (direct sum).
inline std::vector<double> convolve_plane(const KernelTable& w, const Plane& p,
                                          std::span<const double> rho) {
    std::vector<double> out(rho.size(), 0.0);
    if (w.absent()) return out;
    const double mu = p.dx * p.dx;
    for (int j = 0; j < p.ny; ++j) {
        for (int l = 0; l < p.ny; ++l) {
            for (int i = 0; i < p.nx; ++i) {
                double s = 0.0;
                for (int k = 0; k < p.nx; ++k) s += w(i - k, j - l) * rho[p.at(k, l)];
                out[p.at(i, j)] += mu * s;
            }
        }
    }
    return out;
}

/// Keeps C = W * rho current while a sweep changes one line at a time.
class StagedConvolution {
public:
    StagedConvolution(const KernelTable& w, const Plane& p, Axis a, std::span<const double> rho)
        : w_(w), p_(p), a_(a) {
        if (p.nx == p.ny && p.nx == w.cells() && w.dimension() == 2) {
            field_ = p.nx > 32 ? convolve_fft(w, rho) : convolve(w, rho);
        } else {
            field_ = convolve_plane(w, p, rho);
        }
        const int n = p.length(a);
        use_fft_ = n > 32;
        if (use_fft_) {
            padded_ = static_cast<std::size_t>(2 * n);
            const int lines = p.lines(a);
            spectra_.resize(static_cast<std::size_t>(2 * lines - 1));
            std::vector<double> buf(padded_);
            for (int across = -(lines - 1); across <= lines - 1; ++across) {
                std::fill(buf.begin(), buf.end(), 0.0);
                for (int o = -(n - 1); o <= n - 1; ++o) {
                    buf[static_cast<std::size_t>((o + 2 * n) % (2 * n))] = kernel_at(w, a, o, across);
                }
                fft_.fwd(spectra_[static_cast<std::size_t>(across + lines - 1)], buf);
            }
        }
    }

    [[nodiscard]] const std::vector<double>& field() const noexcept { return field_; }

    /// Line `r` changed by `delta`; add W * delta to every line.
    void update(int r, std::span<const double> delta) {
        const int n = p_.length(a_);
        const int lines = p_.lines(a_);
        const double mu = p_.dx * p_.dx;
        if (!use_fft_) {
            for (int line = 0; line < lines; ++line) {
                for (int i = 0; i < n; ++i) {
                    double s = 0.0;
                    for (int k = 0; k < n; ++k) {
                        s += kernel_at(w_, a_, i - k, line - r) * delta[static_cast<std::size_t>(k)];
                    }
                    field_[p_.cell(a_, line, i)] += mu * s;
                }
            }
            return;
        }
        std::vector<double> buf(padded_, 0.0);
        std::copy(delta.begin(), delta.end(), buf.begin());
        std::vector<std::complex<double>> fd, prod(padded_);
        fft_.fwd(fd, buf);
        std::vector<double> back;
        for (int line = 0; line < lines; ++line) {
            const auto& s = spectra_[static_cast<std::size_t>(line - r + lines - 1)];
            for (std::size_t k = 0; k < padded_; ++k) prod[k] = fd[k] * s[k];
            fft_.inv(back, prod);
            for (int i = 0; i < n; ++i) field_[p_.cell(a_, line, i)] += mu * back[static_cast<std::size_t>(i)];
        }
    }

private:
    const KernelTable& w_;
    Plane p_;
    Axis a_;
    std::vector<double> field_;
    bool use_fft_ = false;
    std::size_t padded_ = 0;
    std::vector<std::vector<std::complex<double>>> spectra_;
    Eigen::FFT<double> fft_;
};

inline void tally(AxisReport& rep, const NewtonReport& nr) {
    rep.iterations += nr.iterations;
    rep.residual_norm = std::max(rep.residual_norm, nr.residual_norm);
    rep.linear_solves += nr.linear_solves;
    ++rep.line_systems;
}

inline bool line_admissible(const SchemeConfig& scheme, const LineProblem& lp,
                            std::span<const double> sol, const NewtonConfig& cfg) {
    const double lowest = *std::min_element(sol.begin(), sol.end());
    if (lowest < -10.0 * cfg.tolerance) return false;
    if (scheme.kind == SchemeKind::S1) {
        return lp.dt <= max_stable_dt(SchemeKind::S1, lp.velocities(sol), lp.dx);
    }
    return true;
}

inline LineProblem base_line(const SchemeConfig& scheme, const InternalEnergy& e, double dx, double dt,
                             std::vector<double> old) {
    LineProblem lp;
    lp.kind = scheme.kind;
    lp.energy = e;
    lp.dx = dx;
    lp.dt = dt;
    lp.old = std::move(old);
    if (scheme.kind == SchemeKind::S1) lp.faces = reconstruct_faces(lp.old, dx, scheme.theta);
    return lp;
}

/// Sequential sweep over the lines of a plane. Stage r solves line r with the
/// convolution evaluated at c new + (1 - c) old on that line and at the
/// current state elsewhere.
inline AxisReport sweep_plane(std::span<const double> field, const Plane& p, Axis axis, double dt,
                              const SchemeConfig& scheme, const InternalEnergy& energy,
                              std::span<const double> confinement, const KernelTable& kernel, double c,
                              const NewtonConfig& cfg, const StageObserver& observer = {}) {
    AxisReport rep;
    rep.field.assign(field.begin(), field.end());
    const int n = p.length(axis);
    const double mu = p.dx * p.dx;
    const bool interacting = !kernel.absent();
    std::optional<StagedConvolution> conv;
    std::vector<double> wline;
    if (interacting) {
        conv.emplace(kernel, p, axis, rep.field);
        wline = line_kernel(kernel, axis, n);
    }
    auto w = [&](int o) { return wline[static_cast<std::size_t>(o + n)]; };
    for (int r = 0; r < p.lines(axis); ++r) {
        LineProblem lp = base_line(scheme, energy, p.dx, dt, p.get(rep.field, axis, r));
        lp.fixed = p.get(confinement, axis, r);
        if (interacting) {
            const auto C = p.get(conv->field(), axis, r);
            for (int i = 0; i < n; ++i) {
                double s = 0.0;
                if (c != 0.0) {
                    for (int k = 0; k < n; ++k) s += w(i - k) * lp.old[static_cast<std::size_t>(k)];
                }
                lp.fixed[static_cast<std::size_t>(i)] += C[static_cast<std::size_t>(i)] - c * mu * s;
            }
            if (c != 0.0) {
                lp.kernel = wline;
                lp.coupling = c * mu;
            }
        }
        NewtonReport nr;
        try {
            nr = solve_line(lp, cfg);
        } catch (const NumericalError& e) {
            throw StepError(std::string("sweep along ") + axis_name(axis) + " failed at stage r = " +
                            std::to_string(r + 1) + ": " + e.what());
        }
        tally(rep, nr);
        if (!line_admissible(scheme, lp, nr.solution, cfg)) rep.admissible = false;
        if (interacting) {
            std::vector<double> delta(nr.solution.size());
            for (std::size_t k = 0; k < delta.size(); ++k) delta[k] = nr.solution[k] - lp.old[k];
            conv->update(r, delta);
        }
        p.put(rep.field, axis, r, nr.solution);
        if (observer) observer(r, rep.field);
    }
    return rep;
}

inline Plane plane_of(const Grid& g) {
    if (g.dimension() != 2) throw ShapeError("2D stepping needs a 2D grid");
    return Plane{g.cells(), g.cells(), g.dx()};
}

}  // namespace detail

/// Advance every row (x) or column (y) independently. The convolution, if
/// any, is frozen at the input field, so this is only valid for the explicit
/// stage rule or W = None.
inline AxisReport advance_split_axis(std::span<const double> field, Axis axis, double dt,
                                     const SchemeConfig& scheme, const PreparedModel& pm,
                                     const NewtonConfig& cfg = {}) {
    const auto p = detail::plane_of(pm.grid());
    if (field.size() != pm.grid().size()) throw ShapeError("field does not match the grid");
    if (!pm.rows_decouple()) {
        throw RoutingError("rows do not decouple under the implicit or midpoint stage rule; use sweeping");
    }
    AxisReport rep;
    rep.field.assign(field.begin(), field.end());
    std::vector<double> conv;
    if (!pm.kernel.absent()) {
        conv = p.nx > 32 ? convolve_fft(pm.kernel, field) : convolve(pm.kernel, field);
    }
    for (int r = 0; r < p.lines(axis); ++r) {
        LineProblem lp = detail::base_line(scheme, pm.energy(), p.dx, dt, p.get(field, axis, r));
        lp.fixed = p.get(pm.confinement, axis, r);
        if (!conv.empty()) {
            const auto C = p.get(conv, axis, r);
            for (std::size_t i = 0; i < C.size(); ++i) lp.fixed[i] += C[i];
        }
        const NewtonReport nr = solve_line(lp, cfg);
        detail::tally(rep, nr);
        if (!detail::line_admissible(scheme, lp, nr.solution, cfg)) rep.admissible = false;
        p.put(rep.field, axis, r, nr.solution);
    }
    return rep;
}

/// Sequential row-by-row (x) or column-by-column (y) sweep, ascending.
inline AxisReport advance_sweep_axis(std::span<const double> field, Axis axis, double dt,
                                     const SchemeConfig& scheme, const PreparedModel& pm,
                                     const NewtonConfig& cfg = {}, const StageObserver& observer = {}) {
    const auto p = detail::plane_of(pm.grid());
    if (field.size() != pm.grid().size()) throw ShapeError("field does not match the grid");
    return detail::sweep_plane(field, p, axis, dt, scheme, pm.energy(), pm.confinement, pm.kernel,
                               pm.stage_weight(), cfg, observer);
}

enum class Route { Auto, Split, Sweep };

/// x pass then y pass, each with the full dt. Auto routing splits when rows
/// decouple and sweeps otherwise. S1 steps are retried with dt halved while
/// any line violates its positivity bound.
inline StepOutcome advance_step_2d(const DensityField& rho, double dt_request,
                                   const SchemeConfig& scheme, const PreparedModel& pm,
                                   const NewtonConfig& cfg = {}, Route route = Route::Auto) {
    scheme.validate();
    if (!(rho.grid() == pm.grid())) throw ShapeError("field and model grids differ");
    if (!(dt_request > 0.0)) throw ConfigError("time step must be positive");
    const bool sweep = route == Route::Sweep || (route == Route::Auto && !pm.rows_decouple());
    auto pass = [&](std::span<const double> f, Axis a, double dt) {
        return sweep ? advance_sweep_axis(f, a, dt, scheme, pm, cfg)
                     : advance_split_axis(f, a, dt, scheme, pm, cfg);
    };
    double dt = dt_request;
    for (int attempt = 0; attempt <= cfg.max_cfl_retries; ++attempt, dt *= 0.5) {
        const AxisReport x = pass(rho.values(), Axis::X, dt);
        if (!x.admissible && scheme.kind == SchemeKind::S1) continue;
        const AxisReport y = pass(x.field, Axis::Y, dt);
        if (!y.admissible && scheme.kind == SchemeKind::S1) continue;
        if (!x.admissible || !y.admissible) {
            throw StepError("S2 step produced a negative density");
        }
        StepOutcome out{DensityField(pm.grid(), y.field, 10.0 * cfg.tolerance)};
        out.iterations = x.iterations + y.iterations;
        out.residual_norm = std::max(x.residual_norm, y.residual_norm);
        out.dt_used = dt;
        out.cfl_retries = attempt;
        out.energy_before = energy_of(rho.values(), pm);
        out.energy_after = energy_of(out.field.values(), pm);
        out.line_systems = x.line_systems + y.line_systems;
        out.linear_solves = x.linear_solves + y.linear_solves;
        return out;
    }
    throw StepError("S1 step: CFL condition still violated after " +
                    std::to_string(cfg.max_cfl_retries) + " halvings of dt");
}

/// Dispatch on the grid dimension.
inline StepOutcome advance_step(const DensityField& rho, double dt, const SchemeConfig& scheme,
                                const PreparedModel& pm, const NewtonConfig& cfg = {}) {
    return pm.grid().dimension() == 1 ? advance_step_1d(rho, dt, scheme, pm, cfg)
                                      : advance_step_2d(rho, dt, scheme, pm, cfg);
}

}  // namespace aggdiff
