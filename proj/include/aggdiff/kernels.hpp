#pragma once

// Discrete interaction kernels: tabulation (pointwise or cell-averaged),
// direct and FFT convolution, and the definiteness classification that picks
// an energy-dissipating stage rule.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <unsupported/Eigen/FFT>

#include "aggdiff/model.hpp"

namespace aggdiff {

/// Offset-indexed interaction values W_{i-k} (1D) or W_{i-k, j-l} (2D).
///
/// Public offsets span -(n-1)..(n-1) per axis, n = 2M. Storage keeps one extra
/// offset (+-n, i.e. +-2L) per axis so that the circulant embedding used by the
/// definiteness test is fully determined.
class KernelTable {
public:
    KernelTable(int dimension, int cells, double dx, bool singular)
        : dimension_(dimension), cells_(cells), dx_(dx), singular_(singular),
          values_(static_cast<std::size_t>(dimension == 1 ? width() : width() * width()), 0.0) {}

    [[nodiscard]] int dimension() const noexcept { return dimension_; }
    /// Cells per axis (2M).
    [[nodiscard]] int cells() const noexcept { return cells_; }
    [[nodiscard]] double dx() const noexcept { return dx_; }
    [[nodiscard]] double cell_measure() const noexcept {
        return dimension_ == 1 ? dx_ : dx_ * dx_;
    }
    [[nodiscard]] bool singular() const noexcept { return singular_; }
    /// True when the kernel is identically zero (W = None).
    [[nodiscard]] bool absent() const noexcept { return absent_; }
    /// Sign s of an exact s |x|^2 / 2 kernel, if the table came from one.
    [[nodiscard]] std::optional<int> quadratic_sign() const noexcept { return quadratic_sign_; }

    [[nodiscard]] double operator()(int o) const noexcept { return values_[slot(o)]; }
    [[nodiscard]] double operator()(int ox, int oy) const noexcept {
        return values_[slot(oy) * static_cast<std::size_t>(width()) + slot(ox)];
    }
    double& at(int o) noexcept { return values_[slot(o)]; }
    double& at(int ox, int oy) noexcept {
        return values_[slot(oy) * static_cast<std::size_t>(width()) + slot(ox)];
    }

    /// Values along x for a fixed y offset (2D) or the whole table (1D),
    /// covering offsets -n..n; element o + n is offset o.
    [[nodiscard]] std::span<const double> line(int oy = 0) const noexcept {
        const auto w = static_cast<std::size_t>(width());
        if (dimension_ == 1) return {values_.data(), w};
        return {values_.data() + slot(oy) * w, w};
    }

    /// The one-dimensional kernel seen by a single row, i.e. offsets (o, 0).
    [[nodiscard]] KernelTable row_kernel() const {
        KernelTable k(1, cells_, dx_, singular_);
        const auto src = line(0);
        std::copy(src.begin(), src.end(), k.values_.begin());
        k.absent_ = absent_;
        k.quadratic_sign_ = quadratic_sign_;
        return k;
    }

    void mark_absent() noexcept { absent_ = true; }
    void set_quadratic_sign(int s) noexcept { quadratic_sign_ = s; }

private:
    [[nodiscard]] int width() const noexcept { return 2 * cells_ + 1; }
    [[nodiscard]] std::size_t slot(int o) const noexcept {
        return static_cast<std::size_t>(o + cells_);
    }

    int dimension_;
    int cells_;
    double dx_;
    bool singular_;
    bool absent_ = false;
    std::optional<int> quadratic_sign_;
    std::vector<double> values_;
};

namespace detail {

constexpr double kQuadratureTolerance = 1e-10;
/// The integrators' error estimate is the change between the last two
/// refinements, which overstates the error of the final value; failure is
/// declared only when it exceeds the target by this factor.
constexpr double kQuadratureSlack = 100.0;

/// `request` is the tolerance handed to the integrator; failure is judged
/// against kQuadratureTolerance with the slack above. Inner
/// integrals of a 2D average ask for more so the outer rule sees a smooth
/// integrand.
template <class F>
double integrate_smooth(F f, double a, double b, const std::string& where,
                        double request = kQuadratureTolerance) {
    double error = 0.0;
    double l1 = 0.0;
    const double r = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
        f, a, b, 25, request, &error, &l1);
    if (!std::isfinite(r) || error > kQuadratureSlack * kQuadratureTolerance * std::max(l1, 1e-300) + 1e-300) {
        throw KernelError("kernel quadrature did not converge at " + where + " (error estimate " + std::to_string(error) + " of " + std::to_string(l1) + ")");
    }
    return r;
}

/// For integrands with a (possibly singular) endpoint at a or b.
template <class F>
double integrate_endpoint_singular(F f, double a, double b, const std::string& where,
                                   double request = kQuadratureTolerance, bool nested = false) {
    // The rule caches abscissae lazily, so a nested integral needs its own instance.
    thread_local boost::math::quadrature::tanh_sinh<double> outer_rule(15);
    thread_local boost::math::quadrature::tanh_sinh<double> inner_rule(15);
    auto& integrator = nested ? inner_rule : outer_rule;
    double error = 0.0;
    double l1 = 0.0;
    std::size_t levels = 0;
    const double r = integrator.integrate(f, a, b, request, &error, &l1, &levels);
    if (!std::isfinite(r) || error > kQuadratureSlack * kQuadratureTolerance * std::max(l1, 1e-300) + 1e-300) {
        throw KernelError("kernel quadrature did not converge at " + where + " (error estimate " + std::to_string(error) + " of " + std::to_string(l1) + ")");
    }
    return r;
}

inline std::string offset_name(int ox) { return "offset " + std::to_string(ox); }
inline std::string offset_name(int ox, int oy) {
    return "offset (" + std::to_string(ox) + ", " + std::to_string(oy) + ")";
}

/// (1/dx) * integral of W over [(o - 1/2) dx, (o + 1/2) dx].
inline double cell_average_1d(const Interaction& w, int o, double dx) {
    auto f = [&w](double t) { return interaction_value(w, t * t, 1); };
    const double a = (o - 0.5) * dx;
    const double b = (o + 0.5) * dx;
    if (o == 0) {
        return (integrate_endpoint_singular(f, a, 0.0, offset_name(o)) +
                integrate_endpoint_singular(f, 0.0, b, offset_name(o))) / dx;
    }
    return integrate_smooth(f, a, b, offset_name(o)) / dx;
}

/// (1/dx^2) * double integral of W over the cell centred at (ox, oy) dx.
inline double cell_average_2d(const Interaction& w, int ox, int oy, double dx) {
    const std::string where = offset_name(ox, oy);
    auto inner = [&](double s, double c, double d, bool singular_inner) {
        auto g = [&w, s](double t) { return interaction_value(w, s * s + t * t, 2); };
        return singular_inner ? integrate_endpoint_singular(g, c, d, where, 1e-3 * kQuadratureTolerance, true)
                              : integrate_smooth(g, c, d, where, 1e-3 * kQuadratureTolerance);
    };
    auto block = [&](double a, double b, double c, double d, bool singular) {
        auto outer = [&](double s) { return inner(s, c, d, singular); };
        return singular ? integrate_endpoint_singular(outer, a, b, where)
                        : integrate_smooth(outer, a, b, where);
    };
    const double a = (ox - 0.5) * dx, b = (ox + 0.5) * dx;
    const double c = (oy - 0.5) * dx, d = (oy + 0.5) * dx;
    double total = 0.0;
    if (ox == 0 && oy == 0) {
        // Split into quadrants so the origin sits on a corner.
        total = block(a, 0.0, c, 0.0, true) + block(a, 0.0, 0.0, d, true) +
                block(0.0, b, c, 0.0, true) + block(0.0, b, 0.0, d, true);
    } else if (ox == 0 || oy == 0) {
        // The cell touches an axis through the origin; split along it.
        if (ox == 0) {
            total = block(a, 0.0, c, d, true) + block(0.0, b, c, d, true);
        } else {
            total = block(a, b, c, 0.0, true) + block(a, b, 0.0, d, true);
        }
    } else {
        total = block(a, b, c, d, false);
    }
    return total / (dx * dx);
}

}  // namespace detail

/// Tabulate W on the offsets of `grid`. Pointwise mode uses W(x_i - x_k);
/// singular mode uses cell averages computed by adaptive quadrature
/// (relative tolerance 1e-10).
inline KernelTable tabulate_kernel(const Interaction& w, const Grid& grid, bool singular) {
    const int n = grid.cells();
    const int d = grid.dimension();
    const double dx = grid.dx();
    KernelTable table(d, n, dx, singular);

    if (std::holds_alternative<interaction::None>(w)) {
        table.mark_absent();
        return table;
    }
    if (const auto* q = std::get_if<interaction::Quadratic>(&w)) {
        table.set_quadratic_sign(q->sign);
    }
    if (const auto* tab = std::get_if<interaction::Tabulated>(&w)) {
        const int per_axis = 2 * n - 1;
        const std::size_t expected =
            d == 1 ? static_cast<std::size_t>(per_axis)
                   : static_cast<std::size_t>(per_axis) * static_cast<std::size_t>(per_axis);
        if (tab->values.size() != expected) {
            throw ShapeError("tabulated interaction needs " + std::to_string(expected) +
                             " offset values");
        }
        auto clamp = [n](int o) { return std::clamp(o, -(n - 1), n - 1); };
        if (d == 1) {
            for (int o = -n; o <= n; ++o) {
                table.at(o) = tab->values[static_cast<std::size_t>(clamp(o) + n - 1)];
            }
        } else {
            for (int oy = -n; oy <= n; ++oy) {
                for (int ox = -n; ox <= n; ++ox) {
                    const auto k = static_cast<std::size_t>(clamp(oy) + n - 1) *
                                       static_cast<std::size_t>(per_axis) +
                                   static_cast<std::size_t>(clamp(ox) + n - 1);
                    table.at(ox, oy) = tab->values[k];
                }
            }
        }
        for (int oy = (d == 1 ? 0 : -n); oy <= (d == 1 ? 0 : n); ++oy) {
            for (int ox = -n; ox <= n; ++ox) {
                const double a = d == 1 ? table(ox) : table(ox, oy);
                const double b = d == 1 ? table(-ox) : table(-ox, -oy);
                if (a != b) throw KernelError("tabulated interaction is not symmetric");
            }
        }
        return table;
    }

    if (d == 1) {
        for (int o = 0; o <= n; ++o) {
            const double x = o * dx;
            const double v =
                singular ? detail::cell_average_1d(w, o, dx) : interaction_value(w, x * x, 1);
            table.at(o) = v;
            table.at(-o) = v;
        }
    } else {
        // W is radial for every built-in form, so one octant suffices.
        for (int oy = 0; oy <= n; ++oy) {
            for (int ox = 0; ox <= oy; ++ox) {
                const double r2 = (ox * dx) * (ox * dx) + (oy * dx) * (oy * dx);
                const double v = singular ? detail::cell_average_2d(w, ox, oy, dx)
                                          : interaction_value(w, r2, 2);
                for (int sx : {-1, 1}) {
                    for (int sy : {-1, 1}) {
                        table.at(sx * ox, sy * oy) = v;
                        table.at(sx * oy, sy * ox) = v;
                    }
                }
            }
        }
    }
    return table;
}

inline KernelTable tabulate_kernel(const ModelSpec& model) {
    return tabulate_kernel(model.potentials.interaction, model.grid,
                           model.potentials.singular_interaction);
}

// ---------------------------------------------------------------------------
// Convolution

/// (W * rho)_i = sum_k W_{i-k} rho_k dx^d, by direct summation over all cells.
inline std::vector<double> convolve(const KernelTable& kernel, std::span<const double> rho) {
    const int n = kernel.cells();
    const double mu = kernel.cell_measure();
    if (kernel.dimension() == 1) {
        if (rho.size() != static_cast<std::size_t>(n)) {
            throw ShapeError("convolution: field and kernel grids differ");
        }
        std::vector<double> out(rho.size(), 0.0);
        if (kernel.absent()) return out;
        const auto w = kernel.line();
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int k = 0; k < n; ++k) s += w[static_cast<std::size_t>(i - k + n)] * rho[k];
            out[static_cast<std::size_t>(i)] = s * mu;
        }
        return out;
    }
    const auto nn = static_cast<std::size_t>(n);
    if (rho.size() != nn * nn) throw ShapeError("convolution: field and kernel grids differ");
    std::vector<double> out(rho.size(), 0.0);
    if (kernel.absent()) return out;
    for (int l = 0; l < n; ++l) {
        for (int j = 0; j < n; ++j) {
            const auto w = kernel.line(j - l);
            const double* src = rho.data() + static_cast<std::size_t>(l) * nn;
            double* dst = out.data() + static_cast<std::size_t>(j) * nn;
            for (int i = 0; i < n; ++i) {
                double s = 0.0;
                for (int k = 0; k < n; ++k) s += w[static_cast<std::size_t>(i - k + n)] * src[k];
                dst[i] += s * mu;
            }
        }
    }
    return out;
}

inline std::vector<double> convolve(const KernelTable& kernel, const DensityField& rho) {
    if (rho.grid().cells() != kernel.cells() || rho.grid().dimension() != kernel.dimension() ||
        rho.grid().dx() != kernel.dx()) {
        throw ShapeError("convolution: field and kernel grids differ");
    }
    return convolve(kernel, rho.values());
}

/// Same sum as `convolve`, evaluated with zero-padded FFTs (linear, not
/// circular, convolution).
inline std::vector<double> convolve_fft(const KernelTable& kernel, std::span<const double> rho) {
    using cplx = std::complex<double>;
    const int n = kernel.cells();
    const auto nn = static_cast<std::size_t>(n);
    const auto p = static_cast<std::size_t>(2 * n);  // padded length per axis
    const double mu = kernel.cell_measure();
    Eigen::FFT<double> fft;

    if (kernel.dimension() == 1) {
        if (rho.size() != nn) throw ShapeError("convolution: field and kernel grids differ");
        std::vector<double> out(nn, 0.0);
        if (kernel.absent()) return out;
        std::vector<double> a(p, 0.0), w(p, 0.0);
        std::copy(rho.begin(), rho.end(), a.begin());
        for (int o = -(n - 1); o <= n - 1; ++o) {
            w[static_cast<std::size_t>((o + 2 * n) % (2 * n))] = kernel(o);
        }
        std::vector<cplx> fa, fw;
        fft.fwd(fa, a);
        fft.fwd(fw, w);
        for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fw[k];
        std::vector<double> c;
        fft.inv(c, fa);
        for (std::size_t i = 0; i < nn; ++i) out[i] = c[i] * mu;
        return out;
    }

    if (rho.size() != nn * nn) throw ShapeError("convolution: field and kernel grids differ");
    std::vector<double> out(nn * nn, 0.0);
    if (kernel.absent()) return out;
    // 2D transform as rows then columns of complex data.
    auto fft2 = [&](std::vector<cplx>& data, bool inverse) {
        std::vector<cplx> in(p), res(p);
        for (std::size_t r = 0; r < p; ++r) {
            std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(r * p), p, in.begin());
            inverse ? fft.inv(res, in) : fft.fwd(res, in);
            std::copy(res.begin(), res.end(), data.begin() + static_cast<std::ptrdiff_t>(r * p));
        }
        for (std::size_t c = 0; c < p; ++c) {
            for (std::size_t r = 0; r < p; ++r) in[r] = data[r * p + c];
            inverse ? fft.inv(res, in) : fft.fwd(res, in);
            for (std::size_t r = 0; r < p; ++r) data[r * p + c] = res[r];
        }
    };
    std::vector<cplx> a(p * p, cplx{}), w(p * p, cplx{});
    for (std::size_t j = 0; j < nn; ++j) {
        for (std::size_t i = 0; i < nn; ++i) a[j * p + i] = rho[j * nn + i];
    }
    for (int oy = -(n - 1); oy <= n - 1; ++oy) {
        for (int ox = -(n - 1); ox <= n - 1; ++ox) {
            const auto r = static_cast<std::size_t>((oy + 2 * n) % (2 * n));
            const auto c = static_cast<std::size_t>((ox + 2 * n) % (2 * n));
            w[r * p + c] = kernel(ox, oy);
        }
    }
    fft2(a, false);
    fft2(w, false);
    for (std::size_t k = 0; k < a.size(); ++k) a[k] *= w[k];
    fft2(a, true);
    for (std::size_t j = 0; j < nn; ++j) {
        for (std::size_t i = 0; i < nn; ++i) out[j * nn + i] = a[j * p + i].real() * mu;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Definiteness and stage rules

enum class Definiteness { NegativeDefinite, PositiveDefinite, Indeterminate };

struct DefinitenessEvidence {
    enum class Source { ExactForm, SpectralTest };
    Source source = Source::SpectralTest;
    std::string tag;
    double spectrum_min = 0.0;
    double spectrum_max = 0.0;
    double tolerance = 0.0;
};

struct DefinitenessClass {
    Definiteness kind = Definiteness::Indeterminate;
    DefinitenessEvidence evidence;
};

/// Real spectrum of the symmetric circulant of size 4M (per axis) that embeds
/// the kernel's Toeplitz block. Element l is the eigenvalue for frequency l.
inline std::vector<double> circulant_spectrum(const KernelTable& kernel) {
    const int n = kernel.cells();
    const int p = 2 * n;  // 4M
    auto wrap = [p](int j) { return j <= p / 2 ? j : j - p; };
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> spec;
    if (kernel.dimension() == 1) {
        std::vector<double> c(static_cast<std::size_t>(p));
        for (int j = 0; j < p; ++j) c[static_cast<std::size_t>(j)] = kernel(wrap(j));
        fft.fwd(spec, c);
        std::vector<double> out(spec.size());
        for (std::size_t k = 0; k < spec.size(); ++k) out[k] = spec[k].real();
        return out;
    }
    const auto pp = static_cast<std::size_t>(p);
    std::vector<std::complex<double>> data(pp * pp);
    for (int r = 0; r < p; ++r) {
        for (int c = 0; c < p; ++c) {
            data[static_cast<std::size_t>(r) * pp + static_cast<std::size_t>(c)] =
                kernel(wrap(c), wrap(r));
        }
    }
    std::vector<std::complex<double>> in(pp), res(pp);
    for (std::size_t r = 0; r < pp; ++r) {
        std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(r * pp), pp, in.begin());
        fft.fwd(res, in);
        std::copy(res.begin(), res.end(), data.begin() + static_cast<std::ptrdiff_t>(r * pp));
    }
    for (std::size_t c = 0; c < pp; ++c) {
        for (std::size_t r = 0; r < pp; ++r) in[r] = data[r * pp + c];
        fft.fwd(res, in);
        for (std::size_t r = 0; r < pp; ++r) data[r * pp + c] = res[r];
    }
    std::vector<double> out(data.size());
    for (std::size_t k = 0; k < data.size(); ++k) out[k] = data[k].real();
    return out;
}

/// Classify the interaction kernel. Quadratic kernels are recognised from
/// their exact form; everything else goes through the circulant spectrum sign
/// test, which is sufficient but not necessary.
inline DefinitenessClass classify_definiteness(const KernelTable& kernel, const Grid& grid) {
    if (grid.cells() != kernel.cells() || grid.dimension() != kernel.dimension()) {
        throw ShapeError("definiteness test: kernel and grid differ");
    }
    DefinitenessClass out;
    if (const auto s = kernel.quadratic_sign()) {
        out.evidence.source = DefinitenessEvidence::Source::ExactForm;
        out.evidence.tag = *s > 0 ? "exact:quadratic-attractive" : "exact:quadratic-repulsive";
        out.kind = *s > 0 ? Definiteness::NegativeDefinite : Definiteness::PositiveDefinite;
        return out;
    }
    const auto spectrum = circulant_spectrum(kernel);
    double lo = 0.0, hi = 0.0, amax = 0.0;
    if (!spectrum.empty()) {
        lo = *std::min_element(spectrum.begin(), spectrum.end());
        hi = *std::max_element(spectrum.begin(), spectrum.end());
        amax = std::max(std::abs(lo), std::abs(hi));
    }
    const double tol = 1e-12 * amax;
    out.evidence.source = DefinitenessEvidence::Source::SpectralTest;
    out.evidence.tag = "dft";
    out.evidence.spectrum_min = lo;
    out.evidence.spectrum_max = hi;
    out.evidence.tolerance = tol;
    if (hi <= tol) {
        out.kind = Definiteness::NegativeDefinite;
    } else if (lo >= -tol) {
        out.kind = Definiteness::PositiveDefinite;
    } else {
        out.kind = Definiteness::Indeterminate;
    }
    return out;
}

/// Which time level feeds the convolution inside the chemical potential.
enum class StageRule { Explicit, Implicit, Midpoint };

/// Weight c of the new level in rho** = c rho_new + (1 - c) rho_old.
[[nodiscard]] constexpr double stage_weight(StageRule r) noexcept {
    switch (r) {
        case StageRule::Explicit: return 0.0;
        case StageRule::Implicit: return 1.0;
        case StageRule::Midpoint: return 0.5;
    }
    return 0.5;
}

struct StageSelection {
    StageRule rule = StageRule::Midpoint;
    /// Set when a user override drops the dissipation guarantee.
    bool guarantee_voided = false;
};

/// Without an override: NegativeDefinite -> Explicit, PositiveDefinite ->
/// Implicit, Indeterminate -> Midpoint. Overrides are honoured and flagged when
/// the chosen rule is not certified for the class.
inline StageSelection select_stage_rule(const DefinitenessClass& cls,
                                        std::optional<StageRule> user_override = std::nullopt) {
    if (!user_override) {
        switch (cls.kind) {
            case Definiteness::NegativeDefinite: return {StageRule::Explicit, false};
            case Definiteness::PositiveDefinite: return {StageRule::Implicit, false};
            case Definiteness::Indeterminate: return {StageRule::Midpoint, false};
        }
    }
    const StageRule r = *user_override;
    bool safe = r == StageRule::Midpoint;
    if (r == StageRule::Explicit) safe = cls.kind == Definiteness::NegativeDefinite;
    if (r == StageRule::Implicit) safe = cls.kind == Definiteness::PositiveDefinite;
    return {r, !safe};
}

}  // namespace aggdiff
