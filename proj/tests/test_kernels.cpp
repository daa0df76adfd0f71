#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "aggdiff/kernels.hpp"

using namespace aggdiff;

namespace {

std::vector<double> random_field(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

double rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(a[i] - b[i]));
        den = std::max(den, std::abs(b[i]));
    }
    return num / den;
}

/// Real part of the length-p DFT by direct summation.
std::vector<double> naive_dft(const std::vector<double>& c) {
    const std::size_t p = c.size();
    std::vector<double> out(p);
    for (std::size_t l = 0; l < p; ++l) {
        double s = 0.0;
        for (std::size_t j = 0; j < p; ++j) s += c[j] * std::cos(2.0 * std::numbers::pi * double(l * j % p) / double(p));
        out[l] = s;
    }
    return out;
}

}  // namespace

TEST(TabulateKernel, QuadraticPointwiseOffsetThree) {
    const Grid g(1, 4.0, 4);  // dx = 1
    const auto k = tabulate_kernel(interaction::Quadratic{1}, g, false);
    EXPECT_DOUBLE_EQ(k(3), 4.5);
    EXPECT_DOUBLE_EQ(k(-3), 4.5);
    EXPECT_DOUBLE_EQ(k(0), 0.0);
}

TEST(TabulateKernel, SingularAbsoluteValueAtOrigin) {
    for (double L : {1.0, 3.0, 0.7}) {
        const Grid g(1, L, 5);
        const auto k = tabulate_kernel(interaction::Power{1.0, 1.0}, g, true);
        EXPECT_NEAR(k(0), g.dx() / 4.0, 1e-10 * g.dx());
        // Away from the origin |x| is linear on the cell, so the average is the centre value.
        EXPECT_NEAR(k(2), 2.0 * g.dx(), 1e-10);
    }
}

TEST(TabulateKernel, SingularLogarithmIsFinite) {
    const Grid g(1, 2.0, 4);
    const auto k = tabulate_kernel(interaction::Power{1.0, 0.5}, g, true);
    // (1/dx) int_{-dx/2}^{dx/2} |s|^{1/2} ds = (2/3) (dx/2)^{1/2}
    EXPECT_NEAR(k(0), (2.0 / 3.0) * std::sqrt(g.dx() / 2.0), 1e-9);
}

TEST(TabulateKernel, TwoDimensionalSingularCellAverage) {
    const Grid g(2, 1.0, 2);
    const auto k = tabulate_kernel(interaction::Power{1.0, 2.0}, g, true);
    // |x|^2 averaged over the centred square of side dx is dx^2 / 6.
    EXPECT_NEAR(k(0, 0), g.dx() * g.dx() / 6.0, 1e-10);
}

TEST(TabulateKernel, NoneIsAbsentAndZero) {
    const Grid g(2, 1.0, 3);
    const auto k = tabulate_kernel(interaction::None{}, g, false);
    EXPECT_TRUE(k.absent());
    for (int oy = -5; oy <= 5; ++oy) {
        for (int ox = -5; ox <= 5; ++ox) EXPECT_EQ(k(ox, oy), 0.0);
    }
}

TEST(TabulateKernel, TablesAreExactlySymmetric) {
    const Grid g1(1, 5.0, 16);
    const auto k1 = tabulate_kernel(interaction::Gaussian{0.5, -1}, g1, true);
    for (int o = 0; o < g1.cells(); ++o) EXPECT_EQ(k1(o), k1(-o));
    const Grid g2(2, 2.0, 6);
    const auto k2 = tabulate_kernel(interaction::Gaussian{0.7, 1}, g2, false);
    for (int oy = -(g2.cells() - 1); oy < g2.cells(); ++oy) {
        for (int ox = -(g2.cells() - 1); ox < g2.cells(); ++ox) {
            EXPECT_EQ(k2(ox, oy), k2(-ox, oy));
            EXPECT_EQ(k2(ox, oy), k2(ox, -oy));
        }
    }
}

TEST(TabulateKernel, TabulatedInputMustBeSymmetric) {
    const Grid g(1, 1.0, 2);  // offsets -3..3
    EXPECT_THROW(tabulate_kernel(interaction::Tabulated{{1, 2, 3, 4, 3, 2, 0}}, g, false), KernelError);
    const auto k = tabulate_kernel(interaction::Tabulated{{1, 2, 3, 4, 3, 2, 1}}, g, false);
    EXPECT_EQ(k(0), 4.0);
    EXPECT_EQ(k(-3), 1.0);
}

TEST(Convolve, SingleOffsetKernelScalesTheField) {
    KernelTable k(1, 4, 0.5, false);
    k.at(0) = 3.0;
    const std::vector<double> rho{1.0, 2.0, 0.0, 4.0};
    const auto c = convolve(k, rho);
    for (std::size_t i = 0; i < rho.size(); ++i) EXPECT_DOUBLE_EQ(c[i], 3.0 * rho[i] * 0.5);
}

TEST(Convolve, ZeroFieldGivesZero) {
    const Grid g(2, 1.0, 3);
    const auto k = tabulate_kernel(interaction::Gaussian{0.5, -1}, g, false);
    for (double v : convolve(k, DensityField::zeros(g))) EXPECT_EQ(v, 0.0);
}

TEST(Convolve, ThreeCellQuadraticHandSum) {
    KernelTable k(1, 3, 1.0, false);
    for (int o = -3; o <= 3; ++o) k.at(o) = 0.5 * o * o;
    const auto c = convolve(k, std::vector<double>{1.0, 1.0, 1.0});
    EXPECT_DOUBLE_EQ(c[0], 2.5);
    EXPECT_DOUBLE_EQ(c[1], 1.0);
    EXPECT_DOUBLE_EQ(c[2], 2.5);
}

TEST(Convolve, MatchesBruteForceLoopIn2D) {
    const Grid g(2, 2.0, 3);
    const auto k = tabulate_kernel(interaction::Quadratic{-1}, g, false);
    std::mt19937_64 rng(3);
    const auto rho = random_field(rng, g.size());
    const auto c = convolve(k, rho);
    const int n = g.cells();
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            double s = 0.0;
            for (int l = 0; l < n; ++l) {
                for (int q = 0; q < n; ++q) {
                    const double dx = (i - q) * g.dx(), dy = (j - l) * g.dx();
                    s += -0.5 * (dx * dx + dy * dy) * rho[g.index(q, l)];
                }
            }
            EXPECT_NEAR(c[g.index(i, j)], s * g.cell_measure(), 1e-12 * (1.0 + std::abs(s)));
        }
    }
}

TEST(Convolve, GridMismatchIsAShapeError) {
    const Grid g(1, 1.0, 3);
    const auto k = tabulate_kernel(interaction::Quadratic{1}, g, false);
    EXPECT_THROW(convolve(k, std::vector<double>(5, 1.0)), ShapeError);
    EXPECT_THROW(convolve(k, DensityField::zeros(Grid(1, 2.0, 3))), ShapeError);
}

TEST(ConvolveProperty, BilinearFormIsSymmetric) {
    std::mt19937_64 rng(11);
    for (int d : {1, 2}) {
        const Grid g(d, 3.0, 8);
        const auto k = tabulate_kernel(interaction::Gaussian{0.5, -1}, g, true);
        for (int trial = 0; trial < 20; ++trial) {
            const auto a = random_field(rng, g.size());
            const auto b = random_field(rng, g.size());
            const auto wa = convolve(k, a);
            const auto wb = convolve(k, b);
            double ab = 0.0, ba = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                ab += a[i] * wb[i];
                ba += b[i] * wa[i];
            }
            EXPECT_LE(std::abs(ab - ba), 1e-12 * std::abs(ab));
        }
    }
}

TEST(ConvolveProperty, FftMatchesDirectSum) {
    std::mt19937_64 rng(5);
    for (int d : {1, 2}) {
        for (int M : {8, 32}) {
            const Grid g(d, 4.0, M);
            const auto k = tabulate_kernel(interaction::Gaussian{0.5, -1}, g, false);
            for (int trial = 0; trial < 100; ++trial) {
                const auto rho = random_field(rng, g.size());
                EXPECT_LE(rel_diff(convolve_fft(k, rho), convolve(k, rho)), 1e-12)
                    << "d = " << d << ", M = " << M;
            }
        }
    }
}

TEST(Definiteness, QuadraticKernelsUseTheExactForm) {
    const Grid g(1, 5.0, 16);
    const auto pos = classify_definiteness(tabulate_kernel(interaction::Quadratic{1}, g, false), g);
    EXPECT_EQ(pos.kind, Definiteness::NegativeDefinite);
    EXPECT_EQ(pos.evidence.source, DefinitenessEvidence::Source::ExactForm);
    EXPECT_EQ(pos.evidence.tag, "exact:quadratic-attractive");
    const auto neg = classify_definiteness(tabulate_kernel(interaction::Quadratic{-1}, g, false), g);
    EXPECT_EQ(neg.kind, Definiteness::PositiveDefinite);
    EXPECT_EQ(neg.evidence.source, DefinitenessEvidence::Source::ExactForm);
}

TEST(Definiteness, AttractiveGaussianIsNegativeDefinite) {
    const Grid g(1, 5.0, 64);
    const auto k = tabulate_kernel(interaction::Gaussian{0.5, -1}, g, false);
    const auto cls = classify_definiteness(k, g);
    EXPECT_EQ(cls.kind, Definiteness::NegativeDefinite);
    EXPECT_EQ(cls.evidence.tag, "dft");
    // Oracle: the 4M-point sequence of offsets -2M+1..2M, transformed by direct summation.
    const int n = g.cells();
    std::vector<double> c(static_cast<std::size_t>(2 * n));
    for (int j = 0; j < 2 * n; ++j) c[static_cast<std::size_t>(j)] = k(j <= n ? j : j - 2 * n);
    const auto spec = naive_dft(c);
    double amax = 0.0;
    for (double s : spec) amax = std::max(amax, std::abs(s));
    for (double s : spec) EXPECT_LE(s, 1e-12 * amax);
    EXPECT_NEAR(*std::max_element(spec.begin(), spec.end()), cls.evidence.spectrum_max, 1e-10 * amax);
}

TEST(Definiteness, RepulsiveGaussianIsPositiveDefinite) {
    const Grid g(2, 3.0, 8);
    const auto cls = classify_definiteness(tabulate_kernel(interaction::Gaussian{0.5, 1}, g, false), g);
    EXPECT_EQ(cls.kind, Definiteness::PositiveDefinite);
}

TEST(Definiteness, MixedSpectrumIsIndeterminate) {
    const Grid g(1, 2.0, 4);  // offsets -7..7
    std::vector<double> t(15, 0.0);
    t[7] = 1.0;
    t[6] = t[8] = 2.0;  // 1 + 4 cos(theta) changes sign
    const auto cls = classify_definiteness(tabulate_kernel(interaction::Tabulated{t}, g, false), g);
    EXPECT_EQ(cls.kind, Definiteness::Indeterminate);
    EXPECT_LT(cls.evidence.spectrum_min, 0.0);
    EXPECT_GT(cls.evidence.spectrum_max, 0.0);
}

TEST(DefinitenessProperty, CertifiedKernelGivesNonPositiveFormOnEqualMassPairs) {
    std::mt19937_64 rng(21);
    const Grid g(1, 2.0, 8);
    for (const Interaction& w : std::vector<Interaction>{interaction::Gaussian{0.5, -1}, interaction::Quadratic{1}}) {
        const auto k = tabulate_kernel(w, g, false);
        const auto cls = classify_definiteness(k, g);
        ASSERT_EQ(cls.kind, Definiteness::NegativeDefinite);
        const double tol = cls.evidence.tolerance;
        const int n = g.cells();
        for (int trial = 0; trial < 200; ++trial) {
            auto a = random_field(rng, static_cast<std::size_t>(n));
            auto b = random_field(rng, static_cast<std::size_t>(n));
            double ma = 0.0, mb = 0.0;
            for (int i = 0; i < n; ++i) {
                ma += a[i];
                mb += b[i];
            }
            double q = 0.0;
            for (int i = 0; i < n; ++i) {
                for (int m = 0; m < n; ++m) q += k(i - m) * (a[i] - b[i] * ma / mb) * (a[m] - b[m] * ma / mb);
            }
            EXPECT_LE(q, tol + 1e-13);
        }
    }
}

TEST(StageRule, SelectionFollowsDefiniteness) {
    DefinitenessClass neg{Definiteness::NegativeDefinite, {}};
    DefinitenessClass pos{Definiteness::PositiveDefinite, {}};
    DefinitenessClass ind{Definiteness::Indeterminate, {}};
    EXPECT_EQ(select_stage_rule(neg).rule, StageRule::Explicit);
    EXPECT_EQ(select_stage_rule(pos).rule, StageRule::Implicit);
    EXPECT_EQ(select_stage_rule(ind).rule, StageRule::Midpoint);
    const auto mid = select_stage_rule(pos, StageRule::Midpoint);
    EXPECT_EQ(mid.rule, StageRule::Midpoint);
    EXPECT_FALSE(mid.guarantee_voided);
    const auto risky = select_stage_rule(pos, StageRule::Explicit);
    EXPECT_EQ(risky.rule, StageRule::Explicit);
    EXPECT_TRUE(risky.guarantee_voided);
    EXPECT_EQ(stage_weight(StageRule::Explicit), 0.0);
    EXPECT_EQ(stage_weight(StageRule::Implicit), 1.0);
    EXPECT_EQ(stage_weight(StageRule::Midpoint), 0.5);
}
