#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "aggdiff/split2d.hpp"

using namespace aggdiff;

namespace {

std::vector<double> gaussian2d(const Grid& g, double width, double cx = 0.0, double cy = 0.0) {
    std::vector<double> v(g.size());
    double mass = 0.0;
    for (int j = 0; j < g.cells(); ++j) {
        for (int i = 0; i < g.cells(); ++i) {
            const double zx = (g.center(i) - cx) / width;
            const double zy = (g.center(j) - cy) / width;
            v[g.index(i, j)] = std::exp(-0.5 * (zx * zx + zy * zy));
            mass += v[g.index(i, j)];
        }
    }
    for (double& x : v) x /= mass * g.cell_measure();
    return v;
}

double total(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

// Entropy with |x|^2/2 confinement and |x|^2/2 attraction.
PreparedModel nonlocal_fp(int M, double L, StageRule stage = StageRule::Midpoint) {
    PotentialSpec p;
    p.confinement = confinement::Quadratic{1.0};
    p.interaction = interaction::Quadratic{1};
    return prepare_model(ModelSpec(InternalEnergy::entropy(1.0), p, Grid(2, L, M)), stage);
}

}  // namespace

TEST(SplitAxis, RowsMatchTheOneDimensionalStep) {
    const double L = 3.0;
    const int M = 8;
    PotentialSpec p;
    p.confinement = confinement::Quadratic{1.0};
    const auto pm2 = prepare_model(ModelSpec(InternalEnergy::power(1.0, 2.0), p, Grid(2, L, M)));
    const auto pm1 = prepare_model(ModelSpec(InternalEnergy::power(1.0, 2.0), p, Grid(1, L, M)));
    const Grid& g1 = pm1.grid();
    std::vector<double> row(g1.size());
    for (int i = 0; i < g1.cells(); ++i) row[static_cast<std::size_t>(i)] = std::exp(-g1.center(i) * g1.center(i)) + 0.01;
    std::vector<double> field;
    for (int j = 0; j < g1.cells(); ++j) field.insert(field.end(), row.begin(), row.end());
    for (auto kind : {SchemeKind::S1, SchemeKind::S2}) {
        const double dt = 0.01;
        const auto one = advance_step_1d(DensityField(g1, row), dt, {kind}, pm1);
        ASSERT_EQ(one.cfl_retries, 0);
        const auto two = advance_split_axis(field, Axis::X, dt, {kind}, pm2);
        EXPECT_TRUE(two.admissible);
        for (int j = 0; j < g1.cells(); ++j) {
            for (int i = 0; i < g1.cells(); ++i) {
                EXPECT_NEAR(two.field[pm2.grid().index(i, j)], one.field.values()[static_cast<std::size_t>(i)], 1e-10);
            }
        }
    }
}

TEST(SplitAxis, UniformStateIsUnchanged) {
    const auto pm = prepare_model(ModelSpec(InternalEnergy::entropy(1.0), {}, Grid(2, 1.0, 4)));
    const std::vector<double> field(pm.grid().size(), 0.3);
    for (auto kind : {SchemeKind::S1, SchemeKind::S2}) {
        const auto out = advance_step_2d(DensityField(pm.grid(), field), 0.1, {kind}, pm);
        for (double v : out.field.values()) EXPECT_EQ(v, 0.3);
    }
}

TEST(SplitAxis, ImplicitInteractionIsRoutedToSweeping) {
    const auto pm = nonlocal_fp(4, 2.0, StageRule::Midpoint);
    const std::vector<double> field(pm.grid().size(), 0.3);
    EXPECT_THROW(advance_split_axis(field, Axis::X, 0.1, {SchemeKind::S2}, pm), RoutingError);
    EXPECT_THROW(advance_step_2d(DensityField(pm.grid(), field), 0.1, {SchemeKind::S2}, pm, {}, Route::Split),
                 RoutingError);
}

TEST(SplitAxis, S1BelowTheBoundStaysNonNegative) {
    PotentialSpec p;
    p.confinement = confinement::Bistable{1.0};
    const auto pm = prepare_model(ModelSpec(InternalEnergy::power(1.0, 3.0), p, Grid(2, 2.0, 10)));
    DensityField rho(pm.grid(), gaussian2d(pm.grid(), 0.3, 0.5, -0.2));
    for (int n = 0; n < 5; ++n) {
        const auto out = advance_step_2d(rho, 0.05, {SchemeKind::S1}, pm);
        EXPECT_GE(out.field.min(), -1e-9);
        rho = out.field;
    }
}

TEST(SweepAxis, MatchesSplitWithoutInteraction) {
    PotentialSpec p;
    p.confinement = confinement::Bistable{1.0};
    const auto pm = prepare_model(ModelSpec(InternalEnergy::power(0.5, 2.0), p, Grid(2, 2.0, 6)));
    NewtonConfig cfg;
    cfg.tolerance = 1e-12;
    const auto field = gaussian2d(pm.grid(), 0.4, 0.3, -0.1);
    for (auto kind : {SchemeKind::S1, SchemeKind::S2}) {
        for (auto axis : {Axis::X, Axis::Y}) {
            const auto a = advance_split_axis(field, axis, 0.01, {kind}, pm, cfg);
            const auto b = advance_sweep_axis(field, axis, 0.01, {kind}, pm, cfg);
            for (std::size_t i = 0; i < field.size(); ++i) EXPECT_NEAR(a.field[i], b.field[i], 1e-8);
        }
    }
}

TEST(SweepAxis, SingleRowPlaneIsTheOneDimensionalScheme) {
    PotentialSpec p;
    p.confinement = confinement::Bistable{1.0};
    const auto pm = prepare_model(ModelSpec(InternalEnergy::power(1.0, 2.0), p, Grid(1, 2.0, 6)));
    const Grid& g = pm.grid();
    std::vector<double> row(g.size());
    for (int i = 0; i < g.cells(); ++i) row[static_cast<std::size_t>(i)] = 1.0 + 0.5 * std::sin(g.center(i));
    const detail::Plane plane{g.cells(), 1, g.dx()};
    for (auto kind : {SchemeKind::S1, SchemeKind::S2}) {
        const auto sweep = detail::sweep_plane(row, plane, Axis::X, 0.02, {kind}, pm.energy(), pm.confinement,
                                               pm.kernel, 0.0, {});
        const auto lp = make_line_problem_1d({kind}, pm, row, 0.02);
        const auto one = solve_line(lp, {});
        EXPECT_EQ(sweep.line_systems, 1);
        for (std::size_t i = 0; i < row.size(); ++i) EXPECT_EQ(sweep.field[i], one.solution[i]);
    }
}

TEST(SweepAxis, StagesTouchOnlyTheirOwnLine) {
    const auto pm = nonlocal_fp(6, 3.0);
    const Grid& g = pm.grid();
    const auto field = gaussian2d(g, 0.6, 0.4, -0.3);
    for (auto kind : {SchemeKind::S1, SchemeKind::S2}) {
        for (auto axis : {Axis::X, Axis::Y}) {
            std::vector<double> before = field;
            int stages = 0;
            auto observe = [&](int r, std::span<const double> now) {
                EXPECT_EQ(r, stages);
                ++stages;
                for (int j = 0; j < g.cells(); ++j) {
                    for (int i = 0; i < g.cells(); ++i) {
                        const int line = axis == Axis::X ? j : i;
                        if (line != r) EXPECT_EQ(now[g.index(i, j)], before[g.index(i, j)]);
                    }
                }
                before.assign(now.begin(), now.end());
            };
            advance_sweep_axis(field, axis, 0.002, {kind}, pm, {}, observe);
            EXPECT_EQ(stages, g.cells());
        }
    }
}

TEST(SweepAxis, EveryStageDissipatesEnergyAndKeepsMass) {
    for (auto stage : {StageRule::Midpoint, StageRule::Implicit}) {
        PotentialSpec p;
        p.confinement = confinement::Quadratic{1.0};
        p.interaction = interaction::Gaussian{0.5, 1};
        const auto pm = prepare_model(ModelSpec(InternalEnergy::power(0.5, 2.0), p, Grid(2, 2.5, 8)), stage);
        const auto field = gaussian2d(pm.grid(), 0.5, -0.6, 0.2);
        const double tol = NewtonConfig{}.tolerance;
        for (auto axis : {Axis::X, Axis::Y}) {
            double e_prev = energy_of(field, pm);
            const double mass = total(field) * pm.grid().cell_measure();
            auto observe = [&](int, std::span<const double> now) {
                const double e = energy_of(now, pm);
                EXPECT_LE(e, e_prev + 100.0 * tol * (1.0 + std::abs(e_prev)));
                EXPECT_NEAR(total(now) * pm.grid().cell_measure(), mass, 10.0 * tol * (1.0 + mass));
                e_prev = e;
            };
            advance_sweep_axis(field, axis, 0.05, {SchemeKind::S2}, pm, {}, observe);
        }
    }
}

TEST(StagedConvolution, IncrementalUpdateMatchesFullRecomputation) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PotentialSpec p;
    p.interaction = interaction::Gaussian{0.7, -1};
    for (int M : {4, 20}) {  // direct and FFT line updates
        const auto pm = prepare_model(ModelSpec(InternalEnergy::entropy(1.0), p, Grid(2, 2.0, M)));
        const Grid& g = pm.grid();
        const auto plane = detail::plane_of(g);
        for (auto axis : {Axis::X, Axis::Y}) {
            std::vector<double> field(g.size());
            for (double& v : field) v = u(rng);
            detail::StagedConvolution conv(pm.kernel, plane, axis, field);
            for (int r : {0, g.cells() / 2, g.cells() - 1}) {
                std::vector<double> delta(static_cast<std::size_t>(g.cells()));
                for (double& d : delta) d = u(rng) - 0.5;
                auto line = plane.get(field, axis, r);
                for (std::size_t k = 0; k < line.size(); ++k) line[k] += delta[k];
                plane.put(field, axis, r, line);
                conv.update(r, delta);
            }
            const auto full = convolve(pm.kernel, field);
            for (std::size_t i = 0; i < field.size(); ++i) EXPECT_NEAR(conv.field()[i], full[i], 1e-12);
        }
    }
}

TEST(Step2D, NonlocalFokkerPlanckDissipatesEnergy) {
    const auto pm = nonlocal_fp(8, 3.0);
    DensityField rho(pm.grid(), gaussian2d(pm.grid(), 0.5, 0.8, -0.4));
    const double mass = rho.mass();
    for (int n = 0; n < 4; ++n) {
        const auto out = advance_step_2d(rho, 0.05, {SchemeKind::S2}, pm);
        EXPECT_LE(out.energy_after, out.energy_before + 1e-8 * (1.0 + std::abs(out.energy_before)));
        EXPECT_NEAR(out.field.mass(), mass, 1e-9 * (1.0 + mass));
        rho = out.field;
    }
}

TEST(Step2D, LineSystemCountIsTwiceTheCellsPerSide) {
    for (int M : {3, 6}) {
        const auto sweep_pm = nonlocal_fp(M, 2.0);
        const auto split_pm = prepare_model(ModelSpec(InternalEnergy::entropy(1.0), {}, Grid(2, 2.0, M)));
        for (const auto* pm : {&sweep_pm, &split_pm}) {
            const DensityField rho(pm->grid(), gaussian2d(pm->grid(), 0.5));
            const auto out = advance_step_2d(rho, 0.01, {SchemeKind::S2}, *pm);
            EXPECT_EQ(out.line_systems, 2 * (2 * M));
        }
    }
}

TEST(Step2D, MirrorSymmetricDataStaysMirrorSymmetric) {
    // Radially symmetric data under heat and a radial confinement.
    PotentialSpec p;
    p.confinement = confinement::Quadratic{1.0};
    const auto pm = prepare_model(ModelSpec(InternalEnergy::entropy(1.0), p, Grid(2, 3.0, 8)));
    const Grid& g = pm.grid();
    const int n = g.cells();
    for (auto kind : {SchemeKind::S1, SchemeKind::S2}) {
        const auto out = advance_step_2d(DensityField(g, gaussian2d(g, 0.7)), 0.01, {kind}, pm);
        const auto& f = out.field.values();
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < n; ++i) {
                EXPECT_NEAR(f[g.index(i, j)], f[g.index(j, i)], 1e-8);
                EXPECT_NEAR(f[g.index(i, j)], f[g.index(n - 1 - i, j)], 1e-8);
                EXPECT_NEAR(f[g.index(i, j)], f[g.index(i, n - 1 - j)], 1e-8);
            }
        }
    }
}
