#pragma once

// Batch layer behind the command-line tool: INI experiment configs, time
// integration with CSV/snapshot output, convergence studies for the
// validation presets, and parameter sweeps over steady states.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "aggdiff/analysis.hpp"
#include "aggdiff/split2d.hpp"

namespace aggdiff {

// ---------------------------------------------------------------------------
// Configuration

enum class InitialKind { Reference, Gaussian, Bumps, Uniform, Zero, Table };

struct InitialCondition {
    InitialKind kind = InitialKind::Zero;
    ReferenceSolution reference;  ///< for Reference
    double reference_time = 0.0;
    /// Bump centres, one entry per bump, each of size `dimension`.
    std::vector<std::vector<double>> centers;
    std::vector<double> widths;
    std::vector<double> masses;
    double value = 0.0;  ///< for Uniform
    std::vector<double> table;
    /// Added to the x coordinate of every bump centre.
    double shift_x = 0.0;
};

struct OutputConfig {
    std::filesystem::path directory;  ///< empty: no files
    std::vector<double> snapshot_times;
    int cadence = 0;  ///< snapshot every `cadence` steps when > 0
};

struct ExperimentConfig {
    InternalEnergy energy = InternalEnergy::entropy(1.0);
    PotentialSpec potentials;
    Grid grid{1, 1.0, 1};
    SchemeConfig scheme;
    NewtonConfig newton;
    double t_initial = 0.0;
    double t_final = 1.0;
    std::optional<double> dt;  ///< empty: chosen from the CFL bound each step
    double cfl_fraction = 0.9;
    InitialCondition initial;
    OutputConfig output;
    std::optional<ReferenceSolution> reference;  ///< L1 error at t_final when set
    /// Stop early once ||rho^{n+1} - rho^n||_1 drops below this (0: never).
    double steady_tolerance = 0.0;

    [[nodiscard]] ModelSpec model() const { return ModelSpec(energy, potentials, grid); }
};

namespace detail {

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline double to_double(const std::string& s, const std::string& key) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("'" + key + "' expects a number, got '" + s + "'");
    }
}

inline std::vector<double> to_doubles(const std::string& s, const std::string& key) {
    std::vector<double> out;
    for (const auto& part : split(s, ',')) out.push_back(to_double(part, key));
    return out;
}

class Reader {
public:
    explicit Reader(const boost::property_tree::ptree& pt) : pt_(pt) {}

    [[nodiscard]] std::optional<std::string> text(const std::string& key) const {
        if (auto v = pt_.get_optional<std::string>(boost::property_tree::ptree::path_type(key, '.'))) {
            return trim(*v);
        }
        return std::nullopt;
    }
    [[nodiscard]] std::string text(const std::string& key, const std::string& fallback) const {
        return text(key).value_or(fallback);
    }
    [[nodiscard]] std::optional<double> number(const std::string& key) const {
        if (auto v = text(key)) return to_double(*v, key);
        return std::nullopt;
    }
    [[nodiscard]] double number(const std::string& key, double fallback) const {
        return number(key).value_or(fallback);
    }
    [[nodiscard]] int integer(const std::string& key, int fallback) const {
        const double v = number(key, fallback);
        if (v != std::floor(v)) throw ConfigError("'" + key + "' expects an integer");
        return static_cast<int>(v);
    }
    [[nodiscard]] bool flag(const std::string& key, bool fallback) const {
        const auto v = text(key);
        if (!v) return fallback;
        const auto l = lower(*v);
        if (l == "true" || l == "yes" || l == "1" || l == "on") return true;
        if (l == "false" || l == "no" || l == "0" || l == "off") return false;
        throw ConfigError("'" + key + "' expects true or false");
    }
    [[nodiscard]] double required(const std::string& key) const {
        if (auto v = number(key)) return *v;
        throw ConfigError("missing required key '" + key + "'");
    }

private:
    const boost::property_tree::ptree& pt_;
};

inline ReferenceKind parse_reference_kind(const std::string& s) {
    const auto l = lower(s);
    if (l == "heat") return ReferenceKind::HeatKernel;
    if (l == "barenblatt") return ReferenceKind::Barenblatt;
    if (l == "fp_transient") return ReferenceKind::FokkerPlanckTransient;
    if (l == "fp_steady") return ReferenceKind::FokkerPlanckSteady;
    throw ConfigError("unknown reference kind '" + s + "'");
}

inline bool is_reference_kind(const std::string& s) {
    const auto l = lower(s);
    return l == "heat" || l == "barenblatt" || l == "fp_transient" || l == "fp_steady";
}

inline ReferenceSolution read_reference(const Reader& r, const std::string& section,
                                        const std::string& kind, const ExperimentConfig& cfg) {
    ReferenceSolution ref;
    ref.kind = parse_reference_kind(kind);
    ref.dimension = cfg.grid.dimension();
    ref.diffusion = r.number(section + ".diffusion", cfg.energy.diffusion);
    ref.exponent = r.number(section + ".exponent", cfg.energy.exponent);
    ref.mass = r.number(section + ".mass");
    if (ref.kind == ReferenceKind::Barenblatt && !ref.mass) ref.mass = 1.0;
    return ref;
}

}  // namespace detail

inline std::optional<StageRule> parse_stage_rule(const std::string& s) {
    const auto l = detail::lower(s);
    if (l == "auto") return std::nullopt;
    if (l == "explicit") return StageRule::Explicit;
    if (l == "implicit") return StageRule::Implicit;
    if (l == "midpoint") return StageRule::Midpoint;
    throw ConfigError("unknown stage rule '" + s + "'");
}

inline SchemeKind parse_scheme_kind(const std::string& s) {
    const auto l = detail::lower(s);
    if (l == "s1") return SchemeKind::S1;
    if (l == "s2") return SchemeKind::S2;
    throw ConfigError("unknown scheme '" + s + "' (expected s1 or s2)");
}

/// Parse an INI experiment description; see configs/README for the keys.
inline ExperimentConfig parse_config(std::istream& in,
                                     const std::filesystem::path& base = std::filesystem::path()) {
    boost::property_tree::ptree pt;
    try {
        boost::property_tree::ini_parser::read_ini(in, pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    const detail::Reader r(pt);
    ExperimentConfig cfg;

    cfg.grid = Grid(r.integer("grid.dimension", 1), r.required("grid.half_width"),
                    r.integer("grid.cells_per_half", 0));

    const auto energy = detail::lower(r.text("model.energy", "entropy"));
    const double D = r.number("model.diffusion", 1.0);
    if (energy == "entropy") {
        cfg.energy = InternalEnergy::entropy(D);
    } else if (energy == "power") {
        cfg.energy = InternalEnergy::power(D, r.required("model.exponent"));
    } else if (energy == "power_entropy") {
        cfg.energy = InternalEnergy::power_plus_entropy(D, r.required("model.exponent"),
                                                        r.number("model.regularization", 0.0));
    } else {
        throw ConfigError("unknown energy kind '" + energy + "'");
    }

    const auto conf = detail::lower(r.text("model.confinement", "none"));
    if (conf == "none") {
        cfg.potentials.confinement = confinement::None{};
    } else if (conf == "quadratic") {
        cfg.potentials.confinement = confinement::Quadratic{r.number("model.confinement_coefficient", 1.0)};
    } else if (conf == "bistable") {
        cfg.potentials.confinement = confinement::Bistable{r.number("model.alpha", 1.0)};
    } else {
        throw ConfigError("unknown confinement kind '" + conf + "'");
    }

    const auto inter = detail::lower(r.text("model.interaction", "none"));
    if (inter == "none") {
        cfg.potentials.interaction = interaction::None{};
    } else if (inter == "quadratic") {
        const double s = r.number("model.interaction_sign", 1.0);
        if (s != 1.0 && s != -1.0) throw ConfigError("interaction_sign must be +1 or -1");
        cfg.potentials.interaction = interaction::Quadratic{static_cast<int>(s)};
    } else if (inter == "gaussian") {
        const double s = r.number("model.interaction_sign", -1.0);
        if (s != 1.0 && s != -1.0) throw ConfigError("interaction_sign must be +1 or -1");
        const double sigma = r.required("model.interaction_sigma");
        if (!(sigma > 0.0)) throw ConfigError("interaction_sigma must be positive");
        cfg.potentials.interaction = interaction::Gaussian{sigma, static_cast<int>(s)};
    } else if (inter == "power") {
        cfg.potentials.interaction = interaction::Power{r.number("model.interaction_coefficient", 1.0),
                                                        r.required("model.interaction_exponent")};
    } else {
        throw ConfigError("unknown interaction kind '" + inter + "'");
    }
    cfg.potentials.singular_interaction = r.flag("model.singular", false);

    cfg.scheme.kind = parse_scheme_kind(r.text("scheme.kind", "s1"));
    cfg.scheme.stage = parse_stage_rule(r.text("scheme.stage", "auto"));
    cfg.scheme.theta = r.number("scheme.theta", 2.0);
    cfg.scheme.validate();

    cfg.newton.tolerance = r.number("newton.tolerance", cfg.newton.tolerance);
    cfg.newton.max_iterations = r.integer("newton.max_iterations", cfg.newton.max_iterations);
    const auto jac = detail::lower(r.text("newton.jacobian", "analytic"));
    if (jac == "analytic") {
        cfg.newton.jacobian = JacobianMode::Analytic;
    } else if (jac == "fd" || jac == "finite_difference") {
        cfg.newton.jacobian = JacobianMode::FiniteDifference;
    } else {
        throw ConfigError("unknown jacobian mode '" + jac + "'");
    }
    cfg.newton.validate();

    cfg.t_initial = r.number("time.t_initial", 0.0);
    cfg.t_final = r.required("time.t_final");
    if (!(cfg.t_final > cfg.t_initial)) throw ConfigError("t_final must exceed t_initial");
    const auto dt = detail::lower(r.text("time.dt", "cfl:auto"));
    if (dt == "cfl:auto") {
        cfg.dt.reset();
    } else {
        cfg.dt = detail::to_double(dt, "time.dt");
        if (!(*cfg.dt > 0.0)) throw ConfigError("time.dt must be positive");
    }
    cfg.cfl_fraction = r.number("time.cfl_fraction", 0.9);
    cfg.steady_tolerance = r.number("time.steady_tolerance", 0.0);

    const auto ik = detail::lower(r.text("initial.kind", "zero"));
    auto& ic = cfg.initial;
    if (detail::is_reference_kind(ik)) {
        ic.kind = InitialKind::Reference;
        ic.reference = detail::read_reference(r, "initial", ik, cfg);
        ic.reference_time = r.number("initial.time", cfg.t_initial);
    } else if (ik == "gaussian" || ik == "bumps") {
        ic.kind = ik == "gaussian" ? InitialKind::Gaussian : InitialKind::Bumps;
        const auto centres = detail::split(r.text("initial.centers", r.text("initial.center", "0")), ';');
        for (const auto& c : centres) {
            auto v = detail::to_doubles(c, "initial.centers");
            if (v.size() == 1 && cfg.grid.dimension() == 2) v.push_back(0.0);
            if (v.size() != static_cast<std::size_t>(cfg.grid.dimension())) {
                throw ConfigError("bump centre '" + c + "' does not match the grid dimension");
            }
            ic.centers.push_back(v);
        }
        ic.widths = detail::to_doubles(r.text("initial.widths", r.text("initial.width", "1")), "initial.widths");
        ic.masses = detail::to_doubles(r.text("initial.masses", r.text("initial.mass", "1")), "initial.masses");
        const auto nb = ic.centers.size();
        if (ic.widths.size() == 1) ic.widths.resize(nb, ic.widths[0]);
        if (ic.masses.size() == 1) ic.masses.assign(nb, ic.masses[0] / static_cast<double>(nb));
        if (ic.widths.size() != nb || ic.masses.size() != nb) {
            throw ConfigError("initial bumps: centers, widths and masses differ in length");
        }
        for (double w : ic.widths) {
            if (!(w > 0.0)) throw ConfigError("bump widths must be positive");
        }
        ic.shift_x = r.number("initial.shift_x", 0.0);
    } else if (ik == "uniform") {
        ic.kind = InitialKind::Uniform;
        ic.value = r.required("initial.value");
    } else if (ik == "zero") {
        ic.kind = InitialKind::Zero;
    } else if (ik == "table") {
        ic.kind = InitialKind::Table;
        const auto file = r.text("initial.file");
        if (!file) throw ConfigError("initial.kind = table needs initial.file");
        std::filesystem::path path(*file);
        if (path.is_relative()) path = base / path;
        std::ifstream tin(path);
        if (!tin) throw ConfigError("cannot open initial table '" + path.string() + "'");
        double v = 0.0;
        while (tin >> v) ic.table.push_back(v);
    } else {
        throw ConfigError("unknown initial kind '" + ik + "'");
    }

    if (auto rk = r.text("reference.kind")) {
        cfg.reference = detail::read_reference(r, "reference", *rk, cfg);
    }

    if (auto dir = r.text("output.directory")) cfg.output.directory = *dir;
    if (auto snaps = r.text("output.snapshots")) cfg.output.snapshot_times = detail::to_doubles(*snaps, "output.snapshots");
    cfg.output.cadence = r.integer("output.cadence", 0);
    std::sort(cfg.output.snapshot_times.begin(), cfg.output.snapshot_times.end());
    (void)cfg.model();  // validates the model block
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    return parse_config(in, path.parent_path());
}

/// Initial density on the configured grid.
inline DensityField build_initial(const ExperimentConfig& cfg) {
    const Grid& g = cfg.grid;
    const auto& ic = cfg.initial;
    switch (ic.kind) {
        case InitialKind::Zero:
            return DensityField::zeros(g);
        case InitialKind::Uniform:
            return DensityField(g, std::vector<double>(g.size(), ic.value));
        case InitialKind::Table:
            return DensityField(g, ic.table);
        case InitialKind::Reference:
            return DensityField(g, sample_reference(ic.reference, ic.reference_time, g));
        case InitialKind::Gaussian:
        case InitialKind::Bumps: {
            std::vector<double> v(g.size(), 0.0);
            const int n = g.cells();
            const int d = g.dimension();
            for (std::size_t b = 0; b < ic.centers.size(); ++b) {
                const double s2 = ic.widths[b] * ic.widths[b];
                const double norm = ic.masses[b] * std::pow(2.0 * std::numbers::pi * s2, -0.5 * d);
                const double cx = ic.centers[b][0] + ic.shift_x;
                const double cy = d == 2 ? ic.centers[b][1] : 0.0;
                for (int j = 0; j < (d == 2 ? n : 1); ++j) {
                    const double y = d == 2 ? g.center(j) - cy : 0.0;
                    for (int i = 0; i < n; ++i) {
                        const double x = g.center(i) - cx;
                        v[d == 2 ? g.index(i, j) : static_cast<std::size_t>(i)] +=
                            norm * std::exp(-(x * x + y * y) / (2.0 * s2));
                    }
                }
            }
            return DensityField(g, std::move(v));
        }
    }
    return DensityField::zeros(g);
}

// ---------------------------------------------------------------------------
// Output helpers

/// Ten significant digits, the precision used in every CSV and snapshot.
inline std::string fmt10(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline void write_snapshot(const std::filesystem::path& file, const DensityField& rho) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw ConfigError("cannot write snapshot '" + file.string() + "'");
    const Grid& g = rho.grid();
    const int n = g.cells();
    if (g.dimension() == 1) {
        out << "x,rho\n";
        for (int i = 0; i < n; ++i) {
            out << fmt10(g.center(i)) << ',' << fmt10(rho[static_cast<std::size_t>(i)]) << '\n';
        }
    } else {
        out << "x,y,rho\n";
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < n; ++i) {
                out << fmt10(g.center(i)) << ',' << fmt10(g.center(j)) << ',' << fmt10(rho.at(i, j)) << '\n';
            }
        }
    }
}

/// Relative output directories are placed under $AGGDIFF_OUTPUT_ROOT when set.
inline std::filesystem::path resolve_output(const std::filesystem::path& dir) {
    if (dir.empty() || dir.is_absolute()) return dir;
    if (const char* root = std::getenv("AGGDIFF_OUTPUT_ROOT"); root != nullptr && *root != '\0') {
        return std::filesystem::path(root) / dir;
    }
    return dir;
}

// ---------------------------------------------------------------------------
// Running

struct StepRow {
    double t = 0.0;
    double energy = 0.0;
    double mass = 0.0;
    double min_density = 0.0;
    int iterations = 0;
    double dt = 0.0;
    int cfl_retries = 0;
    double change = 0.0;  ///< ||rho^{n+1} - rho^n||_1
};

struct RunRecord {
    std::vector<StepRow> rows;  ///< rows[0] is the initial state
    std::vector<std::filesystem::path> snapshots;
    DensityField final_field;
    double final_time = 0.0;
    bool completed = false;
    bool steady = false;          ///< stopped because the steady tolerance was met
    bool energy_monotone = true;  ///< E non-increasing within 100 tol (1 + |E|)
    bool mass_conserved = true;
    bool positive = true;
    std::string failure;
    std::optional<double> l1_error;
    DefinitenessClass definiteness;
    StageSelection stage;

    [[nodiscard]] bool ok() const noexcept {
        return completed && energy_monotone && mass_conserved && positive && failure.empty();
    }
};

inline void write_timeseries(const std::filesystem::path& file, const std::vector<StepRow>& rows) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + file.string() + "'");
    out << "t,energy,mass,min_rho,newton_iterations,dt,cfl_retries\n";
    for (const auto& r : rows) {
        out << fmt10(r.t) << ',' << fmt10(r.energy) << ',' << fmt10(r.mass) << ',' << fmt10(r.min_density)
            << ',' << r.iterations << ',' << fmt10(r.dt) << ',' << r.cfl_retries << '\n';
    }
}

/// Largest admissible dt for the current state: CFL fraction of the S1 bound
/// evaluated on the old velocities, dx for S2.
inline double automatic_dt(const DensityField& rho, const ExperimentConfig& cfg, const PreparedModel& pm) {
    const double dx = cfg.grid.dx();
    if (cfg.scheme.kind == SchemeKind::S2) return dx;
    const auto conv_rho = rho.values();
    std::vector<double> conv(conv_rho.size(), 0.0);
    if (!pm.kernel.absent()) conv = cfg.grid.dimension() == 2 ? convolve_fft(pm.kernel, conv_rho) : convolve(pm.kernel, conv_rho);
    std::vector<double> xi(conv_rho.size());
    for (std::size_t k = 0; k < xi.size(); ++k) {
        xi[k] = regularized_first(pm.energy(), conv_rho[k]) + pm.confinement[k] + conv[k];
    }
    double umax = 0.0;
    const int n = cfg.grid.cells();
    if (cfg.grid.dimension() == 1) {
        for (double u : face_velocities(xi, dx)) umax = std::max(umax, std::abs(u));
    } else {
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i + 1 < n; ++i) {
                umax = std::max(umax, std::abs(xi[cfg.grid.index(i + 1, j)] - xi[cfg.grid.index(i, j)]) / dx);
                umax = std::max(umax, std::abs(xi[cfg.grid.index(j, i + 1)] - xi[cfg.grid.index(j, i)]) / dx);
            }
        }
    }
    const double bound = umax > 0.0 ? dx / (2.0 * umax) : dx;
    return std::min(cfg.cfl_fraction * bound, dx);
}

/// Time-step from t_initial to t_final. Solver failures end the run with
/// partial output and `failure` set; invariant breaches clear the flags.
inline RunRecord run_experiment(const ExperimentConfig& cfg) {
    const auto pm = prepare_model(cfg.model(), cfg.scheme.stage);
    RunRecord rec{.final_field = build_initial(cfg)};
    rec.definiteness = pm.definiteness;
    rec.stage = pm.stage;
    const auto dir = resolve_output(cfg.output.directory);
    const bool files = !dir.empty();
    if (files) std::filesystem::create_directories(dir);

    const double tol = cfg.newton.tolerance;
    DensityField rho = rec.final_field;
    double t = cfg.t_initial;
    auto snapshot = [&](const DensityField& f, double time) {
        if (!files) return;
        const auto file = dir / ("snapshot_t" + fmt10(time) + ".csv");
        write_snapshot(file, f);
        rec.snapshots.push_back(file);
    };
    const auto energy0 = energy_of(rho.values(), pm);
    rec.rows.push_back({t, energy0, rho.mass(), rho.min(), 0, 0.0, 0, 0.0});
    snapshot(rho, t);

    std::size_t next_snap = 0;
    while (next_snap < cfg.output.snapshot_times.size() && cfg.output.snapshot_times[next_snap] <= t) ++next_snap;
    const double eps_t = 1e-12 * std::max(1.0, std::abs(cfg.t_final));
    int step = 0;
    try {
        while (t < cfg.t_final - eps_t) {
            double h = cfg.dt ? *cfg.dt : automatic_dt(rho, cfg, pm);
            double stop = cfg.t_final;
            if (next_snap < cfg.output.snapshot_times.size()) {
                stop = std::min(stop, cfg.output.snapshot_times[next_snap]);
            }
            if (t + h > stop - eps_t) h = stop - t;
            const StepOutcome out = advance_step(rho, h, cfg.scheme, pm, cfg.newton);
            const double change = l1_distance(out.field, rho);
            const double m0 = rho.mass();
            const double m1 = out.field.mass();
            if (std::abs(m1 - m0) > 10.0 * tol * (1.0 + std::abs(m0))) rec.mass_conserved = false;
            if (out.field.min() < -10.0 * tol) rec.positive = false;
            if (out.energy_after > out.energy_before + 100.0 * tol * (1.0 + std::abs(out.energy_before))) {
                rec.energy_monotone = false;
            }
            rho = out.field;
            t += out.dt_used;
            ++step;
            rec.rows.push_back({t, out.energy_after, m1, rho.min(), out.iterations, out.dt_used,
                                out.cfl_retries, change});
            const bool at_snap = next_snap < cfg.output.snapshot_times.size() &&
                                 std::abs(t - cfg.output.snapshot_times[next_snap]) <= eps_t;
            if (at_snap) ++next_snap;
            if (at_snap || (cfg.output.cadence > 0 && step % cfg.output.cadence == 0)) snapshot(rho, t);
            if (cfg.steady_tolerance > 0.0 && change <= cfg.steady_tolerance) {
                rec.steady = true;
                break;
            }
        }
        rec.completed = true;
    } catch (const Error& e) {
        rec.failure = e.what();
    }
    rec.final_field = rho;
    rec.final_time = t;
    if (files) {
        write_timeseries(dir / "timeseries.csv", rec.rows);
        if (rec.snapshots.empty() || rec.snapshots.back() != dir / ("snapshot_t" + fmt10(t) + ".csv")) {
            snapshot(rho, t);
        }
    }
    if (cfg.reference && rec.completed) rec.l1_error = l1_error(rho, *cfg.reference, t);
    return rec;
}

// ---------------------------------------------------------------------------
// Convergence studies

struct ConvergenceRow {
    double dt = 0.0;
    double dx = 0.0;
    double dy = 0.0;  ///< 0 in 1D
    double error = 0.0;
    std::optional<double> order;
};

struct ConvergenceCase {
    std::string name;
    int dimension = 1;
    double half_width = 1.0;
    InternalEnergy energy = InternalEnergy::entropy(1.0);
    PotentialSpec potentials;
    std::optional<StageRule> stage;
    ReferenceSolution reference;
    double s1_dt0 = 1.0;  ///< S1 level-0 dt; later levels divide by 4
};

/// Named validation presets: heat1d, heat2d, pme1d(m), pme2d(m), linfp2d,
/// nonlocfp2d. Every preset runs from t = 2 to t = 3 with the reference as
/// initial datum; level l uses dx = 2^-(1+l).
inline ConvergenceCase convergence_case(const std::string& spec) {
    std::string name = detail::lower(detail::trim(spec));
    std::optional<double> m;
    if (const auto open = name.find('('); open != std::string::npos) {
        const auto close = name.find(')', open);
        if (close == std::string::npos) throw ConfigError("malformed case '" + spec + "'");
        m = detail::to_double(name.substr(open + 1, close - open - 1), "exponent");
        name = name.substr(0, open);
    } else if (const auto colon = name.find(':'); colon != std::string::npos) {
        m = detail::to_double(name.substr(colon + 1), "exponent");
        name = name.substr(0, colon);
    }
    ConvergenceCase c;
    c.name = detail::trim(spec);
    if (name == "heat1d" || name == "heat2d") {
        c.dimension = name == "heat1d" ? 1 : 2;
        c.half_width = 15.0;
        c.energy = InternalEnergy::entropy(1.0);
        c.reference = {ReferenceKind::HeatKernel, 1.0, 2.0, c.dimension, std::nullopt};
        c.s1_dt0 = c.dimension == 1 ? 0x1p-4 : 0x1p-9;
    } else if (name == "pme1d" || name == "pme2d") {
        const double mm = m.value_or(2.0);
        c.dimension = name == "pme1d" ? 1 : 2;
        c.half_width = 6.0;
        c.energy = InternalEnergy::power(1.0, mm);
        c.reference = {ReferenceKind::Barenblatt, 1.0, mm, c.dimension, 1.0};
        c.s1_dt0 = 0x1p-2;
    } else if (name == "linfp2d" || name == "nonlocfp2d") {
        c.dimension = 2;
        c.half_width = 5.0;
        c.energy = InternalEnergy::entropy(1.0);
        if (name == "linfp2d") {
            c.potentials.confinement = confinement::Quadratic{1.0};
            c.s1_dt0 = 0x1p-4;
        } else {
            c.potentials.interaction = interaction::Quadratic{1};
            c.stage = StageRule::Midpoint;
            c.s1_dt0 = 0x1p-6;
        }
        c.reference = {ReferenceKind::FokkerPlanckTransient, 1.0, 2.0, 2, std::nullopt};
    } else {
        throw ConfigError("unknown convergence case '" + spec + "'");
    }
    return c;
}

/// The run for one level of a convergence study.
inline ExperimentConfig convergence_level_config(const ConvergenceCase& c, SchemeKind kind, int level) {
    ExperimentConfig cfg;
    const double dx = std::ldexp(1.0, -1 - level);
    cfg.grid = Grid(c.dimension, c.half_width, static_cast<int>(std::lround(c.half_width / dx)));
    cfg.energy = c.energy;
    cfg.potentials = c.potentials;
    cfg.scheme.kind = kind;
    cfg.scheme.stage = c.stage;
    cfg.t_initial = 2.0;
    cfg.t_final = 3.0;
    cfg.dt = kind == SchemeKind::S1 ? c.s1_dt0 * std::ldexp(1.0, -2 * level) : dx;
    cfg.initial.kind = InitialKind::Reference;
    cfg.initial.reference = c.reference;
    cfg.initial.reference_time = 2.0;
    cfg.reference = c.reference;
    return cfg;
}

inline std::vector<ConvergenceRow> convergence_study(const std::string& case_name, SchemeKind kind, int levels) {
    if (levels < 1) throw ConfigError("a convergence study needs at least one level");
    const auto c = convergence_case(case_name);
    std::vector<ConvergenceRow> rows;
    std::vector<double> errors;
    for (int l = 0; l < levels; ++l) {
        const auto cfg = convergence_level_config(c, kind, l);
        const auto rec = run_experiment(cfg);
        if (!rec.ok()) {
            throw StepError("convergence level " + std::to_string(l) + " failed: " +
                            (rec.failure.empty() ? std::string("invariant breach") : rec.failure));
        }
        ConvergenceRow row;
        row.dt = *cfg.dt;
        row.dx = cfg.grid.dx();
        row.dy = c.dimension == 2 ? cfg.grid.dx() : 0.0;
        row.error = *rec.l1_error;
        errors.push_back(row.error);
        if (l > 0) row.order = convergence_order(std::span<const double>(errors).subspan(errors.size() - 2)).front();
        rows.push_back(row);
    }
    return rows;
}

inline void write_convergence_csv(std::ostream& out, const std::vector<ConvergenceRow>& rows, int dimension) {
    out << (dimension == 2 ? "dt,dx,dy,error,order\n" : "dt,dx,error,order\n");
    for (const auto& r : rows) {
        out << fmt10(r.dt) << ',' << fmt10(r.dx) << ',';
        if (dimension == 2) out << fmt10(r.dy) << ',';
        out << fmt10(r.error) << ',' << (r.order ? fmt10(*r.order) : std::string()) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Relative entropy

/// Energy of the discrete steady state reached from the configured datum by
/// S2 steps of the configured dt until ||rho^{n+1} - rho^n||_1 <= tolerance.
inline double steady_energy(const ExperimentConfig& base, double tolerance = 1e-12, double t_max = 1000.0) {
    ExperimentConfig cfg = base;
    cfg.output.directory.clear();
    cfg.output.snapshot_times.clear();
    cfg.scheme.kind = SchemeKind::S2;
    cfg.steady_tolerance = tolerance;
    cfg.t_final = cfg.t_initial + t_max;
    const auto rec = run_experiment(cfg);
    if (!rec.failure.empty()) throw StepError("steady-state run failed: " + rec.failure);
    if (!rec.steady) throw StepError("steady state not reached by t = " + fmt10(cfg.t_final));
    return rec.rows.back().energy;
}

struct EntropyDecay {
    std::vector<double> t;
    std::vector<double> relative;  ///< E(t) - E_inf
    double steady_energy = 0.0;
    double rate = 0.0;  ///< minus the fitted slope of log(E - E_inf) against t
    int fitted_points = 0;
};

/// Relative entropy along a run of `cfg` against `e_inf`, with the decay rate
/// fitted by least squares over the samples whose relative entropy lies in
/// [lo, hi].
inline EntropyDecay relative_entropy_decay(const ExperimentConfig& cfg, double e_inf, double lo, double hi) {
    ExperimentConfig run = cfg;
    run.output.directory.clear();
    const auto rec = run_experiment(run);
    if (!rec.failure.empty()) throw StepError("relative entropy run failed: " + rec.failure);
    EntropyDecay out;
    out.steady_energy = e_inf;
    double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
    for (const auto& r : rec.rows) {
        const double rel = r.energy - e_inf;
        out.t.push_back(r.t);
        out.relative.push_back(rel);
        if (rel >= lo && rel <= hi) {
            const double y = std::log(rel);
            st += r.t;
            sy += y;
            stt += r.t * r.t;
            sty += r.t * y;
            ++out.fitted_points;
        }
    }
    if (out.fitted_points >= 2) {
        const double n = out.fitted_points;
        out.rate = -(n * sty - st * sy) / (n * stt - st * st);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parameter sweeps

struct SweepRow {
    double value = 0.0;
    double moment = 0.0;  ///< |<x>| of the final state
    double energy = 0.0;
    bool steady = false;  ///< false: t_final reached before the steady tolerance
    std::string failure;
};

/// Set a scalar model knob by name: diffusion (sigma), exponent,
/// regularization, alpha, confinement_coefficient, interaction_sigma,
/// interaction_coefficient, interaction_exponent, shift_x.
/// `target` is left untouched when the value is rejected.
inline void set_parameter(ExperimentConfig& target, const std::string& name, double v) {
    ExperimentConfig cfg = target;
    const auto n = detail::lower(name);
    if (n == "diffusion" || n == "sigma") {
        cfg.energy.diffusion = v;
    } else if (n == "exponent" || n == "m") {
        if (cfg.energy.kind == EnergyKind::Entropy) throw ConfigError("'" + name + "' needs a power energy");
        cfg.energy.exponent = v;
    } else if (n == "regularization" || n == "epsilon") {
        if (cfg.energy.kind != EnergyKind::PowerPlusEntropy) {
            throw ConfigError("'" + name + "' needs the power_entropy energy");
        }
        cfg.energy.regularization = v;
    } else if (n == "alpha") {
        auto* b = std::get_if<confinement::Bistable>(&cfg.potentials.confinement);
        if (b == nullptr) throw ConfigError("'alpha' needs a bistable confinement");
        b->alpha = v;
    } else if (n == "confinement_coefficient") {
        auto* q = std::get_if<confinement::Quadratic>(&cfg.potentials.confinement);
        if (q == nullptr) throw ConfigError("'confinement_coefficient' needs a quadratic confinement");
        q->coefficient = v;
    } else if (n == "interaction_sigma") {
        auto* g = std::get_if<interaction::Gaussian>(&cfg.potentials.interaction);
        if (g == nullptr) throw ConfigError("'interaction_sigma' needs a Gaussian interaction");
        g->sigma = v;
    } else if (n == "interaction_coefficient" || n == "interaction_exponent") {
        auto* p = std::get_if<interaction::Power>(&cfg.potentials.interaction);
        if (p == nullptr) throw ConfigError("'" + name + "' needs a power interaction");
        (n == "interaction_coefficient" ? p->coefficient : p->exponent) = v;
    } else if (n == "shift_x") {
        cfg.initial.shift_x = v;
    } else {
        throw ConfigError("unknown sweep parameter '" + name + "'");
    }
    // Re-run the energy validation for the new value.
    switch (cfg.energy.kind) {
        case EnergyKind::Entropy: cfg.energy = InternalEnergy::entropy(cfg.energy.diffusion); break;
        case EnergyKind::Power: cfg.energy = InternalEnergy::power(cfg.energy.diffusion, cfg.energy.exponent); break;
        case EnergyKind::PowerPlusEntropy:
            cfg.energy = InternalEnergy::power_plus_entropy(cfg.energy.diffusion, cfg.energy.exponent,
                                                            cfg.energy.regularization);
            break;
    }
    target = std::move(cfg);
}

/// For each value, integrate from the initial bumps moved by `shift` along x
/// to a steady state (||rho^{n+1} - rho^n||_1 <= steady tolerance, default
/// 1e-10) or t_final, and record |<x>|.
inline std::vector<SweepRow> bifurcation_sweep(const ExperimentConfig& base, const std::string& parameter,
                                               const std::vector<double>& values, double shift = 0.5) {
    std::vector<SweepRow> rows;
    for (double v : values) {
        ExperimentConfig cfg = base;
        cfg.output.directory.clear();
        cfg.initial.shift_x = shift;
        if (!(cfg.steady_tolerance > 0.0)) cfg.steady_tolerance = 1e-10;
        set_parameter(cfg, parameter, v);
        const auto rec = run_experiment(cfg);
        SweepRow row;
        row.value = v;
        const auto mom = first_moment(rec.final_field);
        double s = 0.0;
        for (double c : mom) s += c * c;
        row.moment = std::sqrt(s);
        row.energy = rec.rows.back().energy;
        row.steady = rec.steady;
        row.failure = rec.failure;
        rows.push_back(row);
    }
    return rows;
}

inline void write_sweep_csv(std::ostream& out, const std::string& parameter, const std::vector<SweepRow>& rows) {
    out << parameter << ",abs_first_moment,energy,steady\n";
    for (const auto& r : rows) {
        out << fmt10(r.value) << ',' << fmt10(r.moment) << ',' << fmt10(r.energy) << ','
            << (r.steady ? "true" : "false") << '\n';
    }
}

}  // namespace aggdiff
