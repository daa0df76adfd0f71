// Command-line front end: run, convergence, sweep, validate.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aggdiff/experiment.hpp"

namespace {

using namespace aggdiff;

std::vector<double> parse_values(const std::string& text) {
    std::vector<double> out;
    for (const auto& part : detail::split(text, ',')) {
        if (const auto colon = part.find(':'); colon != std::string::npos) {
            // start:stop:count, inclusive and evenly spaced
            const auto f = detail::split(part, ':');
            if (f.size() != 3) throw ConfigError("range '" + part + "' must be start:stop:count");
            const double a = detail::to_double(f[0], "values");
            const double b = detail::to_double(f[1], "values");
            const int n = static_cast<int>(detail::to_double(f[2], "values"));
            if (n < 1) throw ConfigError("range count must be positive");
            for (int k = 0; k < n; ++k) out.push_back(n == 1 ? a : a + (b - a) * k / (n - 1));
        } else {
            out.push_back(detail::to_double(part, "values"));
        }
    }
    if (out.empty()) throw ConfigError("no sweep values given");
    return out;
}

int cmd_run(const std::string& path) {
    const auto cfg = load_config(path);
    const auto rec = run_experiment(cfg);
    const auto& last = rec.rows.back();
    std::printf("t=%s energy=%s mass=%s min=%s steps=%zu\n", fmt10(rec.final_time).c_str(),
                fmt10(last.energy).c_str(), fmt10(last.mass).c_str(), fmt10(last.min_density).c_str(),
                rec.rows.size() - 1);
    if (rec.l1_error) std::printf("l1_error=%s\n", fmt10(*rec.l1_error).c_str());
    if (!rec.failure.empty()) std::fprintf(stderr, "error: %s\n", rec.failure.c_str());
    if (!rec.energy_monotone) std::fprintf(stderr, "error: energy increased\n");
    if (!rec.mass_conserved) std::fprintf(stderr, "error: mass not conserved\n");
    if (!rec.positive) std::fprintf(stderr, "error: negative density\n");
    return rec.ok() ? 0 : 1;
}

int cmd_convergence(const std::string& name, const std::string& scheme, int levels, const std::string& out_file) {
    const auto c = convergence_case(name);
    const auto rows = convergence_study(name, parse_scheme_kind(scheme), levels);
    write_convergence_csv(std::cout, rows, c.dimension);
    if (!out_file.empty()) {
        const auto path = resolve_output(out_file);
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        std::ofstream f(path, std::ios::binary);
        write_convergence_csv(f, rows, c.dimension);
    }
    return 0;
}

int cmd_sweep(const std::string& path, const std::string& param, const std::string& values, double shift,
              const std::string& out_file) {
    const auto cfg = load_config(path);
    const auto rows = bifurcation_sweep(cfg, param, parse_values(values), shift);
    write_sweep_csv(std::cout, param, rows);
    if (!out_file.empty()) {
        const auto p = resolve_output(out_file);
        if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
        std::ofstream f(p, std::ios::binary);
        write_sweep_csv(f, param, rows);
    }
    bool ok = true;
    for (const auto& r : rows) {
        if (!r.failure.empty()) {
            std::fprintf(stderr, "error at %s=%s: %s\n", param.c_str(), fmt10(r.value).c_str(), r.failure.c_str());
            ok = false;
        } else if (!r.steady) {
            std::fprintf(stderr, "warning: %s=%s did not reach a steady state\n", param.c_str(),
                         fmt10(r.value).c_str());
        }
    }
    return ok ? 0 : 1;
}

int cmd_validate(const char* argv0) {
    const auto self = std::filesystem::absolute(argv0);
    const std::vector<std::filesystem::path> candidates = {
        self.parent_path() / "aggdiff_acceptance",
        self.parent_path().parent_path() / "tests" / "aggdiff_acceptance",
    };
    for (const auto& c : candidates) {
        if (std::filesystem::exists(c)) {
            const std::string cmd = "\"" + c.string() + "\"";
            const int status = std::system(cmd.c_str());
            return status == 0 ? 0 : 1;
        }
    }
    std::fprintf(stderr, "error: acceptance binary not found next to %s\n", self.string().c_str());
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"aggdiff: implicit finite-volume solver for aggregation-diffusion equations"};
    app.require_subcommand(1);

    std::string config;
    auto* run = app.add_subcommand("run", "integrate one experiment config");
    run->add_option("--config", config, "INI experiment file")->required();

    std::string case_name, scheme = "s1", out_file;
    int levels = 4;
    auto* conv = app.add_subcommand("convergence", "errors and orders for a validation preset");
    conv->add_option("--case", case_name, "heat1d, heat2d, pme1d(m), pme2d(m), linfp2d, nonlocfp2d")->required();
    conv->add_option("--scheme", scheme, "s1 or s2")->check(CLI::IsMember({"s1", "s2"}, CLI::ignore_case));
    conv->add_option("--levels", levels, "number of refinement levels")->check(CLI::PositiveNumber);
    conv->add_option("--output", out_file, "also write the table to this CSV");

    std::string param, values;
    double shift = 0.5;
    auto* sweep = app.add_subcommand("sweep", "steady states over a parameter range");
    sweep->add_option("--config", config, "INI experiment file")->required();
    sweep->add_option("--param", param, "model knob, e.g. diffusion")->required();
    sweep->add_option("--values", values, "comma list; start:stop:count ranges allowed")->required();
    sweep->add_option("--shift", shift, "x shift of the initial bumps");
    sweep->add_option("--output", out_file, "also write the table to this CSV");

    app.add_subcommand("validate", "run the acceptance checks");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*run) return cmd_run(config);
        if (*conv) return cmd_convergence(case_name, scheme, levels, out_file);
        if (*sweep) return cmd_sweep(config, param, values, shift, out_file);
        return cmd_validate(argv[0]);
    } catch (const aggdiff::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
