#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tubelab {

// Malformed or inconsistent configuration.  The CLI maps this to exit code 2
// and no output file is created.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Counting radius: a multiple of the basepoint injectivity radius ("2inj")
// or an absolute value.
struct RadiusSpec {
    double value = 1.0;
    bool times_inj = false;
};

// Rectangular chart for the field experiments.  nr is derived from dr, which
// must divide r1 - r0 exactly (up to 1e-9 relative).
struct GridSpec {
    double r0 = 2.0;
    double r1 = 3.0;
    double dr = 1.0 / 64;
    double Lt = 0.05;
    int nt = 1;
};

// Parsed experiment description.  Fields not used by the chosen experiment
// are rejected by the parser; missing ones get per-experiment defaults.
struct ExperimentConfig {
    std::string experiment;
    std::vector<int> n_list;
    std::vector<double> ell_list;
    std::vector<std::vector<double>> angle_lists;  // explicit normal-form angles
    int random_angles = 0;                         // draws per (n, ell) when > 0
    double mu = 0.1;
    std::vector<RadiusSpec> radii;
    int depth_steps = 0;  // basepoints along the worst-direction ray
    GridSpec grid;
    int refinements = 0;  // extra dr halvings (gap / identity / conditioning)
    int samples = 0;      // random fields (gap) / MC draws per cell (transfer)
    std::vector<double> eps_list;  // newton continuation values
    double beta_override = 0.0;    // 0 = spectral table value
    double c_max = 0.0;            // counting rows flag ratio > c_max when > 0
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir = ".";
    int jobs = 1;
};

// Parses and validates JSON text.  Unknown keys, wrong types, missing seeds
// on randomized experiments, bad grids and empty sweeps all throw
// config_error before any output exists.
ExperimentConfig parse_config(const std::string& json_text);

struct RunResult {
    std::string csv_path;
    std::string summary_path;
    long long rows = 0;
    long long violations = 0;  // rows whose bound check failed
};

// Runs the named experiment and writes <experiment>.csv plus
// <experiment>_summary.json under cfg.out_dir.  Output bytes depend only on
// (config, seed), not on cfg.jobs: cells carry independent generators seeded
// by (seed, cell index) and rows are merged in sorted order.
RunResult run_experiment(const ExperimentConfig& cfg);

}  // namespace tubelab
