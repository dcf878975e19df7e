#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "tubelab/experiments.hpp"

namespace {

// Folds command-line overrides into the raw config text so that a single
// validation path (parse_config) sees the final values.
std::string apply_overrides(const std::string& text, bool has_seed, std::uint64_t seed,
                            const std::string& out_dir, int jobs) {
    if (!has_seed && out_dir.empty() && jobs == 0) return text;
    nlohmann::json j = nlohmann::json::parse(text);  // parse errors surface as exit 2
    if (!j.is_object()) throw tubelab::config_error("config: top level must be an object");
    if (has_seed) j["seed"] = seed;
    if (!out_dir.empty()) j["out"] = out_dir;
    if (jobs > 0) j["jobs"] = jobs;
    return j.dump();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"verification sweeps for hyperbolic tube stability bounds"};
    app.require_subcommand(1);

    const std::vector<std::pair<std::string, std::string>> experiments = {
        {"constants", "spectral gap and decay-rate table over dimensions"},
        {"count", "orbit counting bounds in ambient tubes"},
        {"torus", "orbit counting in the torus x line model"},
        {"gap", "scalar/tensor Rayleigh bounds and the pointwise comparison"},
        {"identity", "weighted second-order identity refinement study"},
        {"transfer", "ball-average transfer inequality sampling"},
        {"conditioning", "smallest eigenvalue of the discrete operator"},
        {"newton", "Einstein continuation accuracy per boundary size"},
    };

    std::string config_path, out_dir;
    std::uint64_t seed = 0;
    bool has_seed = false;
    int jobs = 0;
    for (const auto& [name, desc] : experiments) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", config_path, "JSON experiment config")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "output directory (overrides config)");
        sub->add_option("--seed", seed, "RNG seed (overrides config)")
            ->each([&has_seed](const std::string&) { has_seed = true; });
        sub->add_option("--jobs", jobs, "worker threads (overrides config)");
    }
    CLI11_PARSE(app, argc, argv);
    const std::string experiment = app.get_subcommands().front()->get_name();

    tubelab::ExperimentConfig cfg;
    try {
        std::ifstream in(config_path, std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        if (!in) throw tubelab::config_error("config: cannot read " + config_path);
        cfg = tubelab::parse_config(
            apply_overrides(buf.str(), has_seed, seed, out_dir, jobs));
        if (cfg.experiment != experiment)
            throw tubelab::config_error("config: experiment " + cfg.experiment +
                                        " does not match subcommand " + experiment);
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "config: %s\n", e.what());
        return 2;
    } catch (const tubelab::config_error& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    }

    try {
        const tubelab::RunResult res = tubelab::run_experiment(cfg);
        std::printf("%s: %lld rows, %lld violations -> %s\n", experiment.c_str(), res.rows,
                    res.violations, res.csv_path.c_str());
        return res.violations > 0 ? 1 : 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
