#include "lab/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitGateFailure = 1;
constexpr int kExitInputError = 2;
constexpr int kExitBudget = 3;

lab::ExperimentConfig load_with_overrides(const std::string& path, int threads,
                                          const std::string& output, bool have_seed,
                                          uint64_t seed, bool have_tol, double tol) {
    lab::ExperimentConfig cfg = lab::load_config(path);
    if (threads > 0) cfg.threads = threads;
    if (!output.empty()) cfg.output_dir = output;
    if (have_seed) cfg.seed = seed;
    if (have_tol) cfg.tol = tol;
    return cfg;
}

int cmd_run(const lab::ExperimentConfig& cfg) {
    lab::RunManifest manifest = lab::run_pipeline(cfg);
    std::filesystem::create_directories(cfg.output_dir);
    std::ofstream out(std::filesystem::path(cfg.output_dir) / "manifest.json");
    out << lab::manifest_to_json(manifest);
    out.close();
    std::cout << lab::make_report(manifest);
    if (manifest.budget_exceeded) return kExitBudget;
    return manifest.all_passed ? kExitOk : kExitGateFailure;
}

int cmd_report(const std::string& dir) {
    std::ifstream in(std::filesystem::path(dir) / "manifest.json");
    if (!in) {
        std::cerr << "error: no manifest.json in " << dir << "\n";
        return kExitInputError;
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    std::cout << lab::make_report(lab::manifest_from_json(buf.str()));
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flowlab: numerical experiments on sectional-hyperbolic flows"};
    app.require_subcommand(1);

    std::string config_path, output_override, report_dir = "out";
    int threads = 0;
    uint64_t seed = 0;
    double tol = 0.0;
    bool have_seed = false, have_tol = false;

    auto* run = app.add_subcommand("run", "execute a pipeline config");
    run->add_option("config", config_path, "config file")->required();
    run->add_option("--threads", threads, "worker threads");
    run->add_option("--output", output_override, "output directory override");
    run->add_option("--seed", seed, "RNG seed override")->each([&](const std::string&) {
        have_seed = true;
    });
    run->add_option("--tol", tol, "integrator tolerance override")->each([&](const std::string&) {
        have_tol = true;
    });

    auto* report = app.add_subcommand("report", "summarize a finished run");
    report->add_option("dir", report_dir, "run output directory");

    auto* validate = app.add_subcommand("validate", "parse a config and echo it back");
    validate->add_option("config", config_path, "config file")->required();

    app.add_subcommand("list-systems", "print the built-in system names");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed())
            return cmd_run(load_with_overrides(config_path, threads, output_override, have_seed,
                                               seed, have_tol, tol));
        if (report->parsed()) return cmd_report(report_dir);
        if (validate->parsed()) {
            lab::ExperimentConfig cfg = lab::load_config(config_path);
            std::cout << lab::dump_config(cfg);
            std::cout << "# hash " << lab::config_hash(cfg) << "\n";
            return kExitOk;
        }
        for (const std::string& name : lab::system_names()) std::cout << name << "\n";
        return kExitOk;
    } catch (const lab::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInputError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitGateFailure;
    }
}
