// Experiment runner for the MIMO graph-filter networks.
//
//   mimo_gcnn run <config> [-o DIR] [-j N] [--history-dir DIR] [--quiet]
//   mimo_gcnn validate <config>
//   mimo_gcnn report <results_raw.csv> [-o DIR]

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "mimo/experiment.hpp"

namespace {

int run(const std::string& config_path, const std::string& out_dir, std::size_t jobs, const std::string& history_dir,
        bool quiet) {
    const auto cfg = mimo::load_config(config_path);
    mimo::validate(cfg);
    mimo::RunOptions options;
    options.jobs = jobs;
    options.history_dir = history_dir;
    if (!quiet) options.log = [](const std::string& msg) { std::cerr << msg << std::endl; };
    const auto rows = mimo::run_experiment(cfg, options);
    mimo::report(rows, out_dir);
    mimo::write_summary_csv(std::cout, mimo::summarize(rows));
    return 0;
}

int validate(const std::string& config_path) {
    const auto cfg = mimo::load_config(config_path);
    mimo::validate(cfg);
    std::cout << "config ok: " << cfg.architectures.size() << " architecture(s) x " << cfg.realizations
              << " realization(s)";
    if (cfg.sweep) std::cout << " x " << cfg.sweep->values.size() << " " << cfg.sweep->param << " value(s)";
    std::cout << '\n';
    return 0;
}

int report(const std::string& raw_path, std::string out_dir) {
    std::ifstream in(raw_path);
    if (!in) throw std::runtime_error("cannot open '" + raw_path + "'");
    const auto rows = mimo::read_raw_csv(in);
    if (rows.empty()) throw std::runtime_error("'" + raw_path + "' holds no result rows");
    if (out_dir.empty()) out_dir = std::filesystem::path(raw_path).parent_path().string();
    if (out_dir.empty()) out_dir = ".";
    std::filesystem::create_directories(out_dir);
    const auto path = (std::filesystem::path(out_dir) / "results_summary.csv").string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    const auto summary = mimo::summarize(rows);
    mimo::write_summary_csv(out, summary);
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
    mimo::write_summary_csv(std::cout, summary);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
    // Batch-sized feature maps are freed and reallocated every step; keep
    // them on the heap instead of round-tripping through mmap.
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
    CLI::App app{"Graph CNNs built from structured MIMO graph filters"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "results", history_dir, raw_path, report_dir;
    std::size_t jobs = 1;
    bool quiet = false;

    auto* run_cmd = app.add_subcommand("run", "Run an experiment and write CSV results");
    run_cmd->add_option("config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
    run_cmd->add_option("-o,--out", out_dir, "Output directory")->capture_default_str();
    run_cmd->add_option("-j,--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    run_cmd->add_option("--history-dir", history_dir, "Write per-cell training history CSVs here");
    run_cmd->add_flag("-q,--quiet", quiet, "No progress output");

    auto* validate_cmd = app.add_subcommand("validate", "Check a config file without running it");
    validate_cmd->add_option("config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);

    auto* report_cmd = app.add_subcommand("report", "Recompute results_summary.csv from a raw results file");
    report_cmd->add_option("raw", raw_path, "results_raw.csv")->required()->check(CLI::ExistingFile);
    report_cmd->add_option("-o,--out", report_dir, "Output directory (default: next to the raw file)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run_cmd) return run(config_path, out_dir, jobs, history_dir, quiet);
        if (*validate_cmd) return validate(config_path);
        if (*report_cmd) return report(raw_path, report_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
