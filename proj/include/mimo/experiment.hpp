#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mimo/filters.hpp"
#include "mimo/graph.hpp"
#include "mimo/optim.hpp"

namespace mimo {

struct SweepSpec {
    std::string param;  ///< sigma2 | keep_prob | n_train | epochs | learning_rate
    std::vector<double> values;
};

/// Source-localization experiment. Field defaults reproduce the two-layer
/// (32, 64) K=5 protocol on 16-node SBM graphs.
struct ExperimentConfig {
    std::uint64_t master_seed = 1;
    std::size_t realizations = 10;
    SbmSpec graph;
    GsoKind gso = GsoKind::Adjacency;
    /// Divide the network's GSO by its spectral radius. Data synthesis always
    /// diffuses with the raw adjacency.
    bool gso_unit_spectrum = false;
    bool conv_bias = false;
    bool normalize_input = false;
    std::vector<Structure> architectures{Structure::Full, Structure::AggregateInputs, Structure::ConsolidateOutputs,
                                         Structure::Toeplitz};
    std::vector<std::size_t> features{32, 64};
    std::size_t taps = 5;
    std::size_t n_train = 10000;
    std::size_t n_test = 200;
    std::optional<std::size_t> t_max;  ///< defaults to N-1
    double sigma2 = 0.1;
    double keep_prob = 0.75;
    TrainConfig train;
    std::optional<SweepSpec> sweep;

    std::size_t effective_t_max() const { return t_max.value_or(graph.n - 1); }
};

/// Flat "key = value" text; '#' starts a comment; unknown keys are errors.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);
/// Canonical text form; parse_config(write_config(c)) == c.
void write_config(std::ostream& out, const ExperimentConfig& cfg);
void validate(const ExperimentConfig& cfg);

/// Sub-seeds of one realization: graph, train data, test data, test noise,
/// then per-structure init and training streams.
struct RealizationSeeds {
    std::uint64_t realization = 0;
    std::uint64_t graph = 0;
    std::uint64_t train_data = 0;
    std::uint64_t test_data = 0;
    std::uint64_t test_noise = 0;
    std::uint64_t init(Structure s) const;
    std::uint64_t training(Structure s) const;
};

/// Realization i uses derive_seed(master, i), so it can be rerun alone.
RealizationSeeds realization_seeds(std::uint64_t master_seed, std::size_t realization);

NetworkSpec network_spec(const ExperimentConfig& cfg, Structure structure);

struct CellResult {
    Structure architecture = Structure::Full;
    std::string sweep_param = "none";
    std::optional<double> sweep_value;
    std::size_t realization = 0;
    std::uint64_t seed = 0;
    std::size_t conv_param_count = 0;
    std::size_t total_param_count = 0;
    double accuracy = 0.0;
    double final_train_loss = 0.0;
    double wall_seconds = 0.0;
};

struct SummaryRow {
    Structure architecture = Structure::Full;
    std::string sweep_param = "none";
    std::optional<double> sweep_value;
    std::size_t conv_param_count = 0;
    std::size_t realizations = 0;
    double mean_accuracy = 0.0;
    double variance = 0.0;  ///< unbiased; 0 for a single realization
};

struct RunOptions {
    std::size_t jobs = 1;
    std::string history_dir;  ///< per-cell training history CSVs when non-empty
    std::function<void(const std::string&)> log;
};

/// Runs every realization x architecture (x sweep value) cell. Rows come
/// back sorted by (architecture order in cfg, sweep value order, realization).
std::vector<CellResult> run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {});

/// Mean and variance of accuracy per (architecture, sweep value), in first-seen order.
std::vector<SummaryRow> summarize(const std::vector<CellResult>& rows);

void write_raw_csv(std::ostream& out, const std::vector<CellResult>& rows);
std::vector<CellResult> read_raw_csv(std::istream& in);
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);
void write_timing_csv(std::ostream& out, const std::vector<CellResult>& rows);

/// Writes results_raw.csv, results_summary.csv and results_timing.csv into
/// `dir`. Throws without writing anything when `rows` is empty.
void report(const std::vector<CellResult>& rows, const std::string& dir);

}  // namespace mimo
