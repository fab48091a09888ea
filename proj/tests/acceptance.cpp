// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
//
//   acceptance [--only 1,5,7] [--config-dir DIR] [--work-dir DIR]

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "mimo/experiment.hpp"
#include "mimo/text_io.hpp"
#include "oracles.hpp"

using namespace mimo;
using namespace mimo::testing;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

std::string pct(double v) { return fmt(100.0 * v, 1) + "%"; }

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

MimoFilterParams random_params(Structure s, std::size_t p, std::size_t q, std::size_t k, Rng& rng) {
    MimoFilterParams params(s, p, q, k);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& v : params.values()) v = u(rng);
    return params;
}

Vector stack_rows(const Matrix& m) {
    Vector v(m.size());
    for (Eigen::Index r = 0; r < m.rows(); ++r) v.segment(r * m.cols(), m.cols()) = m.row(r).transpose();
    return v;
}

/// Mean accuracy per (architecture, sweep value).
std::map<std::pair<Structure, double>, double> means(const std::vector<CellResult>& rows) {
    std::map<std::pair<Structure, double>, double> out;
    for (const auto& s : summarize(rows)) out[{s.architecture, s.sweep_value.value_or(0.0)}] = s.mean_accuracy;
    return out;
}

class Runner {
public:
    Runner(std::filesystem::path config_dir, std::filesystem::path work_dir)
        : config_dir_(std::move(config_dir)), work_dir_(std::move(work_dir)) {}

    ExperimentConfig config(const std::string& name) const {
        auto cfg = load_config((config_dir_ / name).string());
        validate(cfg);
        return cfg;
    }

    std::vector<CellResult> run(const ExperimentConfig& cfg, const std::string& label) {
        const auto start = std::chrono::steady_clock::now();
        RunOptions options;
        auto rows = run_experiment(cfg, options);
        const auto dir = work_dir_ / label;
        report(rows, dir.string());
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cerr << "  [" << label << "] " << rows.size() << " cells in " << fmt(seconds, 1) << " s -> " << dir.string()
                  << '\n';
        return rows;
    }

    /// Baseline rows, computed once and shared by the criteria that need them.
    const std::vector<CellResult>& baseline() {
        if (!baseline_) baseline_ = run(config("baseline.cfg"), "baseline_run_a");
        return *baseline_;
    }

    const std::filesystem::path& work_dir() const { return work_dir_; }

private:
    std::filesystem::path config_dir_;
    std::filesystem::path work_dir_;
    std::optional<std::vector<CellResult>> baseline_;
};

Outcome parameter_counts() {
    const std::pair<Structure, std::size_t> expected[] = {{Structure::Full, 10400},
                                                          {Structure::AggregateInputs, 480},
                                                          {Structure::ConsolidateOutputs, 165},
                                                          {Structure::Toeplitz, 635}};
    Outcome o{true, ""};
    for (const auto& [structure, count] : expected) {
        NetworkSpec spec;
        spec.nodes = 16;
        spec.classes = 16;
        spec.layers = {{structure, 32, 5}, {structure, 64, 5}};
        const Network net(spec, cycle_gso(16));
        const auto got = net.conv_param_count();
        const auto formula = param_count(structure, 32, 1, 5) + param_count(structure, 64, 32, 5);
        o.pass &= got == count && formula == count;
        o.detail += short_label(structure) + "=" + std::to_string(got) + " ";
    }
    return o;
}

Outcome baseline_accuracy(Runner& runner) {
    const std::map<Structure, double> reference{{Structure::Full, 0.939},
                                                {Structure::AggregateInputs, 0.948},
                                                {Structure::ConsolidateOutputs, 0.880},
                                                {Structure::Toeplitz, 0.788}};
    const auto m = means(runner.baseline());
    Outcome o{true, ""};
    for (const auto& [structure, ref] : reference) {
        const double got = m.at({structure, 0.0});
        const bool ok = std::abs(got - ref) <= 0.08;
        o.pass &= ok;
        o.detail += short_label(structure) + " " + pct(got) + " (ref " + pct(ref) + (ok ? ") " : ", off by >8) ");
    }
    const double pqk = m.at({Structure::Full, 0.0});
    const double pk = m.at({Structure::AggregateInputs, 0.0});
    const bool headline = pqk >= 0.85 && pk >= 0.85 && std::abs(pqk - pk) <= 0.05;
    o.pass &= headline;
    o.detail += std::string("| PK,PQK >= 85% and within 5 points: ") + (headline ? "yes" : "no");
    return o;
}

Outcome noise_trend(Runner& runner) {
    auto cfg = runner.config("sweep_noise.cfg");
    cfg.architectures = {Structure::Full, Structure::AggregateInputs};
    cfg.sweep = SweepSpec{"sigma2", {0.0, 0.01, 0.1}};
    const auto m = means(runner.run(cfg, "noise_sweep"));
    Outcome o{true, ""};
    for (auto s : cfg.architectures) {
        double lo = 1.0, hi = 0.0;
        for (double v : cfg.sweep->values) {
            lo = std::min(lo, m.at({s, v}));
            hi = std::max(hi, m.at({s, v}));
            o.detail += short_label(s) + "@" + format_double(v) + "=" + pct(m.at({s, v})) + " ";
        }
        o.pass &= hi - lo < 0.10;
        o.detail += "(spread " + fmt(100.0 * (hi - lo), 1) + " pts) ";
    }
    return o;
}

Outcome training_size_trend(Runner& runner) {
    auto cfg = runner.config("sweep_ntrain.cfg");
    cfg.architectures = {Structure::Full, Structure::AggregateInputs};
    cfg.sweep = SweepSpec{"n_train", {1000, 10000}};
    const auto m = means(runner.run(cfg, "ntrain_sweep"));
    Outcome o{true, ""};
    for (auto s : cfg.architectures) {
        const double small = m.at({s, 1000.0}), large = m.at({s, 10000.0});
        o.pass &= large - small >= 0.10;
        o.detail += short_label(s) + " " + pct(small) + " -> " + pct(large) + " ";
    }
    return o;
}

Outcome kronecker_oracle() {
    Rng rng(20240501);
    std::uniform_int_distribution<std::size_t> n_dist(2, 8), pq(1, 3), k_dist(1, 4);
    double worst = 0.0;
    std::size_t instances = 0;
    for (auto structure : kAllStructures) {
        for (int trial = 0; trial < 100; ++trial, ++instances) {
            const auto n = n_dist(rng);
            const auto p = pq(rng), q = pq(rng), k = k_dist(rng);
            const auto s = random_gso(n, rng);
            const auto params = random_params(structure, p, q, k, rng);
            const Matrix x = random_matrix(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(n), rng);
            const Vector expected = kron_oracle(expand_to_full(params), s, stack_rows(x));
            const Vector got = stack_rows(mimo_forward(params, s, x));
            worst = std::max(worst, (got - expected).cwiseAbs().maxCoeff());
        }
    }
    return {worst <= 1e-12, std::to_string(instances) + " instances, max abs error " + format_double(worst)};
}

Outcome gradients() {
    Rng rng(777);
    double worst_net = 0.0, worst_filter = 0.0;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto structure : kAllStructures) {
        for (int trial = 0; trial < 5; ++trial) {
            const auto params_n = std::uniform_int_distribution<std::size_t>(3, 6)(rng);
            const auto s = random_gso(params_n, rng);
            auto params = random_params(structure, 3, 2, 3, rng);
            Matrix x = random_matrix(2, static_cast<Eigen::Index>(params_n), rng);
            const Matrix dy = random_matrix(3, static_cast<Eigen::Index>(params_n), rng);
            const auto g = mimo_backward(params, s, x, dy);
            auto objective = [&] { return (dy.array() * mimo_forward(params, s, x).array()).sum(); };
            const auto fd_taps = finite_difference(params.values().data(), params.param_count(), objective);
            const auto fd_x = finite_difference(x.data(), static_cast<std::size_t>(x.size()), objective);
            worst_filter = std::max({worst_filter, relative_error(fd_taps.data(), g.d_taps.data(), fd_taps.size()),
                                     relative_error(fd_x.data(), g.d_input.data(), fd_x.size())});
        }
        for (bool bias : {false, true}) {
            NetworkSpec spec;
            spec.nodes = 5;
            spec.classes = 3;
            spec.keep_prob = 0.8;
            spec.conv_bias = bias;
            spec.normalize_input = bias;
            spec.layers = {{structure, 2, 2}, {structure, 3, 2}};
            Network net(spec, random_gso(5, rng, 0.5));
            for (auto t : net.parameters())
                for (double& v : t) v = u(rng);
            const Matrix x = random_matrix(1, 10, rng).cwiseAbs().array() + 0.1;
            const std::size_t labels[] = {1, 2};
            auto loss = [&] {
                Rng mask(5);
                const Matrix logits = network_forward(net, x, Mode::Train, &mask).logits;
                return softmax_cross_entropy(logits.col(0), labels[0]).loss +
                       softmax_cross_entropy(logits.col(1), labels[1]).loss;
            };
            Rng mask(5);
            const auto trace = network_forward(net, x, Mode::Train, &mask);
            Matrix d_logits(3, 2);
            for (Eigen::Index b = 0; b < 2; ++b)
                d_logits.col(b) = softmax_cross_entropy(trace.logits.col(b), labels[b]).d_logits;
            const auto grads = network_backward(net, trace, d_logits);
            const auto analytic = grads.tensors();
            auto params = net.parameters();
            for (std::size_t i = 0; i < params.size(); ++i) {
                const auto fd = finite_difference(params[i].data(), params[i].size(), loss);
                worst_net = std::max(worst_net, relative_error(fd.data(), analytic[i].data(), fd.size()));
            }
        }
    }
    return {worst_net <= 1e-4 && worst_filter <= 1e-5,
            "network max rel error " + format_double(worst_net) + " (<= 1e-4), filter max rel error " +
                format_double(worst_filter) + " (<= 1e-5)"};
}

Outcome cycle_reduction() {
    Rng rng(31);
    std::uniform_int_distribution<std::size_t> n_dist(2, 32), k_dist(1, 8);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto n = n_dist(rng);
        std::vector<double> h(k_dist(rng));
        for (double& v : h) v = u(rng);
        const Vector x = random_matrix(static_cast<Eigen::Index>(n), 1, rng);
        const Vector got = lsi_apply(cycle_gso(n), h, x);
        worst = std::max(worst, (got - circular_convolution(h, x)).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-12, "20 cases, max abs error " + format_double(worst)};
}

Outcome consolidate_rows() {
    Rng rng(41);
    std::size_t checked = 0;
    bool identical = true;
    for (int trial = 0; trial < 50; ++trial) {
        const auto n = std::uniform_int_distribution<std::size_t>(2, 16)(rng);
        const auto p = std::uniform_int_distribution<std::size_t>(2, 8)(rng);
        const auto q = std::uniform_int_distribution<std::size_t>(1, 8)(rng);
        const auto params = random_params(Structure::ConsolidateOutputs, p, q, 4, rng);
        const Matrix y = mimo_forward(params, random_gso(n, rng), random_matrix(q, n, rng));
        for (Eigen::Index r = 1; r < y.rows(); ++r, ++checked) identical &= (y.row(r).array() == y.row(0).array()).all();
    }
    return {identical, std::to_string(checked) + " output rows compared bitwise against row 0"};
}

Outcome determinism(Runner& runner) {
    runner.baseline();
    runner.run(runner.config("baseline.cfg"), "baseline_run_b");
    const auto a = slurp(runner.work_dir() / "baseline_run_a" / "results_raw.csv");
    const auto b = slurp(runner.work_dir() / "baseline_run_b" / "results_raw.csv");
    return {!a.empty() && a == b, std::to_string(a.size()) + " bytes, " + (a == b ? "identical" : "different")};
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
    CLI::App app{"Acceptance criteria"};
    std::string only, config_dir = MIMO_CONFIG_DIR, work_dir;
    app.add_option("--only", only, "Comma-separated criterion numbers to run");
    app.add_option("--config-dir", config_dir, "Directory holding the shipped configs")->capture_default_str();
    app.add_option("--work-dir", work_dir, "Where experiment outputs go (default: a temp directory)");
    CLI11_PARSE(app, argc, argv);

    std::set<int> selected;
    if (!only.empty())
        for (const auto& part : split(only, ',')) selected.insert(static_cast<int>(parse_int(part)));
    if (work_dir.empty()) work_dir = (std::filesystem::temp_directory_path() / "mimo_acceptance").string();
    std::filesystem::remove_all(work_dir);
    Runner runner(config_dir, work_dir);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"parameter counts", parameter_counts},
        {"baseline accuracies", [&] { return baseline_accuracy(runner); }},
        {"noise robustness", [&] { return noise_trend(runner); }},
        {"training-size trend", [&] { return training_size_trend(runner); }},
        {"Kronecker oracle equivalence", kronecker_oracle},
        {"gradient correctness", gradients},
        {"cycle-graph reduction", cycle_reduction},
        {"consolidated outputs identical", consolidate_rows},
        {"determinism", [&] { return determinism(runner); }},
    };

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(id)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first
                  << "): " << o.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
