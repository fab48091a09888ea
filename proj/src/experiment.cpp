#include "mimo/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "mimo/data.hpp"
#include "mimo/text_io.hpp"

namespace mimo {

namespace {

constexpr const char* kSweepParams[] = {"sigma2", "keep_prob", "n_train", "epochs", "learning_rate"};

std::size_t structure_id(Structure s) { return static_cast<std::size_t>(s); }

std::size_t to_count(const std::string& key, const std::string& value) {
    const auto v = parse_int(value);
    if (v < 0) throw std::invalid_argument("config: '" + key + "' must be non-negative, got " + value);
    return static_cast<std::size_t>(v);
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true") return true;
    if (value == "false") return false;
    throw std::invalid_argument("config: '" + key + "' must be true or false, got " + value);
}

bool is_integral_sweep(const std::string& param) { return param == "n_train" || param == "epochs"; }

std::string join_doubles(const std::vector<double>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) out += (i ? ", " : "") + format_double(values[i]);
    return out;
}

}  // namespace

ExperimentConfig parse_config(std::istream& in) {
    ExperimentConfig cfg;
    std::optional<std::string> sweep_param;
    std::optional<std::vector<double>> sweep_values;
    std::map<std::string, std::size_t> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        const auto body = trim(std::string_view(line).substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        const auto where = "config line " + std::to_string(line_no) + ": ";
        if (eq == std::string_view::npos) throw std::invalid_argument(where + "expected 'key = value'");
        const std::string key(trim(body.substr(0, eq)));
        const std::string value(trim(body.substr(eq + 1)));
        if (value.empty()) throw std::invalid_argument(where + "empty value for '" + key + "'");
        if (auto [it, fresh] = seen.emplace(key, line_no); !fresh)
            throw std::invalid_argument(where + "duplicate key '" + key + "' (first set on line " +
                                        std::to_string(it->second) + ")");
        try {
            if (key == "master_seed") {
                cfg.master_seed = std::stoull(value);
            } else if (key == "realizations") {
                cfg.realizations = to_count(key, value);
            } else if (key == "nodes") {
                cfg.graph.n = to_count(key, value);
            } else if (key == "communities") {
                cfg.graph.communities = to_count(key, value);
            } else if (key == "p_intra") {
                cfg.graph.p_intra = parse_double(value);
            } else if (key == "p_inter") {
                cfg.graph.p_inter = parse_double(value);
            } else if (key == "max_graph_attempts") {
                cfg.graph.max_attempts = to_count(key, value);
            } else if (key == "gso") {
                cfg.gso = parse_gso_kind(value);
            } else if (key == "gso_unit_spectrum") {
                cfg.gso_unit_spectrum = to_bool(key, value);
            } else if (key == "conv_bias") {
                cfg.conv_bias = to_bool(key, value);
            } else if (key == "normalize_input") {
                cfg.normalize_input = to_bool(key, value);
            } else if (key == "architectures") {
                cfg.architectures.clear();
                for (const auto& a : split(value, ',')) cfg.architectures.push_back(parse_structure(a));
            } else if (key == "features") {
                cfg.features.clear();
                for (const auto& f : split(value, ',')) cfg.features.push_back(to_count(key, f));
            } else if (key == "taps") {
                cfg.taps = to_count(key, value);
            } else if (key == "n_train") {
                cfg.n_train = to_count(key, value);
            } else if (key == "n_test") {
                cfg.n_test = to_count(key, value);
            } else if (key == "t_max") {
                cfg.t_max = to_count(key, value);
            } else if (key == "sigma2") {
                cfg.sigma2 = parse_double(value);
            } else if (key == "keep_prob") {
                cfg.keep_prob = parse_double(value);
            } else if (key == "learning_rate") {
                cfg.train.learning_rate = parse_double(value);
            } else if (key == "epochs") {
                cfg.train.epochs = to_count(key, value);
            } else if (key == "batch_size") {
                cfg.train.batch_size = to_count(key, value);
            } else if (key == "beta1") {
                cfg.train.beta1 = parse_double(value);
            } else if (key == "beta2") {
                cfg.train.beta2 = parse_double(value);
            } else if (key == "epsilon") {
                cfg.train.epsilon = parse_double(value);
            } else if (key == "sweep") {
                sweep_param = value;
            } else if (key == "sweep_values") {
                sweep_values.emplace();
                for (const auto& v : split(value, ',')) sweep_values->push_back(parse_double(v));
            } else {
                throw std::invalid_argument("unknown key '" + key + "'");
            }
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(where + e.what());
        } catch (const std::out_of_range&) {
            throw std::invalid_argument(where + "value out of range for '" + key + "'");
        }
    }
    if (sweep_param.has_value() != sweep_values.has_value())
        throw std::invalid_argument("config: 'sweep' and 'sweep_values' must be given together");
    if (sweep_param) cfg.sweep = SweepSpec{*sweep_param, *sweep_values};
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    return parse_config(in);
}

void write_config(std::ostream& out, const ExperimentConfig& cfg) {
    out << "master_seed = " << cfg.master_seed << '\n';
    out << "realizations = " << cfg.realizations << '\n';
    out << "nodes = " << cfg.graph.n << '\n';
    out << "communities = " << cfg.graph.communities << '\n';
    out << "p_intra = " << format_double(cfg.graph.p_intra) << '\n';
    out << "p_inter = " << format_double(cfg.graph.p_inter) << '\n';
    out << "max_graph_attempts = " << cfg.graph.max_attempts << '\n';
    out << "gso = " << to_string(cfg.gso) << '\n';
    out << "gso_unit_spectrum = " << (cfg.gso_unit_spectrum ? "true" : "false") << '\n';
    out << "conv_bias = " << (cfg.conv_bias ? "true" : "false") << '\n';
    out << "normalize_input = " << (cfg.normalize_input ? "true" : "false") << '\n';
    out << "architectures = ";
    for (std::size_t i = 0; i < cfg.architectures.size(); ++i) out << (i ? ", " : "") << to_string(cfg.architectures[i]);
    out << "\nfeatures = ";
    for (std::size_t i = 0; i < cfg.features.size(); ++i) out << (i ? ", " : "") << cfg.features[i];
    out << "\ntaps = " << cfg.taps << '\n';
    out << "n_train = " << cfg.n_train << '\n';
    out << "n_test = " << cfg.n_test << '\n';
    if (cfg.t_max) out << "t_max = " << *cfg.t_max << '\n';
    out << "sigma2 = " << format_double(cfg.sigma2) << '\n';
    out << "keep_prob = " << format_double(cfg.keep_prob) << '\n';
    out << "learning_rate = " << format_double(cfg.train.learning_rate) << '\n';
    out << "epochs = " << cfg.train.epochs << '\n';
    out << "batch_size = " << cfg.train.batch_size << '\n';
    out << "beta1 = " << format_double(cfg.train.beta1) << '\n';
    out << "beta2 = " << format_double(cfg.train.beta2) << '\n';
    out << "epsilon = " << format_double(cfg.train.epsilon) << '\n';
    if (cfg.sweep) {
        out << "sweep = " << cfg.sweep->param << '\n';
        out << "sweep_values = " << join_doubles(cfg.sweep->values) << '\n';
    }
}

void validate(const ExperimentConfig& cfg) {
    validate(cfg.graph);
    if (cfg.realizations == 0) throw std::invalid_argument("config: realizations must be positive");
    if (cfg.architectures.empty()) throw std::invalid_argument("config: at least one architecture is required");
    for (std::size_t i = 0; i < cfg.architectures.size(); ++i)
        for (std::size_t j = i + 1; j < cfg.architectures.size(); ++j)
            if (cfg.architectures[i] == cfg.architectures[j])
                throw std::invalid_argument("config: architecture '" + to_string(cfg.architectures[i]) +
                                            "' listed twice");
    if (cfg.features.empty()) throw std::invalid_argument("config: features must list at least one layer width");
    for (auto f : cfg.features)
        if (f == 0) throw std::invalid_argument("config: layer widths must be positive");
    if (cfg.taps == 0) throw std::invalid_argument("config: taps must be positive");
    if (cfg.n_train == 0 || cfg.n_test == 0) throw std::invalid_argument("config: n_train and n_test must be positive");
    if (cfg.effective_t_max() + 1 > cfg.graph.n)
        throw std::invalid_argument("config: t_max must not exceed nodes - 1");
    if (!(cfg.sigma2 >= 0.0)) throw std::invalid_argument("config: sigma2 must be non-negative");
    if (!(cfg.keep_prob > 0.0 && cfg.keep_prob <= 1.0)) throw std::invalid_argument("config: keep_prob must be in (0, 1]");
    if (cfg.gso == GsoKind::CycleShift) throw std::invalid_argument("config: cycle_shift is a test operator only");
    validate(cfg.train);
    if (cfg.sweep) {
        const auto& sw = *cfg.sweep;
        if (std::find(std::begin(kSweepParams), std::end(kSweepParams), sw.param) == std::end(kSweepParams))
            throw std::invalid_argument("config: cannot sweep '" + sw.param +
                                        "' (allowed: sigma2, keep_prob, n_train, epochs, learning_rate)");
        if (sw.values.empty()) throw std::invalid_argument("config: sweep_values must not be empty");
        for (double v : sw.values) {
            if (!std::isfinite(v)) throw std::invalid_argument("config: sweep values must be finite");
            if (is_integral_sweep(sw.param) && (v < 0 || v != std::floor(v)))
                throw std::invalid_argument("config: " + sw.param + " sweep values must be non-negative integers");
            if (sw.param == "n_train" && v < 1) throw std::invalid_argument("config: n_train sweep values must be >= 1");
            if (sw.param == "sigma2" && v < 0) throw std::invalid_argument("config: sigma2 sweep values must be >= 0");
            if (sw.param == "keep_prob" && !(v > 0 && v <= 1))
                throw std::invalid_argument("config: keep_prob sweep values must be in (0, 1]");
            if (sw.param == "learning_rate" && v < 0)
                throw std::invalid_argument("config: learning_rate sweep values must be >= 0");
        }
    }
}

std::uint64_t RealizationSeeds::init(Structure s) const { return derive_seed(realization, 10 + structure_id(s)); }
std::uint64_t RealizationSeeds::training(Structure s) const { return derive_seed(realization, 20 + structure_id(s)); }

RealizationSeeds realization_seeds(std::uint64_t master_seed, std::size_t realization) {
    RealizationSeeds s;
    s.realization = derive_seed(master_seed, realization);
    s.graph = derive_seed(s.realization, 0);
    s.train_data = derive_seed(s.realization, 1);
    s.test_data = derive_seed(s.realization, 2);
    s.test_noise = derive_seed(s.realization, 3);
    return s;
}

NetworkSpec network_spec(const ExperimentConfig& cfg, Structure structure) {
    NetworkSpec spec;
    spec.nodes = cfg.graph.n;
    spec.input_features = 1;
    spec.classes = cfg.graph.n;
    spec.keep_prob = cfg.keep_prob;
    spec.conv_bias = cfg.conv_bias;
    spec.normalize_input = cfg.normalize_input;
    for (auto f : cfg.features) spec.layers.push_back({structure, f, cfg.taps});
    return spec;
}

namespace {

struct RealizationData {
    RealizationSeeds seeds;
    Graph graph;
    Gso gso;
    Dataset train;
    Dataset test_clean;
};

struct Job {
    std::size_t realization;
    std::size_t arch_slot;
    std::optional<std::size_t> sweep_index;  ///< empty: one training, all sweep values evaluated
};

double sweep_or(const ExperimentConfig& cfg, const std::string& param, std::optional<std::size_t> idx, double fallback) {
    if (cfg.sweep && cfg.sweep->param == param && idx) return cfg.sweep->values[*idx];
    return fallback;
}

}  // namespace

std::vector<CellResult> run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
    validate(cfg);
    const bool test_only_sweep = !cfg.sweep || cfg.sweep->param == "sigma2";
    const std::size_t sweep_count = cfg.sweep ? cfg.sweep->values.size() : 1;

    std::size_t train_size = cfg.n_train;
    if (cfg.sweep && cfg.sweep->param == "n_train")
        train_size = static_cast<std::size_t>(*std::max_element(cfg.sweep->values.begin(), cfg.sweep->values.end()));

    std::vector<RealizationData> data;
    for (std::size_t r = 0; r < cfg.realizations; ++r) {
        RealizationData d;
        d.seeds = realization_seeds(cfg.master_seed, r);
        SbmSpec spec = cfg.graph;
        spec.seed = d.seeds.graph;
        d.graph = sbm_generate(spec);
        d.gso = make_gso(d.graph, cfg.gso);
        if (cfg.gso_unit_spectrum) d.gso = d.gso.scaled(1.0 / spectral_radius(d.gso));
        Rng train_rng(d.seeds.train_data);
        d.train = synth_source_localization(d.graph, train_size, cfg.effective_t_max(), train_rng);
        Rng test_rng(d.seeds.test_data);
        d.test_clean = synth_source_localization(d.graph, cfg.n_test, cfg.effective_t_max(), test_rng);
        data.push_back(std::move(d));
    }
    if (options.log) options.log("generated " + std::to_string(cfg.realizations) + " graph realizations");

    std::vector<Job> jobs;
    for (std::size_t a = 0; a < cfg.architectures.size(); ++a)
        for (std::size_t r = 0; r < cfg.realizations; ++r) {
            if (test_only_sweep) {
                jobs.push_back({r, a, std::nullopt});
            } else {
                for (std::size_t s = 0; s < sweep_count; ++s) jobs.push_back({r, a, s});
            }
        }

    // slot = (arch, sweep index, realization)
    std::vector<CellResult> slots(cfg.architectures.size() * sweep_count * cfg.realizations);
    auto slot_of = [&](std::size_t a, std::size_t s, std::size_t r) { return (a * sweep_count + s) * cfg.realizations + r; };

    std::mutex log_mutex;
    auto run_job = [&](const Job& job) {
        const auto& d = data[job.realization];
        const Structure arch = cfg.architectures[job.arch_slot];
        const auto start = std::chrono::steady_clock::now();

        ExperimentConfig cell_cfg = cfg;
        cell_cfg.keep_prob = sweep_or(cfg, "keep_prob", job.sweep_index, cfg.keep_prob);
        cell_cfg.train.learning_rate = sweep_or(cfg, "learning_rate", job.sweep_index, cfg.train.learning_rate);
        cell_cfg.train.epochs = static_cast<std::size_t>(
            sweep_or(cfg, "epochs", job.sweep_index, static_cast<double>(cfg.train.epochs)));
        const auto n_train = static_cast<std::size_t>(
            sweep_or(cfg, "n_train", job.sweep_index, static_cast<double>(cfg.n_train)));
        cell_cfg.train.seed = d.seeds.training(arch);

        Dataset train_set = d.train;
        train_set.samples.resize(n_train);

        Network net(network_spec(cell_cfg, arch), d.gso);
        Rng init_rng(d.seeds.init(arch));
        initialize(net, init_rng);
        const auto history = train(net, train_set, cell_cfg.train);
        const double final_loss =
            history.epochs.empty() ? std::numeric_limits<double>::quiet_NaN() : history.epochs.back().mean_loss;

        std::vector<std::size_t> sweep_indices;
        if (job.sweep_index) sweep_indices.push_back(*job.sweep_index);
        else for (std::size_t s = 0; s < sweep_count; ++s) sweep_indices.push_back(s);

        std::vector<CellResult> cells;
        for (auto s : sweep_indices) {
            const double sigma2 = (cfg.sweep && cfg.sweep->param == "sigma2") ? cfg.sweep->values[s] : cfg.sigma2;
            Rng noise_rng(d.seeds.test_noise);
            const auto test_set = add_noise(d.test_clean, sigma2, noise_rng);
            CellResult c;
            c.architecture = arch;
            if (cfg.sweep) {
                c.sweep_param = cfg.sweep->param;
                c.sweep_value = cfg.sweep->values[s];
            }
            c.realization = job.realization;
            c.seed = d.seeds.realization;
            c.conv_param_count = net.conv_param_count();
            c.total_param_count = net.param_count();
            c.accuracy = evaluate(net, test_set);
            c.final_train_loss = final_loss;
            cells.push_back(c);
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        for (std::size_t i = 0; i < cells.size(); ++i) {
            cells[i].wall_seconds = seconds;
            slots[slot_of(job.arch_slot, sweep_indices[i], job.realization)] = cells[i];
        }

        if (!options.history_dir.empty()) {
            std::string name = to_string(arch) + "_r" + std::to_string(job.realization);
            if (job.sweep_index) name += "_s" + std::to_string(*job.sweep_index);
            const auto path = std::filesystem::path(options.history_dir) / (name + ".csv");
            std::ofstream out(path);
            if (!out) throw std::runtime_error("cannot write history file '" + path.string() + "'");
            write_history_csv(out, history);
        }
        if (options.log) {
            std::lock_guard lock(log_mutex);
            std::ostringstream msg;
            msg << short_label(arch) << " realization " << job.realization;
            if (job.sweep_index) msg << " " << cfg.sweep->param << "=" << format_double(cfg.sweep->values[*job.sweep_index]);
            msg << ": accuracy " << cells.front().accuracy << " (" << seconds << " s)";
            options.log(msg.str());
        }
    };

    if (!options.history_dir.empty()) std::filesystem::create_directories(options.history_dir);
    const std::size_t workers = std::max<std::size_t>(1, std::min(options.jobs, jobs.size()));
    if (workers == 1) {
        for (const auto& job : jobs) run_job(job);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < jobs.size(); i = next++) {
                    try {
                        run_job(jobs[i]);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                        next = jobs.size();
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
        if (failure) std::rethrow_exception(failure);
    }
    return slots;
}

std::vector<SummaryRow> summarize(const std::vector<CellResult>& rows) {
    std::vector<SummaryRow> out;
    std::vector<std::vector<double>> accs;
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(), [&](const SummaryRow& s) {
            return s.architecture == r.architecture && s.sweep_param == r.sweep_param && s.sweep_value == r.sweep_value;
        });
        if (it == out.end()) {
            SummaryRow s;
            s.architecture = r.architecture;
            s.sweep_param = r.sweep_param;
            s.sweep_value = r.sweep_value;
            s.conv_param_count = r.conv_param_count;
            out.push_back(s);
            accs.emplace_back();
            it = out.end() - 1;
        }
        accs[static_cast<std::size_t>(it - out.begin())].push_back(r.accuracy);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto& a = accs[i];
        double sum = 0.0;
        for (double v : a) sum += v;
        const double mean = sum / static_cast<double>(a.size());
        double ss = 0.0;
        for (double v : a) ss += (v - mean) * (v - mean);
        out[i].realizations = a.size();
        out[i].mean_accuracy = mean;
        out[i].variance = a.size() > 1 ? ss / static_cast<double>(a.size() - 1) : 0.0;
    }
    return out;
}

namespace {

std::string optional_value(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

void write_raw_csv(std::ostream& out, const std::vector<CellResult>& rows) {
    out << "architecture,sweep_param,sweep_value,realization,seed,conv_param_count,total_param_count,accuracy,"
           "final_train_loss\n";
    for (const auto& r : rows)
        out << to_string(r.architecture) << ',' << r.sweep_param << ',' << optional_value(r.sweep_value) << ','
            << r.realization << ',' << r.seed << ',' << r.conv_param_count << ',' << r.total_param_count << ','
            << format_double(r.accuracy) << ',' << format_double(r.final_train_loss) << '\n';
}

std::vector<CellResult> read_raw_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || trim(line).substr(0, 13) != "architecture,")
        throw std::runtime_error("raw CSV: missing or unexpected header");
    std::vector<CellResult> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != 9)
            throw std::runtime_error("raw CSV line " + std::to_string(line_no) + ": expected 9 fields, got " +
                                     std::to_string(f.size()));
        try {
            CellResult r;
            r.architecture = parse_structure(f[0]);
            r.sweep_param = f[1];
            if (!f[2].empty()) r.sweep_value = parse_double(f[2]);
            r.realization = static_cast<std::size_t>(parse_int(f[3]));
            r.seed = std::stoull(f[4]);
            r.conv_param_count = static_cast<std::size_t>(parse_int(f[5]));
            r.total_param_count = static_cast<std::size_t>(parse_int(f[6]));
            r.accuracy = parse_double(f[7]);
            r.final_train_loss = parse_double(f[8]);
            rows.push_back(r);
        } catch (const std::exception& e) {
            throw std::runtime_error("raw CSV line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rows;
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
    out << "architecture,sweep_param,sweep_value,conv_param_count,realizations,mean_accuracy,variance,"
           "variance_quarter\n";
    for (const auto& r : rows)
        out << to_string(r.architecture) << ',' << r.sweep_param << ',' << optional_value(r.sweep_value) << ','
            << r.conv_param_count << ',' << r.realizations << ',' << format_double(r.mean_accuracy) << ','
            << format_double(r.variance) << ',' << format_double(r.variance / 4.0) << '\n';
}

void write_timing_csv(std::ostream& out, const std::vector<CellResult>& rows) {
    out << "architecture,sweep_param,sweep_value,realization,wall_seconds\n";
    for (const auto& r : rows)
        out << to_string(r.architecture) << ',' << r.sweep_param << ',' << optional_value(r.sweep_value) << ','
            << r.realization << ',' << format_double(r.wall_seconds) << '\n';
}

void report(const std::vector<CellResult>& rows, const std::string& dir) {
    if (rows.empty()) throw std::invalid_argument("report: no results to write");
    std::filesystem::create_directories(dir);
    auto write = [&](const std::string& name, auto&& writer) {
        const auto path = (std::filesystem::path(dir) / name).string();
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("report: cannot open '" + path + "' for writing");
        writer(out);
        if (!out) throw std::runtime_error("report: write failed for '" + path + "'");
    };
    write("results_raw.csv", [&](std::ostream& o) { write_raw_csv(o, rows); });
    write("results_summary.csv", [&](std::ostream& o) { write_summary_csv(o, summarize(rows)); });
    write("results_timing.csv", [&](std::ostream& o) { write_timing_csv(o, rows); });
}

}  // namespace mimo
