#include "mimo/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <queue>
#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "mimo/text_io.hpp"

namespace mimo {

Graph::Graph(std::size_t n, std::vector<Edge> edges) : n_(n), edges_(std::move(edges)), adj_(n) {
    if (n == 0) throw std::invalid_argument("Graph: node count must be positive");
    for (auto& e : edges_) {
        if (e.i == e.j) throw std::invalid_argument("Graph: self-loop at node " + std::to_string(e.i));
        if (e.i >= n || e.j >= n)
            throw std::invalid_argument("Graph: edge (" + std::to_string(e.i) + ", " + std::to_string(e.j) +
                                        ") references a node outside [0, " + std::to_string(n) + ")");
        if (!std::isfinite(e.w)) throw std::invalid_argument("Graph: non-finite edge weight");
        if (e.i > e.j) std::swap(e.i, e.j);
    }
    std::sort(edges_.begin(), edges_.end(),
              [](const Edge& a, const Edge& b) { return std::tie(a.i, a.j) < std::tie(b.i, b.j); });
    for (std::size_t k = 1; k < edges_.size(); ++k) {
        if (edges_[k].i == edges_[k - 1].i && edges_[k].j == edges_[k - 1].j)
            throw std::invalid_argument("Graph: duplicate edge (" + std::to_string(edges_[k].i) + ", " +
                                        std::to_string(edges_[k].j) + ")");
    }
    for (const auto& e : edges_) {
        adj_[e.i].push_back(e.j);
        adj_[e.j].push_back(e.i);
    }
    for (auto& list : adj_) std::sort(list.begin(), list.end());
}

double Graph::weight(std::size_t a, std::size_t b) const {
    if (a > b) std::swap(a, b);
    auto it = std::lower_bound(edges_.begin(), edges_.end(), std::pair{a, b}, [](const Edge& e, const auto& key) {
        return std::tie(e.i, e.j) < std::tie(key.first, key.second);
    });
    if (it != edges_.end() && it->i == a && it->j == b) return it->w;
    return 0.0;
}

double Graph::degree(std::size_t node) const {
    double d = 0.0;
    for (std::size_t nb : adj_.at(node)) d += weight(node, nb);
    return d;
}

DenseMatrix Graph::dense_adjacency() const {
    DenseMatrix w = DenseMatrix::Zero(n_, n_);
    for (const auto& e : edges_) {
        w(e.i, e.j) = e.w;
        w(e.j, e.i) = e.w;
    }
    return w;
}

std::string to_string(GsoKind kind) {
    switch (kind) {
        case GsoKind::Adjacency: return "adjacency";
        case GsoKind::NormalizedLaplacian: return "normalized_laplacian";
        case GsoKind::CycleShift: return "cycle_shift";
    }
    return "unknown";
}

GsoKind parse_gso_kind(const std::string& text) {
    if (text == "adjacency") return GsoKind::Adjacency;
    if (text == "normalized_laplacian") return GsoKind::NormalizedLaplacian;
    if (text == "cycle_shift") return GsoKind::CycleShift;
    throw std::invalid_argument("unknown GSO kind '" + text + "'");
}

Gso Gso::from_triplets(std::size_t n, GsoKind kind,
                       std::vector<std::tuple<std::size_t, std::size_t, double>> triplets) {
    Gso s;
    s.n_ = n;
    s.kind_ = kind;
    std::sort(triplets.begin(), triplets.end(), [](const auto& a, const auto& b) {
        return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
    });
    s.row_ptr_.assign(n + 1, 0);
    std::size_t last_row = 0;
    for (const auto& [r, c, v] : triplets) {
        if (r >= n || c >= n) throw std::invalid_argument("Gso: triplet index out of range");
        if (!s.col_idx_.empty() && last_row == r && s.col_idx_.back() == c) {
            s.values_.back() += v;
            continue;
        }
        s.col_idx_.push_back(c);
        s.values_.push_back(v);
        last_row = r;
        ++s.row_ptr_[r + 1];
    }
    for (std::size_t r = 0; r < n; ++r) s.row_ptr_[r + 1] += s.row_ptr_[r];
    return s;
}

namespace {

void check_blocks(const Matrix& signals, std::size_t n, const char* where) {
    if (n == 0 || signals.cols() == 0 || static_cast<std::size_t>(signals.cols()) % n != 0)
        throw std::invalid_argument(std::string(where) + ": signal length " + std::to_string(signals.cols()) +
                                    " is not a positive multiple of GSO size " + std::to_string(n));
}

}  // namespace

void Gso::apply_into(const Matrix& signals, Matrix& out) const {
    check_blocks(signals, n_, "Gso::apply");
    out.resize(signals.rows(), signals.cols());
    const auto blocks = static_cast<std::size_t>(signals.size()) / n_;
    for (std::size_t b = 0; b < blocks; ++b) {
        const double* x = signals.data() + b * n_;
        double* y = out.data() + b * n_;
        for (std::size_t i = 0; i < n_; ++i) {
            double acc = 0.0;
            for (std::size_t p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) acc += values_[p] * x[col_idx_[p]];
            y[i] = acc;
        }
    }
}

void Gso::apply_transposed_into(const Matrix& signals, Matrix& out) const {
    check_blocks(signals, n_, "Gso::apply_transposed");
    out.setZero(signals.rows(), signals.cols());
    const auto blocks = static_cast<std::size_t>(signals.size()) / n_;
    for (std::size_t b = 0; b < blocks; ++b) {
        const double* x = signals.data() + b * n_;
        double* y = out.data() + b * n_;
        for (std::size_t i = 0; i < n_; ++i) {
            const double xi = x[i];
            for (std::size_t p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) y[col_idx_[p]] += values_[p] * xi;
        }
    }
}

Matrix Gso::apply(const Matrix& signals) const {
    Matrix out;
    apply_into(signals, out);
    return out;
}

Matrix Gso::apply_transposed(const Matrix& signals) const {
    Matrix out;
    apply_transposed_into(signals, out);
    return out;
}

DenseMatrix Gso::to_dense() const {
    DenseMatrix d = DenseMatrix::Zero(n_, n_);
    for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t p = row_ptr_[i]; p < row_ptr_[i + 1]; ++p) d(i, col_idx_[p]) += values_[p];
    return d;
}

void validate(const SbmSpec& spec) {
    if (spec.n == 0) throw std::invalid_argument("SBM: node count must be positive");
    if (spec.communities == 0 || spec.n % spec.communities != 0)
        throw std::invalid_argument("SBM: community count " + std::to_string(spec.communities) +
                                    " must divide node count " + std::to_string(spec.n));
    if (!(spec.p_inter >= 0.0 && spec.p_inter <= spec.p_intra && spec.p_intra <= 1.0))
        throw std::invalid_argument("SBM: probabilities must satisfy 0 <= p_inter <= p_intra <= 1");
    if (spec.max_attempts == 0) throw std::invalid_argument("SBM: attempt cap must be positive");
}

std::size_t sbm_block(const SbmSpec& spec, std::size_t node) { return node / (spec.n / spec.communities); }

Graph sbm_generate(const SbmSpec& spec) {
    validate(spec);
    Rng rng(spec.seed);
    std::bernoulli_distribution intra(spec.p_intra);
    std::bernoulli_distribution inter(spec.p_inter);
    for (std::size_t attempt = 0; attempt < spec.max_attempts; ++attempt) {
        std::vector<Edge> edges;
        for (std::size_t i = 0; i < spec.n; ++i) {
            for (std::size_t j = i + 1; j < spec.n; ++j) {
                const bool same = sbm_block(spec, i) == sbm_block(spec, j);
                if (same ? intra(rng) : inter(rng)) edges.push_back({i, j, 1.0});
            }
        }
        Graph g(spec.n, std::move(edges));
        if (is_connected(g)) return g;
    }
    throw std::runtime_error("SBM: could not generate connected graph after " + std::to_string(spec.max_attempts) +
                             " attempts");
}

std::vector<std::size_t> bfs_distances(const Graph& g, std::size_t source) {
    constexpr auto unreached = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> dist(g.num_nodes(), unreached);
    std::queue<std::size_t> frontier;
    dist.at(source) = 0;
    frontier.push(source);
    while (!frontier.empty()) {
        const auto u = frontier.front();
        frontier.pop();
        for (auto v : g.neighbors(u)) {
            if (dist[v] == unreached) {
                dist[v] = dist[u] + 1;
                frontier.push(v);
            }
        }
    }
    return dist;
}

bool is_connected(const Graph& g) {
    const auto dist = bfs_distances(g, 0);
    return std::none_of(dist.begin(), dist.end(),
                        [](std::size_t d) { return d == std::numeric_limits<std::size_t>::max(); });
}

Gso make_gso(const Graph& g, GsoKind kind) {
    const std::size_t n = g.num_nodes();
    std::vector<std::tuple<std::size_t, std::size_t, double>> triplets;
    switch (kind) {
        case GsoKind::Adjacency:
            for (const auto& e : g.edges()) {
                triplets.emplace_back(e.i, e.j, e.w);
                triplets.emplace_back(e.j, e.i, e.w);
            }
            break;
        case GsoKind::NormalizedLaplacian: {
            std::vector<double> inv_sqrt(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double d = g.degree(i);
                if (!(d > 0.0)) throw std::invalid_argument("make_gso: zero degree at node " + std::to_string(i));
                inv_sqrt[i] = 1.0 / std::sqrt(d);
            }
            for (std::size_t i = 0; i < n; ++i) triplets.emplace_back(i, i, 1.0);
            for (const auto& e : g.edges()) {
                const double v = -e.w * inv_sqrt[e.i] * inv_sqrt[e.j];
                triplets.emplace_back(e.i, e.j, v);
                triplets.emplace_back(e.j, e.i, v);
            }
            break;
        }
        case GsoKind::CycleShift:
            throw std::invalid_argument("make_gso: use cycle_gso for the cycle shift");
    }
    return Gso::from_triplets(n, kind, std::move(triplets));
}

Gso Gso::scaled(double factor) const {
    if (!std::isfinite(factor)) throw std::invalid_argument("Gso::scaled: non-finite factor");
    Gso out = *this;
    for (double& v : out.values_) v *= factor;
    return out;
}

double spectral_radius(const Gso& s) {
    const DenseMatrix d = s.to_dense();
    if (d.size() == 0) return 0.0;
    if (d == d.transpose()) {
        Eigen::SelfAdjointEigenSolver<DenseMatrix> eig(d, Eigen::EigenvaluesOnly);
        return eig.eigenvalues().cwiseAbs().maxCoeff();
    }
    Eigen::EigenSolver<DenseMatrix> eig(d, false);
    return eig.eigenvalues().cwiseAbs().maxCoeff();
}

Gso cycle_gso(std::size_t n) {
    if (n < 2) throw std::invalid_argument("cycle_gso: n must be at least 2");
    std::vector<std::tuple<std::size_t, std::size_t, double>> triplets;
    for (std::size_t i = 0; i < n; ++i) triplets.emplace_back(i, (i + n - 1) % n, 1.0);
    return Gso::from_triplets(n, GsoKind::CycleShift, std::move(triplets));
}

std::vector<Matrix> shift_powers(const Gso& s, const Matrix& x, std::size_t k_taps) {
    if (k_taps == 0) throw std::invalid_argument("shift_powers: K must be at least 1");
    if (s.size() == 0 || x.cols() == 0 || static_cast<std::size_t>(x.cols()) % s.size() != 0)
        throw std::invalid_argument("shift_powers: signal length " + std::to_string(x.cols()) +
                                    " is not a positive multiple of GSO size " + std::to_string(s.size()));
    std::vector<Matrix> powers(k_taps);
    powers[0] = x;
    for (std::size_t k = 1; k < k_taps; ++k) s.apply_into(powers[k - 1], powers[k]);
    return powers;
}

void write_edge_list(std::ostream& out, const Graph& g) {
    out << g.num_nodes() << ' ' << g.num_edges() << '\n';
    for (const auto& e : g.edges()) out << e.i << ' ' << e.j << ' ' << format_double(e.w) << '\n';
}

Graph read_edge_list(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("edge list: missing header line");
    std::istringstream header(line);
    long long n = 0, m = 0;
    if (!(header >> n >> m) || n <= 0 || m < 0) throw std::runtime_error("edge list: malformed header '" + line + "'");
    std::vector<Edge> edges;
    edges.reserve(static_cast<std::size_t>(m));
    for (long long k = 0; k < m; ++k) {
        if (!std::getline(in, line))
            throw std::runtime_error("edge list: expected " + std::to_string(m) + " edges, found " + std::to_string(k));
        const auto fields = split(trim(line), ' ');
        if (fields.size() != 3) throw std::runtime_error("edge list: malformed edge line '" + line + "'");
        const auto i = parse_int(fields[0]);
        const auto j = parse_int(fields[1]);
        if (i < 0 || j < 0) throw std::runtime_error("edge list: negative node index in '" + line + "'");
        edges.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), parse_double(fields[2])});
    }
    return Graph(static_cast<std::size_t>(n), std::move(edges));
}

void save_graph(const Graph& g, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_edge_list(out, g);
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

Graph load_graph(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
    return read_edge_list(in);
}

}  // namespace mimo
