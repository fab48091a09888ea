#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <tuple>
#include <string>
#include <vector>

#include "mimo/types.hpp"

namespace mimo {

struct Edge {
    std::size_t i = 0;
    std::size_t j = 0;
    double w = 1.0;

    friend bool operator==(const Edge&, const Edge&) = default;
};

/// Undirected weighted graph on nodes [0, n). Each edge is stored once with
/// i < j, sorted by (i, j); self-loops and duplicate edges are rejected.
class Graph {
public:
    Graph() = default;
    Graph(std::size_t n, std::vector<Edge> edges);

    std::size_t num_nodes() const { return n_; }
    std::size_t num_edges() const { return edges_.size(); }
    const std::vector<Edge>& edges() const { return edges_; }

    /// Neighbor lists (symmetric), built at construction.
    const std::vector<std::size_t>& neighbors(std::size_t node) const { return adj_.at(node); }
    double weight(std::size_t a, std::size_t b) const;
    double degree(std::size_t node) const;

    /// Dense symmetric weight matrix. Used by oracles and small-graph checks.
    DenseMatrix dense_adjacency() const;

    friend bool operator==(const Graph& a, const Graph& b) {
        return a.n_ == b.n_ && a.edges_ == b.edges_;
    }

private:
    std::size_t n_ = 0;
    std::vector<Edge> edges_;
    std::vector<std::vector<std::size_t>> adj_;
};

enum class GsoKind { Adjacency, NormalizedLaplacian, CycleShift };

std::string to_string(GsoKind kind);
GsoKind parse_gso_kind(const std::string& text);

/// Graph shift operator in compressed-row form.
class Gso {
public:
    Gso() = default;

    /// Builds from (row, col, value) triplets; duplicates are summed.
    static Gso from_triplets(std::size_t n, GsoKind kind,
                             std::vector<std::tuple<std::size_t, std::size_t, double>> triplets);

    std::size_t size() const { return n_; }
    GsoKind kind() const { return kind_; }
    std::size_t nonzeros() const { return values_.size(); }

    /// Row-wise application: every row x_q of `signals` (Q x N) is replaced by
    /// S x_q. A Q x (B*N) matrix is treated as B signals side by side and each
    /// length-N block is shifted on its own.
    Matrix apply(const Matrix& signals) const;
    /// Same layout rules as apply, with S^T.
    Matrix apply_transposed(const Matrix& signals) const;

    void apply_into(const Matrix& signals, Matrix& out) const;
    void apply_transposed_into(const Matrix& signals, Matrix& out) const;

    DenseMatrix to_dense() const;
    /// Same sparsity and kind, every value multiplied by `factor`.
    Gso scaled(double factor) const;

    const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }
    const std::vector<std::size_t>& col_idx() const { return col_idx_; }
    const std::vector<double>& values() const { return values_; }

private:
    std::size_t n_ = 0;
    GsoKind kind_ = GsoKind::Adjacency;
    std::vector<std::size_t> row_ptr_{0};
    std::vector<std::size_t> col_idx_;
    std::vector<double> values_;
};

struct SbmSpec {
    std::size_t n = 16;
    std::size_t communities = 4;
    double p_intra = 0.8;
    double p_inter = 0.2;
    std::uint64_t seed = 0;
    std::size_t max_attempts = 100;
};

void validate(const SbmSpec& spec);

/// Community of `node` under contiguous equal-size blocks.
std::size_t sbm_block(const SbmSpec& spec, std::size_t node);

/// Samples a connected SBM graph with unit weights, resampling until
/// connected. Throws std::runtime_error after `max_attempts` failures.
Graph sbm_generate(const SbmSpec& spec);

/// True iff a breadth-first traversal from node 0 reaches every node.
bool is_connected(const Graph& g);

/// Hop distances from `source`; unreachable nodes get SIZE_MAX.
std::vector<std::size_t> bfs_distances(const Graph& g, std::size_t source);

Gso make_gso(const Graph& g, GsoKind kind);

/// Largest eigenvalue magnitude, computed densely.
double spectral_radius(const Gso& s);

/// Directed cycle delay: [S]_{i, i-1 mod n} = 1.
Gso cycle_gso(std::size_t n);

/// [x, Sx, ..., S^{K-1}x] applied row-wise to a Q x N (or blocked Q x B*N)
/// signal matrix, one sparse apply per step.
std::vector<Matrix> shift_powers(const Gso& s, const Matrix& x, std::size_t k_taps);

// Edge-list text format: "n m" then m lines "i j w", sorted by (i, j).
void write_edge_list(std::ostream& out, const Graph& g);
Graph read_edge_list(std::istream& in);
void save_graph(const Graph& g, const std::string& path);
Graph load_graph(const std::string& path);

}  // namespace mimo
