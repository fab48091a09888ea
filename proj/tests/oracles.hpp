#pragma once

// Reference computations used only by tests. Nothing here calls into the
// sparse or structured code paths it is used to check.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mimo/graph.hpp"
#include "mimo/types.hpp"

namespace mimo::testing {

inline DenseMatrix dense_power(const DenseMatrix& s, std::size_t k) {
    DenseMatrix out = DenseMatrix::Identity(s.rows(), s.cols());
    for (std::size_t i = 0; i < k; ++i) out = s * out;
    return out;
}

/// y[n] = sum_k h[k] x[(n - k) mod N].
inline Vector circular_convolution(const std::vector<double>& h, const Vector& x) {
    const auto n = x.size();
    Vector y = Vector::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (std::size_t k = 0; k < h.size(); ++k) {
            const auto idx = ((i - static_cast<Eigen::Index>(k)) % n + n) % n;
            y(i) += h[k] * x(idx);
        }
    return y;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

/// Random undirected graph with unit or random weights; not necessarily connected.
inline Graph random_graph(std::size_t n, double p, Rng& rng, bool random_weights = false) {
    std::bernoulli_distribution edge(p);
    std::uniform_real_distribution<double> w(0.5, 2.0);
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (edge(rng)) edges.push_back({i, j, random_weights ? w(rng) : 1.0});
    return Graph(n, std::move(edges));
}

inline Graph path_graph(std::size_t n) {
    std::vector<Edge> edges;
    for (std::size_t i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1, 1.0});
    return Graph(n, std::move(edges));
}

inline Graph complete_graph(std::size_t n) {
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) edges.push_back({i, j, 1.0});
    return Graph(n, std::move(edges));
}

/// Random GSO with arbitrary (possibly asymmetric) sparse entries and
/// nonzero diagonal, so transposition errors show up.
inline Gso random_gso(std::size_t n, Rng& rng, double density = 0.4) {
    std::bernoulli_distribution keep(density);
    std::uniform_real_distribution<double> v(-1.0, 1.0);
    std::vector<std::tuple<std::size_t, std::size_t, double>> t;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i == j || keep(rng)) t.emplace_back(i, j, v(rng));
    return Gso::from_triplets(n, GsoKind::CycleShift, std::move(t));
}

/// Central finite difference of f with respect to every entry of `values`.
inline std::vector<double> finite_difference(double* values, std::size_t count, const std::function<double()>& f,
                                             double step = 1e-6) {
    std::vector<double> grad(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double saved = values[i];
        values[i] = saved + step;
        const double up = f();
        values[i] = saved - step;
        const double down = f();
        values[i] = saved;
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

/// max_i |a_i - b_i| / max(|a|_inf, |b|_inf, floor).
inline double relative_error(const double* a, const double* b, std::size_t count, double floor = 1e-8) {
    double diff = 0.0, scale = floor;
    for (std::size_t i = 0; i < count; ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    }
    return diff / scale;
}

}  // namespace mimo::testing
