#include "mimo/filters.hpp"

#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "mimo/text_io.hpp"

namespace mimo {

namespace {

using ConstMap = Eigen::Map<const Matrix>;

std::string shape_text(std::size_t p, std::size_t q, std::size_t k) {
    return "P=" + std::to_string(p) + " Q=" + std::to_string(q) + " K=" + std::to_string(k);
}

void check_input(const MimoFilterParams& params, const Gso& s, const Matrix& x, const char* where) {
    if (static_cast<std::size_t>(x.rows()) != params.q_in() || s.size() == 0 || x.cols() == 0 ||
        static_cast<std::size_t>(x.cols()) % s.size() != 0)
        throw std::invalid_argument(std::string(where) + ": input is " + std::to_string(x.rows()) + "x" +
                                    std::to_string(x.cols()) + ", expected " + std::to_string(params.q_in()) +
                                    " rows and a multiple of " + std::to_string(s.size()) + " columns");
}

/// Dense H_k for Toeplitz taps: H[p][q] = h[p - q + Q - 1].
Matrix toeplitz_block(const MimoFilterParams& params, std::size_t k) {
    const auto p_out = params.p_out();
    const auto q_in = params.q_in();
    Matrix h(p_out, q_in);
    for (std::size_t p = 0; p < p_out; ++p)
        for (std::size_t q = 0; q < q_in; ++q) h(p, q) = params.tap(k, p + q_in - 1 - q);
    return h;
}

/// Horner evaluation of sum_k (S^T)^k terms[k], row-wise.
Matrix transposed_polynomial(const Gso& s, std::vector<Matrix>& terms) {
    Matrix acc = std::move(terms.back());
    Matrix shifted;
    for (std::size_t k = terms.size() - 1; k-- > 0;) {
        s.apply_transposed_into(acc, shifted);
        acc = shifted + terms[k];
    }
    return acc;
}

Matrix stack_rows(const std::vector<Matrix>& rows) {
    Matrix out(rows.size(), rows.front().cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(k) = rows[k].row(0);
    return out;
}

}  // namespace

std::string to_string(Structure structure) {
    switch (structure) {
        case Structure::Full: return "full";
        case Structure::AggregateInputs: return "aggregate_inputs";
        case Structure::ConsolidateOutputs: return "consolidate_outputs";
        case Structure::Toeplitz: return "toeplitz";
    }
    return "unknown";
}

std::string short_label(Structure structure) {
    switch (structure) {
        case Structure::Full: return "PQK";
        case Structure::AggregateInputs: return "PK";
        case Structure::ConsolidateOutputs: return "QK";
        case Structure::Toeplitz: return "(P+Q-1)K";
    }
    return "unknown";
}

Structure parse_structure(const std::string& text) {
    for (auto s : kAllStructures)
        if (text == to_string(s) || text == short_label(s)) return s;
    throw std::invalid_argument("unknown filter structure '" + text + "'");
}

std::size_t param_count(Structure structure, std::size_t p_out, std::size_t q_in, std::size_t k_taps) {
    return MimoFilterParams::tap_columns(structure, p_out, q_in) * k_taps;
}

std::size_t MimoFilterParams::tap_columns(Structure structure, std::size_t p_out, std::size_t q_in) {
    switch (structure) {
        case Structure::Full: return p_out * q_in;
        case Structure::AggregateInputs: return p_out;
        case Structure::ConsolidateOutputs: return q_in;
        case Structure::Toeplitz: return p_out + q_in - 1;
    }
    throw std::invalid_argument("unknown filter structure");
}

MimoFilterParams::MimoFilterParams(Structure structure, std::size_t p_out, std::size_t q_in, std::size_t k_taps)
    : MimoFilterParams(structure, p_out, q_in, k_taps,
                       Matrix::Zero(k_taps, tap_columns(structure, p_out, q_in))) {}

MimoFilterParams::MimoFilterParams(Structure structure, std::size_t p_out, std::size_t q_in, std::size_t k_taps,
                                   Matrix taps)
    : structure_(structure), p_(p_out), q_(q_in), k_(k_taps), taps_(std::move(taps)) {
    if (p_out == 0 || q_in == 0 || k_taps == 0)
        throw std::invalid_argument("MimoFilterParams: P, Q, K must be positive (" + shape_text(p_out, q_in, k_taps) +
                                    ")");
    const auto cols = tap_columns(structure, p_out, q_in);
    if (static_cast<std::size_t>(taps_.rows()) != k_taps || static_cast<std::size_t>(taps_.cols()) != cols)
        throw std::invalid_argument("MimoFilterParams: " + to_string(structure) + " with " +
                                    shape_text(p_out, q_in, k_taps) + " needs " + std::to_string(k_taps) + "x" +
                                    std::to_string(cols) + " taps, got " + std::to_string(taps_.rows()) + "x" +
                                    std::to_string(taps_.cols()));
}

Vector lsi_apply(const Gso& s, std::span<const double> taps, const Vector& x) {
    if (static_cast<std::size_t>(x.size()) != s.size())
        throw std::invalid_argument("lsi_apply: signal length " + std::to_string(x.size()) +
                                    " does not match GSO size " + std::to_string(s.size()));
    const Matrix row = x.transpose();
    const auto powers = shift_powers(s, row, taps.size());
    Vector y = Vector::Zero(x.size());
    for (std::size_t k = 0; k < taps.size(); ++k) y += taps[k] * powers[k].row(0).transpose();
    return y;
}

Matrix mimo_forward(const MimoFilterParams& params, const Gso& s, const Matrix& x) {
    check_input(params, s, x, "mimo_forward");
    const auto p_out = static_cast<Eigen::Index>(params.p_out());
    const auto q_in = static_cast<Eigen::Index>(params.q_in());
    const auto k_taps = params.k_taps();
    const auto n = x.cols();
    const Matrix& taps = params.taps();

    switch (params.structure()) {
        case Structure::Full: {
            const auto z = shift_powers(s, x, k_taps);
            Matrix y = Matrix::Zero(p_out, n);
            for (std::size_t k = 0; k < k_taps; ++k) y.noalias() += ConstMap(taps.row(k).data(), p_out, q_in) * z[k];
            return y;
        }
        case Structure::AggregateInputs: {
            const Matrix summed = x.colwise().sum();
            const Matrix zs = stack_rows(shift_powers(s, summed, k_taps));
            return taps.transpose() * zs;
        }
        case Structure::ConsolidateOutputs: {
            const auto z = shift_powers(s, x, k_taps);
            Matrix g = Matrix::Zero(1, n);
            for (std::size_t k = 0; k < k_taps; ++k) g.noalias() += taps.row(k) * z[k];
            return g.replicate(p_out, 1);
        }
        case Structure::Toeplitz: {
            const auto z = shift_powers(s, x, k_taps);
            Matrix y = Matrix::Zero(p_out, n);
            for (std::size_t k = 0; k < k_taps; ++k) y.noalias() += toeplitz_block(params, k) * z[k];
            return y;
        }
    }
    throw std::invalid_argument("mimo_forward: unknown structure");
}

FilterGradients mimo_backward(const MimoFilterParams& params, const Gso& s, const Matrix& x, const Matrix& d_y) {
    check_input(params, s, x, "mimo_backward");
    const auto p_out = static_cast<Eigen::Index>(params.p_out());
    const auto q_in = static_cast<Eigen::Index>(params.q_in());
    const auto k_taps = params.k_taps();
    const auto n = x.cols();
    if (d_y.rows() != p_out || d_y.cols() != n)
        throw std::invalid_argument("mimo_backward: output gradient is " + std::to_string(d_y.rows()) + "x" +
                                    std::to_string(d_y.cols()) + ", expected " + std::to_string(p_out) + "x" +
                                    std::to_string(n));
    const Matrix& taps = params.taps();
    FilterGradients grads;
    grads.d_taps = Matrix::Zero(taps.rows(), taps.cols());
    std::vector<Matrix> terms(k_taps);

    switch (params.structure()) {
        case Structure::Full: {
            const auto z = shift_powers(s, x, k_taps);
            for (std::size_t k = 0; k < k_taps; ++k) {
                const ConstMap h(taps.row(k).data(), p_out, q_in);
                Eigen::Map<Matrix>(grads.d_taps.row(k).data(), p_out, q_in).noalias() = d_y * z[k].transpose();
                terms[k].noalias() = h.transpose() * d_y;
            }
            grads.d_input = transposed_polynomial(s, terms);
            break;
        }
        case Structure::AggregateInputs: {
            const Matrix summed = x.colwise().sum();
            const Matrix zs = stack_rows(shift_powers(s, summed, k_taps));
            grads.d_taps.noalias() = zs * d_y.transpose();
            for (std::size_t k = 0; k < k_taps; ++k) terms[k].noalias() = taps.row(k) * d_y;
            const Matrix d_summed = transposed_polynomial(s, terms);
            grads.d_input = d_summed.replicate(q_in, 1);
            break;
        }
        case Structure::ConsolidateOutputs: {
            const auto z = shift_powers(s, x, k_taps);
            const Matrix d_g = d_y.colwise().sum();
            for (std::size_t k = 0; k < k_taps; ++k) {
                grads.d_taps.row(k).noalias() = d_g * z[k].transpose();
                terms[k].noalias() = taps.row(k).transpose() * d_g;
            }
            grads.d_input = transposed_polynomial(s, terms);
            break;
        }
        case Structure::Toeplitz: {
            const auto z = shift_powers(s, x, k_taps);
            for (std::size_t k = 0; k < k_taps; ++k) {
                const Matrix d_h = d_y * z[k].transpose();
                for (Eigen::Index p = 0; p < p_out; ++p)
                    for (Eigen::Index q = 0; q < q_in; ++q) grads.d_taps(k, p + q_in - 1 - q) += d_h(p, q);
                terms[k].noalias() = toeplitz_block(params, k).transpose() * d_y;
            }
            grads.d_input = transposed_polynomial(s, terms);
            break;
        }
    }
    return grads;
}

std::vector<DenseMatrix> expand_to_full(const MimoFilterParams& params) {
    const auto p_out = static_cast<Eigen::Index>(params.p_out());
    const auto q_in = static_cast<Eigen::Index>(params.q_in());
    std::vector<DenseMatrix> h(params.k_taps(), DenseMatrix::Zero(p_out, q_in));
    for (std::size_t k = 0; k < params.k_taps(); ++k) {
        for (Eigen::Index p = 0; p < p_out; ++p) {
            for (Eigen::Index q = 0; q < q_in; ++q) {
                switch (params.structure()) {
                    case Structure::Full: h[k](p, q) = params.tap(k, p * q_in + q); break;
                    case Structure::AggregateInputs: h[k](p, q) = params.tap(k, p); break;
                    case Structure::ConsolidateOutputs: h[k](p, q) = params.tap(k, q); break;
                    case Structure::Toeplitz: h[k](p, q) = params.tap(k, p - q + q_in - 1); break;
                }
            }
        }
    }
    return h;
}

MimoFilterParams to_full(const MimoFilterParams& params) {
    const auto h = expand_to_full(params);
    const auto p_out = params.p_out();
    const auto q_in = params.q_in();
    Matrix taps(params.k_taps(), p_out * q_in);
    for (std::size_t k = 0; k < h.size(); ++k)
        for (std::size_t p = 0; p < p_out; ++p)
            for (std::size_t q = 0; q < q_in; ++q) taps(k, p * q_in + q) = h[k](p, q);
    return MimoFilterParams(Structure::Full, p_out, q_in, params.k_taps(), std::move(taps));
}

Vector kron_oracle(const std::vector<DenseMatrix>& h_mats, const Gso& s, const Vector& x_stacked) {
    if (h_mats.empty()) throw std::invalid_argument("kron_oracle: no tap matrices");
    const auto n = static_cast<Eigen::Index>(s.size());
    const auto p_out = h_mats.front().rows();
    const auto q_in = h_mats.front().cols();
    if (x_stacked.size() != q_in * n)
        throw std::invalid_argument("kron_oracle: stacked input length " + std::to_string(x_stacked.size()) +
                                    " != Q*N = " + std::to_string(q_in * n));
    const DenseMatrix s_dense = s.to_dense();
    DenseMatrix s_pow = DenseMatrix::Identity(n, n);
    DenseMatrix a = DenseMatrix::Zero(p_out * n, q_in * n);
    for (const auto& h : h_mats) {
        if (h.rows() != p_out || h.cols() != q_in) throw std::invalid_argument("kron_oracle: inconsistent H_k shapes");
        for (Eigen::Index p = 0; p < p_out; ++p)
            for (Eigen::Index q = 0; q < q_in; ++q) a.block(p * n, q * n, n, n) += h(p, q) * s_pow;
        s_pow = s_dense * s_pow;
    }
    return a * x_stacked;
}

void write_filter(std::ostream& out, const MimoFilterParams& params) {
    out << "filter " << to_string(params.structure()) << ' ' << params.p_out() << ' ' << params.q_in() << ' '
        << params.k_taps() << '\n';
    for (double v : params.values()) out << format_double(v) << '\n';
}

MimoFilterParams read_filter(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("filter checkpoint: missing header");
    std::istringstream header(line);
    std::string keyword, tag;
    long long p = 0, q = 0, k = 0;
    if (!(header >> keyword >> tag >> p >> q >> k) || keyword != "filter" || p <= 0 || q <= 0 || k <= 0)
        throw std::runtime_error("filter checkpoint: malformed header '" + line + "'");
    const auto structure = parse_structure(tag);
    MimoFilterParams params(structure, static_cast<std::size_t>(p), static_cast<std::size_t>(q),
                            static_cast<std::size_t>(k));
    for (double& v : params.values()) {
        if (!std::getline(in, line)) throw std::runtime_error("filter checkpoint: truncated tap list");
        v = parse_double(line);
    }
    return params;
}

}  // namespace mimo
