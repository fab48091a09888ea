#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mimo/graph.hpp"
#include "mimo/types.hpp"

namespace mimo {

/// Parameterizations of the tap matrices H_k (P x Q) of a MIMO graph filter
/// y = sum_k (H_k kron S^k) x.
enum class Structure {
    Full,                ///< independent h_{k,p,q}: PQK taps
    AggregateInputs,     ///< H_k constant along rows, h_{k,p}: PK taps
    ConsolidateOutputs,  ///< H_k constant along columns, h_{k,q}: QK taps
    Toeplitz,            ///< H_k[p][q] = h_{k,p-q}: (P+Q-1)K taps
};

inline constexpr Structure kAllStructures[] = {Structure::Full, Structure::AggregateInputs,
                                               Structure::ConsolidateOutputs, Structure::Toeplitz};

/// Stable machine tag ("full", "aggregate_inputs", ...).
std::string to_string(Structure structure);
/// Parameter-count label ("PQK", "PK", "QK", "(P+Q-1)K").
std::string short_label(Structure structure);
/// Accepts either the machine tag or the short label.
Structure parse_structure(const std::string& text);

std::size_t param_count(Structure structure, std::size_t p_out, std::size_t q_in, std::size_t k_taps);

/// Tap container for one MIMO graph filter. Taps are a K x C row-major
/// matrix, with C = P*Q (Full, entry p*Q+q), P (AggregateInputs),
/// Q (ConsolidateOutputs) or P+Q-1 (Toeplitz, offset d = p-q stored at d+Q-1).
class MimoFilterParams {
public:
    MimoFilterParams() = default;
    MimoFilterParams(Structure structure, std::size_t p_out, std::size_t q_in, std::size_t k_taps);
    MimoFilterParams(Structure structure, std::size_t p_out, std::size_t q_in, std::size_t k_taps, Matrix taps);

    static std::size_t tap_columns(Structure structure, std::size_t p_out, std::size_t q_in);

    Structure structure() const { return structure_; }
    std::size_t p_out() const { return p_; }
    std::size_t q_in() const { return q_; }
    std::size_t k_taps() const { return k_; }
    std::size_t param_count() const { return static_cast<std::size_t>(taps_.size()); }

    const Matrix& taps() const { return taps_; }
    double tap(std::size_t k, std::size_t col) const { return taps_(k, col); }
    double& tap(std::size_t k, std::size_t col) { return taps_(k, col); }

    /// Flat row-major view of the taps; the shape stays fixed.
    std::span<double> values() { return {taps_.data(), static_cast<std::size_t>(taps_.size())}; }
    std::span<const double> values() const { return {taps_.data(), static_cast<std::size_t>(taps_.size())}; }

    friend bool operator==(const MimoFilterParams& a, const MimoFilterParams& b) {
        return a.structure_ == b.structure_ && a.p_ == b.p_ && a.q_ == b.q_ && a.k_ == b.k_ && a.taps_ == b.taps_;
    }

private:
    Structure structure_ = Structure::Full;
    std::size_t p_ = 0;
    std::size_t q_ = 0;
    std::size_t k_ = 0;
    Matrix taps_;
};

struct FilterGradients {
    Matrix d_taps;   ///< shaped like MimoFilterParams::taps()
    Matrix d_input;  ///< Q x N
};

/// sum_k h_k S^k x.
Vector lsi_apply(const Gso& s, std::span<const double> taps, const Vector& x);

/// Applies the filter to Q x N input features, producing P x N outputs.
/// Q x (B*N) input is a batch of B signals side by side (block b is columns
/// b*N .. b*N+N-1); the output keeps that layout and tap gradients are summed
/// over the batch.
Matrix mimo_forward(const MimoFilterParams& params, const Gso& s, const Matrix& x);

/// Gradients of <d_y, mimo_forward(params, s, x)> with respect to taps and x.
FilterGradients mimo_backward(const MimoFilterParams& params, const Gso& s, const Matrix& x, const Matrix& d_y);

/// The K dense P x Q tap matrices H_k implied by the structure.
std::vector<DenseMatrix> expand_to_full(const MimoFilterParams& params);

/// Full-structure params holding expand_to_full(params).
MimoFilterParams to_full(const MimoFilterParams& params);

/// Dense reference: y = sum_k (H_k kron S^k) x with x stacked feature-major
/// (length QN). Small instances only.
Vector kron_oracle(const std::vector<DenseMatrix>& h_mats, const Gso& s, const Vector& x_stacked);

// Text checkpoint block:
//   filter <structure-tag> <P> <Q> <K>
//   <K*C tap values, row-major, one per line>
void write_filter(std::ostream& out, const MimoFilterParams& params);
MimoFilterParams read_filter(std::istream& in);

}  // namespace mimo
