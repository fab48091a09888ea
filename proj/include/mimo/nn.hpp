#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mimo/filters.hpp"
#include "mimo/graph.hpp"
#include "mimo/types.hpp"

namespace mimo {

enum class Mode { Train, Eval };

struct LayerSpec {
    Structure structure = Structure::Full;
    std::size_t p_out = 1;
    std::size_t k_taps = 1;
};

struct NetworkSpec {
    std::size_t nodes = 0;
    std::size_t input_features = 1;
    std::size_t classes = 2;
    double keep_prob = 1.0;
    std::vector<LayerSpec> layers;
    /// Adds a learned bias per distinct output feature of every conv layer
    /// (a single shared bias for ConsolidateOutputs).
    bool conv_bias = false;
    /// Scales each input signal to unit Frobenius norm before the first layer.
    bool normalize_input = false;
};

void validate(const NetworkSpec& spec);

/// Graph-conv layers with ReLU, dropout on the last feature map, and a dense
/// readout over the flattened F_L x N features.
class Network {
public:
    Network() = default;
    /// All parameters zero.
    Network(NetworkSpec spec, Gso gso);

    const NetworkSpec& spec() const { return spec_; }
    const Gso& gso() const { return gso_; }

    std::size_t num_layers() const { return layers_.size(); }
    const MimoFilterParams& layer(std::size_t i) const { return layers_.at(i); }
    MimoFilterParams& layer(std::size_t i) { return layers_.at(i); }
    /// Empty unless spec().conv_bias.
    const Vector& layer_bias(std::size_t i) const { return conv_b_.at(i); }
    Vector& layer_bias(std::size_t i) { return conv_b_.at(i); }
    std::size_t final_features() const { return layers_.empty() ? spec_.input_features : layers_.back().p_out(); }

    /// C x (F_L * N); column index f * N + i addresses feature f at node i.
    const Matrix& readout_weights() const { return readout_w_; }
    Matrix& readout_weights() { return readout_w_; }
    const Vector& readout_bias() const { return readout_b_; }
    Vector& readout_bias() { return readout_b_; }

    /// Filter taps only.
    std::size_t conv_param_count() const;
    std::size_t conv_bias_count() const;
    std::size_t param_count() const;

    /// Every trainable tensor as a flat span: layer taps in order, then the
    /// conv biases (if any), then readout weights, then readout bias.
    std::vector<std::span<double>> parameters();
    std::vector<std::span<const double>> parameters() const;
    std::vector<std::string> parameter_names() const;

    friend bool operator==(const Network& a, const Network& b);

private:
    NetworkSpec spec_;
    Gso gso_;
    std::vector<MimoFilterParams> layers_;
    std::vector<Vector> conv_b_;
    Matrix readout_w_;
    Vector readout_b_;
};

/// Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) weights with fan_in = Q*K for
/// conv taps and F_L*N for the readout; all biases zero.
void initialize(Network& net, Rng& rng);

Matrix relu(const Matrix& x);
/// Passes d_out where x > 0; zero elsewhere (including x == 0).
Matrix relu_backward(const Matrix& x, const Matrix& d_out);

struct DropoutResult {
    Matrix y;
    Matrix mask;  ///< per-entry multiplier: 0 or 1/keep_prob (all ones in Eval)
};

/// Inverted dropout. `rng` is only touched in Train mode with keep_prob < 1.
DropoutResult dropout(const Matrix& x, double keep_prob, Mode mode, Rng* rng);

/// Logits for F x (B*N) features, one column per sample (C x B). Sample b's
/// flattened input to the readout is entry f*N + i = features(f, b*N + i).
Matrix readout(const Matrix& weights, const Vector& bias, const Matrix& features);

struct ReadoutGradients {
    Matrix d_weights;  ///< summed over the batch
    Vector d_bias;     ///< summed over the batch
    Matrix d_features;
};

ReadoutGradients readout_backward(const Matrix& weights, const Matrix& features, const Matrix& d_logits);

Vector softmax(const Vector& logits);

struct LossResult {
    double loss = 0.0;
    Vector d_logits;
};

LossResult softmax_cross_entropy(const Vector& logits, std::size_t label);

/// Intermediate values of one forward pass over B samples. Feature maps are
/// F x (B*N) with sample b in columns b*N .. b*N+N-1.
struct ForwardTrace {
    Mode mode = Mode::Eval;
    std::size_t batch = 1;
    std::vector<Matrix> inputs;           ///< input to each conv layer (after normalization for layer 0)
    std::vector<Matrix> pre_activations;  ///< filter outputs (plus bias)
    std::vector<Matrix> activations;      ///< relu(pre_activations)
    Matrix dropout_mask;
    Matrix features;  ///< readout input
    Matrix logits;    ///< C x B
};

/// `x` is Q0 x N for one sample or Q0 x (B*N) for a batch.
ForwardTrace network_forward(const Network& net, const Matrix& x, Mode mode, Rng* rng);

struct NetworkGradients {
    std::vector<Matrix> d_taps;
    std::vector<Vector> d_conv_bias;  ///< empty when the network has no conv bias
    Matrix d_readout_weights;
    Vector d_readout_bias;

    static NetworkGradients zeros_like(const Network& net);
    std::vector<std::span<double>> tensors();
    std::vector<std::span<const double>> tensors() const;
    NetworkGradients& operator+=(const NetworkGradients& other);
    NetworkGradients& operator*=(double scale);
};

/// Gradients summed over the batch; `d_logits` is C x B.
NetworkGradients network_backward(const Network& net, const ForwardTrace& trace, const Matrix& d_logits);

/// Argmax of Eval-mode logits; ties go to the lowest index.
std::size_t predict(const Network& net, const Matrix& x);
/// One prediction per sample of a Q0 x (B*N) batch.
std::vector<std::size_t> predict_batch(const Network& net, const Matrix& x);
std::size_t argmax(const Vector& logits);

// Text checkpoint: manifest header, GSO triplets, then each layer in the
// filter block format and the readout tensors. See docs/formats.md.
void write_network(std::ostream& out, const Network& net);
Network read_network(std::istream& in);
/// Number of bias entries a conv layer of this structure carries.
std::size_t conv_bias_size(Structure s, std::size_t p_out);

void save_network(const Network& net, const std::string& path);
Network load_network(const std::string& path);

}  // namespace mimo
