#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mimo/nn.hpp"
#include "oracles.hpp"

using namespace mimo;
using namespace mimo::testing;

namespace {

NetworkSpec tiny_spec(Structure s, bool conv_bias = false, double keep_prob = 1.0) {
    NetworkSpec spec;
    spec.nodes = 5;
    spec.input_features = 1;
    spec.classes = 3;
    spec.keep_prob = keep_prob;
    spec.layers = {{s, 2, 2}, {s, 3, 2}};
    spec.conv_bias = conv_bias;
    return spec;
}

Network random_network(const NetworkSpec& spec, Rng& rng) {
    Network net(spec, random_gso(spec.nodes, rng, 0.5));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto t : net.parameters())
        for (double& v : t) v = u(rng);
    return net;
}

/// Positive inputs keep most ReLUs away from the kink during finite differencing.
Matrix positive_batch(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Matrix m = random_matrix(rows, cols, rng);
    return m.cwiseAbs().array() + 0.1;
}

double batch_loss(const Matrix& logits, const std::vector<std::size_t>& labels) {
    double total = 0.0;
    for (std::size_t b = 0; b < labels.size(); ++b)
        total += softmax_cross_entropy(logits.col(static_cast<Eigen::Index>(b)), labels[b]).loss;
    return total;
}

}  // namespace

TEST(Relu, ForwardAndBackward) {
    Matrix x(1, 4), d(1, 4);
    x << -1.0, 0.0, 2.0, 0.5;
    d << 1.0, 1.0, 1.0, 3.0;
    Matrix y(1, 4), dx(1, 4);
    y << 0.0, 0.0, 2.0, 0.5;
    dx << 0.0, 0.0, 1.0, 3.0;
    EXPECT_EQ(relu(x), y);
    EXPECT_EQ(relu_backward(x, d), dx);
    EXPECT_THROW(relu_backward(x, Matrix::Zero(2, 2)), std::invalid_argument);
}

TEST(Dropout, EvalAndKeepAllAreIdentity) {
    Rng rng(1);
    const Matrix x = random_matrix(3, 4, rng);
    EXPECT_EQ(dropout(x, 0.5, Mode::Eval, nullptr).y, x);
    const auto r = dropout(x, 1.0, Mode::Train, &rng);
    EXPECT_EQ(r.y, x);
    EXPECT_EQ(r.mask, Matrix::Ones(3, 4));
    EXPECT_THROW(dropout(x, 0.5, Mode::Train, nullptr), std::invalid_argument);
    EXPECT_THROW(dropout(x, 0.0, Mode::Train, &rng), std::invalid_argument);
}

TEST(Dropout, InvertedScalingPreservesMean) {
    Rng rng(2);
    const Matrix x = Matrix::Ones(200, 200);
    const auto r = dropout(x, 0.75, Mode::Train, &rng);
    for (Eigen::Index i = 0; i < r.mask.size(); ++i) {
        const double m = r.mask.data()[i];
        EXPECT_TRUE(m == 0.0 || m == 1.0 / 0.75);
    }
    EXPECT_NEAR(r.y.mean(), 1.0, 0.02);
    const double kept = (r.mask.array() > 0.0).cast<double>().mean();
    EXPECT_NEAR(kept, 0.75, 0.01);
}

TEST(Readout, FeatureMajorFlattening) {
    Rng rng(3);
    const Matrix features = random_matrix(2, 4, rng);
    const Matrix w = random_matrix(3, 8, rng);
    const Vector b = random_matrix(3, 1, rng);
    Vector flat(8);
    for (int f = 0; f < 2; ++f)
        for (int i = 0; i < 4; ++i) flat(f * 4 + i) = features(f, i);
    const DenseMatrix expected = w * flat + b;
    const Matrix logits = readout(w, b, features);
    ASSERT_EQ(logits.cols(), 1);
    EXPECT_LE((logits - expected).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_THROW(readout(w, b, Matrix::Zero(3, 4)), std::invalid_argument);
}

TEST(Readout, BatchColumnsMatchSingleSamples) {
    Rng rng(4);
    const Matrix w = random_matrix(3, 8, rng);
    const Vector b = random_matrix(3, 1, rng);
    const Matrix features = random_matrix(2, 12, rng);
    const Matrix d_logits = random_matrix(3, 3, rng);
    const Matrix logits = readout(w, b, features);
    const auto g = readout_backward(w, features, d_logits);
    Matrix dw = Matrix::Zero(3, 8);
    for (Eigen::Index s = 0; s < 3; ++s) {
        const Matrix fs = features.middleCols(s * 4, 4);
        EXPECT_LE((logits.col(s) - readout(w, b, fs)).cwiseAbs().maxCoeff(), 1e-14);
        const auto gs = readout_backward(w, fs, d_logits.col(s));
        EXPECT_LE((g.d_features.middleCols(s * 4, 4) - gs.d_features).cwiseAbs().maxCoeff(), 1e-14);
        dw += gs.d_weights;
    }
    EXPECT_LE((g.d_weights - dw).cwiseAbs().maxCoeff(), 1e-13);
    EXPECT_LE((g.d_bias - d_logits.rowwise().sum()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Softmax, StableAndNormalized) {
    Vector logits(3);
    logits << 1000.0, 0.0, -1000.0;
    const Vector p = softmax(logits);
    EXPECT_NEAR(p.sum(), 1.0, 1e-15);
    EXPECT_NEAR(p(0), 1.0, 1e-15);
    const auto r = softmax_cross_entropy(logits, 1);
    EXPECT_NEAR(r.loss, 1000.0, 1e-9);
    EXPECT_TRUE(std::isfinite(r.loss));
}

TEST(Softmax, CrossEntropyGradient) {
    Vector logits(4);
    logits << 0.3, -1.2, 2.0, 0.0;
    const auto r = softmax_cross_entropy(logits, 2);
    Vector expected = softmax(logits);
    expected(2) -= 1.0;
    EXPECT_LE((r.d_logits - expected).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_NEAR(softmax_cross_entropy(Vector::Zero(16), 5).loss, std::log(16.0), 1e-15);
    EXPECT_THROW(softmax_cross_entropy(logits, 4), std::invalid_argument);
}

TEST(Network, ZeroParametersGiveUniformLoss) {
    NetworkSpec spec = tiny_spec(Structure::Full);
    Network net(spec, cycle_gso(5));
    const auto t = network_forward(net, Matrix::Zero(1, 5), Mode::Eval, nullptr);
    EXPECT_EQ(t.logits, Matrix::Zero(3, 1));
    EXPECT_NEAR(softmax_cross_entropy(t.logits.col(0), 0).loss, std::log(3.0), 1e-15);
}

TEST(Network, ParameterCountsOfTheSourceLocalizationNetwork) {
    const std::pair<Structure, std::size_t> expected[] = {{Structure::Full, 10400},
                                                          {Structure::AggregateInputs, 480},
                                                          {Structure::ConsolidateOutputs, 165},
                                                          {Structure::Toeplitz, 635}};
    for (const auto& [structure, taps] : expected) {
        NetworkSpec spec;
        spec.nodes = 16;
        spec.classes = 16;
        spec.layers = {{structure, 32, 5}, {structure, 64, 5}};
        const Network plain(spec, cycle_gso(16));
        EXPECT_EQ(plain.conv_param_count(), taps);
        EXPECT_EQ(plain.conv_bias_count(), 0u);
        EXPECT_EQ(plain.param_count(), taps + 16 * 64 * 16 + 16);
        spec.conv_bias = true;
        const Network biased(spec, cycle_gso(16));
        EXPECT_EQ(biased.conv_param_count(), taps);
        EXPECT_EQ(biased.conv_bias_count(), structure == Structure::ConsolidateOutputs ? 2u : 96u);
    }
}

TEST(Network, GradientsMatchFiniteDifferences) {
    Rng rng(5);
    for (auto structure : kAllStructures) {
        for (bool bias : {false, true}) {
            auto net = random_network(tiny_spec(structure, bias, 0.8), rng);
            const Matrix x = positive_batch(1, 10, rng);
            const std::vector<std::size_t> labels{0, 2};
            auto objective = [&] {
                Rng mask_rng(99);
                return batch_loss(network_forward(net, x, Mode::Train, &mask_rng).logits, labels);
            };
            Rng mask_rng(99);
            const auto trace = network_forward(net, x, Mode::Train, &mask_rng);
            Matrix d_logits(3, 2);
            for (Eigen::Index b = 0; b < 2; ++b) d_logits.col(b) = softmax_cross_entropy(trace.logits.col(b), labels[b]).d_logits;
            const auto grads = network_backward(net, trace, d_logits);
            const auto analytic = grads.tensors();
            auto params = net.parameters();
            const auto names = net.parameter_names();
            ASSERT_EQ(analytic.size(), params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                const auto fd = finite_difference(params[i].data(), params[i].size(), objective);
                EXPECT_LE(relative_error(fd.data(), analytic[i].data(), fd.size()), 1e-4)
                    << to_string(structure) << " " << names[i];
            }
        }
    }
}

TEST(Network, BatchGradientIsSumOfSampleGradients) {
    Rng rng(6);
    for (auto structure : kAllStructures) {
        const auto net = random_network(tiny_spec(structure, true), rng);
        const Matrix x = random_matrix(1, 20, rng);
        const Matrix d_logits = random_matrix(3, 4, rng);
        const auto batched = network_backward(net, network_forward(net, x, Mode::Eval, nullptr), d_logits);
        auto summed = NetworkGradients::zeros_like(net);
        for (Eigen::Index b = 0; b < 4; ++b) {
            const Matrix xs = x.middleCols(b * 5, 5);
            summed += network_backward(net, network_forward(net, xs, Mode::Eval, nullptr), d_logits.col(b));
        }
        const auto a = batched.tensors();
        const auto s = summed.tensors();
        for (std::size_t i = 0; i < a.size(); ++i)
            EXPECT_LE(relative_error(a[i].data(), s[i].data(), a[i].size()), 1e-12) << to_string(structure);
    }
}

TEST(Network, ConsolidateOutputsFeatureMapsHaveIdenticalRows) {
    Rng rng(7);
    const auto net = random_network(tiny_spec(Structure::ConsolidateOutputs, true), rng);
    const auto t = network_forward(net, random_matrix(1, 5, rng), Mode::Eval, nullptr);
    for (const auto& pre : t.pre_activations)
        for (Eigen::Index p = 1; p < pre.rows(); ++p) EXPECT_EQ(pre.row(p), pre.row(0));
}

TEST(Network, InputNormalizationRemovesScale) {
    Rng rng(8);
    auto spec = tiny_spec(Structure::AggregateInputs);
    spec.normalize_input = true;
    const auto net = random_network(spec, rng);
    const Matrix x = random_matrix(1, 10, rng);
    Matrix scaled = x;
    scaled.middleCols(0, 5) *= 1e6;
    scaled.middleCols(5, 5) *= 0.25;
    const Matrix a = network_forward(net, x, Mode::Eval, nullptr).logits;
    const Matrix b = network_forward(net, scaled, Mode::Eval, nullptr).logits;
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, a.cwiseAbs().maxCoeff()));
    EXPECT_EQ(network_forward(net, Matrix::Zero(1, 5), Mode::Eval, nullptr).logits.col(0), net.readout_bias());
}

TEST(Network, InitializationBoundsAndDeterminism) {
    NetworkSpec spec;
    spec.nodes = 16;
    spec.classes = 16;
    spec.conv_bias = true;
    spec.layers = {{Structure::Full, 32, 5}, {Structure::Full, 64, 5}};
    Network a(spec, cycle_gso(16)), b(spec, cycle_gso(16));
    Rng r1(11), r2(11);
    initialize(a, r1);
    initialize(b, r2);
    EXPECT_EQ(a, b);
    EXPECT_LE(a.layer(0).taps().cwiseAbs().maxCoeff(), std::sqrt(1.0 / 5.0));
    EXPECT_LE(a.layer(1).taps().cwiseAbs().maxCoeff(), std::sqrt(1.0 / 160.0));
    EXPECT_LE(a.readout_weights().cwiseAbs().maxCoeff(), std::sqrt(1.0 / 1024.0));
    EXPECT_EQ(a.readout_bias(), Vector::Zero(16));
    EXPECT_EQ(a.layer_bias(1), Vector::Zero(64));
    EXPECT_GT(a.layer(1).taps().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Predict, TiesGoToLowestIndex) {
    Vector logits(4);
    logits << 1.0, 3.0, 3.0, -2.0;
    EXPECT_EQ(argmax(logits), 1u);
    NetworkSpec spec = tiny_spec(Structure::Full);
    Network net(spec, cycle_gso(5));
    net.readout_bias() << 0.5, 0.5, 0.5;
    EXPECT_EQ(predict(net, Matrix::Zero(1, 5)), 0u);
}

TEST(Predict, BatchMatchesSingle) {
    Rng rng(9);
    const auto net = random_network(tiny_spec(Structure::Toeplitz, false, 0.5), rng);
    const Matrix x = random_matrix(1, 35, rng);
    const auto labels = predict_batch(net, x);
    ASSERT_EQ(labels.size(), 7u);
    for (Eigen::Index b = 0; b < 7; ++b) EXPECT_EQ(labels[static_cast<std::size_t>(b)], predict(net, x.middleCols(b * 5, 5)));
    EXPECT_THROW(predict(net, x), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsExact) {
    Rng rng(10);
    for (auto structure : kAllStructures) {
        for (bool bias : {false, true}) {
            auto spec = tiny_spec(structure, bias, 0.75);
            spec.normalize_input = bias;
            const auto net = random_network(spec, rng);
            std::stringstream first;
            write_network(first, net);
            const auto back = read_network(first);
            EXPECT_EQ(back, net);
            std::stringstream second;
            write_network(second, back);
            EXPECT_EQ(first.str(), second.str());
        }
    }
}

TEST(Checkpoint, RejectsMalformedInput) {
    std::stringstream bad_magic("mimo-network 2\n");
    EXPECT_THROW(read_network(bad_magic), std::runtime_error);
    Rng rng(12);
    const auto net = random_network(tiny_spec(Structure::Full), rng);
    std::stringstream full;
    write_network(full, net);
    const auto text = full.str();
    std::stringstream truncated(text.substr(0, text.size() / 2));
    EXPECT_THROW(read_network(truncated), std::runtime_error);
}
