#include "mimo/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "mimo/text_io.hpp"

namespace mimo {

void validate(const TrainConfig& cfg) {
    if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate))
        throw std::invalid_argument("train: learning rate must be finite and non-negative");
    if (cfg.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
    if (!(cfg.beta1 > 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 > 0.0 && cfg.beta2 < 1.0))
        throw std::invalid_argument("train: beta1 and beta2 must lie in (0, 1)");
    if (!(cfg.epsilon > 0.0)) throw std::invalid_argument("train: epsilon must be positive");
}

AdamState AdamState::for_shapes(const std::vector<std::span<double>>& params) {
    AdamState s;
    for (const auto& p : params) {
        s.m.emplace_back(p.size(), 0.0);
        s.v.emplace_back(p.size(), 0.0);
    }
    return s;
}

void adam_step(std::vector<std::span<double>> params, const std::vector<std::span<const double>>& grads,
               AdamState& state, const TrainConfig& cfg, const std::vector<std::string>& names) {
    if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size())
        throw std::invalid_argument("adam_step: tensor count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != grads[i].size() || params[i].size() != state.m[i].size() ||
            params[i].size() != state.v[i].size())
            throw std::invalid_argument("adam_step: shape mismatch in tensor " + std::to_string(i));
        for (std::size_t j = 0; j < grads[i].size(); ++j) {
            if (!std::isfinite(grads[i][j])) {
                const auto label = i < names.size() ? names[i] : "tensor " + std::to_string(i);
                throw std::runtime_error("adam_step: non-finite gradient in " + label + " at entry " +
                                         std::to_string(j));
            }
        }
    }
    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double correction1 = 1.0 - std::pow(cfg.beta1, t);
    const double correction2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < params[i].size(); ++j) {
            const double g = grads[i][j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            const double m_hat = m[j] / correction1;
            const double v_hat = v[j] / correction2;
            params[i][j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
        }
    }
}

double batch_gradient(const Network& net, const Dataset& ds, std::span<const std::size_t> batch, Rng& rng,
                      NetworkGradients& mean_grad, std::size_t* correct) {
    if (batch.empty()) throw std::invalid_argument("batch_gradient: empty batch");
    const auto trace = network_forward(net, batch_signals(ds, batch), Mode::Train, &rng);
    Matrix d_logits(trace.logits.rows(), trace.logits.cols());
    double loss = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto col = static_cast<Eigen::Index>(b);
        const auto label = ds.samples.at(batch[b]).label;
        auto lr = softmax_cross_entropy(trace.logits.col(col), label);
        loss += lr.loss;
        if (correct && argmax(trace.logits.col(col)) == label) ++*correct;
        d_logits.col(col) = lr.d_logits;
    }
    const double scale = 1.0 / static_cast<double>(batch.size());
    mean_grad = network_backward(net, trace, d_logits);
    mean_grad *= scale;
    return loss * scale;
}

TrainHistory train(Network& net, const Dataset& ds, const TrainConfig& cfg) {
    validate(cfg);
    if (ds.empty()) throw std::invalid_argument("train: empty dataset");
    if (ds.n != net.spec().nodes || ds.q0 != net.spec().input_features || ds.c != net.spec().classes)
        throw std::invalid_argument("train: dataset shape (n=" + std::to_string(ds.n) + ", q0=" +
                                    std::to_string(ds.q0) + ", c=" + std::to_string(ds.c) +
                                    ") does not match the network");
    Rng rng(cfg.seed);
    auto state = AdamState::for_shapes(net.parameters());
    const auto names = net.parameter_names();
    std::vector<std::size_t> order(ds.size());
    TrainHistory history;
    NetworkGradients grad;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
            const auto len = std::min(cfg.batch_size, order.size() - start);
            const std::span<const std::size_t> batch(order.data() + start, len);
            const double loss = batch_gradient(net, ds, batch, rng, grad, &correct);
            if (!std::isfinite(loss))
                throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                         std::to_string(batch_index));
            loss_sum += loss * static_cast<double>(len);
            const auto& const_grad = grad;
            adam_step(net.parameters(), const_grad.tensors(), state, cfg, names);
        }
        history.epochs.push_back({epoch, loss_sum / static_cast<double>(ds.size()),
                                  static_cast<double>(correct) / static_cast<double>(ds.size())});
    }
    return history;
}

double evaluate(const Network& net, const Dataset& ds) {
    if (ds.empty()) throw std::invalid_argument("evaluate: empty dataset");
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::size_t correct = 0;
    constexpr std::size_t kChunk = 256;
    for (std::size_t start = 0; start < all.size(); start += kChunk) {
        const std::span<const std::size_t> chunk(all.data() + start, std::min(kChunk, all.size() - start));
        const auto labels = predict_batch(net, batch_signals(ds, chunk));
        for (std::size_t b = 0; b < chunk.size(); ++b)
            if (labels[b] == ds.samples[chunk[b]].label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

void write_history_csv(std::ostream& out, const TrainHistory& history) {
    out << "epoch,mean_loss,train_accuracy\n";
    for (const auto& e : history.epochs)
        out << e.epoch << ',' << format_double(e.mean_loss) << ',' << format_double(e.train_accuracy) << '\n';
}

}  // namespace mimo
