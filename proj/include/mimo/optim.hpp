#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mimo/data.hpp"
#include "mimo/nn.hpp"

namespace mimo {

struct TrainConfig {
    double learning_rate = 0.005;
    std::size_t epochs = 20;
    std::size_t batch_size = 100;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

/// First/second moment estimates for each parameter tensor.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t t = 0;

    static AdamState for_shapes(const std::vector<std::span<double>>& params);
};

/// One bias-corrected ADAM update. Throws before touching anything if a
/// gradient entry is not finite.
void adam_step(std::vector<std::span<double>> params, const std::vector<std::span<const double>>& grads,
               AdamState& state, const TrainConfig& cfg, const std::vector<std::string>& names = {});

struct EpochStats {
    std::size_t epoch = 0;  ///< 1-based
    double mean_loss = 0.0;
    /// Fraction of training samples whose training-mode logits (dropout on)
    /// picked the right class during the epoch.
    double train_accuracy = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
};

/// Mean loss and mean gradient over `batch` (fixed summation order).
double batch_gradient(const Network& net, const Dataset& ds, std::span<const std::size_t> batch, Rng& rng,
                      NetworkGradients& mean_grad, std::size_t* correct = nullptr);

/// Mini-batch ADAM training; the shuffle and dropout draws both come from
/// an RNG seeded with cfg.seed.
TrainHistory train(Network& net, const Dataset& ds, const TrainConfig& cfg);

/// Fraction of samples classified correctly in Eval mode.
double evaluate(const Network& net, const Dataset& ds);

/// CSV with header "epoch,mean_loss,train_accuracy".
void write_history_csv(std::ostream& out, const TrainHistory& history);

}  // namespace mimo
