#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "dprobe/error.hpp"
#include "dprobe/network.hpp"
#include "dprobe/rng.hpp"

namespace dprobe {

struct TrainConfig {
  std::size_t epochs = 8;
  double learning_rate = 0.03;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;  // drives the per-epoch shuffle only
};

struct TrainResult {
  Model model;
  std::vector<double> epoch_losses;
  double final_accuracy = 0.0;  // on the training data
};

// Minibatch SGD with classical momentum on mean cross-entropy. Single-threaded and
// bit-reproducible for a fixed seed.
inline TrainResult sgd_train(Model model, std::span<const Sample> data, const TrainConfig& cfg) {
  if (data.empty()) throw UsageError("sgd_train: empty dataset");
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate))
    throw UsageError("sgd_train: learning rate must be positive");
  if (cfg.batch_size == 0) throw UsageError("sgd_train: batch size must be positive");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw UsageError("sgd_train: momentum must be in [0, 1)");

  TrainResult r;
  Rng rng(cfg.seed);
  Parameters velocity = zeros_like(model.spec());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Sample> batch;
  batch.reserve(cfg.batch_size);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k)
        batch.push_back(data[order[k]]);
      LossGradient lg;
      try {
        lg = parameter_gradients(model, batch);
      } catch (const NumericalError& e) {
        throw TrainingError("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(lg.loss)) throw TrainingError("training diverged in epoch " + std::to_string(epoch));
      loss_sum += lg.loss * static_cast<double>(batch.size());
      for (std::size_t li = 0; li < lg.grads.size(); ++li) {
        auto& g = lg.grads[li];
        if (g.weight.empty()) continue;
        auto& v = velocity[li];
        auto& p = model.params()[li];
        for (std::size_t i = 0; i < g.weight.size(); ++i) {
          v.weight[i] = cfg.momentum * v.weight[i] - cfg.learning_rate * g.weight[i];
          p.weight[i] += v.weight[i];
        }
        for (std::size_t i = 0; i < g.bias.size(); ++i) {
          v.bias[i] = cfg.momentum * v.bias[i] - cfg.learning_rate * g.bias[i];
          p.bias[i] += v.bias[i];
        }
      }
    }
    const double epoch_loss = loss_sum / static_cast<double>(data.size());
    if (!std::isfinite(epoch_loss)) throw TrainingError("training diverged in epoch " + std::to_string(epoch));
    r.epoch_losses.push_back(epoch_loss);
  }
  r.final_accuracy = accuracy(model, data);
  r.model = std::move(model);
  return r;
}

}  // namespace dprobe
