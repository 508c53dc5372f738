#pragma once

// Minibatch Adam training with early stopping on validation loss.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "xfire/nn/adam.hpp"
#include "xfire/rng.hpp"

namespace xfire::models {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 1;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainingCurve {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
};

/// Model must be copyable and expose `std::vector<nn::Parameter<T>*> parameters()`.
/// `step(model, batch_indices)` runs forward/backward on one minibatch and
/// returns its mean loss; gradients are zeroed beforehand. `validate(model)`
/// returns the mean validation loss. On return `model` holds the parameters
/// of the epoch with the lowest validation loss.
template <class T, class Model>
TrainingCurve train_early_stopping(
    Model& model, std::size_t n_train, const TrainConfig& config,
    const std::function<double(Model&, std::span<const std::size_t>)>& step,
    const std::function<double(Model&)>& validate,
    const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  if (n_train == 0) throw std::invalid_argument("train: empty training set");
  if (config.batch_size == 0 || config.max_epochs == 0)
    throw std::invalid_argument("train: batch_size and max_epochs must be positive");

  nn::AdamState<T> adam(nn::AdamOptions{config.learning_rate});
  TrainingCurve curve;
  Model best = model;
  std::vector<std::size_t> order(n_train);
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, epoch, Stream::shuffle));
    rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    for (std::size_t begin = 0, len = 0; begin < n_train; begin += len) {
      len = std::min(config.batch_size, n_train - begin);
      if (n_train - begin - len == 1) ++len;  // no trailing singleton batch
      auto params = model.parameters();
      for (auto* p : params) p->zero_grad();
      const double loss = step(model, std::span<const std::size_t>(order).subspan(begin, len));
      if (!std::isfinite(loss)) throw std::runtime_error("train: non-finite loss");
      loss_sum += loss * static_cast<double>(len);
      nn::adam_update<T>(params, adam);
    }

    EpochRecord rec{epoch, loss_sum / static_cast<double>(n_train), validate(model)};
    curve.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_loss < curve.best_val_loss) {
      curve.best_val_loss = rec.val_loss;
      curve.best_epoch = epoch;
      best = model;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      curve.stopped_early = true;
      break;
    }
  }
  model = std::move(best);
  return curve;
}

}  // namespace xfire::models
