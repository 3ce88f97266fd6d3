// Minibatch SGD with fixed learning rate.
#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "mcst/model.hpp"

namespace mcst {

struct TrainConfig {
  double lr = 0.05;
  std::size_t epochs = 10;
  std::size_t batch = 8;
  std::uint64_t seed = 0;
  /// Global gradient-norm clip per update; 0 disables clipping.
  double clip_norm = 0.0;
};

struct TrainResult {
  SeqModel model;
  std::vector<double> loss_curve;  // mean training loss of each epoch
};

inline double gradient_norm(const ModelDims& dims, ModelParams& g) {
  double sq = 0.0;
  visit_params(dims, [&](const std::string&, const auto& t) { sq += t.squaredNorm(); }, g);
  return std::sqrt(sq);
}

/// Each epoch visits the data in an order shuffled by a stream derived from
/// (seed, epoch); gradients within a batch are summed in that order and the
/// update uses their mean.
inline TrainResult train(SeqModel model, const std::vector<Example>& data, const TrainConfig& cfg) {
  if (data.empty()) throw Error("train: empty corpus");
  if (cfg.batch == 0) throw Error("train: batch must be positive");
  TrainResult res;
  std::vector<std::size_t> order(data.size());
  ModelParams grad = zeros_like(model.dims, model.params);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, "train/epoch" + std::to_string(epoch)));
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      visit_params(model.dims, [](const std::string&, auto& t) { t.setZero(); }, grad);
      for (std::size_t k = start; k < end; ++k) {
        const double loss = detail::forward_backward(model, data[order[k]], &grad);
        if (!std::isfinite(loss))
          throw Error("train: non-finite loss at epoch " + std::to_string(epoch) + ", example " +
                      std::to_string(order[k]));
        epoch_loss += loss;
      }
      double step = cfg.lr / static_cast<double>(end - start);
      if (cfg.clip_norm > 0.0) {
        const double norm = gradient_norm(model.dims, grad) / static_cast<double>(end - start);
        if (norm > cfg.clip_norm) step *= cfg.clip_norm / norm;
      }
      visit_params(
          model.dims, [&](const std::string&, auto& p, const auto& g) { p -= step * g; }, model.params, grad);
    }
    res.loss_curve.push_back(epoch_loss / static_cast<double>(data.size()));
  }
  res.model = std::move(model);
  return res;
}

}  // namespace mcst
