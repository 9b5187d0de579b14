#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "stden/data.hpp"
#include "stden/graph.hpp"
#include "stden/model.hpp"
#include "stden/tape.hpp"

namespace stden {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  double grad_clip_norm = 5.0;
  double kl_weight = 0.0;
  double obs_sigma = 1.0;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6};
  std::size_t eval_batch_size = 64;

  void validate() const;
};

/// mean[(pred - target)^2 / (2 sigma^2) + ln sigma + ln(2 pi) / 2].
Var nll_loss(Var pred, Var target, double obs_sigma);
/// mean[(mu^2 + sigma^2 - 1 - 2 ln sigma) / 2].
Var kl_penalty(Var mu, Var sigma);

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(ParamStore& params, double max_norm);

class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// One bias-corrected update from the gradients currently in `params`.
  void step(ParamStore& params);
  long steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

/// NLL (plus kl_weight * KL) of one forward pass over a batch.
Var training_loss(const Model& model, Tape& tape, ParamStore& store, const RoadNetwork& net,
                  const Dataset::Batch& batch, const Tensor* eps, const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_mae = 0.0;  // raw units
  double nfe = 0.0;      // mean per validation batch
};

struct TrainResult {
  Model model;  // parameters of the best validation epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minibatch Adam on the training windows with fresh reparametrization noise
/// per example, early stopping on validation MAE. Deterministic in `seed`.
TrainResult train(Model model, const RoadNetwork& net, const Dataset& data,
                  const TrainConfig& cfg, std::uint64_t seed, const EpochCallback& on_epoch = {});

/// CSV with header "epoch,train_loss,val_mae,nfe".
void write_history_csv(std::ostream& out, std::span<const EpochRecord> history);

}  // namespace stden
