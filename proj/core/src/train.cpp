#include "stden/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <random>

#include "stden/baselines.hpp"
#include "stden/error.hpp"
#include "stden/metrics.hpp"

namespace stden {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(grad_clip_norm > 0.0)) throw ConfigError("grad_clip_norm must be positive");
  if (!(kl_weight >= 0.0)) throw ConfigError("kl_weight must be >= 0");
  if (!(obs_sigma > 0.0)) throw ConfigError("obs_sigma must be positive");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (eval_batch_size < 1) throw ConfigError("eval_batch_size must be >= 1");
}

Var nll_loss(Var pred, Var target, double obs_sigma) {
  if (!(obs_sigma > 0.0)) throw ValidationError("nll_loss: obs_sigma must be positive");
  if (pred.shape() != target.shape()) {
    throw ShapeError("nll_loss: shape mismatch " + shape_string(pred.shape()) + " vs " +
                     shape_string(target.shape()));
  }
  const Var diff = pred - target;
  const double offset = std::log(obs_sigma) + 0.5 * std::log(2.0 * std::numbers::pi);
  return (1.0 / (2.0 * obs_sigma * obs_sigma)) * mean(diff * diff) +
         pred.tape().constant(Tensor::scalar(offset));
}

Var kl_penalty(Var mu, Var sigma) {
  for (double s : sigma.value().data()) {
    if (!(s > 0.0)) throw ValidationError("kl_penalty: sigma must be positive");
  }
  Tape& tape = mu.tape();
  const Var one = tape.constant(Tensor::scalar(1.0));
  return 0.5 * mean(mu * mu + sigma * sigma - one - 2.0 * log(sigma));
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& e : params.entries()) {
    for (double g : e.grad.data()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NonFiniteError("clip_grad_norm: non-finite gradient");
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& e : params.entries()) {
      for (double& g : e.grad.data()) g *= factor;
    }
  }
  return norm;
}

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParamStore& params) {
  if (m_.empty()) {
    for (const auto& e : params.entries()) {
      m_.emplace_back(e.value.shape(), 0.0);
      v_.emplace_back(e.value.shape(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw Error("adam: parameter set changed between steps");
  for (const auto& e : params.entries()) {
    if (!e.grad.all_finite()) throw NonFiniteError("adam: non-finite gradient in '" + e.name + "'");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& e = params.entries()[p];
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = e.grad[i];
      m_[p][i] = beta1_ * m_[p][i] + (1.0 - beta1_) * g;
      v_[p][i] = beta2_ * v_[p][i] + (1.0 - beta2_) * g * g;
      const double mhat = m_[p][i] / c1;
      const double vhat = v_[p][i] / c2;
      e.value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

Var training_loss(const Model& model, Tape& tape, ParamStore& store, const RoadNetwork& net,
                  const Dataset::Batch& batch, const Tensor* eps, const TrainConfig& cfg) {
  const ForwardResult r = model.forward(tape, store, net, batch.history, batch.size, eps,
                                        model.config().train_solver, ParamMode::trainable);
  Var loss = nll_loss(r.prediction, tape.constant(batch.target), cfg.obs_sigma);
  if (cfg.kl_weight > 0.0 && model.config().kind != ModelKind::gru_direct) {
    loss = loss + cfg.kl_weight * kl_penalty(r.mu, r.sigma);
  }
  return loss;
}

TrainResult train(Model model, const RoadNetwork& net, const Dataset& data,
                  const TrainConfig& cfg, std::uint64_t seed, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.history_len() != model.config().history_len || data.horizon() != model.config().horizon) {
    throw ValidationError("train: dataset T/H differ from the model config");
  }
  if (data.edge_count() != model.edge_count()) {
    throw ValidationError("train: dataset has " + std::to_string(data.edge_count()) +
                          " edges, model expects " + std::to_string(model.edge_count()));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const bool sampled = model.config().kind != ModelKind::gru_direct;
  const std::size_t nd = model.node_count() * model.config().latent_channels;

  std::vector<std::size_t> order(data.windows(Split::train).begin(), data.windows(Split::train).end());
  Adam adam(cfg.learning_rate);
  TrainResult result{model, {}, 0, 0.0};
  std::size_t bad_epochs = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, order.size() - begin);
      const Dataset::Batch batch =
          data.make_batch(std::span<const std::size_t>(order).subspan(begin, b));
      Tensor eps({b, nd});
      if (sampled) {
        for (double& v : eps.data()) v = normal(rng);
      }
      model.params().zero_grad();
      try {
        Tape tape;
        const Var loss = training_loss(model, tape, model.params(), net, batch,
                                       sampled ? &eps : nullptr, cfg);
        loss_sum += loss.value().item() * static_cast<double>(b);
        tape.backward(loss);
        clip_grad_norm(model.params(), cfg.grad_clip_norm);
        adam.step(model.params());
      } catch (const NonFiniteError& e) {
        throw NonFiniteError("training diverged at epoch " + std::to_string(epoch) +
                             ", batch starting at window " + std::to_string(order[begin]) +
                             ": " + e.what());
      }
    }

    ModelForecaster forecaster(model, net, model.config().solver);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.val_mae = split_mae(forecaster, data, Split::val, cfg.eval_batch_size);
    rec.nfe = forecaster.mean_nfe();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (result.best_epoch == 0 || rec.val_mae < result.best_val_mae) {
      result.best_epoch = epoch;
      result.best_val_mae = rec.val_mae;
      result.model = model;
      bad_epochs = 0;
    } else if (++bad_epochs > cfg.patience) {
      break;
    }
  }
  return result;
}

void write_history_csv(std::ostream& out, std::span<const EpochRecord> history) {
  out << "epoch,train_loss,val_mae,nfe\n";
  char buf[128];
  for (const EpochRecord& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_mae, r.nfe);
    out << buf;
  }
}

}  // namespace stden
