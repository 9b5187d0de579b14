#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "stden/graph.hpp"
#include "stden/odeint.hpp"
#include "stden/tape.hpp"
#include "stden/tensor.hpp"

namespace stden {

/// stden: full physics; incp: phi removed; unkp: MLP dynamics;
/// gru_direct: GRU with a one-shot affine head and no ODE.
enum class ModelKind { stden, incp, unkp, gru_direct };

std::string_view kind_name(ModelKind kind);
ModelKind parse_kind(std::string_view text);

/// tanh: dz/dt = -phi * tanh(alpha * Lz); linear: dz/dt = -phi * (alpha * Lz).
enum class DynamicsMode { tanh, linear };

std::string_view mode_name(DynamicsMode mode);
DynamicsMode parse_mode(std::string_view text);

struct ModelConfig {
  ModelKind kind = ModelKind::stden;
  std::size_t history_len = 12;
  std::size_t horizon = 12;
  std::size_t latent_channels = 2;
  std::size_t gru_hidden = 32;
  DynamicsMode dynamics = DynamicsMode::tanh;
  Weighting weighting = Weighting::unweighted;
  SolverConfig train_solver = SolverConfig::rk4();
  SolverConfig solver = SolverConfig::dopri5();  // inference

  void validate() const;
};

/// Output of one batched forward pass. `prediction` is B x (H * |E|) with
/// column h * |E| + e; mu and sigma are B x (n * d), channel-major per row.
/// mu/sigma are unset for gru_direct.
struct ForwardResult {
  Var prediction;
  Var mu;
  Var sigma;
  long nfe = 0;
};

enum class ParamMode { trainable, frozen };

/// z0 = mu + eps * sigma. Throws if any sigma <= 0.
Var sample_z0(Var mu, Var sigma, const Tensor& eps);

/// z' = z - phi * (alpha * Lz), one explicit step of the linear PEF dynamics
/// on an n x d field. `alpha` holds one value per channel.
NodeField euler_pef_step(const RoadNetwork& net, std::span<const double> phi,
                         std::span<const double> alpha, const NodeField& z,
                         Weighting weighting = Weighting::unweighted);

/// Physical dynamics on a detached field, used by the generator and as a
/// reference for the model's taped dynamics.
NodeField pef_dynamics(const RoadNetwork& net, std::span<const double> phi,
                       std::span<const double> alpha, const NodeField& z, DynamicsMode mode,
                       Weighting weighting = Weighting::unweighted);

/// Sum over nodes and channels of z_i / phi_i; a first integral of the
/// linear dynamics.
double energy_total(std::span<const double> phi, const NodeField& z);

/// The encoder / ODE / decoder network and its ablation variants.
///
/// All batched values use one row per example. History batches are
/// (T * B) x |E| with row t * B + b.
class Model {
 public:
  /// Fresh parameters: weights uniform in +-1/sqrt(fan_in), phi = 1,
  /// alpha = 0.1, decoder w = 1/d, b = 0.
  Model(ModelConfig config, std::size_t nodes, std::size_t edges, std::uint64_t seed);
  /// Adopts existing parameters; shapes are checked against the config.
  Model(ModelConfig config, std::size_t nodes, std::size_t edges, ParamStore params);

  const ModelConfig& config() const noexcept { return config_; }
  std::size_t node_count() const noexcept { return nodes_; }
  std::size_t edge_count() const noexcept { return edges_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }

  /// Number of scalar parameters in the dynamics function alone.
  std::size_t dynamics_parameter_count() const;

  /// Full pipeline on `store` (normally params()). `eps` is B x (n * d)
  /// standard-normal noise, or nullptr for deterministic mode.
  ForwardResult forward(Tape& tape, ParamStore& store, const RoadNetwork& net,
                        const Tensor& history, std::size_t batch, const Tensor* eps,
                        const SolverConfig& solver, ParamMode mode = ParamMode::trainable) const;

  /// Deterministic detached prediction, B x (H * |E|) normalized.
  Tensor predict(const RoadNetwork& net, const Tensor& history, std::size_t batch,
                 const SolverConfig& solver, long* nfe = nullptr) const;

  /// Final GRU hidden state, B x gru_hidden.
  Var encode_hidden(Tape& tape, ParamStore& store, const Tensor& history, std::size_t batch,
                    ParamMode mode) const;
  /// (mu, sigma) with sigma = softplus(s) + 1e-4.
  std::pair<Var, Var> encode(Tape& tape, ParamStore& store, const Tensor& history,
                             std::size_t batch, ParamMode mode) const;
  /// Builds dz/dt for batches of `batch` rows.
  std::function<Var(const Var&, double)> dynamics(Tape& tape, ParamStore& store,
                                                  const RoadNetwork& net, std::size_t batch,
                                                  ParamMode mode) const;
  /// flow = w^T (-grad z) + b per edge; B x (n * d) -> B x |E|.
  Var decode(Tape& tape, ParamStore& store, const RoadNetwork& net, Var z,
             ParamMode mode) const;

  /// Evaluates dz/dt on a detached B x (n * d) state.
  Tensor dynamics_value(const RoadNetwork& net, const Tensor& z) const;
  /// Potentials z(t_1..t_H) of one deterministic forward, H x (n * d).
  Tensor potentials(const RoadNetwork& net, const Tensor& history,
                    const SolverConfig& solver) const;

 private:
  void check_shapes() const;
  void check_network(const RoadNetwork& net) const;
  Var leaf(Tape& tape, ParamStore& store, std::string_view name, ParamMode mode) const;

  ModelConfig config_;
  std::size_t nodes_;
  std::size_t edges_;
  ParamStore params_;
};

}  // namespace stden
