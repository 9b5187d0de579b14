#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "stden/data.hpp"
#include "stden/graph.hpp"
#include "stden/model.hpp"
#include "stden/tensor.hpp"

namespace stden {

/// Synthetic road network and flow generator settings.
struct SynthConfig {
  std::size_t nodes = 50;
  double out_degree = 3.0;
  std::uint64_t seed = 0;
  std::size_t steps = 4032;  // 14 days of 5-minute intervals
  double alpha = 0.2;
  double phi_min = 0.5;
  double phi_max = 2.0;
  DynamicsMode mode = DynamicsMode::tanh;
  double smoothness = 3.0;  // heat-kernel time of the initial field
  double noise = 0.05;      // observation noise std as a fraction of flow std
  double interval_minutes = 5.0;
  double time_per_step = 1.0 / 12.0;  // physical time units per interval
  std::size_t excite_period = 288;
  std::size_t neighbor_pool = 6;  // extra arcs join one of the k nearest nodes

  void validate() const;
};

/// Connected directed graph on random points in the unit square: a spanning
/// tree joining each node to its nearest earlier node, 20% reciprocal arcs,
/// then extra arcs to near neighbours until |E| = round(n * out_degree).
/// Edges are sorted by (src, dst).
RoadNetwork random_network(const SynthConfig& cfg);

struct Simulation {
  FlowSeries flows;
  Tensor potentials;  // steps x n, the noiseless field
  std::vector<double> phi;
  double alpha = 0.0;
};

/// Integrates the configured dynamics from smooth random fields (dopri5,
/// rtol 1e-6), re-exciting every `excite_period` steps with a fresh field
/// shifted so that sum z_i / phi_i carries over. Flows are -grad z plus noise.
Simulation simulate(const RoadNetwork& net, const SynthConfig& cfg);

/// Smooth zero-mean field exp(-tau L) g for standard-normal g, scaled so
/// that the flows it induces have unit rms.
std::vector<double> smooth_field(const RoadNetwork& net, double tau, std::span<const double> noise);

/// max_t |I_t - I_0| / max(|I_0|, sum_i |z_0i| / phi_i) with I_t = sum_i z_ti / phi_i.
double conservation_drift(const Tensor& potentials, std::span<const double> phi);

}  // namespace stden
