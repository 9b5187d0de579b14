#include "stden/synth.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <utility>

#include "stden/error.hpp"
#include "stden/odeint.hpp"

namespace stden {
namespace {

// Independent streams for the graph, the physics, and the observation noise.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

Eigen::MatrixXd dense_laplacian(const RoadNetwork& net) {
  const auto n = static_cast<Eigen::Index>(net.node_count());
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
  for (const Edge& e : net.edges()) {
    const auto i = static_cast<Eigen::Index>(e.src);
    const auto j = static_cast<Eigen::Index>(e.dst);
    L(i, i) += 1.0;
    L(j, j) += 1.0;
    L(i, j) -= 1.0;
    L(j, i) -= 1.0;
  }
  return L;
}

}  // namespace

void SynthConfig::validate() const {
  if (nodes < 3) throw ConfigError("synth: nodes must be >= 3");
  if (!(out_degree > 0.0)) throw ConfigError("synth: out_degree must be positive");
  if (!(alpha > 0.0)) throw ConfigError("synth: alpha must be positive");
  if (!(phi_min > 0.0) || !(phi_max >= phi_min)) throw ConfigError("synth: need 0 < phi_min <= phi_max");
  if (!(smoothness >= 0.0)) throw ConfigError("synth: smoothness must be >= 0");
  if (!(noise >= 0.0)) throw ConfigError("synth: noise must be >= 0");
  if (!(time_per_step > 0.0)) throw ConfigError("synth: time_per_step must be positive");
  if (!(interval_minutes > 0.0)) throw ConfigError("synth: interval_minutes must be positive");
  if (excite_period < 2) throw ConfigError("synth: excite_period must be >= 2");
  if (neighbor_pool < 1) throw ConfigError("synth: neighbor_pool must be >= 1");
  if (steps < 1) throw ConfigError("synth: steps must be >= 1");
}

RoadNetwork random_network(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.nodes;
  const auto target = static_cast<std::size_t>(std::llround(static_cast<double>(n) * cfg.out_degree));
  if (target > n * (n - 1)) {
    throw ConfigError("synth: out_degree " + std::to_string(cfg.out_degree) +
                      " is infeasible for " + std::to_string(n) + " nodes (max " +
                      std::to_string(n - 1) + ")");
  }
  auto rng = stream(cfg.seed, 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::pair<double, double>> pos(n);
  for (auto& p : pos) p = {unit(rng), unit(rng)};
  const auto dist2 = [&](std::size_t a, std::size_t b) {
    const double dx = pos[a].first - pos[b].first;
    const double dy = pos[a].second - pos[b].second;
    return dx * dx + dy * dy;
  };

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  std::set<std::pair<std::size_t, std::size_t>> arcs;
  std::vector<std::pair<std::size_t, std::size_t>> tree;
  for (std::size_t k = 1; k < n; ++k) {
    const std::size_t i = order[k];
    std::size_t best = order[0];
    for (std::size_t q = 1; q < k; ++q) {
      if (dist2(i, order[q]) < dist2(i, best)) best = order[q];
    }
    const auto arc = unit(rng) < 0.5 ? std::pair{i, best} : std::pair{best, i};
    arcs.insert(arc);
    tree.push_back(arc);
  }
  for (const auto& [a, b] : tree) {
    if (unit(rng) < 0.2) arcs.insert({b, a});
  }

  // Nearest-neighbour lists, widened when the pool is exhausted.
  std::vector<std::vector<std::size_t>> near(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) near[i].push_back(j);
    }
    std::stable_sort(near[i].begin(), near[i].end(),
                     [&](std::size_t a, std::size_t b) { return dist2(i, a) < dist2(i, b); });
  }
  std::size_t pool = std::min(cfg.neighbor_pool, n - 1);
  std::size_t misses = 0;
  while (arcs.size() < target) {
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    const std::size_t j = near[i][std::uniform_int_distribution<std::size_t>(0, pool - 1)(rng)];
    if (arcs.insert({i, j}).second) {
      misses = 0;
    } else if (++misses > 50 * n && pool < n - 1) {
      ++pool;
      misses = 0;
    }
  }

  std::vector<Edge> edges;
  edges.reserve(arcs.size());
  for (const auto& [a, b] : arcs) edges.push_back({a, b, 1.0});
  return RoadNetwork(n, std::move(edges));
}

std::vector<double> smooth_field(const RoadNetwork& net, double tau, std::span<const double> noise) {
  const std::size_t n = net.node_count();
  if (noise.size() != n) throw ShapeError("smooth_field: noise length must equal node count");
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(dense_laplacian(net));
  const Eigen::VectorXd g = Eigen::Map<const Eigen::VectorXd>(noise.data(), static_cast<Eigen::Index>(n));
  const Eigen::VectorXd decay = (-tau * eig.eigenvalues().array()).exp().matrix();
  Eigen::VectorXd z = eig.eigenvectors() * decay.asDiagonal() * (eig.eigenvectors().transpose() * g);
  z.array() -= z.mean();

  std::vector<double> field(z.data(), z.data() + n);
  const EdgeField f = gradient(net, NodeField(n, 1, field));
  double sq = 0.0;
  for (double v : f.values()) sq += v * v;
  const double rms = std::sqrt(sq / static_cast<double>(f.values().size()));
  // Roundoff from a constant input is not flow.
  if (!(rms > 1e-12 * g.lpNorm<Eigen::Infinity>())) throw ValidationError("smooth_field: field induces no flow");
  for (double& v : field) v /= rms;
  return field;
}

Simulation simulate(const RoadNetwork& net, const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t n = net.node_count();
  const std::size_t m = net.edge_count();
  auto physics = stream(cfg.seed, 2);
  auto observe = stream(cfg.seed, 3);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Simulation sim;
  sim.alpha = cfg.alpha;
  sim.phi.resize(n);
  const double lo = std::log(cfg.phi_min);
  const double hi = std::log(cfg.phi_max);
  for (double& p : sim.phi) p = std::exp(lo + (hi - lo) * unit(physics));

  const std::vector<double> alpha{cfg.alpha};
  const auto f = [&](const Tensor& z, double) {
    const NodeField field(n, 1, std::vector<double>(z.data().begin(), z.data().end()));
    const NodeField dz = pef_dynamics(net, sim.phi, alpha, field, cfg.mode);
    return Tensor({1, n}, std::vector<double>(dz.values().begin(), dz.values().end()));
  };
  SolverConfig solver = SolverConfig::dopri5(1e-6, 1e-9);
  solver.max_nfe = 10'000'000;

  sim.potentials = Tensor({cfg.steps, n});
  std::vector<double> g(n);
  std::vector<double> last;
  for (std::size_t start = 0; start < cfg.steps; start += cfg.excite_period) {
    for (double& v : g) v = normal(physics);
    std::vector<double> field = smooth_field(net, cfg.smoothness, g);
    if (!last.empty()) {
      // Constant shift: flows are unchanged and sum z / phi carries over.
      const NodeField prev(n, 1, last);
      const NodeField next(n, 1, field);
      double inv_phi = 0.0;
      for (double p : sim.phi) inv_phi += 1.0 / p;
      const double shift = (energy_total(sim.phi, prev) - energy_total(sim.phi, next)) / inv_phi;
      for (double& v : field) v += shift;
    }
    const std::size_t len = std::min(cfg.excite_period, cfg.steps - start);
    std::vector<double> times(len);
    for (std::size_t k = 0; k < len; ++k) times[k] = static_cast<double>(k) * cfg.time_per_step;
    const Tensor z0({1, n}, field);
    const auto traj = integrate(f, z0, std::span<const double>(times), solver);
    for (std::size_t k = 0; k < len; ++k) {
      std::copy_n(traj.states[k].data().begin(), n,
                  sim.potentials.data().begin() + (start + k) * n);
    }
    const auto tail = traj.states.back().data();
    last.assign(tail.begin(), tail.end());
  }

  Tensor flows({cfg.steps, m});
  std::vector<double> row(n);
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    std::copy_n(sim.potentials.data().begin() + t * n, n, row.begin());
    const EdgeField grad = gradient(net, NodeField(n, 1, row));
    for (std::size_t e = 0; e < m; ++e) flows.at(t, e) = -grad.values()[e];
  }
  if (cfg.noise > 0.0) {
    double mean = 0.0;
    for (double v : flows.data()) mean += v;
    mean /= static_cast<double>(flows.size());
    double sq = 0.0;
    for (double v : flows.data()) sq += (v - mean) * (v - mean);
    const double scale = cfg.noise * std::sqrt(sq / static_cast<double>(flows.size()));
    for (double& v : flows.data()) v += scale * normal(observe);
  }
  sim.flows.interval_minutes = cfg.interval_minutes;
  sim.flows.values = std::move(flows);
  return sim;
}

double conservation_drift(const Tensor& potentials, std::span<const double> phi) {
  const std::size_t n = phi.size();
  if (potentials.cols() != n || potentials.rows() == 0) {
    throw ShapeError("conservation_drift: potentials must be steps x " + std::to_string(n));
  }
  const auto total = [&](std::size_t t) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += potentials.at(t, i) / phi[i];
    return s;
  };
  const double i0 = total(0);
  double scale = std::abs(i0);
  double abs_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) abs_sum += std::abs(potentials.at(0, i)) / phi[i];
  scale = std::max(scale, abs_sum);
  if (!(scale > 0.0)) return 0.0;
  double worst = 0.0;
  for (std::size_t t = 1; t < potentials.rows(); ++t) {
    worst = std::max(worst, std::abs(total(t) - i0) / scale);
  }
  return worst;
}

}  // namespace stden
