#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "stden/graph.hpp"
#include "stden/tensor.hpp"

namespace stden::testing {

// Random connected digraph: random tree plus `extra` random arcs.
inline RoadNetwork random_connected(std::size_t n, std::size_t extra, std::mt19937_64& rng,
                                    bool random_weights = false) {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::vector<Edge> edges;
  std::uniform_real_distribution<double> w(0.5, 2.0);
  auto push = [&](std::size_t a, std::size_t b) {
    if (a == b || !seen.insert({a, b}).second) return;
    edges.push_back({a, b, random_weights ? w(rng) : 1.0});
  };
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    if (rng() & 1u) push(i, j);
    else push(j, i);
  }
  std::uniform_int_distribution<std::size_t> node(0, n - 1);
  for (std::size_t k = 0; k < extra; ++k) push(node(rng), node(rng));
  return RoadNetwork(n, std::move(edges));
}

inline std::vector<double> random_values(std::size_t count, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> v(count);
  for (double& x : v) x = normal(rng);
  return v;
}

// Incidence matrix: +1 at the source, -1 at the destination, sqrt(w) when weighted.
inline Eigen::MatrixXd incidence(const RoadNetwork& net, bool weighted = false) {
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(net.node_count()),
                                            static_cast<Eigen::Index>(net.edge_count()));
  for (std::size_t e = 0; e < net.edge_count(); ++e) {
    const Edge& edge = net.edge(e);
    const double s = weighted ? std::sqrt(edge.weight) : 1.0;
    B(static_cast<Eigen::Index>(edge.src), static_cast<Eigen::Index>(e)) = s;
    B(static_cast<Eigen::Index>(edge.dst), static_cast<Eigen::Index>(e)) = -s;
  }
  return B;
}

// exp(A) by scaling and squaring of a truncated Taylor series.
inline Eigen::MatrixXd expm(const Eigen::MatrixXd& A) {
  const double norm = A.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Eigen::MatrixXd scaled = A / std::ldexp(1.0, squarings);
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(A.rows(), A.cols());
  Eigen::MatrixXd sum = term;
  for (int k = 1; k <= 20; ++k) {
    term = term * scaled / static_cast<double>(k);
    sum += term;
  }
  for (int s = 0; s < squarings; ++s) sum = sum * sum;
  return sum;
}

inline Eigen::VectorXd to_eigen(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace stden::testing
