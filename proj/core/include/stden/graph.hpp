#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

namespace stden {

/// A directed road segment. Edge ids are positions in RoadNetwork::edges().
struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  double weight = 1.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Directed graph G = (V, E, W) with dense edge ids 0..|E|-1.
///
/// Construction validates the invariants every operator relies on: indices
/// in range, no self-loops, positive weights, and a connected underlying
/// undirected graph. Instances are immutable and safe to share.
class RoadNetwork {
 public:
  RoadNetwork(std::size_t node_count, std::vector<Edge> edges);

  std::size_t node_count() const noexcept { return node_count_; }
  std::size_t edge_count() const noexcept { return edges_.size(); }
  std::span<const Edge> edges() const noexcept { return edges_; }
  const Edge& edge(std::size_t id) const { return edges_.at(id); }

  friend bool operator==(const RoadNetwork&, const RoadNetwork&) = default;

 private:
  std::size_t node_count_;
  std::vector<Edge> edges_;
};

/// Parses the graph text format: first line `n`, then one `src dst weight`
/// line per edge. Blank lines and lines starting with '#' are skipped.
RoadNetwork load_network(std::istream& in);
void save_network(std::ostream& out, const RoadNetwork& net);

/// Whether the discrete operators use edge weights. The weighted Laplacian
/// is B diag(w) B^T; gradient and divergence each carry sqrt(w).
enum class Weighting { unweighted, weighted };

struct NodeTag {};
struct EdgeTag {};

/// Real field over nodes or edges with `channels` values per entity.
///
/// Storage is channel-major: channel c occupies the contiguous block
/// [c * count, (c + 1) * count). This is the same layout the batched kernels
/// below and the tape's graph primitives use for one row.
template <class Tag>
class Field {
 public:
  Field() = default;
  Field(std::size_t count, std::size_t channels, double fill = 0.0);
  Field(std::size_t count, std::size_t channels, std::vector<double> values);

  std::size_t count() const noexcept { return count_; }
  std::size_t channels() const noexcept { return channels_; }

  double& operator()(std::size_t index, std::size_t channel) {
    return values_[channel * count_ + index];
  }
  double operator()(std::size_t index, std::size_t channel) const {
    return values_[channel * count_ + index];
  }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  friend bool operator==(const Field&, const Field&) = default;

 private:
  std::size_t count_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> values_;
};

using NodeField = Field<NodeTag>;
using EdgeField = Field<EdgeTag>;

extern template class Field<NodeTag>;
extern template class Field<EdgeTag>;

/// (grad z)_e = z_src - z_dst for every edge e and channel.
EdgeField gradient(const RoadNetwork& net, const NodeField& z,
                   Weighting weighting = Weighting::unweighted);

/// Net outflow: (div q)_i = sum_{e leaving i} q_e - sum_{e entering i} q_e.
NodeField divergence(const RoadNetwork& net, const EdgeField& q,
                     Weighting weighting = Weighting::unweighted);

/// Delta z = div(grad z) = B B^T z; positive semidefinite.
NodeField laplacian_apply(const RoadNetwork& net, const NodeField& z,
                          Weighting weighting = Weighting::unweighted);

// Batched kernels over `blocks` consecutive node blocks (length n) or edge
// blocks (length |E|). A block is one channel of one batch row.
void gradient_blocks(const RoadNetwork& net, std::span<const double> nodes,
                     std::span<double> edges, Weighting weighting);
void divergence_blocks(const RoadNetwork& net, std::span<const double> edges,
                       std::span<double> nodes, Weighting weighting);
void laplacian_blocks(const RoadNetwork& net, std::span<const double> nodes,
                      std::span<double> out, Weighting weighting);

}  // namespace stden
