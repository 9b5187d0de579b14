#include "stden/graph.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "stden/error.hpp"

namespace stden {
namespace {

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

bool blank_or_comment(const std::string& line) {
  for (char c : line) {
    if (c == '#') return true;
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

void check_blocks(std::size_t in_size, std::size_t in_len, std::size_t out_size,
                  std::size_t out_len) {
  if (in_len == 0 || out_len == 0 || in_size % in_len != 0 ||
      out_size != (in_size / in_len) * out_len) {
    throw ShapeError("graph kernel: buffer sizes do not describe whole blocks");
  }
}

}  // namespace

RoadNetwork::RoadNetwork(std::size_t node_count, std::vector<Edge> edges)
    : node_count_(node_count), edges_(std::move(edges)) {
  if (node_count_ == 0) throw ValidationError("network must have at least one node");
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const Edge& edge = edges_[e];
    if (edge.src >= node_count_ || edge.dst >= node_count_) {
      throw ValidationError("edge " + std::to_string(e) + ": node index out of range");
    }
    if (edge.src == edge.dst) {
      throw ValidationError("edge " + std::to_string(e) + ": self-loop at node " +
                            std::to_string(edge.src));
    }
    if (!(edge.weight > 0.0) || !std::isfinite(edge.weight)) {
      throw ValidationError("edge " + std::to_string(e) + ": weight must be positive");
    }
  }

  std::vector<std::size_t> parent(node_count_);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  for (const Edge& edge : edges_) {
    parent[find_root(parent, edge.src)] = find_root(parent, edge.dst);
  }
  const std::size_t root = find_root(parent, 0);
  for (std::size_t i = 1; i < node_count_; ++i) {
    if (find_root(parent, i) != root) {
      throw ValidationError("graph is disconnected: node " + std::to_string(i) +
                            " is not reachable from node 0");
    }
  }
}

RoadNetwork load_network(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  long long n = -1;
  std::vector<Edge> edges;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank_or_comment(line)) continue;
    std::istringstream fields(line);
    if (n < 0) {
      std::string extra;
      if (!(fields >> n) || n <= 0 || (fields >> extra)) {
        throw ParseError("graph line " + std::to_string(line_no) +
                         ": expected a positive node count");
      }
      continue;
    }
    long long src = -1;
    long long dst = -1;
    double weight = 1.0;
    std::string extra;
    if (!(fields >> src >> dst >> weight) || (fields >> extra)) {
      throw ParseError("graph line " + std::to_string(line_no) +
                       ": expected 'src dst weight'");
    }
    if (src < 0 || dst < 0) {
      throw ValidationError("graph line " + std::to_string(line_no) +
                            ": negative node index");
    }
    edges.push_back({static_cast<std::size_t>(src), static_cast<std::size_t>(dst), weight});
  }
  if (n < 0) throw ParseError("graph file is empty");
  return RoadNetwork(static_cast<std::size_t>(n), std::move(edges));
}

void save_network(std::ostream& out, const RoadNetwork& net) {
  out << net.node_count() << '\n';
  out.precision(std::numeric_limits<double>::max_digits10);
  for (const Edge& e : net.edges()) out << e.src << ' ' << e.dst << ' ' << e.weight << '\n';
}

template <class Tag>
Field<Tag>::Field(std::size_t count, std::size_t channels, double fill)
    : count_(count), channels_(channels), values_(count * channels, fill) {
  if (count == 0 || channels == 0) throw ShapeError("field needs count >= 1 and channels >= 1");
}

template <class Tag>
Field<Tag>::Field(std::size_t count, std::size_t channels, std::vector<double> values)
    : count_(count), channels_(channels), values_(std::move(values)) {
  if (count == 0 || channels == 0) throw ShapeError("field needs count >= 1 and channels >= 1");
  if (values_.size() != count * channels) throw ShapeError("field value count mismatch");
  for (double v : values_) {
    if (!std::isfinite(v)) throw NonFiniteError("field entries must be finite");
  }
}

template class Field<NodeTag>;
template class Field<EdgeTag>;

void gradient_blocks(const RoadNetwork& net, std::span<const double> nodes,
                     std::span<double> edges, Weighting weighting) {
  const std::size_t n = net.node_count();
  const std::size_t m = net.edge_count();
  check_blocks(nodes.size(), n, edges.size(), m);
  const std::size_t blocks = nodes.size() / n;
  const auto list = net.edges();
  for (std::size_t b = 0; b < blocks; ++b) {
    const double* z = nodes.data() + b * n;
    double* g = edges.data() + b * m;
    for (std::size_t e = 0; e < m; ++e) {
      const double diff = z[list[e].src] - z[list[e].dst];
      g[e] = weighting == Weighting::weighted ? std::sqrt(list[e].weight) * diff : diff;
    }
  }
}

void divergence_blocks(const RoadNetwork& net, std::span<const double> edges,
                       std::span<double> nodes, Weighting weighting) {
  const std::size_t n = net.node_count();
  const std::size_t m = net.edge_count();
  check_blocks(edges.size(), m, nodes.size(), n);
  const std::size_t blocks = edges.size() / m;
  const auto list = net.edges();
  std::fill(nodes.begin(), nodes.end(), 0.0);
  for (std::size_t b = 0; b < blocks; ++b) {
    const double* q = edges.data() + b * m;
    double* out = nodes.data() + b * n;
    for (std::size_t e = 0; e < m; ++e) {
      const double flux =
          weighting == Weighting::weighted ? std::sqrt(list[e].weight) * q[e] : q[e];
      out[list[e].src] += flux;
      out[list[e].dst] -= flux;
    }
  }
}

void laplacian_blocks(const RoadNetwork& net, std::span<const double> nodes,
                      std::span<double> out, Weighting weighting) {
  const std::size_t n = net.node_count();
  if (nodes.size() % n != 0) throw ShapeError("laplacian: input is not whole node blocks");
  std::vector<double> edge_buffer(nodes.size() / n * net.edge_count());
  gradient_blocks(net, nodes, edge_buffer, weighting);
  divergence_blocks(net, edge_buffer, out, weighting);
}

EdgeField gradient(const RoadNetwork& net, const NodeField& z, Weighting weighting) {
  if (z.count() != net.node_count()) throw ShapeError("gradient: node field size != n");
  if (net.edge_count() == 0) throw ShapeError("gradient: network has no edges");
  EdgeField out(net.edge_count(), z.channels());
  gradient_blocks(net, z.values(), out.values(), weighting);
  return out;
}

NodeField divergence(const RoadNetwork& net, const EdgeField& q, Weighting weighting) {
  if (q.count() != net.edge_count()) throw ShapeError("divergence: edge field size != |E|");
  NodeField out(net.node_count(), q.channels());
  divergence_blocks(net, q.values(), out.values(), weighting);
  return out;
}

NodeField laplacian_apply(const RoadNetwork& net, const NodeField& z, Weighting weighting) {
  return divergence(net, gradient(net, z, weighting), weighting);
}

}  // namespace stden
