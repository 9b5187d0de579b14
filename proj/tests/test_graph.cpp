#include <doctest.h>

#include <random>
#include <sstream>

#include "stden/error.hpp"
#include "stden/graph.hpp"
#include "support/helpers.hpp"

using namespace stden;

namespace {

RoadNetwork path01() { return RoadNetwork(2, {{0, 1}}); }
RoadNetwork triangle() { return RoadNetwork(3, {{0, 1}, {1, 2}, {2, 0}}); }

RoadNetwork parse(const std::string& text) {
  std::istringstream in(text);
  return load_network(in);
}

}  // namespace

TEST_CASE("load_network parses a minimal file") {
  const RoadNetwork net = parse("2\n0 1 1.0\n");
  CHECK(net.node_count() == 2);
  REQUIRE(net.edge_count() == 1);
  CHECK(net.edge(0) == Edge{0, 1, 1.0});
}

TEST_CASE("load_network skips comments and blank lines, keeps file order") {
  const RoadNetwork net = parse("# roads\n3\n\n2 1 0.5\n# mid\n0 1 2\n");
  REQUIRE(net.edge_count() == 2);
  CHECK(net.edge(0) == Edge{2, 1, 0.5});
  CHECK(net.edge(1) == Edge{0, 1, 2.0});
}

TEST_CASE("load_network rejects invalid graphs") {
  CHECK_THROWS_AS(parse("2\n0 0 1.0\n"), ValidationError);
  CHECK_THROWS_WITH_AS(parse("3\n0 1 1.0\n"), doctest::Contains("node 2"), ValidationError);
  CHECK_THROWS_AS(parse("2\n0 5 1.0\n"), ValidationError);
  CHECK_THROWS_AS(parse("2\n0 1 -1.0\n"), ValidationError);
  CHECK_THROWS_AS(parse("2\n0 1\n"), ParseError);
  CHECK_THROWS_AS(parse("2\n0 1 x\n"), ParseError);
  CHECK_THROWS_AS(parse(""), ParseError);
  CHECK_THROWS_AS(parse("zero\n"), ParseError);
}

TEST_CASE("save/load round trip keeps ids and weights") {
  std::mt19937_64 rng(3);
  const RoadNetwork net = testing::random_connected(12, 10, rng, true);
  std::stringstream buf;
  save_network(buf, net);
  CHECK(load_network(buf) == net);
}

TEST_CASE("gradient examples") {
  const EdgeField g = gradient(path01(), NodeField(2, 1, {3.0, 1.0}));
  CHECK(g(0, 0) == 2.0);

  const EdgeField t = gradient(triangle(), NodeField(3, 1, {1.0, 0.0, 0.0}));
  CHECK(t(0, 0) == 1.0);
  CHECK(t(1, 0) == 0.0);
  CHECK(t(2, 0) == -1.0);

  const EdgeField c = gradient(triangle(), NodeField(3, 2, 4.5));
  for (double v : c.values()) CHECK(v == 0.0);
}

TEST_CASE("divergence examples") {
  const NodeField d = divergence(path01(), EdgeField(1, 1, {2.0}));
  CHECK(d(0, 0) == 2.0);
  CHECK(d(1, 0) == -2.0);

  const NodeField z = divergence(triangle(), EdgeField(3, 1, 0.0));
  for (double v : z.values()) CHECK(v == 0.0);

  const NodeField cyc = divergence(triangle(), EdgeField(3, 1, 1.0));
  for (double v : cyc.values()) CHECK(v == 0.0);
}

TEST_CASE("laplacian examples") {
  const NodeField l = laplacian_apply(path01(), NodeField(2, 1, {3.0, 1.0}));
  CHECK(l(0, 0) == 2.0);
  CHECK(l(1, 0) == -2.0);

  const NodeField c = laplacian_apply(triangle(), NodeField(3, 1, -7.0));
  for (double v : c.values()) CHECK(v == 0.0);
}

TEST_CASE("operators reject mismatched shapes") {
  CHECK_THROWS_AS(gradient(triangle(), NodeField(2, 1)), ShapeError);
  CHECK_THROWS_AS(divergence(triangle(), EdgeField(2, 1)), ShapeError);
  CHECK_THROWS_AS(laplacian_apply(triangle(), NodeField(4, 1)), ShapeError);
}

TEST_CASE("laplacian matches the incidence-matrix product") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    for (bool weighted : {false, true}) {
      const RoadNetwork net = testing::random_connected(15, 20, rng, true);
      const auto z = testing::random_values(net.node_count(), rng);
      const NodeField l = laplacian_apply(net, NodeField(net.node_count(), 1, z),
                                          weighted ? Weighting::weighted : Weighting::unweighted);
      const Eigen::MatrixXd B = testing::incidence(net, weighted);
      const Eigen::VectorXd want = B * B.transpose() * testing::to_eigen(z);
      for (std::size_t i = 0; i < net.node_count(); ++i) {
        CHECK(l(i, 0) == doctest::Approx(want(static_cast<Eigen::Index>(i))).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("laplacian is positive semidefinite") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const RoadNetwork net = testing::random_connected(10, 8, rng);
    const auto z = testing::random_values(net.node_count(), rng);
    const NodeField l = laplacian_apply(net, NodeField(net.node_count(), 1, z));
    double quad = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) quad += z[i] * l(i, 0);
    CHECK(quad >= -1e-12);
  }
}

TEST_CASE("operator properties on random networks") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 29;
    const std::size_t d = 1 + rng() % 3;
    const RoadNetwork net = testing::random_connected(n, rng() % (2 * n), rng);
    const NodeField z(n, d, testing::random_values(n * d, rng, 3.0));

    const NodeField l = laplacian_apply(net, z);
    CHECK(l == divergence(net, gradient(net, z)));

    double zmax = 0.0;
    for (double v : z.values()) zmax = std::max(zmax, std::abs(v));
    for (std::size_t c = 0; c < d; ++c) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += l(i, c);
      CHECK(std::abs(total) <= 1e-12 * zmax);
    }

    NodeField neg = z;
    for (double& v : neg.values()) v = -v;
    const EdgeField g = gradient(net, z);
    const EdgeField gn = gradient(net, neg);
    for (std::size_t k = 0; k < g.values().size(); ++k) CHECK(gn.values()[k] == -g.values()[k]);

    // Reversing one edge negates exactly its row.
    std::vector<Edge> edges(net.edges().begin(), net.edges().end());
    const std::size_t flip = rng() % edges.size();
    std::swap(edges[flip].src, edges[flip].dst);
    const RoadNetwork flipped(n, edges);
    const EdgeField gf = gradient(flipped, z);
    for (std::size_t e = 0; e < edges.size(); ++e) {
      for (std::size_t c = 0; c < d; ++c) {
        CHECK(gf(e, c) == (e == flip ? -g(e, c) : g(e, c)));
      }
    }
  }
}

TEST_CASE("block kernels agree with the field operators") {
  std::mt19937_64 rng(9);
  const RoadNetwork net = testing::random_connected(8, 6, rng);
  const std::size_t n = net.node_count();
  const std::size_t m = net.edge_count();
  const auto z = testing::random_values(3 * n, rng);
  std::vector<double> g(3 * m);
  std::vector<double> l(3 * n);
  gradient_blocks(net, z, g, Weighting::unweighted);
  laplacian_blocks(net, z, l, Weighting::unweighted);
  const NodeField field(n, 3, z);
  const EdgeField gf = gradient(net, field);
  CHECK(std::vector<double>(gf.values().begin(), gf.values().end()) == g);
  const NodeField lf = laplacian_apply(net, field);
  CHECK(std::vector<double>(lf.values().begin(), lf.values().end()) == l);
  std::vector<double> bad(5);
  CHECK_THROWS_AS(gradient_blocks(net, z, bad, Weighting::unweighted), ShapeError);
}
