#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "stden/synth.hpp"
#include "stden/train.hpp"

using namespace stden;

namespace {

RoadNetwork network(std::size_t nodes) {
  SynthConfig cfg;
  cfg.nodes = nodes;
  return random_network(cfg);
}

std::vector<double> noise(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(count);
  for (double& x : v) x = normal(rng);
  return v;
}

void BM_Laplacian(benchmark::State& state) {
  const RoadNetwork net = network(static_cast<std::size_t>(state.range(0)));
  const std::size_t n = net.node_count();
  const std::vector<double> z = noise(16 * n, 1);
  std::vector<double> out(z.size());
  for (auto _ : state) {
    laplacian_blocks(net, z, out, Weighting::unweighted);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * 16 * static_cast<long>(net.edge_count()));
}
BENCHMARK(BM_Laplacian)->Arg(50)->Arg(200)->Arg(1000);

struct LossSetup {
  RoadNetwork net = network(50);
  Model model{ModelConfig{}, net.node_count(), net.edge_count(), 0};
  Dataset::Batch batch;
  Tensor eps;

  LossSetup() {
    const std::size_t B = 16;
    const std::size_t m = net.edge_count();
    batch.history = Tensor({12 * B, m}, noise(12 * B * m, 2));
    batch.target = Tensor({B, 12 * m}, noise(12 * B * m, 3));
    batch.size = B;
    eps = Tensor({B, net.node_count()}, noise(B * net.node_count(), 4));
  }
};

void BM_LossForward(benchmark::State& state) {
  LossSetup s;
  const TrainConfig cfg;
  for (auto _ : state) {
    Tape tape;
    const Var loss = training_loss(s.model, tape, s.model.params(), s.net, s.batch, &s.eps, cfg);
    benchmark::DoNotOptimize(loss.value().item());
  }
}
BENCHMARK(BM_LossForward)->Unit(benchmark::kMillisecond);

void BM_LossForwardBackward(benchmark::State& state) {
  LossSetup s;
  const TrainConfig cfg;
  for (auto _ : state) {
    Tape tape;
    const Var loss = training_loss(s.model, tape, s.model.params(), s.net, s.batch, &s.eps, cfg);
    tape.backward(loss);
    benchmark::DoNotOptimize(s.model.params().entries().front().grad.data().data());
  }
}
BENCHMARK(BM_LossForwardBackward)->Unit(benchmark::kMillisecond);

void BM_Dopri5Diffusion(benchmark::State& state) {
  const RoadNetwork net = network(50);
  const std::size_t n = net.node_count();
  const std::vector<double> phi(n, 1.0);
  const std::vector<double> alpha{0.2};
  const auto f = [&](const Tensor& z, double) {
    const NodeField dz = pef_dynamics(net, phi, alpha, NodeField(n, 1, std::vector<double>(z.data().begin(), z.data().end())),
                                      DynamicsMode::tanh);
    return Tensor({1, n}, std::vector<double>(dz.values().begin(), dz.values().end()));
  };
  const Tensor z0({1, n}, noise(n, 5));
  std::vector<double> times(13);
  for (std::size_t k = 0; k < times.size(); ++k) times[k] = static_cast<double>(k);
  const double rtol = std::pow(10.0, -static_cast<double>(state.range(0)));
  long nfe = 0;
  for (auto _ : state) {
    const auto traj = integrate(f, z0, std::span<const double>(times), SolverConfig::dopri5(rtol, 0.1 * rtol));
    nfe = traj.nfe;
    benchmark::DoNotOptimize(traj.states.back().data().data());
  }
  state.counters["nfe"] = static_cast<double>(nfe);
}
BENCHMARK(BM_Dopri5Diffusion)->DenseRange(2, 6);

}  // namespace

BENCHMARK_MAIN();
