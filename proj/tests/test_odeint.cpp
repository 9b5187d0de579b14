#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "stden/error.hpp"
#include "stden/model.hpp"
#include "stden/odeint.hpp"
#include "support/helpers.hpp"

using namespace stden;

namespace {

auto decay = [](const Tensor& z, double) { return -1.0 * z; };

struct Diffusion {
  RoadNetwork net;
  std::vector<double> phi;
  std::vector<double> alpha;

  Tensor operator()(const Tensor& z, double) const {
    const std::size_t n = net.node_count();
    const NodeField dz = pef_dynamics(net, phi, alpha, NodeField(n, 1, std::vector<double>(z.data().begin(), z.data().end())),
                                      DynamicsMode::linear);
    return Tensor({1, n}, std::vector<double>(dz.values().begin(), dz.values().end()));
  }

  Eigen::MatrixXd generator() const {
    const Eigen::MatrixXd B = testing::incidence(net);
    const Eigen::VectorXd p = testing::to_eigen(phi);
    return -alpha[0] * p.asDiagonal() * (B * B.transpose());
  }
};

Diffusion random_diffusion(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 2.0);
  Diffusion d{testing::random_connected(n, n, rng), std::vector<double>(n), {0.3}};
  for (double& p : d.phi) p = u(rng);
  return d;
}

double invariant(const Tensor& z, const std::vector<double>& phi) {
  double s = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) s += z[i] / phi[i];
  return s;
}

std::vector<double> unit_times(std::size_t count) {
  std::vector<double> t(count + 1);
  for (std::size_t k = 0; k <= count; ++k) t[k] = static_cast<double>(k);
  return t;
}

}  // namespace

TEST_CASE("zero dynamics keep the state") {
  const Tensor z0 = Tensor::vector({1.5, -2.0, 0.25});
  const auto zero = [](const Tensor& z, double) { return 0.0 * z; };
  const std::vector<double> times{0.0, 1.0, 2.0};
  for (const SolverConfig& cfg : {SolverConfig::rk4(), SolverConfig::dopri5()}) {
    const auto traj = integrate(zero, z0, std::span<const double>(times), cfg);
    for (const Tensor& s : traj.states) CHECK(s == z0);
    if (cfg.method == Method::rk4) {
      CHECK(traj.nfe == 2 * 4 * cfg.substeps_per_interval);
    } else {
      // Every step is accepted with zero error, so h grows 5x from h0 = 0.01.
      long steps = 0;
      for (double t = 0.0, h = 0.01; t < 2.0; h *= 5.0, ++steps) t += std::min(h, 2.0 - t);
      CHECK(traj.nfe == 1 + 6 * steps);
      CHECK(traj.rejected_steps == 0);
    }
  }
  const auto step = dopri5_step(zero, z0, 0.0, 0.3);
  for (double e : step.error) CHECK(e == 0.0);
  CHECK(dopri5_scaled_error(step.error, z0.data(), step.proposal.data(), 1e-3, 1e-4) <= 1.0);
  CHECK(rk4_step(zero, z0, 0.0, 0.7) == z0);
}

TEST_CASE("exponential decay to e^-1") {
  const std::vector<double> times{0.0, 1.0};
  const auto traj = integrate(decay, Tensor::scalar(1.0), std::span<const double>(times),
                              SolverConfig::dopri5(1e-6, 1e-9));
  CHECK(std::abs(traj.states[1].item() - std::exp(-1.0)) < 1e-5);
}

TEST_CASE("rk4 step examples") {
  const auto square = [](const Tensor& z, double t) { return Tensor(z.shape(), t * t); };
  CHECK(rk4_step(square, Tensor::scalar(0.0), 0.0, 1.0).item() == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const double y = rk4_step(decay, Tensor::scalar(1.0), 0.0, 0.5).item();
  // 1 - h + h^2/2 - h^3/6 + h^4/24 at h = 0.5.
  CHECK(y == doctest::Approx(0.6067708333333333).epsilon(1e-15));
  CHECK(std::abs(y - 0.606771) < 5e-7);
}

TEST_CASE("dopri5 step examples") {
  const auto one = [](const Tensor& z, double) { return Tensor(z.shape(), 1.0); };
  for (double h : {0.1, 0.5, 3.0}) {
    const auto s = dopri5_step(one, Tensor::scalar(2.0), 0.0, h);
    CHECK(s.proposal.item() == doctest::Approx(2.0 + h).epsilon(1e-15));
  }
  const auto s = dopri5_step(decay, Tensor::scalar(1.0), 0.0, 0.1);
  CHECK(std::abs(s.proposal.item() - std::exp(-0.1)) < 1e-8);
  CHECK(s.nfe == 7);
  const auto fsal = dopri5_step(decay, Tensor::scalar(1.0), 0.0, 0.1, std::optional<Tensor>(Tensor::scalar(-1.0)));
  CHECK(fsal.nfe == 6);
  CHECK(fsal.proposal == s.proposal);
  CHECK(s.derivative_end.item() == -s.proposal.item());
  CHECK_THROWS_AS(dopri5_step(decay, Tensor::scalar(1.0), 0.0, 0.0), SolverError);
}

TEST_CASE("step factor is clamped") {
  CHECK(dopri5_step_factor(0.0) == 5.0);
  CHECK(dopri5_step_factor(1e-12) == 5.0);
  CHECK(dopri5_step_factor(1e12) == 0.2);
  CHECK(dopri5_step_factor(1.0) == doctest::Approx(0.9));
}

TEST_CASE("dopri5 matches the matrix exponential on graph diffusion") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const Diffusion f = random_diffusion(10, rng);
    const auto z = testing::random_values(10, rng, 2.0);
    const Tensor z0({1, 10}, z);
    const std::vector<double> times{0.0, 0.5, 1.0, 2.0, 4.0};
    const auto traj = integrate(f, z0, std::span<const double>(times), SolverConfig::dopri5(1e-3, 1e-6));
    const Eigen::MatrixXd A = f.generator();
    const double tol = 1e-3 * z0.max_abs();
    for (std::size_t k = 0; k < times.size(); ++k) {
      const Eigen::VectorXd want = testing::expm(A * times[k]) * testing::to_eigen(z);
      for (std::size_t i = 0; i < 10; ++i) {
        CHECK(std::abs(traj.states[k][i] - want(static_cast<Eigen::Index>(i))) <= tol);
      }
    }
  }
}

TEST_CASE("rk4 converges with fourth order") {
  const std::vector<double> times{0.0, 1.0};
  std::vector<double> errors;
  for (int substeps : {5, 10, 20, 40}) {
    const auto traj = integrate(decay, Tensor::scalar(1.0), std::span<const double>(times), SolverConfig::rk4(substeps));
    errors.push_back(std::abs(traj.states[1].item() - std::exp(-1.0)));
  }
  for (std::size_t k = 1; k < errors.size(); ++k) {
    const double order = std::log2(errors[k - 1] / errors[k]);
    CAPTURE(order);
    CHECK(order >= 3.8);
    CHECK(order <= 4.2);
  }
}

TEST_CASE("linear dynamics conserve sum z / phi") {
  std::mt19937_64 rng(23);
  const Diffusion f = random_diffusion(12, rng);
  const Tensor z0({1, 12}, testing::random_values(12, rng, 3.0));
  const std::vector<double> times = unit_times(100);
  double scale = 0.0;
  for (std::size_t i = 0; i < 12; ++i) scale += std::abs(z0[i]) / f.phi[i];
  const double i0 = invariant(z0, f.phi);
  for (const SolverConfig& cfg : {SolverConfig::rk4(), SolverConfig::dopri5()}) {
    const auto traj = integrate(f, z0, std::span<const double>(times), cfg);
    for (const Tensor& s : traj.states) CHECK(std::abs(invariant(s, f.phi) - i0) <= 1e-11 * scale);
  }
}

TEST_CASE("nfe does not decrease as rtol tightens") {
  std::mt19937_64 rng(24);
  const Diffusion f = random_diffusion(15, rng);
  const Tensor z0({1, 15}, testing::random_values(15, rng));
  const std::vector<double> times = unit_times(12);
  long previous = 0;
  for (double rtol : {1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7}) {
    const auto traj = integrate(f, z0, std::span<const double>(times), SolverConfig::dopri5(rtol, rtol * 1e-3));
    CAPTURE(rtol);
    CHECK(traj.nfe >= previous);
    previous = traj.nfe;
  }
}

TEST_CASE("integrate reports bad input") {
  const std::vector<double> back{0.0, 1.0, 0.5};
  CHECK_THROWS_AS(integrate(decay, Tensor::scalar(1.0), std::span<const double>(back), SolverConfig::rk4()), Error);
  const std::vector<double> times{0.0, 1.0};
  CHECK_THROWS_AS(integrate(decay, Tensor::scalar(std::nan("")), std::span<const double>(times), SolverConfig::rk4()),
                  NonFiniteError);
  SolverConfig tight = SolverConfig::dopri5(1e-12, 1e-14);
  tight.max_nfe = 20;
  CHECK_THROWS_AS(integrate(decay, Tensor::scalar(1.0), std::span<const double>(times), tight), SolverError);
  SolverConfig bad = SolverConfig::rk4(0);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(parse_method("euler"), ConfigError);
  CHECK(parse_method(method_name(Method::dopri5)) == Method::dopri5);
  const auto blow_up = [](const Tensor& z, double) { return Tensor(z.shape(), std::numeric_limits<double>::infinity()); };
  CHECK_THROWS_AS(integrate(blow_up, Tensor::scalar(1.0), std::span<const double>(times), SolverConfig::rk4()),
                  NonFiniteError);
}

TEST_CASE("single output time returns the initial state") {
  const std::vector<double> times{3.0};
  const auto traj = integrate(decay, Tensor::scalar(4.0), std::span<const double>(times), SolverConfig::dopri5());
  REQUIRE(traj.states.size() == 1);
  CHECK(traj.states[0].item() == 4.0);
  CHECK(traj.nfe == 0);
}

TEST_CASE("taped integration matches the detached solve") {
  std::mt19937_64 rng(25);
  const Diffusion f = random_diffusion(6, rng);
  const Tensor z0({1, 6}, testing::random_values(6, rng));
  const std::vector<double> times = unit_times(3);
  const auto plain = integrate(f, z0, std::span<const double>(times), SolverConfig::dopri5());
  Tape tape;
  const Var phi = tape.constant(Tensor({1, 6}, f.phi));
  const auto taped = [&](const Var& z, double) {
    return -1.0 * (phi * (f.alpha[0] * graph_laplacian(f.net, z)));
  };
  const auto traj = integrate(taped, tape.constant(z0), std::span<const double>(times), SolverConfig::dopri5());
  CHECK(traj.nfe == plain.nfe);
  for (std::size_t k = 0; k < times.size(); ++k) {
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(traj.states[k].value()[i] == doctest::Approx(plain.states[k][i]).epsilon(1e-13));
    }
  }
}
