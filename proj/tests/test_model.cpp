#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "stden/checkpoint.hpp"
#include "stden/error.hpp"
#include "stden/grad_check.hpp"
#include "stden/model.hpp"
#include "stden/train.hpp"
#include "support/helpers.hpp"

using namespace stden;

namespace {

RoadNetwork path01() { return RoadNetwork(2, {{0, 1}}); }

ModelConfig small_config(ModelKind kind = ModelKind::stden, std::size_t d = 1) {
  ModelConfig c;
  c.kind = kind;
  c.history_len = 3;
  c.horizon = 3;
  c.latent_channels = d;
  c.gru_hidden = 4;
  return c;
}

void zero_params(Model& m) {
  for (auto& e : m.params().entries()) {
    for (double& v : e.value.data()) v = 0.0;
  }
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  return Tensor(shape, testing::random_values(shape_size(shape), rng, scale));
}

}  // namespace

TEST_CASE("zero encoder weights give mu 0 and sigma softplus(0) + 1e-4") {
  std::mt19937_64 rng(1);
  const RoadNetwork net = testing::random_connected(5, 3, rng);
  Model m(small_config(), 5, net.edge_count(), 7);
  zero_params(m);
  Tape tape;
  const auto [mu, sigma] = m.encode(tape, m.params(), random_tensor({6, net.edge_count()}, rng), 2, ParamMode::frozen);
  CHECK(mu.shape() == Shape{2, 5});
  for (double v : mu.value().data()) CHECK(v == 0.0);
  for (double v : sigma.value().data()) CHECK(v == doctest::Approx(std::log(2.0) + 1e-4).epsilon(1e-15));
  CHECK(sigma.value()[0] == doctest::Approx(0.6932).epsilon(1e-4));
}

TEST_CASE("zero history with zero biases keeps the hidden state at 0") {
  std::mt19937_64 rng(2);
  Model m(small_config(), 5, 7, 3);
  for (double& v : m.params().value("enc.b").data()) v = 0.0;
  Tape tape;
  const Var h = m.encode_hidden(tape, m.params(), Tensor({9, 7}, 0.0), 3, ParamMode::frozen);
  for (double v : h.value().data()) CHECK(v == 0.0);
}

TEST_CASE("sample_z0 examples") {
  Tape tape;
  const Var mu = tape.constant(Tensor({1, 1}, 2.0));
  const Var sigma = tape.constant(Tensor({1, 1}, 0.5));
  CHECK(sample_z0(mu, sigma, Tensor({1, 1}, 0.0)).value().item() == 2.0);
  CHECK(sample_z0(mu, sigma, Tensor({1, 1}, 1.0)).value().item() == 2.5);
  CHECK_THROWS_AS(sample_z0(mu, tape.constant(Tensor({1, 1}, 0.0)), Tensor({1, 1}, 1.0)), ValidationError);
  CHECK_THROWS_AS(sample_z0(mu, sigma, Tensor({1, 2}, 1.0)), ShapeError);
}

TEST_CASE("sample_z0 has the requested moments") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  const std::size_t count = 200000;
  Tensor eps({1, count});
  for (double& v : eps.data()) v = normal(rng);
  Tape tape;
  const Var z = sample_z0(tape.constant(Tensor({1, count}, -1.0)), tape.constant(Tensor({1, count}, 0.3)), eps);
  double mean = 0.0;
  for (double v : z.value().data()) mean += v;
  mean /= static_cast<double>(count);
  double var = 0.0;
  for (double v : z.value().data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(count - 1);
  // 5 standard errors.
  CHECK(std::abs(mean + 1.0) < 5.0 * 0.3 / std::sqrt(static_cast<double>(count)));
  CHECK(std::abs(std::sqrt(var) - 0.3) < 5.0 * 0.3 / std::sqrt(2.0 * static_cast<double>(count)));
}

TEST_CASE("dynamics example on a single edge") {
  ModelConfig c = small_config();
  Model m(c, 2, 1, 0);
  m.params().value("dyn.alpha")[0] = 0.5;
  const Tensor dz = m.dynamics_value(path01(), Tensor({1, 2}, std::vector<double>{3.0, 1.0}));
  CHECK(dz[0] == doctest::Approx(-std::tanh(1.0)).epsilon(1e-14));
  CHECK(dz[1] == doctest::Approx(std::tanh(1.0)).epsilon(1e-14));
  CHECK(dz[0] == doctest::Approx(-0.7616).epsilon(1e-4));

  const std::vector<double> phi{1.0, 1.0};
  const std::vector<double> alpha{0.5};
  const NodeField ref = pef_dynamics(path01(), phi, alpha, NodeField(2, 1, {3.0, 1.0}), DynamicsMode::tanh);
  CHECK(ref(0, 0) == -std::tanh(1.0));
  CHECK(ref(1, 0) == std::tanh(1.0));

  const Tensor flat = m.dynamics_value(path01(), Tensor({1, 2}, 4.0));
  for (double v : flat.data()) CHECK(v == 0.0);
}

TEST_CASE("euler step examples") {
  const std::vector<double> phi{1.0, 1.0};
  const std::vector<double> alpha{0.5};
  const NodeField next = euler_pef_step(path01(), phi, alpha, NodeField(2, 1, {3.0, 1.0}));
  CHECK(next(0, 0) == 2.0);
  CHECK(next(1, 0) == 2.0);
  const NodeField same = euler_pef_step(path01(), phi, alpha, NodeField(2, 1, -1.5));
  CHECK(same == NodeField(2, 1, -1.5));
}

TEST_CASE("decode examples") {
  Model m(small_config(), 2, 1, 0);
  Tape tape;
  const Var flow = m.decode(tape, m.params(), path01(), tape.constant(Tensor({1, 2}, std::vector<double>{3.0, 1.0})),
                            ParamMode::frozen);
  CHECK(flow.value().item() == -2.0);
  const Var flat = m.decode(tape, m.params(), path01(), tape.constant(Tensor({1, 2}, 5.0)), ParamMode::frozen);
  CHECK(flat.value().item() == 0.0);
}

TEST_CASE("multi-channel decode weights each channel") {
  std::mt19937_64 rng(4);
  const RoadNetwork net = testing::random_connected(6, 4, rng);
  Model m(small_config(ModelKind::stden, 3), 6, net.edge_count(), 1);
  m.params().value("dec.w") = Tensor({1, 3}, std::vector<double>{0.5, -1.0, 2.0});
  m.params().value("dec.b")[0] = 0.25;
  const auto z = testing::random_values(18, rng);
  Tape tape;
  const Var flow = m.decode(tape, m.params(), net, tape.constant(Tensor({1, 18}, z)), ParamMode::frozen);
  const EdgeField g = gradient(net, NodeField(6, 3, z));
  for (std::size_t e = 0; e < net.edge_count(); ++e) {
    const double want = -(0.5 * g(e, 0) - 1.0 * g(e, 1) + 2.0 * g(e, 2)) + 0.25;
    CHECK(flow.value()[e] == doctest::Approx(want).epsilon(1e-14));
  }
}

TEST_CASE("zero encoder gives zero predictions") {
  std::mt19937_64 rng(5);
  const RoadNetwork net = testing::random_connected(5, 3, rng);
  for (ModelKind kind : {ModelKind::stden, ModelKind::incp, ModelKind::gru_direct}) {
    Model m(small_config(kind), 5, net.edge_count(), 2);
    zero_params(m);
    const Tensor p = m.predict(net, random_tensor({6, net.edge_count()}, rng), 2, SolverConfig::dopri5());
    CHECK(p.shape() == Shape{2, 3 * net.edge_count()});
    for (double v : p.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("deterministic prediction is bit-identical") {
  std::mt19937_64 rng(6);
  const RoadNetwork net = testing::random_connected(6, 5, rng);
  for (ModelKind kind : {ModelKind::stden, ModelKind::incp, ModelKind::unkp, ModelKind::gru_direct}) {
    const Model m(small_config(kind, 2), 6, net.edge_count(), 9);
    const Tensor hist = random_tensor({12, net.edge_count()}, rng);
    CHECK(m.predict(net, hist, 4, SolverConfig::dopri5()) == m.predict(net, hist, 4, SolverConfig::dopri5()));
  }
}

TEST_CASE("batched forward equals per-example forward") {
  std::mt19937_64 rng(7);
  const RoadNetwork net = testing::random_connected(6, 5, rng);
  const std::size_t m = net.edge_count();
  const Model model(small_config(ModelKind::stden, 2), 6, m, 4);
  const std::size_t B = 3;
  const Tensor hist = random_tensor({3 * B, m}, rng);
  const Tensor all = model.predict(net, hist, B, SolverConfig::rk4());
  for (std::size_t b = 0; b < B; ++b) {
    Tensor one({3, m});
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t e = 0; e < m; ++e) one.at(t, e) = hist.at(t * B + b, e);
    }
    const Tensor p = model.predict(net, one, 1, SolverConfig::rk4());
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(all.at(b, k) == doctest::Approx(p[k]).epsilon(1e-13));
  }
}

TEST_CASE("tanh dynamics are dissipative") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (int trial = 0; trial < 10; ++trial) {
    const RoadNetwork net = testing::random_connected(12, 10, rng);
    std::vector<double> phi(12);
    for (double& p : phi) p = u(rng);
    const std::vector<double> alpha{0.5};
    NodeField z(12, 1, testing::random_values(12, rng, 3.0));
    const auto f = [&](const Tensor& s, double) {
      const NodeField dz = pef_dynamics(net, phi, alpha, NodeField(12, 1, std::vector<double>(s.data().begin(), s.data().end())),
                                        DynamicsMode::tanh);
      return Tensor({1, 12}, std::vector<double>(dz.values().begin(), dz.values().end()));
    };
    std::vector<double> times(41);
    for (std::size_t k = 0; k < times.size(); ++k) times[k] = 0.25 * static_cast<double>(k);
    const auto traj = integrate(f, Tensor({1, 12}, std::vector<double>(z.values().begin(), z.values().end())),
                                std::span<const double>(times), SolverConfig::dopri5(1e-8, 1e-10));
    for (std::size_t k = 1; k < traj.states.size(); ++k) {
      CHECK(traj.states[k].max_abs() <= traj.states[k - 1].max_abs() + 1e-9);
    }
  }
}

TEST_CASE("full model loss passes grad_check") {
  std::mt19937_64 rng(9);
  const RoadNetwork net(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}, {0, 2}, {3, 1}, {2, 4}});
  for (ModelKind kind : {ModelKind::stden, ModelKind::incp, ModelKind::unkp, ModelKind::gru_direct}) {
    CAPTURE(kind_name(kind));
    Model model(small_config(kind, 2), 5, 8, 11);
    const std::size_t B = 2;
    Dataset::Batch batch{random_tensor({3 * B, 8}, rng), random_tensor({B, 3 * 8}, rng), B};
    const Tensor eps = random_tensor({B, 10}, rng);
    TrainConfig cfg;
    cfg.kl_weight = 0.1;
    const LossFn loss = [&](Tape& tape, ParamStore& p) {
      return training_loss(model, tape, p, net, batch, kind == ModelKind::gru_direct ? nullptr : &eps, cfg);
    };
    const GradCheckReport r = grad_check(loss, model.params());
    CAPTURE(r.worst_param);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("parameter layout and counts") {
  const Model stden(small_config(ModelKind::stden, 2), 5, 8, 0);
  CHECK(stden.dynamics_parameter_count() == 5 + 2);
  const Model incp(small_config(ModelKind::incp, 2), 5, 8, 0);
  CHECK(incp.dynamics_parameter_count() == 2);
  const Model unkp(small_config(ModelKind::unkp, 2), 5, 8, 0);
  // nd -> 4nd -> nd with biases.
  CHECK(unkp.dynamics_parameter_count() == 10 * 40 + 40 + 40 * 10 + 10);
  CHECK(unkp.dynamics_parameter_count() > stden.dynamics_parameter_count());
  const double phi0 = std::log1p(std::exp(stden.params().value("dyn.rho")[0]));
  CHECK(phi0 == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(Model(small_config(), 5, 8, 3).params().value("enc.wx") == Model(small_config(), 5, 8, 3).params().value("enc.wx"));
  CHECK_FALSE(Model(small_config(), 5, 8, 3).params().value("enc.wx") == Model(small_config(), 5, 8, 4).params().value("enc.wx"));
}

TEST_CASE("model rejects inconsistent inputs") {
  std::mt19937_64 rng(10);
  const RoadNetwork net = testing::random_connected(5, 3, rng);
  const Model m(small_config(), 5, net.edge_count(), 0);
  CHECK_THROWS_AS(m.predict(net, Tensor({5, net.edge_count()}), 2, SolverConfig::rk4()), ShapeError);
  const RoadNetwork other = testing::random_connected(6, 3, rng);
  CHECK_THROWS_AS(m.predict(other, Tensor({3, other.edge_count()}), 1, SolverConfig::rk4()), Error);
  ParamStore wrong = m.params();
  wrong.value("dyn.rho") = Tensor({1, 4}, 0.0);
  CHECK_THROWS_AS(Model(small_config(), 5, net.edge_count(), wrong), ValidationError);
  ModelConfig bad = small_config();
  bad.latent_channels = 0;
  CHECK_THROWS_AS(Model(bad, 5, 8, 0), ConfigError);
  CHECK_THROWS_AS(parse_kind("nop"), ConfigError);
  CHECK(parse_kind("gru") == ModelKind::gru_direct);
  CHECK(parse_mode(mode_name(DynamicsMode::linear)) == DynamicsMode::linear);
}

TEST_CASE("checkpoint round trip is bit-identical") {
  std::mt19937_64 rng(12);
  const RoadNetwork net = testing::random_connected(6, 5, rng);
  for (ModelKind kind : {ModelKind::stden, ModelKind::unkp, ModelKind::gru_direct}) {
    ModelConfig c = small_config(kind, 2);
    c.dynamics = DynamicsMode::linear;
    c.weighting = Weighting::weighted;
    c.solver = SolverConfig::dopri5(1e-5, 1e-7);
    const Checkpoint ckpt{Model(c, 6, net.edge_count(), 21), Normalizer{0.123456789, 2.5}, 77};
    std::stringstream buf;
    save_checkpoint(buf, ckpt);
    const std::string bytes = buf.str();
    CHECK(bytes.rfind("STDEN1\n", 0) == 0);
    const Checkpoint back = load_checkpoint(buf);
    CHECK(back.seed == 77);
    CHECK(back.normalizer.mean == ckpt.normalizer.mean);
    CHECK(back.normalizer.std == ckpt.normalizer.std);
    CHECK(back.model.config().kind == kind);
    CHECK(back.model.config().dynamics == DynamicsMode::linear);
    CHECK(back.model.config().weighting == Weighting::weighted);
    CHECK(back.model.config().solver.rtol == 1e-5);
    for (std::size_t p = 0; p < ckpt.model.params().size(); ++p) {
      CHECK(back.model.params().entries()[p].name == ckpt.model.params().entries()[p].name);
      CHECK(back.model.params().entries()[p].value == ckpt.model.params().entries()[p].value);
    }
    const Tensor hist = random_tensor({6, net.edge_count()}, rng);
    CHECK(back.model.predict(net, hist, 2, c.solver) == ckpt.model.predict(net, hist, 2, c.solver));
    std::stringstream again;
    save_checkpoint(again, back);
    CHECK(again.str() == bytes);
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  const Checkpoint ckpt{Model(small_config(), 5, 8, 0), Normalizer{}, 0};
  std::stringstream buf;
  save_checkpoint(buf, ckpt);
  const std::string bytes = buf.str();
  {
    std::istringstream in("STDEN2\n" + bytes.substr(7));
    CHECK_THROWS_AS(load_checkpoint(in), ParseError);
  }
  {
    std::istringstream in(bytes.substr(0, bytes.size() - 8));
    CHECK_THROWS_AS(load_checkpoint(in), ParseError);
  }
  {
    std::istringstream in(bytes.substr(0, 10));
    CHECK_THROWS_AS(load_checkpoint(in), ParseError);
  }
}
