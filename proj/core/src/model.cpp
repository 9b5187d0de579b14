#include "stden/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "stden/error.hpp"

namespace stden {
namespace {

constexpr double kSigmaFloor = 1e-4;

bool has_ode(ModelKind kind) { return kind != ModelKind::gru_direct; }

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// Expands a 1 x k row of per-node (or per-channel) values to the
// channel-major n * d layout via a 0/1 selector matrix.
Tensor node_selector(std::size_t n, std::size_t d) {
  Tensor sel({n, n * d});
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t i = 0; i < n; ++i) sel.at(i, c * n + i) = 1.0;
  }
  return sel;
}

Tensor channel_selector(std::size_t n, std::size_t d) {
  Tensor sel({d, n * d});
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t i = 0; i < n; ++i) sel.at(c, c * n + i) = 1.0;
  }
  return sel;
}

}  // namespace

std::string_view kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::stden: return "stden";
    case ModelKind::incp: return "incp";
    case ModelKind::unkp: return "unkp";
    case ModelKind::gru_direct: return "gru";
  }
  return "?";
}

ModelKind parse_kind(std::string_view text) {
  if (text == "stden") return ModelKind::stden;
  if (text == "incp") return ModelKind::incp;
  if (text == "unkp") return ModelKind::unkp;
  if (text == "gru" || text == "gru_direct") return ModelKind::gru_direct;
  throw ConfigError("unknown model kind '" + std::string(text) + "'");
}

std::string_view mode_name(DynamicsMode mode) {
  return mode == DynamicsMode::tanh ? "tanh" : "linear";
}

DynamicsMode parse_mode(std::string_view text) {
  if (text == "tanh") return DynamicsMode::tanh;
  if (text == "linear") return DynamicsMode::linear;
  throw ConfigError("unknown dynamics mode '" + std::string(text) + "' (expected tanh|linear)");
}

void ModelConfig::validate() const {
  if (history_len < 1 || horizon < 1) throw ConfigError("history_len and horizon must be >= 1");
  if (latent_channels < 1) throw ConfigError("latent_channels must be >= 1");
  if (gru_hidden < 1) throw ConfigError("gru_hidden must be >= 1");
  train_solver.validate();
  solver.validate();
}

Var sample_z0(Var mu, Var sigma, const Tensor& eps) {
  for (double s : sigma.value().data()) {
    if (!(s > 0.0)) throw ValidationError("sample_z0: sigma must be positive");
  }
  if (eps.shape() != mu.shape()) {
    throw ShapeError("sample_z0: eps shape " + shape_string(eps.shape()) + " vs mu " +
                     shape_string(mu.shape()));
  }
  return mu + sigma * mu.tape().constant(eps);
}

NodeField pef_dynamics(const RoadNetwork& net, std::span<const double> phi,
                       std::span<const double> alpha, const NodeField& z, DynamicsMode mode,
                       Weighting weighting) {
  if (phi.size() != net.node_count() || alpha.size() != z.channels()) {
    throw ShapeError("pef_dynamics: phi/alpha shape mismatch");
  }
  NodeField out = laplacian_apply(net, z, weighting);
  for (std::size_t c = 0; c < z.channels(); ++c) {
    for (std::size_t i = 0; i < z.count(); ++i) {
      const double a = alpha[c] * out(i, c);
      out(i, c) = -phi[i] * (mode == DynamicsMode::tanh ? std::tanh(a) : a);
    }
  }
  return out;
}

NodeField euler_pef_step(const RoadNetwork& net, std::span<const double> phi,
                         std::span<const double> alpha, const NodeField& z, Weighting weighting) {
  NodeField next = pef_dynamics(net, phi, alpha, z, DynamicsMode::linear, weighting);
  for (std::size_t k = 0; k < next.values().size(); ++k) next.values()[k] += z.values()[k];
  return next;
}

double energy_total(std::span<const double> phi, const NodeField& z) {
  if (phi.size() != z.count()) throw ShapeError("energy_total: phi length mismatch");
  double total = 0.0;
  for (std::size_t c = 0; c < z.channels(); ++c) {
    for (std::size_t i = 0; i < z.count(); ++i) total += z(i, c) / phi[i];
  }
  return total;
}

namespace {

ParamStore initial_params(const ModelConfig& config, std::size_t nodes, std::size_t edges,
                          std::uint64_t seed) {
  const std::size_t h = config.gru_hidden;
  const std::size_t d = config.latent_channels;
  const std::size_t nd = nodes * d;
  std::mt19937_64 rng(seed);
  const auto bound = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };

  ParamStore p;
  // GRU gate columns are ordered [update | reset | candidate].
  p.add("enc.wx", uniform_tensor({edges, 3 * h}, bound(edges), rng));
  p.add("enc.wh", uniform_tensor({h, 3 * h}, bound(h), rng));
  p.add("enc.b", uniform_tensor({1, 3 * h}, bound(h), rng));
  if (config.kind == ModelKind::gru_direct) {
    p.add("head.w", uniform_tensor({h, config.horizon * edges}, bound(h), rng));
    p.add("head.b", uniform_tensor({1, config.horizon * edges}, bound(h), rng));
    return p;
  }
  p.add("readout.w", uniform_tensor({h, 2 * nd}, bound(h), rng));
  p.add("readout.b", uniform_tensor({1, 2 * nd}, bound(h), rng));
  switch (config.kind) {
    case ModelKind::stden:
      // softplus^-1(1), so phi starts at 1.
      p.add("dyn.rho", Tensor({1, nodes}, std::log(std::expm1(1.0))));
      p.add("dyn.alpha", Tensor({1, d}, 0.1));
      break;
    case ModelKind::incp:
      p.add("dyn.alpha", Tensor({1, d}, 0.1));
      break;
    case ModelKind::unkp: {
      const std::size_t width = 4 * nd;
      p.add("dyn.w1", uniform_tensor({nd, width}, bound(nd), rng));
      p.add("dyn.b1", uniform_tensor({1, width}, bound(nd), rng));
      p.add("dyn.w2", uniform_tensor({width, nd}, bound(width), rng));
      p.add("dyn.b2", uniform_tensor({1, nd}, bound(width), rng));
      break;
    }
    case ModelKind::gru_direct:
      break;
  }
  p.add("dec.w", Tensor({1, d}, 1.0 / static_cast<double>(d)));
  p.add("dec.b", Tensor({1, 1}, 0.0));
  return p;
}

}  // namespace

Model::Model(ModelConfig config, std::size_t nodes, std::size_t edges, std::uint64_t seed)
    : config_(std::move(config)), nodes_(nodes), edges_(edges) {
  config_.validate();
  if (nodes_ < 2 || edges_ < 1) throw ValidationError("model: network too small");
  params_ = initial_params(config_, nodes_, edges_, seed);
}

Model::Model(ModelConfig config, std::size_t nodes, std::size_t edges, ParamStore params)
    : config_(std::move(config)), nodes_(nodes), edges_(edges), params_(std::move(params)) {
  config_.validate();
  if (nodes_ < 2 || edges_ < 1) throw ValidationError("model: network too small");
  check_shapes();
}

void Model::check_shapes() const {
  const ParamStore expected = initial_params(config_, nodes_, edges_, 0);
  if (expected.size() != params_.size()) {
    throw ValidationError("model: expected " + std::to_string(expected.size()) +
                          " parameter tensors for kind " + std::string(kind_name(config_.kind)) +
                          ", got " + std::to_string(params_.size()));
  }
  for (const auto& want : expected.entries()) {
    if (!params_.contains(want.name)) {
      throw ValidationError("model: missing parameter '" + want.name + "'");
    }
    const Tensor& have = params_.value(want.name);
    if (have.shape() != want.value.shape()) {
      throw ValidationError("model: parameter '" + want.name + "' has shape " +
                            shape_string(have.shape()) + ", expected " +
                            shape_string(want.value.shape()));
    }
  }
}

void Model::check_network(const RoadNetwork& net) const {
  if (net.node_count() != nodes_ || net.edge_count() != edges_) {
    throw ValidationError("model expects a network with " + std::to_string(nodes_) + " nodes and " +
                          std::to_string(edges_) + " edges, got " +
                          std::to_string(net.node_count()) + " and " +
                          std::to_string(net.edge_count()));
  }
}

std::size_t Model::dynamics_parameter_count() const {
  std::size_t total = 0;
  for (const auto& e : params_.entries()) {
    if (e.name.starts_with("dyn.")) total += e.value.size();
  }
  return total;
}

Var Model::leaf(Tape& tape, ParamStore& store, std::string_view name, ParamMode mode) const {
  return mode == ParamMode::trainable ? tape.param(store, name) : tape.frozen(store, name);
}

Var Model::encode_hidden(Tape& tape, ParamStore& store, const Tensor& history, std::size_t batch,
                         ParamMode mode) const {
  const std::size_t T = config_.history_len;
  const std::size_t h = config_.gru_hidden;
  if (history.rank() != 2 || history.rows() != T * batch || history.cols() != edges_) {
    throw ShapeError("encode: history must be " + std::to_string(T * batch) + " x " +
                     std::to_string(edges_) + ", got " + shape_string(history.shape()));
  }
  const Var wx = leaf(tape, store, "enc.wx", mode);
  const Var wh = leaf(tape, store, "enc.wh", mode);
  const Var b = leaf(tape, store, "enc.b", mode);

  // One input projection for every step; row t * B + k.
  const Var projected = matmul(tape.constant(history), wx) + broadcast_rows(b, T * batch);
  Var state = tape.constant(Tensor({batch, h}, 0.0));
  for (std::size_t t = 0; t < T; ++t) {
    const Var x = slice(projected, 0, t * batch, batch);
    const Var r = matmul(state, wh);
    const Var update = sigmoid(slice(x, 1, 0, h) + slice(r, 1, 0, h));
    const Var reset = sigmoid(slice(x, 1, h, h) + slice(r, 1, h, h));
    const Var candidate = tanh(slice(x, 1, 2 * h, h) + reset * slice(r, 1, 2 * h, h));
    state = candidate + update * (state - candidate);
  }
  return state;
}

std::pair<Var, Var> Model::encode(Tape& tape, ParamStore& store, const Tensor& history,
                                  std::size_t batch, ParamMode mode) const {
  if (!has_ode(config_.kind)) throw Error("encode: gru_direct has no latent field");
  const std::size_t nd = nodes_ * config_.latent_channels;
  const Var hidden = encode_hidden(tape, store, history, batch, mode);
  const Var out = matmul(hidden, leaf(tape, store, "readout.w", mode)) +
                  broadcast_rows(leaf(tape, store, "readout.b", mode), batch);
  const Var mu = slice(out, 1, 0, nd);
  const Var floor = tape.constant(Tensor::scalar(kSigmaFloor));
  const Var sigma = softplus(slice(out, 1, nd, nd)) + floor;
  return {mu, sigma};
}

std::function<Var(const Var&, double)> Model::dynamics(Tape& tape, ParamStore& store,
                                                       const RoadNetwork& net, std::size_t batch,
                                                       ParamMode mode) const {
  check_network(net);
  const std::size_t n = nodes_;
  const std::size_t d = config_.latent_channels;
  const RoadNetwork* graph = &net;
  const Weighting weighting = config_.weighting;
  const bool linear = config_.dynamics == DynamicsMode::linear;

  if (config_.kind == ModelKind::unkp) {
    const Var w1 = leaf(tape, store, "dyn.w1", mode);
    const Var w2 = leaf(tape, store, "dyn.w2", mode);
    const Var b1 = broadcast_rows(leaf(tape, store, "dyn.b1", mode), batch);
    const Var b2 = broadcast_rows(leaf(tape, store, "dyn.b2", mode), batch);
    return [w1, w2, b1, b2](const Var& z, double) {
      return matmul(tanh(matmul(z, w1) + b1), w2) + b2;
    };
  }
  if (config_.kind == ModelKind::gru_direct) throw Error("dynamics: gru_direct has no ODE");

  Var alpha = leaf(tape, store, "dyn.alpha", mode);
  if (d > 1) alpha = matmul(alpha, tape.constant(channel_selector(n, d)));
  else alpha = matmul(alpha, tape.constant(Tensor({1, n}, 1.0)));
  const Var alpha_rows = broadcast_rows(alpha, batch);

  if (config_.kind == ModelKind::incp) {
    return [graph, weighting, linear, alpha_rows](const Var& z, double) {
      const Var a = alpha_rows * graph_laplacian(*graph, z, weighting);
      return -(linear ? a : tanh(a));
    };
  }
  Var phi = softplus(leaf(tape, store, "dyn.rho", mode));
  if (d > 1) phi = matmul(phi, tape.constant(node_selector(n, d)));
  const Var phi_rows = broadcast_rows(phi, batch);
  return [graph, weighting, linear, alpha_rows, phi_rows](const Var& z, double) {
    const Var a = alpha_rows * graph_laplacian(*graph, z, weighting);
    return -(phi_rows * (linear ? a : tanh(a)));
  };
}

Var Model::decode(Tape& tape, ParamStore& store, const RoadNetwork& net, Var z,
                  ParamMode mode) const {
  check_network(net);
  const std::size_t d = config_.latent_channels;
  const std::size_t m = edges_;
  const Var grad = graph_gradient(net, z, config_.weighting);
  const Var w = leaf(tape, store, "dec.w", mode);
  const Var b = leaf(tape, store, "dec.b", mode);
  Var flow = -(slice(w, 1, 0, 1) * slice(grad, 1, 0, m));
  for (std::size_t c = 1; c < d; ++c) {
    flow = flow - slice(w, 1, c, 1) * slice(grad, 1, c * m, m);
  }
  return flow + b;
}

ForwardResult Model::forward(Tape& tape, ParamStore& store, const RoadNetwork& net,
                             const Tensor& history, std::size_t batch, const Tensor* eps,
                             const SolverConfig& solver, ParamMode mode) const {
  check_network(net);
  ForwardResult result;
  if (config_.kind == ModelKind::gru_direct) {
    const Var hidden = encode_hidden(tape, store, history, batch, mode);
    result.prediction = matmul(hidden, leaf(tape, store, "head.w", mode)) +
                        broadcast_rows(leaf(tape, store, "head.b", mode), batch);
    return result;
  }
  auto [mu, sigma] = encode(tape, store, history, batch, mode);
  result.mu = mu;
  result.sigma = sigma;
  const Var z0 = eps != nullptr ? sample_z0(mu, sigma, *eps) : mu;

  std::vector<double> times(config_.horizon + 1);
  for (std::size_t k = 0; k < times.size(); ++k) times[k] = static_cast<double>(k);
  auto f = dynamics(tape, store, net, batch, mode);
  const Trajectory<Var> traj = integrate(f, z0, std::span<const double>(times), solver);
  result.nfe = traj.nfe;

  std::vector<Var> flows;
  flows.reserve(config_.horizon);
  for (std::size_t k = 1; k < traj.states.size(); ++k) {
    flows.push_back(decode(tape, store, net, traj.states[k], mode));
  }
  result.prediction = flows.size() == 1 ? flows.front() : concat(flows, 1);
  return result;
}

Tensor Model::predict(const RoadNetwork& net, const Tensor& history, std::size_t batch,
                      const SolverConfig& solver, long* nfe) const {
  Tape tape;
  ParamStore& store = const_cast<ParamStore&>(params_);  // frozen leaves only read
  const ForwardResult r = forward(tape, store, net, history, batch, nullptr, solver, ParamMode::frozen);
  if (nfe != nullptr) *nfe = r.nfe;
  return r.prediction.value();
}

Tensor Model::dynamics_value(const RoadNetwork& net, const Tensor& z) const {
  Tape tape;
  ParamStore& store = const_cast<ParamStore&>(params_);
  auto f = dynamics(tape, store, net, z.rows(), ParamMode::frozen);
  return f(tape.constant(z), 0.0).value();
}

Tensor Model::potentials(const RoadNetwork& net, const Tensor& history,
                         const SolverConfig& solver) const {
  check_network(net);
  if (!has_ode(config_.kind)) throw Error("potentials: gru_direct has no latent field");
  Tape tape;
  ParamStore& store = const_cast<ParamStore&>(params_);
  auto [mu, sigma] = encode(tape, store, history, 1, ParamMode::frozen);
  std::vector<double> times(config_.horizon + 1);
  for (std::size_t k = 0; k < times.size(); ++k) times[k] = static_cast<double>(k);
  auto f = dynamics(tape, store, net, 1, ParamMode::frozen);
  const Trajectory<Var> traj = integrate(f, mu, std::span<const double>(times), solver);
  const std::size_t nd = nodes_ * config_.latent_channels;
  Tensor out({config_.horizon, nd});
  for (std::size_t k = 1; k < traj.states.size(); ++k) {
    const auto v = traj.states[k].value().data();
    std::copy(v.begin(), v.end(), out.data().begin() + (k - 1) * nd);
  }
  return out;
}

}  // namespace stden
