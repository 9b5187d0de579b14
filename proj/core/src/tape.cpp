#include "stden/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "stden/error.hpp"

namespace stden {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

ConstMatrixMap as_matrix(const Tensor& t) {
  return ConstMatrixMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}

MatrixMap as_matrix(Tensor& t) {
  return MatrixMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                   static_cast<Eigen::Index>(t.cols()));
}

Tape& common_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw Error("operands were recorded on different tapes");
  return a.tape();
}

// Output shape for scalar<->tensor broadcasting.
const Shape& broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.is_scalar()) return a.shape();
  if (a.is_scalar()) return b.shape();
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                   shape_string(b.shape()));
}

// Adds `g` (shaped like the broadcast output) into the slot of `id`,
// reducing over the broadcast when the input was a single element.
void accumulate_broadcast(Tape& tape, std::size_t id, const Tensor& g, double factor = 1.0) {
  if (!tape.requires_grad(id)) return;
  Tensor& slot = tape.grad_slot(id);
  if (slot.size() == g.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) slot[i] += factor * g[i];
  } else {
    double total = 0.0;
    for (double v : g.data()) total += v;
    slot[0] += factor * total;
  }
}

double stable_softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamStore

Tensor& ParamStore::add(std::string name, Tensor init) {
  if (index_.contains(name)) throw Error("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  Tensor grad(init.shape(), 0.0);
  entries_.push_back({std::move(name), std::move(init), std::move(grad)});
  return entries_.back().value;
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParamStore::index_of(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + std::string(name));
  return it->second;
}

std::size_t ParamStore::parameter_count() const noexcept {
  std::size_t total = 0;
  for (const Entry& e : entries_) total += e.value.size();
  return total;
}

void ParamStore::zero_grad() {
  for (Entry& e : entries_) std::fill(e.grad.data().begin(), e.grad.data().end(), 0.0);
}

// ---------------------------------------------------------------------------
// Tape

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::constant: return "constant";
    case OpKind::parameter: return "parameter";
    case OpKind::add: return "add";
    case OpKind::subtract: return "subtract";
    case OpKind::hadamard: return "hadamard";
    case OpKind::scale: return "scale";
    case OpKind::matmul: return "matmul";
    case OpKind::matvec: return "matvec";
    case OpKind::tanh: return "tanh";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::softplus: return "softplus";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::transpose: return "transpose";
    case OpKind::graph_gradient: return "graph_gradient";
    case OpKind::graph_laplacian: return "graph_laplacian";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw Error("use of an unbound Var");
  return tape_->value(id_);
}

const Tensor& Tape::value(std::size_t id) const {
  if (released_) throw Error("tape values were released by backward()");
  return nodes_.at(id).value;
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NonFiniteError("constant: non-finite input");
  return record(OpKind::constant, std::move(value), std::span<const Var>{}, nullptr);
}

Var Tape::param(ParamStore& store, std::string_view name) {
  const std::size_t index = store.index_of(name);
  Var v = record(OpKind::parameter, store.entries()[index].value, std::span<const Var>{}, nullptr);
  Node& node = nodes_.back();
  node.requires_grad = true;
  node.store = &store;
  node.param_index = index;
  return v;
}

Var Tape::frozen(const ParamStore& store, std::string_view name) {
  return record(OpKind::constant, store.value(name), std::span<const Var>{}, nullptr);
}

Var Tape::record(OpKind kind, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(kind, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(OpKind kind, Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  if (released_) throw Error("cannot record on a tape after backward()");
  if (!value.all_finite()) {
    throw NonFiniteError(std::string(op_name(kind)) + ": non-finite result");
  }
  bool needs = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw Error("input recorded on a different tape");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  Node node;
  node.kind = kind;
  node.value = std::move(value);
  node.requires_grad = needs;
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_slot(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.size() == 0) node.grad = Tensor(node.value.shape(), 0.0);
  return node.grad;
}

void Tape::backward(Var loss) {
  if (released_) throw Error("backward() already ran on this tape");
  if (&loss.tape() != this) throw Error("loss was recorded on a different tape");
  if (!loss.value().is_scalar()) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
  }
  grad_slot(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || node.grad.size() == 0) continue;
    if (node.backward) node.backward(*this, node.grad);
  }
  for (Node& node : nodes_) {
    if (node.kind != OpKind::parameter || node.grad.size() == 0) continue;
    Tensor& slot = node.store->entries()[node.param_index].grad;
    for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += node.grad[i];
  }
  released_ = true;
  nodes_.clear();
  nodes_.shrink_to_fit();
}

// ---------------------------------------------------------------------------
// Primitives

Var add(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(broadcast_shape(x, y, "add"));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[x.is_scalar() ? 0 : i] + y[y.is_scalar() ? 0 : i];
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(OpKind::add, std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    accumulate_broadcast(t, ia, g);
    accumulate_broadcast(t, ib, g);
  });
}

Var subtract(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(broadcast_shape(x, y, "subtract"));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[x.is_scalar() ? 0 : i] - y[y.is_scalar() ? 0 : i];
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(OpKind::subtract, std::move(out), {a, b},
                     [ia, ib](Tape& t, const Tensor& g) {
                       accumulate_broadcast(t, ia, g);
                       accumulate_broadcast(t, ib, g, -1.0);
                     });
}

Var hadamard(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(broadcast_shape(x, y, "hadamard"));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[x.is_scalar() ? 0 : i] * y[y.is_scalar() ? 0 : i];
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(OpKind::hadamard, std::move(out), {a, b},
                     [ia, ib](Tape& t, const Tensor& g) {
                       const Tensor& x = t.value(ia);
                       const Tensor& y = t.value(ib);
                       auto push = [&](std::size_t target, const Tensor& other) {
                         if (!t.requires_grad(target)) return;
                         Tensor local(g.shape());
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           local[i] = g[i] * other[other.is_scalar() ? 0 : i];
                         }
                         accumulate_broadcast(t, target, local);
                       };
                       push(ia, y);
                       push(ib, x);
                     });
}

Var scale(Var a, double factor) {
  if (!std::isfinite(factor)) throw NonFiniteError("scale: non-finite factor");
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::scale, std::move(out), {a},
                         [ia, factor](Tape& t, const Tensor& g) {
                           Tensor& slot = t.grad_slot(ia);
                           for (std::size_t i = 0; i < g.size(); ++i) slot[i] += factor * g[i];
                         });
}

Var matmul(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(x.shape()) + " x " +
                     shape_string(y.shape()));
  }
  Tensor out({x.rows(), y.cols()});
  as_matrix(out).noalias() = as_matrix(x) * as_matrix(y);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(OpKind::matmul, std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) {
      as_matrix(t.grad_slot(ia)).noalias() += as_matrix(g) * as_matrix(t.value(ib)).transpose();
    }
    if (t.requires_grad(ib)) {
      as_matrix(t.grad_slot(ib)).noalias() += as_matrix(t.value(ia)).transpose() * as_matrix(g);
    }
  });
}

Var matvec(Var a, Var x) {
  Tape& tape = common_tape(a, x);
  const Tensor& m = a.value();
  const Tensor& v = x.value();
  if (m.rank() != 2 || v.rank() != 1 || m.cols() != v.size()) {
    throw ShapeError("matvec: incompatible shapes " + shape_string(m.shape()) + " x " +
                     shape_string(v.shape()));
  }
  Tensor out({m.rows()});
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) acc += m.at(r, c) * v[c];
    out[r] = acc;
  }
  const std::size_t ia = a.id(), ix = x.id();
  return tape.record(OpKind::matvec, std::move(out), {a, x}, [ia, ix](Tape& t, const Tensor& g) {
    const Tensor& m = t.value(ia);
    const Tensor& v = t.value(ix);
    if (t.requires_grad(ia)) {
      Tensor& slot = t.grad_slot(ia);
      for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) slot.at(r, c) += g[r] * v[c];
      }
    }
    if (t.requires_grad(ix)) {
      Tensor& slot = t.grad_slot(ix);
      for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) slot[c] += g[r] * m.at(r, c);
      }
    }
  });
}

namespace {

// Elementwise op; `derivative(x, y)` gives dy/dx from input x and output y.
// The closure reads the node's own output through `self`, which record()
// assigns as the current tape size.
template <class Forward, class Derivative>
Var elementwise(OpKind kind, Var a, Forward forward, Derivative derivative) {
  Tensor out = a.value();
  for (double& v : out.data()) v = forward(v);
  Tape& tape = a.tape();
  const std::size_t ia = a.id();
  const std::size_t self = tape.size();
  return tape.record(kind, std::move(out), {a},
                     [ia, self, derivative](Tape& t, const Tensor& g) {
                       const Tensor& x = t.value(ia);
                       const Tensor& y = t.value(self);
                       Tensor& slot = t.grad_slot(ia);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         slot[i] += g[i] * derivative(x[i], y[i]);
                       }
                     });
}

}  // namespace

Var tanh(Var a) {
  return elementwise(
      OpKind::tanh, a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return elementwise(
      OpKind::sigmoid, a, [](double x) { return stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var a) {
  return elementwise(
      OpKind::softplus, a, [](double x) { return stable_softplus(x); },
      [](double x, double) { return stable_sigmoid(x); });
}

Var exp(Var a) {
  return elementwise(
      OpKind::exp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return elementwise(
      OpKind::log, a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::sum, Tensor::scalar(total), {a},
                         [ia](Tape& t, const Tensor& g) {
                           Tensor& slot = t.grad_slot(ia);
                           for (double& v : slot.data()) v += g[0];
                         });
}

Var mean(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const double count = static_cast<double>(a.value().size());
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::mean, Tensor::scalar(total / count), {a},
                         [ia, count](Tape& t, const Tensor& g) {
                           Tensor& slot = t.grad_slot(ia);
                           const double share = g[0] / count;
                           for (double& v : slot.data()) v += share;
                         });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Tape& tape = parts.front().tape();
  const Tensor& first = parts.front().value();
  if (first.rank() > 2 || axis > 1 || (first.rank() == 1 && axis != 0)) {
    throw ShapeError("concat: supports rank-1 (axis 0) and rank-2 tensors");
  }
  const std::size_t rank = first.rank();
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if (v.rank() != rank) throw ShapeError("concat: rank mismatch");
    if (rank == 2 && (axis == 0 ? v.cols() != first.cols() : v.rows() != first.rows())) {
      throw ShapeError("concat: non-concatenated dimension mismatch");
    }
    const std::size_t extent = rank == 1 ? v.size() : (axis == 0 ? v.rows() : v.cols());
    extents.push_back(extent);
    total += extent;
  }
  Tensor out = rank == 1 ? Tensor({total})
                         : (axis == 0 ? Tensor({total, first.cols()})
                                      : Tensor({first.rows(), total}));
  std::vector<std::size_t> ids;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    ids.push_back(parts[k].id());
    if (rank == 1 || axis == 0) {
      std::copy(v.data().begin(), v.data().end(), out.data().begin() + offset * out.cols());
    } else {
      for (std::size_t r = 0; r < v.rows(); ++r) {
        std::copy_n(v.data().begin() + r * v.cols(), v.cols(),
                    out.data().begin() + r * out.cols() + offset);
      }
    }
    offset += extents[k];
  }
  const bool by_rows = rank == 1 || axis == 0;
  return tape.record(OpKind::concat, std::move(out), parts,
                     [ids, extents, by_rows](Tape& t, const Tensor& g) {
                       const std::size_t cols = g.cols();
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (t.requires_grad(ids[k])) {
                           Tensor& slot = t.grad_slot(ids[k]);
                           if (by_rows) {
                             const std::size_t start = offset * cols;
                             for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[start + i];
                           } else {
                             const std::size_t w = extents[k];
                             for (std::size_t r = 0; r < g.rows(); ++r) {
                               for (std::size_t c = 0; c < w; ++c) {
                                 slot[r * w + c] += g[r * cols + offset + c];
                               }
                             }
                           }
                         }
                         offset += extents[k];
                       }
                     });
}

Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length) {
  const Tensor& v = a.value();
  if (v.rank() > 2 || axis > 1 || (v.rank() == 1 && axis != 0)) {
    throw ShapeError("slice: supports rank-1 (axis 0) and rank-2 tensors");
  }
  const bool by_rows = v.rank() == 1 || axis == 0;
  const std::size_t extent = v.rank() == 1 ? v.size() : (axis == 0 ? v.rows() : v.cols());
  if (length == 0 || start + length > extent) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") outside extent " +
                     std::to_string(extent));
  }
  const std::size_t cols = v.cols();
  Tensor out = v.rank() == 1 ? Tensor({length})
                             : (axis == 0 ? Tensor({length, cols}) : Tensor({v.rows(), length}));
  if (by_rows) {
    std::copy_n(v.data().begin() + start * cols, out.size(), out.data().begin());
  } else {
    for (std::size_t r = 0; r < v.rows(); ++r) {
      std::copy_n(v.data().begin() + r * cols + start, length, out.data().begin() + r * length);
    }
  }
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::slice, std::move(out), {a},
                         [ia, by_rows, start, length, cols](Tape& t, const Tensor& g) {
                           Tensor& slot = t.grad_slot(ia);
                           if (by_rows) {
                             for (std::size_t i = 0; i < g.size(); ++i) slot[start * cols + i] += g[i];
                           } else {
                             for (std::size_t r = 0; r < g.rows(); ++r) {
                               for (std::size_t c = 0; c < length; ++c) {
                                 slot[r * cols + start + c] += g[r * length + c];
                               }
                             }
                           }
                         });
}

Var transpose(Var a) {
  const Tensor& v = a.value();
  if (v.rank() != 2) throw ShapeError("transpose: rank-2 tensor required");
  Tensor out({v.cols(), v.rows()});
  as_matrix(out) = as_matrix(v).transpose();
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::transpose, std::move(out), {a},
                         [ia](Tape& t, const Tensor& g) {
                           as_matrix(t.grad_slot(ia)) += as_matrix(g).transpose();
                         });
}

Var graph_gradient(const RoadNetwork& net, Var a, Weighting weighting) {
  const Tensor& v = a.value();
  const std::size_t n = net.node_count();
  const std::size_t m = net.edge_count();
  if (v.rank() != 2 || v.cols() % n != 0 || m == 0) {
    throw ShapeError("graph_gradient: rows must hold whole node blocks, got " +
                     shape_string(v.shape()));
  }
  Tensor out({v.rows(), v.cols() / n * m});
  gradient_blocks(net, v.data(), out.data(), weighting);
  const std::size_t ia = a.id();
  const RoadNetwork* graph = &net;
  return a.tape().record(OpKind::graph_gradient, std::move(out), {a},
                         [ia, graph, weighting](Tape& t, const Tensor& g) {
                           Tensor& slot = t.grad_slot(ia);
                           std::vector<double> local(slot.size());
                           divergence_blocks(*graph, g.data(), local, weighting);
                           for (std::size_t i = 0; i < local.size(); ++i) slot[i] += local[i];
                         });
}

Var graph_laplacian(const RoadNetwork& net, Var a, Weighting weighting) {
  const Tensor& v = a.value();
  const std::size_t n = net.node_count();
  if (v.rank() != 2 || v.cols() % n != 0) {
    throw ShapeError("graph_laplacian: rows must hold whole node blocks, got " +
                     shape_string(v.shape()));
  }
  Tensor out(v.shape());
  laplacian_blocks(net, v.data(), out.data(), weighting);
  const std::size_t ia = a.id();
  const RoadNetwork* graph = &net;
  return a.tape().record(OpKind::graph_laplacian, std::move(out), {a},
                         [ia, graph, weighting](Tape& t, const Tensor& g) {
                           Tensor& slot = t.grad_slot(ia);
                           std::vector<double> local(slot.size());
                           laplacian_blocks(*graph, g.data(), local, weighting);
                           for (std::size_t i = 0; i < local.size(); ++i) slot[i] += local[i];
                         });
}

Var broadcast_rows(Var row, std::size_t rows) {
  if (row.value().rank() != 2 || row.value().rows() != 1) {
    throw ShapeError("broadcast_rows: expected a 1 x k row, got " + shape_string(row.shape()));
  }
  if (rows == 1) return row;
  return matmul(row.tape().constant(Tensor({rows, 1}, 1.0)), row);
}

}  // namespace stden
