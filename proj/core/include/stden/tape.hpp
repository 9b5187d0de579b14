#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stden/graph.hpp"
#include "stden/tensor.hpp"

namespace stden {

/// Named trainable tensors with one gradient slot each. Iteration order is
/// insertion order, which keeps optimizers and checkpoints deterministic.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
  };

  Tensor& add(std::string name, Tensor init);

  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;
  Tensor& value(std::string_view name) { return entries_[index_of(name)].value; }
  const Tensor& value(std::string_view name) const { return entries_[index_of(name)].value; }
  Tensor& grad(std::string_view name) { return entries_[index_of(name)].grad; }
  const Tensor& grad(std::string_view name) const { return entries_[index_of(name)].grad; }

  std::span<Entry> entries() noexcept { return entries_; }
  std::span<const Entry> entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  /// Total number of scalar parameters.
  std::size_t parameter_count() const noexcept;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

enum class OpKind : std::uint8_t {
  constant,
  parameter,
  add,
  subtract,
  hadamard,
  scale,
  matmul,
  matvec,
  tanh,
  sigmoid,
  softplus,
  exp,
  log,
  sum,
  mean,
  concat,
  slice,
  transpose,
  graph_gradient,
  graph_laplacian,
};

std::string_view op_name(OpKind kind);

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive and before its backward pass releases intermediates.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode record of primitive applications.
///
/// Nodes are appended in evaluation order, so the record is topologically
/// sorted by construction. Gradients accumulate additively when a value feeds
/// several consumers. A tape supports exactly one backward pass.
class Tape {
 public:
  /// Propagates `grad` (the gradient of this node's output) to its inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Trainable leaf: backward() adds into store.grad(name).
  Var param(ParamStore& store, std::string_view name);
  /// Frozen copy of a parameter; receives no gradient.
  Var frozen(const ParamStore& store, std::string_view name);

  /// Populates gradient slots of every parameter leaf with d(loss)/d(param),
  /// then releases all recorded values.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool released() const noexcept { return released_; }

  // Primitive implementation surface.
  Var record(OpKind kind, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(OpKind kind, Tensor value, std::span<const Var> inputs, BackwardFn backward);
  /// Gradient accumulator of node `id`, zero-initialised on first use.
  Tensor& grad_slot(std::size_t id);

 private:
  struct Node {
    OpKind kind = OpKind::constant;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    ParamStore* store = nullptr;
    std::size_t param_index = 0;
  };

  std::vector<Node> nodes_;
  bool released_ = false;
};

// Primitive set. Binary elementwise ops accept equal shapes or a
// single-element operand broadcast against the other; nothing else.
Var add(Var a, Var b);
Var subtract(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double factor);
Var matmul(Var a, Var b);
Var matvec(Var a, Var x);
Var tanh(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
Var sum(Var a);
Var mean(Var a);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length);
Var transpose(Var a);

// Graph operators over rows in the channel-major layout of Field: each row
// of `a` holds whole node blocks; the output row holds the matching edge
// (gradient) or node (Laplacian) blocks.
Var graph_gradient(const RoadNetwork& net, Var a, Weighting weighting = Weighting::unweighted);
Var graph_laplacian(const RoadNetwork& net, Var a, Weighting weighting = Weighting::unweighted);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return subtract(a, b); }
inline Var operator-(Var a) { return scale(a, -1.0); }
inline Var operator*(Var a, Var b) { return hadamard(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

/// Repeats a 1 x k row `rows` times (ones(rows x 1) * row).
Var broadcast_rows(Var row, std::size_t rows);

}  // namespace stden
