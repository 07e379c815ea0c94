#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <unordered_map>
#include <vector>

#include "vpl/numcore/parameter.hpp"
#include "vpl/numcore/tensor.hpp"

namespace vpl {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Enables NaN/Inf checks on every recorded value. Defaults to on in builds
/// without NDEBUG.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

/// Reverse-mode autodiff tape. One tape per forward pass; not shared between
/// threads. Parameters enter as leaves and receive accumulated gradients in
/// Parameter::grad when backward() runs; frozen parameters enter as constants.
class Tape {
 public:
  /// Receives d(loss)/d(output) and must accumulate into parent gradients
  /// through Tape::grad_of.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient is retained on the tape (for op-level checks).
  Var input(Tensor value);
  /// Leaf bound to a Parameter. Repeated calls with the same parameter
  /// return the same node.
  Var param(Parameter& p);

  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward);
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient buffer of `v`, zero-allocated on first access. Valid only for
  /// nodes that require grad.
  Tensor& grad_of(Var v);
  /// Gradient after backward(); empty if nothing flowed into `v`.
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }

  /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one element.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

}  // namespace vpl
