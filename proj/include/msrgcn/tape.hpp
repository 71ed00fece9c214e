#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "msrgcn/matrix.hpp"

namespace msrgcn {

/// Handle to a node recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

/// Recorded computation graph for one forward pass.
///
/// Every op appends a node holding its value and a closure that maps the
/// node's output gradient onto its parents. `backward` walks nodes in reverse
/// recording order. Parameter leaves reference external storage and are not
/// copied; that storage must outlive the tape.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Var constant(Matrix value);
  Var input(Matrix value);
  Var parameter(const Matrix& value, std::size_t param_id);

  /// Appends an op result. Non-finite values abort with NumericError naming `op`.
  Var record(const char* op, Matrix value, bool requires_grad, BackwardFn backward);

  const Matrix& value(Var v) const;
  bool requires_grad(Var v) const;
  bool has_grad(Var v) const;
  /// Gradient accumulated so far; zero matrix of the value's shape if none.
  Matrix grad(Var v) const;
  void accumulate(Var v, const Matrix& g);

  /// Seeds output gradients and propagates. May be called once per tape.
  void backward(std::span<const std::pair<Var, Matrix>> seeds);
  bool backward_done() const noexcept { return backward_done_; }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Calls f(param_id, grad) for every parameter leaf reached by backward.
  template <typename F>
  void for_each_parameter_grad(F&& f) const {
    for (const auto& n : nodes_) {
      if (n.param_id != Var::npos && !n.grad.empty()) f(n.param_id, n.grad);
    }
  }

 private:
  struct Node {
    const char* op = "";
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    bool requires_grad = false;
    std::size_t param_id = Var::npos;
    BackwardFn backward;
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Differentiable ops. Gradients flow only into operands that require them.

Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var tanh(Tape& t, Var x);
Var transpose(Tape& t, Var x);
Var reshape(Tape& t, Var x, std::size_t rows, std::size_t cols);
/// Elementwise product with a constant matrix (dropout masks).
Var mul_const(Tape& t, Var x, Matrix factor);
/// [a | b] along columns.
Var concat_cols(Tape& t, Var a, Var b);
/// Treats h as N stacked K×F blocks and returns the stack of a·h_n for an R×K operator a.
Var node_mix(Tape& t, Var a, Var h);

}  // namespace msrgcn
