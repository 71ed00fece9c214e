#include "msrgcn/tape.hpp"

#include <cmath>
#include <string>

#include "msrgcn/errors.hpp"

namespace msrgcn {

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw UsageError("invalid tape variable");
  return nodes_[v.id];
}

Tape::Node& Tape::node(Var v) {
  if (v.id >= nodes_.size()) throw UsageError("invalid tape variable");
  return nodes_[v.id];
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::input(Matrix value) {
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(const Matrix& value, std::size_t param_id) {
  Node n;
  n.op = "parameter";
  n.external = &value;
  n.requires_grad = true;
  n.param_id = param_id;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::record(const char* op, Matrix value, bool requires_grad, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite output of op '") + op + "' at tape node " +
                       std::to_string(nodes_.size()));
  }
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Matrix& Tape::value(Var v) const {
  const Node& n = node(v);
  return n.external ? *n.external : n.value;
}

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

bool Tape::has_grad(Var v) const { return !node(v).grad.empty(); }

Matrix Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!n.grad.empty()) return n.grad;
  const Matrix& val = value(v);
  return Matrix(val.rows(), val.cols());
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  const Matrix& val = n.external ? *n.external : n.value;
  if (g.rows() != val.rows() || g.cols() != val.cols()) {
    throw ShapeError(std::string("gradient shape ") + g.shape_string() + " does not match " +
                     n.op + " value " + val.shape_string());
  }
  if (n.grad.empty() && !g.empty()) {
    n.grad = g;
  } else {
    add_inplace(n.grad, g);
  }
}

void Tape::backward(std::span<const std::pair<Var, Matrix>> seeds) {
  if (backward_done_) throw UsageError("backward already ran on this tape");
  backward_done_ = true;
  for (const auto& [v, g] : seeds) accumulate(v, g);
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    // leaves never carry a backward closure, so only intermediates are released
    const Matrix g = std::move(n.grad);
    n.grad = Matrix();
    n.backward(*this, g);
  }
}

Var matmul(Tape& t, Var a, Var b) {
  Matrix out = matmul(t.value(a), t.value(b));
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record("matmul", std::move(out), rg, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, matmul_nt(g, tp.value(b)));
    if (tp.requires_grad(b)) tp.accumulate(b, matmul_tn(tp.value(a), g));
  });
}

Var add(Tape& t, Var a, Var b) {
  Matrix out = add(t.value(a), t.value(b));
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record("add", std::move(out), rg, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var tanh(Tape& t, Var x) {
  Matrix out = tanh_map(t.value(x));
  const std::size_t self = t.size();
  return t.record("tanh", std::move(out), t.requires_grad(x), [x, self](Tape& tp, const Matrix& g) {
    const Matrix& y = tp.value(Var{self});
    Matrix dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= 1.0 - y[i] * y[i];
    tp.accumulate(x, dx);
  });
}

Var transpose(Tape& t, Var x) {
  return t.record("transpose", t.value(x).transposed(), t.requires_grad(x),
                  [x](Tape& tp, const Matrix& g) { tp.accumulate(x, g.transposed()); });
}

Var reshape(Tape& t, Var x, std::size_t rows, std::size_t cols) {
  const Matrix& v = t.value(x);
  const std::size_t r0 = v.rows(), c0 = v.cols();
  return t.record("reshape", v.reshaped(rows, cols), t.requires_grad(x),
                  [x, r0, c0](Tape& tp, const Matrix& g) { tp.accumulate(x, g.reshaped(r0, c0)); });
}

Var mul_const(Tape& t, Var x, Matrix factor) {
  const Matrix& v = t.value(x);
  if (v.rows() != factor.rows() || v.cols() != factor.cols()) {
    throw ShapeError("mul_const: " + v.shape_string() + " vs " + factor.shape_string());
  }
  Matrix out = v;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i];
  return t.record("mul_const", std::move(out), t.requires_grad(x),
                  [x, f = std::move(factor)](Tape& tp, const Matrix& g) {
                    Matrix dx = g;
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= f[i];
                    tp.accumulate(x, dx);
                  });
}

Var concat_cols(Tape& t, Var a, Var b) {
  const Matrix& va = t.value(a);
  const Matrix& vb = t.value(b);
  if (va.rows() != vb.rows()) {
    throw ShapeError("concat_cols: " + va.shape_string() + " and " + vb.shape_string());
  }
  const std::size_t ca = va.cols(), cb = vb.cols();
  Matrix out(va.rows(), ca + cb);
  for (std::size_t i = 0; i < va.rows(); ++i) {
    for (std::size_t j = 0; j < ca; ++j) out(i, j) = va(i, j);
    for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = vb(i, j);
  }
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.record("concat_cols", std::move(out), rg, [a, b, ca, cb](Tape& tp, const Matrix& g) {
    Matrix ga(g.rows(), ca), gb(g.rows(), cb);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < ca; ++j) ga(i, j) = g(i, j);
      for (std::size_t j = 0; j < cb; ++j) gb(i, j) = g(i, ca + j);
    }
    tp.accumulate(a, ga);
    tp.accumulate(b, gb);
  });
}

namespace {

// Views block n (rows [n*k, (n+1)*k)) of a stacked matrix as its own matrix.
Matrix block(const Matrix& stacked, std::size_t n, std::size_t k) {
  const std::size_t f = stacked.cols();
  auto src = stacked.data().subspan(n * k * f, k * f);
  return Matrix(k, f, std::vector<Scalar>(src.begin(), src.end()));
}

void set_block(Matrix& stacked, std::size_t n, const Matrix& b) {
  auto dst = stacked.data().subspan(n * b.size(), b.size());
  std::copy(b.data().begin(), b.data().end(), dst.begin());
}

}  // namespace

Var node_mix(Tape& t, Var a, Var h) {
  const Matrix& va = t.value(a);
  const Matrix& vh = t.value(h);
  const std::size_t r = va.rows(), k = va.cols();
  if (k == 0 || vh.rows() % k != 0) {
    throw ShapeError("node_mix: node operator " + va.shape_string() + " vs features " +
                     vh.shape_string());
  }
  const std::size_t batch = vh.rows() / k;
  Matrix out(batch * r, vh.cols());
  for (std::size_t n = 0; n < batch; ++n) set_block(out, n, matmul(va, block(vh, n, k)));
  const bool rg = t.requires_grad(a) || t.requires_grad(h);
  return t.record("node_mix", std::move(out), rg, [a, h, r, k, batch](Tape& tp, const Matrix& g) {
    const Matrix& av = tp.value(a);
    const Matrix& hv = tp.value(h);
    if (tp.requires_grad(a)) {
      Matrix da(r, k);
      for (std::size_t n = 0; n < batch; ++n)
        add_inplace(da, matmul_nt(block(g, n, r), block(hv, n, k)));
      tp.accumulate(a, da);
    }
    if (tp.requires_grad(h)) {
      Matrix dh(hv.rows(), hv.cols());
      for (std::size_t n = 0; n < batch; ++n) set_block(dh, n, matmul_tn(av, block(g, n, r)));
      tp.accumulate(h, dh);
    }
  });
}

}  // namespace msrgcn
