#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "msrgcn/matrix.hpp"
#include "msrgcn/rng.hpp"
#include "msrgcn/tape.hpp"

namespace testutil {

using msrgcn::Matrix;
using msrgcn::Rng;
using msrgcn::Tape;
using msrgcn::Var;

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(lo, hi);
  return m;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

using OpFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Max relative error between analytic and central-difference gradients of
/// sum(f(inputs) ⊙ R) for a fixed random R.
inline double op_gradcheck(const OpFn& f, std::vector<Matrix> inputs, std::uint64_t seed = 1,
                           double eps = 1e-5) {
  Rng rng(seed);
  Matrix weights;
  auto scalar = [&](const std::vector<Matrix>& xs) {
    Tape t;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(t.input(x));
    const Matrix& y = t.value(f(t, vars));
    if (weights.size() == 0) weights = random_matrix(rng, y.rows(), y.cols());
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * weights[i];
    return s;
  };
  scalar(inputs);

  Tape t;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(t.input(x));
  const Var y = f(t, vars);
  const std::pair<Var, Matrix> seedg{y, weights};
  t.backward(std::span<const std::pair<Var, Matrix>>(&seedg, 1));

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix g = t.grad(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + eps;
      const double up = scalar(inputs);
      inputs[k][i] = orig - eps;
      const double down = scalar(inputs);
      inputs[k][i] = orig;
      worst = std::max(worst, rel_err(g[i], (up - down) / (2 * eps)));
    }
  }
  return worst;
}

}  // namespace testutil
