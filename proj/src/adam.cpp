#include "msrgcn/adam.hpp"

#include <cmath>

#include "msrgcn/errors.hpp"

namespace msrgcn {

void adam_step(Matrix& param, AdamState& state, double lr) {
  if (!param.has_grad()) throw UsageError("adam_step: parameter has no gradient");
  if (state.m.rows() != param.rows() || state.m.cols() != param.cols()) {
    throw ShapeError("adam_step: state " + state.m.shape_string() + " vs parameter " +
                     param.shape_string());
  }
  auto g = param.grad();
  for (double x : g) {
    if (!std::isfinite(x)) throw NumericError("adam_step: non-finite gradient");
  }
  state.t += 1;
  const auto& h = state.hyper;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
  auto p = param.data();
  auto m = state.m.data();
  auto v = state.v.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
    v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + h.eps);
  }
}

double lr_at(std::uint64_t epoch, const LrSchedule& schedule) {
  if (schedule.every == 0) throw ConfigError("lr schedule interval must be positive");
  return schedule.base * std::pow(schedule.decay, static_cast<double>(epoch / schedule.every));
}

}  // namespace msrgcn
