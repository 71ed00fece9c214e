#pragma once

#include <cstdint>

#include "msrgcn/matrix.hpp"

namespace msrgcn {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment buffers for one parameter matrix.
struct AdamState {
  Matrix m;
  Matrix v;
  std::uint64_t t = 0;
  AdamHyper hyper;

  AdamState() = default;
  explicit AdamState(const Matrix& param, AdamHyper h = {})
      : m(param.rows(), param.cols()), v(param.rows(), param.cols()), hyper(h) {}
};

/// Bias-corrected Adam update of `param` from its gradient buffer.
void adam_step(Matrix& param, AdamState& state, double lr);

struct LrSchedule {
  double base = 2e-4;
  double decay = 0.98;
  std::uint64_t every = 2;
};

/// base * decay^floor(epoch / every).
double lr_at(std::uint64_t epoch, const LrSchedule& schedule = {});

}  // namespace msrgcn
