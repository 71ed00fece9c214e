#pragma once

#include <string>

#include "msrgcn/matrix.hpp"

namespace msrgcn::training {

/// One prediction problem: K₀×T_h observed frames and the K₀×T_f frames
/// that follow. Columns are frames, rows joint-major coordinates.
struct Sample {
  Matrix history;
  Matrix future;
  std::string action;
};

}  // namespace msrgcn::training
