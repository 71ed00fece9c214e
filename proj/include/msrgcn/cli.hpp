#pragma once

#include <ostream>

namespace msrgcn::cli {

enum ExitCode : int {
  ok = 0,
  config_error = 1,
  data_error = 2,
  numeric_error = 3,
  internal_error = 4,
};

/// Entry point of the msrgcn tool; argv[0] is the program name.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace msrgcn::cli
