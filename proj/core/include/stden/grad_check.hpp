#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "stden/tape.hpp"

namespace stden {

/// Scalar loss built from the parameters on a fresh tape.
using LossFn = std::function<Var(Tape&, ParamStore&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

/// Compares tape gradients against central finite differences, coordinate by
/// coordinate, with step h = step_scale * (1 + |x|). The relative error of a
/// coordinate is |g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-12). `point` is
/// restored to its original values before returning.
GradCheckReport grad_check(const LossFn& loss, ParamStore& point, double step_scale = 1e-6);

}  // namespace stden
