#include "stden/grad_check.hpp"

#include <cmath>
#include <vector>

#include "stden/error.hpp"

namespace stden {
namespace {

double evaluate(const LossFn& loss, ParamStore& point) {
  Tape tape;
  const double value = loss(tape, point).value().item();
  if (!std::isfinite(value)) throw NonFiniteError("grad_check: non-finite loss at probe");
  return value;
}

}  // namespace

GradCheckReport grad_check(const LossFn& loss, ParamStore& point, double step_scale) {
  point.zero_grad();
  {
    Tape tape;
    Var l = loss(tape, point);
    tape.backward(l);
  }
  std::vector<Tensor> analytic;
  for (const auto& entry : point.entries()) analytic.push_back(entry.grad);

  GradCheckReport report;
  for (std::size_t p = 0; p < point.size(); ++p) {
    Tensor& value = point.entries()[p].value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double x = value[i];
      const double h = step_scale * (1.0 + std::abs(x));
      value[i] = x + h;
      const double up = evaluate(loss, point);
      value[i] = x - h;
      const double down = evaluate(loss, point);
      value[i] = x;
      const double fd = (up - down) / (2.0 * h);
      const double ad = analytic[p][i];
      const double rel = std::abs(ad - fd) / (std::abs(ad) + std::abs(fd) + 1e-12);
      ++report.coordinates;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = point.entries()[p].name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace stden
