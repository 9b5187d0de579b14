#include "stden/odeint.hpp"

namespace stden {

std::string_view method_name(Method method) {
  return method == Method::rk4 ? "rk4" : "dopri5";
}

Method parse_method(std::string_view text) {
  if (text == "rk4") return Method::rk4;
  if (text == "dopri5") return Method::dopri5;
  throw ConfigError("unknown solver method '" + std::string(text) + "' (expected rk4|dopri5)");
}

void SolverConfig::validate() const {
  if (!(rtol > 0.0) || !(atol > 0.0)) throw ConfigError("solver tolerances must be positive");
  if (substeps_per_interval < 1) throw ConfigError("substeps_per_interval must be >= 1");
  if (max_nfe < 10) throw ConfigError("max_nfe must be >= 10");
}

}  // namespace stden
