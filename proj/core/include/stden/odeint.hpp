#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stden/error.hpp"
#include "stden/tape.hpp"
#include "stden/tensor.hpp"

namespace stden {

enum class Method { rk4, dopri5 };

std::string_view method_name(Method method);
Method parse_method(std::string_view text);

struct SolverConfig {
  Method method = Method::dopri5;
  double rtol = 1e-3;
  double atol = 1e-4;
  int substeps_per_interval = 4;  // RK4 only
  long max_nfe = 10000;

  static SolverConfig rk4(int substeps = 4) {
    SolverConfig cfg;
    cfg.method = Method::rk4;
    cfg.substeps_per_interval = substeps;
    return cfg;
  }
  static SolverConfig dopri5(double rtol = 1e-3, double atol = 1e-4) {
    SolverConfig cfg;
    cfg.rtol = rtol;
    cfg.atol = atol;
    return cfg;
  }

  void validate() const;
};

template <class State>
struct Trajectory {
  std::vector<double> times;
  std::vector<State> states;
  long nfe = 0;
  long accepted_steps = 0;
  long rejected_steps = 0;
};

// The solvers are generic over the state type. A State needs `a + b`,
// `double * a`, and `state_values(a)` exposing its numbers; Tensor gives a
// detached solve, Var records every stage on the tape.
inline std::span<const double> state_values(const Tensor& t) { return t.data(); }
inline std::span<const double> state_values(const Var& v) { return v.value().data(); }

namespace detail {

template <class State>
void require_finite(const State& s, const char* where) {
  for (double v : state_values(s)) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string(where) + ": non-finite state");
  }
}

inline double inf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// Dormand-Prince 5(4) tableau.
struct DP {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  // b - b_hat, where b_hat are the embedded 4th-order weights.
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
};

}  // namespace detail

/// One classical Runge-Kutta step (4 dynamics evaluations).
template <class State, class Dynamics>
State rk4_step(Dynamics& f, const State& y, double t, double h) {
  const State k1 = f(y, t);
  const State k2 = f(y + (0.5 * h) * k1, t + 0.5 * h);
  const State k3 = f(y + (0.5 * h) * k2, t + 0.5 * h);
  const State k4 = f(y + h * k3, t + h);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

template <class State>
struct Dopri5Step {
  State proposal;
  std::vector<double> error;  // embedded 4th-order local error estimate
  State derivative_end;       // f(t + h, proposal), reusable as the next k1
  int nfe = 0;
  std::vector<State> stages;  // k1, k3, k4, k5, k6 for dense output
};

/// One Dormand-Prince 5(4) trial step. Pass `k1 = f(y, t)` when it is known
/// from the previous accepted step (first-same-as-last), saving one call.
template <class State, class Dynamics>
Dopri5Step<State> dopri5_step(Dynamics& f, const State& y, double t, double h,
                              const std::optional<State>& k1_known = std::nullopt) {
  using detail::DP;
  if (!(h > 0.0)) throw SolverError("dopri5_step: step size must be positive");
  int nfe = 0;
  const State k1 = k1_known ? *k1_known : (++nfe, f(y, t));
  const State k2 = f(y + (h * DP::a21) * k1, t + DP::c2 * h);
  const State k3 = f(y + ((h * DP::a31) * k1 + (h * DP::a32) * k2), t + DP::c3 * h);
  const State k4 =
      f(y + ((h * DP::a41) * k1 + (h * DP::a42) * k2 + (h * DP::a43) * k3), t + DP::c4 * h);
  const State k5 = f(y + ((h * DP::a51) * k1 + (h * DP::a52) * k2 + (h * DP::a53) * k3 +
                          (h * DP::a54) * k4),
                     t + DP::c5 * h);
  const State k6 = f(y + ((h * DP::a61) * k1 + (h * DP::a62) * k2 + (h * DP::a63) * k3 +
                          (h * DP::a64) * k4 + (h * DP::a65) * k5),
                     t + h);
  State next = y + ((h * DP::b1) * k1 + (h * DP::b3) * k3 + (h * DP::b4) * k4 +
                    (h * DP::b5) * k5 + (h * DP::b6) * k6);
  State k7 = f(next, t + h);
  nfe += 6;

  const auto v1 = state_values(k1), v3 = state_values(k3), v4 = state_values(k4),
             v5 = state_values(k5), v6 = state_values(k6), v7 = state_values(k7);
  std::vector<double> error(v1.size());
  for (std::size_t i = 0; i < error.size(); ++i) {
    error[i] = h * (DP::e1 * v1[i] + DP::e3 * v3[i] + DP::e4 * v4[i] + DP::e5 * v5[i] +
                    DP::e6 * v6[i] + DP::e7 * v7[i]);
  }
  detail::require_finite(next, "dopri5_step");
  return {std::move(next), std::move(error), std::move(k7), nfe, {k1, k3, k4, k5, k6}};
}

/// Continuous extension of an accepted step: the state at t + theta * h,
/// theta in [0, 1], from Hairer's 4th-order dense output. It is a linear
/// combination of y and the stages, so linear invariants carry over.
template <class State>
State dopri5_interpolate(const State& y, const Dopri5Step<State>& step, double h, double theta) {
  using detail::DP;
  // Hairer's d coefficients.
  constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                   d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                   d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
  const double u = 1.0 - theta;
  const double a = theta - theta * u + 2.0 * theta * theta * u;
  const double b = theta * u * u;
  const double c = theta * theta * u;
  const double d = theta * theta * u * u;
  const auto& k = step.stages;
  return y + ((h * (DP::b1 * a + b + d1 * d)) * k[0] + (h * (DP::b3 * a + d3 * d)) * k[1] +
              (h * (DP::b4 * a + d4 * d)) * k[2] + (h * (DP::b5 * a + d5 * d)) * k[3] +
              (h * (DP::b6 * a + d6 * d)) * k[4] + (h * (d7 * d - c)) * step.derivative_end);
}

/// Step-size update factor min(5, max(0.2, 0.9 * err^(-1/5))).
inline double dopri5_step_factor(double scaled_error) {
  if (scaled_error <= 0.0) return 5.0;
  return std::min(5.0, std::max(0.2, 0.9 * std::pow(scaled_error, -0.2)));
}

/// PI variant after an accepted step: 0.9 * err^(-0.17) * prev^(0.04), same
/// clamp. `previous` is the scaled error of the last accepted step. The
/// integral term damps the step-size oscillation of stability-limited runs.
inline double dopri5_pi_factor(double scaled_error, double previous) {
  if (scaled_error <= 0.0) return 5.0;
  const double f = 0.9 * std::pow(scaled_error, -0.17) * std::pow(std::max(previous, 1e-4), 0.04);
  return std::min(5.0, std::max(0.2, f));
}

/// Error of a trial step in units of the tolerance; the step is accepted iff
/// the result is <= 1.
inline double dopri5_scaled_error(std::span<const double> error, std::span<const double> y0,
                                  std::span<const double> y1, double rtol, double atol) {
  const double scale = atol + rtol * std::max(detail::inf_norm(y0), detail::inf_norm(y1));
  return detail::inf_norm(error) / scale;
}

/// Integrates dz/dt = f(z, t) from times[0], returning the state at every
/// requested time. RK4 takes `substeps_per_interval` equal steps per output
/// interval; dopri5 adapts its step and reads output times off its dense output.
template <class State, class Dynamics>
Trajectory<State> integrate(Dynamics&& f, const State& z0, std::span<const double> times,
                            const SolverConfig& cfg) {
  cfg.validate();
  if (times.empty()) throw Error("integrate: no output times");
  for (std::size_t k = 1; k < times.size(); ++k) {
    if (!(times[k] > times[k - 1])) throw Error("integrate: times must be strictly increasing");
  }
  detail::require_finite(z0, "integrate");

  Trajectory<State> traj;
  traj.times.assign(times.begin(), times.end());
  traj.states.push_back(z0);
  if (times.size() == 1) return traj;

  auto charge = [&](int evaluations) {
    traj.nfe += evaluations;
    if (traj.nfe > cfg.max_nfe) {
      throw SolverError("integrate: exceeded max_nfe = " + std::to_string(cfg.max_nfe));
    }
  };

  if (cfg.method == Method::rk4) {
    State y = z0;
    for (std::size_t k = 1; k < times.size(); ++k) {
      const double h = (times[k] - times[k - 1]) / cfg.substeps_per_interval;
      for (int s = 0; s < cfg.substeps_per_interval; ++s) {
        charge(4);
        y = rk4_step(f, y, times[k - 1] + s * h, h);
        ++traj.accepted_steps;
      }
      detail::require_finite(y, "integrate");
      traj.states.push_back(y);
    }
    return traj;
  }

  // Steps run freely across the grid; output times inside a step are read
  // from the dense output, so the grid does not fragment the step sequence.
  State y = z0;
  double t = times.front();
  const double end = times.back();
  charge(1);
  State k1 = f(y, t);
  double h = 0.01 * (times[1] - times[0]);
  double prev_err = 1.0;
  std::size_t next = 1;
  while (next < times.size()) {
    const bool last = h >= end - t;
    const double step = last ? end - t : h;
    auto trial = dopri5_step(f, y, t, step, std::optional<State>(k1));
    charge(trial.nfe);
    const double err = dopri5_scaled_error(trial.error, state_values(y),
                                           state_values(trial.proposal), cfg.rtol, cfg.atol);
    if (err > 1.0) {
      ++traj.rejected_steps;
      h = step * std::min(1.0, dopri5_step_factor(err));
      if (h < 1e-12 * (times[next] - times[next - 1])) {
        throw SolverError("integrate: step size underflow at t = " + std::to_string(t));
      }
      continue;
    }
    ++traj.accepted_steps;
    const double t1 = last ? end : t + step;
    for (; next < times.size() && times[next] < t1; ++next) {
      traj.states.push_back(dopri5_interpolate(y, trial, step, (times[next] - t) / step));
    }
    if (next < times.size() && times[next] == t1) {
      traj.states.push_back(trial.proposal);
      ++next;
    }
    h = step * dopri5_pi_factor(err, prev_err);
    prev_err = err;
    t = t1;
    y = std::move(trial.proposal);
    k1 = std::move(trial.derivative_end);
  }
  return traj;
}

}  // namespace stden
