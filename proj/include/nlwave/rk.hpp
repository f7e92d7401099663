#pragma once

// Generic Runge-Kutta stepping over any vector-space-like state.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <concepts>
#include <functional>
#include <string>
#include <vector>

#include "nlwave/errors.hpp"
#include "nlwave/tableau.hpp"

namespace nlwave {

template <class S>
concept RKState = std::copy_constructible<S> && requires(S a, const S& b, double c) {
  { a += c * b };
};

template <class S>
using RhsFn = std::function<S(double, const S&)>;

/// Solves the stage equations K_i = f(t + p_i tau, y + tau sum_j G_ij K_j) for an implicit tableau.
template <class S>
using StageSolver = std::function<std::vector<S>(const ButcherTableau&, const RhsFn<S>&, const S&, double, double)>;

namespace detail {

template <RKState S>
S stage_value(const ButcherTableau& t, const std::vector<S>& K, const S& y, int i, double tau) {
  S yi = y;
  for (int j = 0; j < static_cast<int>(K.size()); ++j)
    if (t.G(i, j) != 0.0) yi += (tau * t.G(i, j)) * K[static_cast<std::size_t>(j)];
  return yi;
}

template <RKState S>
S combine(const ButcherTableau& t, const std::vector<S>& K, const S& y, double tau) {
  S y1 = y;
  for (int i = 0; i < t.stages(); ++i)
    if (t.w[i] != 0.0) y1 += (tau * t.w[i]) * K[static_cast<std::size_t>(i)];
  return y1;
}

}  // namespace detail

template <RKState S, class Rhs>
S rk_step(const ButcherTableau& t, Rhs&& rhs, const S& y, double time, double tau,
          const StageSolver<S>& solver = {}) {
  if (!t.is_explicit()) {
    if (!solver) throw UnsupportedImplicit("tableau '" + t.name + "' is implicit and no stage solver was given");
    const RhsFn<S> f = [&](double tt, const S& x) { return S(rhs(tt, x)); };
    return detail::combine(t, solver(t, f, y, time, tau), y, tau);
  }
  std::vector<S> K;
  K.reserve(static_cast<std::size_t>(t.stages()));
  for (int i = 0; i < t.stages(); ++i) {
    // Explicit: only already-computed slopes contribute.
    S yi = y;
    for (int j = 0; j < i; ++j)
      if (t.G(i, j) != 0.0) yi += (tau * t.G(i, j)) * K[static_cast<std::size_t>(j)];
    K.push_back(S(rhs(time + t.p[i] * tau, yi)));
  }
  return detail::combine(t, K, y, tau);
}

/// Picard iteration on the stage slopes; converges when tau * Lip(f) * |G| < 1.
template <RKState S, class Norm>
StageSolver<S> fixed_point_stage_solver(Norm norm, double tol = 1e-13, int max_iter = 500) {
  return [=](const ButcherTableau& t, const RhsFn<S>& f, const S& y, double time, double tau) {
    const auto s = static_cast<std::size_t>(t.stages());
    std::vector<S> K(s, f(time, y));
    for (int it = 0; it < max_iter; ++it) {
      std::vector<S> next;
      next.reserve(s);
      double change = 0.0, scale = 0.0;
      for (std::size_t i = 0; i < s; ++i) {
        next.push_back(f(time + t.p[static_cast<Eigen::Index>(i)] * tau,
                         detail::stage_value(t, K, y, static_cast<int>(i), tau)));
        S d = next[i];
        d += -1.0 * K[i];
        change = std::max(change, static_cast<double>(norm(d)));
        scale = std::max(scale, static_cast<double>(norm(next[i])));
      }
      K = std::move(next);
      if (!std::isfinite(change)) break;
      if (change <= tol * std::max(scale, 1.0)) return K;
    }
    throw StageSolveFailed("stage fixed-point iteration did not converge for tableau '" + t.name + "'");
  };
}

/// Number of steps of size tau covering T; the last one may be shortened.
inline std::size_t step_count(double tau, double T) {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (T <= 0.0) return 0;
  const double r = T / tau;
  const double n = std::ceil(r - 1e-9 * std::max(1.0, r));
  return static_cast<std::size_t>(std::max(1.0, n));
}


}  // namespace nlwave
