#pragma once

// Linear stability of Runge-Kutta methods on the Fourier-mode system
//   d/dt (u_k, v_k) = Q (u_k, v_k),   Q = [[0, sqrt(nu)], [-sqrt(nu), 0]],
// whose one-step amplification matrix has norm
//   psi(tau, nu) = sqrt(|det(I + z (G - e w^T)^2)| / |det(I + z G^2)|),  z = tau^2 nu.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nlwave/errors.hpp"
#include "nlwave/tableau.hpp"

namespace nlwave {

struct GrowthQuery {
  double tau = 0.0;
  double nu = 0.0;
  double z() const { return tau * tau * nu; }
};

namespace detail {

using LMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic, 0, 16, 16>;

inline long double det_ld(const LMatrix& a) {
  if (a.rows() == 0) return 1.0L;
  return Eigen::PartialPivLU<LMatrix>(a).determinant();
}

inline LMatrix to_ld(const Eigen::MatrixXd& m) { return m.cast<long double>(); }

}  // namespace detail

/// f(z) = 1 + z w^T (I - zG)^{-1} e.
inline std::complex<double> stability_function(const ButcherTableau& t, std::complex<double> z) {
  const auto s = t.stages();
  const Eigen::MatrixXcd A = Eigen::MatrixXcd::Identity(s, s) - z * t.G.cast<std::complex<double>>();
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(A);
  lu.setThreshold(1e-14);
  if (!lu.isInvertible()) throw PoleOfStabilityFunction("I - zG is singular");
  const Eigen::VectorXcd x = lu.solve(Eigen::VectorXcd::Ones(s));
  return 1.0 + z * t.w.cast<std::complex<double>>().dot(x);
}

/// f(z) = det(I - zG + z e w^T) / det(I - zG).
inline std::complex<double> stability_function_det(const ButcherTableau& t, std::complex<double> z) {
  const auto s = t.stages();
  const Eigen::MatrixXcd Gc = t.G.cast<std::complex<double>>();
  const Eigen::MatrixXcd ewT = Eigen::VectorXcd::Ones(s) * t.w.cast<std::complex<double>>().transpose();
  const Eigen::MatrixXcd I = Eigen::MatrixXcd::Identity(s, s);
  const std::complex<double> den = (I - z * Gc).determinant();
  if (std::abs(den) < 1e-14) throw PoleOfStabilityFunction("I - zG is singular");
  return (I - z * Gc + z * ewT).determinant() / den;
}

/// psi(tau, nu).  Implicit tableaus use the determinant ratio.  For explicit
/// ones f is the polynomial 1 + sum_k (w^T G^{k-1} e) x^k and, Q being normal,
/// psi = |f(i tau sqrt(nu))|; this avoids the cancellation inside det(I + z B^2)
/// when the weights are large.
inline double growth_factor(const ButcherTableau& t, const GrowthQuery& q) {
  const auto s = t.stages();
  const long double z = static_cast<long double>(q.tau) * q.tau * q.nu;
  const detail::LMatrix G = detail::to_ld(t.G);
  if (t.is_explicit()) {
    const Eigen::Matrix<long double, Eigen::Dynamic, 1, 0, 16, 1> w = t.w.cast<long double>();
    Eigen::Matrix<long double, Eigen::Dynamic, 1, 0, 16, 1> v = Eigen::Matrix<long double, Eigen::Dynamic, 1, 0, 16, 1>::Ones(s);
    std::vector<long double> coef{1.0L};
    for (int k = 0; k < s; ++k) {
      coef.push_back(w.dot(v));
      v = G * v;
    }
    const std::complex<long double> x(0.0L, std::sqrt(z));
    std::complex<long double> f = 0.0L;
    for (auto it = coef.rbegin(); it != coef.rend(); ++it) f = f * x + *it;
    return static_cast<double>(std::abs(f));
  }
  const detail::LMatrix B = G - detail::LMatrix::Ones(s, 1) * t.w.cast<long double>().transpose();
  const detail::LMatrix I = detail::LMatrix::Identity(s, s);
  const long double num = std::abs(detail::det_ld(I + z * (B * B)));
  const long double den = std::abs(detail::det_ld(I + z * (G * G)));
  if (den < 1e-14L) throw PoleOfStabilityFunction("det(I + tau^2 nu G^2) vanishes");
  return static_cast<double>(std::sqrt(num / den));
}

inline double growth_factor(const ButcherTableau& t, double tau, double nu) { return growth_factor(t, GrowthQuery{tau, nu}); }

/// One RK step on u' = Qu with the stage equations solved exactly (in long
/// double); returns the 2x2 amplification matrix.
inline Eigen::Matrix2d brute_force_growth(const ButcherTableau& t, double tau, double nu) {
  using LD = long double;
  using M2 = Eigen::Matrix<LD, 2, 2>;
  using V2 = Eigen::Matrix<LD, 2, 1>;
  using LVec = Eigen::Matrix<LD, Eigen::Dynamic, 1>;
  const auto s = t.stages();
  const LD r = std::sqrt(static_cast<LD>(nu));
  M2 Q;
  Q << 0.0L, r, -r, 0.0L;
  // Stage slopes K_i = Q (y + tau sum_j G_ij K_j)  =>  (I - tau G (x) Q) K = (e (x) Q) y.
  Eigen::Matrix<LD, Eigen::Dynamic, Eigen::Dynamic> A = Eigen::Matrix<LD, Eigen::Dynamic, Eigen::Dynamic>::Identity(2 * s, 2 * s);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) A.block(2 * i, 2 * j, 2, 2) -= static_cast<LD>(tau) * static_cast<LD>(t.G(i, j)) * Q;
  Eigen::FullPivLU<Eigen::Matrix<LD, Eigen::Dynamic, Eigen::Dynamic>> lu(A);
  lu.setThreshold(1e-14L);
  if (!lu.isInvertible()) throw PoleOfStabilityFunction("stage system is singular");

  Eigen::Matrix2d M;
  for (int col = 0; col < 2; ++col) {
    const V2 y = V2::Unit(col);
    LVec rhs(2 * s);
    for (int i = 0; i < s; ++i) rhs.segment(2 * i, 2) = Q * y;
    const LVec K = lu.solve(rhs);
    V2 y1 = y;
    for (int i = 0; i < s; ++i) y1 += static_cast<LD>(tau) * static_cast<LD>(t.w[i]) * K.segment(2 * i, 2);
    M.col(col) = y1.cast<double>();
  }
  return M;
}

inline double spectral_norm(const Eigen::Matrix2d& M) {
  return Eigen::JacobiSVD<Eigen::Matrix2d>(M).singularValues()(0);
}

struct ExtentOptions {
  double step = 1e-3;
  double cap = 1e3;
  double resolution = 1e-9;
  double tolerance = 1e-12;
};

/// Largest y with psi <= 1 + tol on all of [0, y] along tau*sqrt(nu) = y; +inf if it holds up to the cap.
inline double imag_axis_extent(const ButcherTableau& t, const ExtentOptions& opt = {}) {
  auto ok = [&](double y) {
    try {
      return growth_factor(t, GrowthQuery{y, 1.0}) <= 1.0 + opt.tolerance;
    } catch (const PoleOfStabilityFunction&) {
      return false;
    }
  };
  const auto n = static_cast<long>(std::ceil(opt.cap / opt.step));
  double good = 0.0;
  for (long i = 1; i <= n; ++i) {
    const double y = std::min(static_cast<double>(i) * opt.step, opt.cap);
    if (ok(y)) {
      good = y;
      continue;
    }
    // Growth immediately off the origin: no imaginary-axis segment.
    if (i == 1) return 0.0;
    double lo = good, hi = y;
    while (hi - lo > opt.resolution) {
      const double mid = 0.5 * (lo + hi);
      (ok(mid) ? lo : hi) = mid;
    }
    return lo;
  }
  return std::numeric_limits<double>::infinity();
}

/// Largest stable step under the square-root CFL law, tau <= C1 sqrt(eps h / (c sigma pi)).
inline double cfl_threshold_from_extent(double extent, double c, double sigma, double h, double epsilon = 1.0) {
  if (!(extent > 0.0))
    throw NoImaginaryAxisStability("stability region has no imaginary-axis segment; use a tau <= C h step");
  if (std::isinf(extent)) return std::numeric_limits<double>::infinity();
  return extent * std::sqrt(epsilon * h / (c * sigma * std::numbers::pi));
}

inline double cfl_threshold(const ButcherTableau& t, double c, double sigma, double h, double epsilon = 1.0) {
  return cfl_threshold_from_extent(imag_axis_extent(t), c, sigma, h, epsilon);
}

enum class StabilityClass { StrongAsTauTo0, WeakAsTauTo0 };

inline const char* to_string(StabilityClass c) {
  return c == StabilityClass::StrongAsTauTo0 ? "strong" : "weak";
}

struct StabilityReport {
  StabilityClass classification = StabilityClass::WeakAsTauTo0;
  double trG2 = 0.0;
  double trGewT2 = 0.0;
  double imagExtent = 0.0;
  std::vector<std::string> notes;
};

inline StabilityReport classify(const ButcherTableau& t, const ExtentOptions& opt = {}) {
  StabilityReport rep;
  const auto s = t.stages();
  const Eigen::MatrixXd B = t.G - Eigen::VectorXd::Ones(s) * t.w.transpose();
  rep.trG2 = (t.G * t.G).trace();
  rep.trGewT2 = (B * B).trace();
  // Traces that agree to rounding are a tie, and ties are weak.
  const double tie = 64.0 * std::numeric_limits<double>::epsilon() *
                     std::max({1.0, (t.G * t.G).cwiseAbs().sum(), (B * B).cwiseAbs().sum()});
  rep.classification =
      rep.trG2 > rep.trGewT2 + tie ? StabilityClass::StrongAsTauTo0 : StabilityClass::WeakAsTauTo0;
  rep.imagExtent = imag_axis_extent(t, opt);
  for (const auto& w : t.warnings()) rep.notes.push_back(w);
  if (std::isinf(rep.imagExtent)) rep.notes.push_back("psi <= 1 on the imaginary axis (unbounded up to cap)");
  else if (rep.imagExtent == 0.0) rep.notes.push_back("no imaginary-axis stability: only the tau <= C h regime applies");
  else if (rep.classification == StabilityClass::WeakAsTauTo0)
    rep.notes.push_back("weak by the trace test, strongly stable under the square-root CFL condition");
  return rep;
}

/// Finite poles of f(z): reciprocals of the nonzero eigenvalues of G.
inline std::vector<std::complex<double>> stability_poles(const ButcherTableau& t) {
  std::vector<std::complex<double>> out;
  if (t.is_explicit()) return out;
  Eigen::EigenSolver<Eigen::MatrixXd> es(t.G, false);
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const auto lam = es.eigenvalues()[i];
    if (std::abs(lam) > 1e-12) out.push_back(1.0 / lam);
  }
  return out;
}

}  // namespace nlwave
