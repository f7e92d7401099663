#pragma once

// Method-of-lines solver for the nonlocal hyperbolic system
//   u_t = sigma L_rho v + b D_rho u + g1
//   eps v_t = -c u + b D_rho v + g2
// on a periodic grid, with the exact constant-coefficient oracle, the energy
// functional, the operator-spectrum diagnostic and WKB initial data.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "nlwave/errors.hpp"
#include "nlwave/rk.hpp"
#include "nlwave/spectral.hpp"
#include "nlwave/stability.hpp"
#include "nlwave/tableau.hpp"

namespace nlwave {

struct CoefficientSet {
  using RealFn = std::function<double(double theta, double t)>;
  using ComplexFn = std::function<Complex(double theta, double t)>;

  RealFn sigma;
  RealFn c;
  RealFn b;  // transport, empty when absent
  ComplexFn g1;
  ComplexFn g2;
  double epsilon = 1.0;
  double sigma0 = 0.0;
  double c0 = 0.0;
  // Set by the constant factory; enables the modal implicit solver and the exact oracle.
  bool constant = false;
  double sigma_value = 0.0;
  double c_value = 0.0;

  bool has_transport() const { return static_cast<bool>(b); }
  bool has_forcing() const { return static_cast<bool>(g1) || static_cast<bool>(g2); }

  static CoefficientSet constant_coefficients(double c, double sigma, double epsilon = 1.0) {
    CoefficientSet s;
    s.sigma = [sigma](double, double) { return sigma; };
    s.c = [c](double, double) { return c; };
    s.epsilon = epsilon;
    s.sigma0 = sigma;
    s.c0 = c;
    s.constant = true;
    s.sigma_value = sigma;
    s.c_value = c;
    return s;
  }

  /// c = exp(cos(theta + t)), sigma = 2 + sin(theta + t).
  static CoefficientSet variable_example() {
    CoefficientSet s;
    s.sigma = [](double th, double t) { return 2.0 + std::sin(th + t); };
    s.c = [](double th, double t) { return std::exp(std::cos(th + t)); };
    s.sigma0 = 1.0;
    s.c0 = std::exp(-1.0);
    return s;
  }
};

/// Pair of grid vectors (u, v); the RK state of the system.
struct UV {
  CVector u;
  CVector v;

  UV& operator+=(const UV& o) {
    u += o.u;
    v += o.v;
    return *this;
  }
  friend UV operator*(double a, const UV& x) { return UV{a * x.u, a * x.v}; }
  double norm(double h) const { return l2_norm(u, h) + l2_norm(v, h); }
  bool finite() const { return detail::all_finite(u) && detail::all_finite(v); }
};

struct SolverState {
  SpectralField u;
  SpectralField v;
  double t = 0.0;

  SolverState(SpectralField u_, SpectralField v_, double t_ = 0.0) : u(std::move(u_)), v(std::move(v_)), t(t_) {
    if (!(u.grid() == v.grid())) throw InvalidField("u and v must share one grid");
  }
  const Grid& grid() const { return u.grid(); }
  UV pair() const { return UV{u.samples(), v.samples()}; }
  static SolverState from_pair(const Grid& g, const UV& p, double t) {
    return SolverState(SpectralField(g, p.u), SpectralField(g, p.v), t);
  }
};

/// Semi-discrete right-hand side bound to a grid, coefficients and filter.
class NonlocalSystem {
 public:
  NonlocalSystem(Grid grid, CoefficientSet coeffs, Filter filter = Filter::none())
      : grid_(grid), coeffs_(std::move(coeffs)), filter_(std::move(filter)) {
    if (!coeffs_.sigma || !coeffs_.c) throw ConfigError("sigma and c are required");
    if (!(coeffs_.epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (coeffs_.has_transport() && !(filter_.endpoint_zero && filter_.endpoint_flat))
      throw FilterRequired("transport term needs a filter with rho(pi) = 0 and rho'(pi) = 0");
    lam_ = Multiplier::half_laplacian(grid_, filter_).symbol;
    dsym_ = Multiplier::derivative(grid_, filter_).symbol;
    theta_ = grid_.nodes();
  }

  const Grid& grid() const { return grid_; }
  const CoefficientSet& coefficients() const { return coeffs_; }
  const Filter& filter() const { return filter_; }
  const CVector& lambda_symbol() const { return lam_; }

  RVector sample(const CoefficientSet::RealFn& f, double t, const char* what) const {
    RVector out(theta_.size());
    for (Eigen::Index j = 0; j < theta_.size(); ++j) out[j] = f(theta_[j], t);
    if (out.minCoeff() <= 0.0 || !out.allFinite())
      throw Error(std::string("coefficient ") + what + " must be positive on the grid");
    return out;
  }

  UV operator()(double t, const UV& y) const {
    const double inv_eps = 1.0 / coeffs_.epsilon;
    UV d;
    const CVector lv = detail::idft(lam_.cwiseProduct(detail::dft(y.v)));
    if (coeffs_.constant) {
      d.u = coeffs_.sigma_value * lv;
      d.v = (-coeffs_.c_value * inv_eps) * y.u;
    } else {
      const RVector sg = sample(coeffs_.sigma, t, "sigma");
      const RVector cc = sample(coeffs_.c, t, "c");
      d.u = sg.cast<Complex>().cwiseProduct(lv);
      d.v = (-inv_eps) * cc.cast<Complex>().cwiseProduct(y.u);
    }
    if (coeffs_.has_transport()) {
      RVector bb(theta_.size());
      for (Eigen::Index j = 0; j < theta_.size(); ++j) bb[j] = coeffs_.b(theta_[j], t);
      const CVector du = detail::idft(dsym_.cwiseProduct(detail::dft(y.u)));
      const CVector dv = detail::idft(dsym_.cwiseProduct(detail::dft(y.v)));
      d.u += bb.cast<Complex>().cwiseProduct(du);
      d.v += inv_eps * bb.cast<Complex>().cwiseProduct(dv);
    }
    if (coeffs_.g1)
      for (Eigen::Index j = 0; j < theta_.size(); ++j) d.u[j] += coeffs_.g1(theta_[j], t);
    if (coeffs_.g2)
      for (Eigen::Index j = 0; j < theta_.size(); ++j) d.v[j] += inv_eps * coeffs_.g2(theta_[j], t);
    return d;
  }

  /// Exact per-mode solve of implicit stage equations; constant coefficients without transport or forcing.
  StageSolver<UV> modal_stage_solver() const {
    if (!coeffs_.constant || coeffs_.has_transport() || coeffs_.has_forcing())
      throw UnsupportedImplicit("implicit tableaus need constant coefficients without transport or forcing");
    struct Cache {
      std::mutex m;
      double tau = std::numeric_limits<double>::quiet_NaN();
      const ButcherTableau* tab = nullptr;
      std::vector<Eigen::PartialPivLU<Eigen::MatrixXd>> lu;
    };
    auto cache = std::make_shared<Cache>();
    const double a_scale = coeffs_.sigma_value;
    const double cb = -coeffs_.c_value / coeffs_.epsilon;
    const CVector lam = lam_;
    return [cache, a_scale, cb, lam](const ButcherTableau& t, const RhsFn<UV>&, const UV& y, double, double tau) {
      const int s = t.stages();
      const auto n = lam.size();
      std::lock_guard<std::mutex> lock(cache->m);
      if (cache->tau != tau || cache->tab != &t || cache->lu.size() != static_cast<std::size_t>(n)) {
        cache->lu.clear();
        cache->lu.reserve(static_cast<std::size_t>(n));
        for (Eigen::Index k = 0; k < n; ++k) {
          Eigen::Matrix2d A;
          A << 0.0, a_scale * lam[k].real(), cb, 0.0;
          Eigen::MatrixXd S = Eigen::MatrixXd::Identity(2 * s, 2 * s);
          for (int i = 0; i < s; ++i)
            for (int j = 0; j < s; ++j) S.block<2, 2>(2 * i, 2 * j) -= tau * t.G(i, j) * A;
          if (std::abs(S.determinant()) < 1e-14) throw PoleOfStabilityFunction("modal stage system is singular");
          cache->lu.emplace_back(S);
        }
        cache->tau = tau;
        cache->tab = &t;
      }
      const CVector uh = detail::dft(y.u), vh = detail::dft(y.v);
      std::vector<CVector> Ku(static_cast<std::size_t>(s), CVector(n)), Kv(static_cast<std::size_t>(s), CVector(n));
      Eigen::MatrixXd rhs(2 * s, 2);
      for (Eigen::Index k = 0; k < n; ++k) {
        for (int i = 0; i < s; ++i) {
          rhs(2 * i, 0) = uh[k].real();
          rhs(2 * i, 1) = uh[k].imag();
          rhs(2 * i + 1, 0) = vh[k].real();
          rhs(2 * i + 1, 1) = vh[k].imag();
        }
        const Eigen::MatrixXd Y = cache->lu[static_cast<std::size_t>(k)].solve(rhs);
        const double a = a_scale * lam[k].real();
        for (int i = 0; i < s; ++i) {
          const Complex yu(Y(2 * i, 0), Y(2 * i, 1)), yv(Y(2 * i + 1, 0), Y(2 * i + 1, 1));
          Ku[static_cast<std::size_t>(i)][k] = a * yv;
          Kv[static_cast<std::size_t>(i)][k] = cb * yu;
        }
      }
      std::vector<UV> K;
      K.reserve(static_cast<std::size_t>(s));
      for (int i = 0; i < s; ++i)
        K.push_back(UV{detail::idft(Ku[static_cast<std::size_t>(i)]), detail::idft(Kv[static_cast<std::size_t>(i)])});
      return K;
    };
  }

 private:
  Grid grid_;
  CoefficientSet coeffs_;
  Filter filter_;
  CVector lam_;
  CVector dsym_;
  RVector theta_;
};

/// Time derivative of a state (the returned state carries the same t).
inline SolverState rhs(const SolverState& state, const CoefficientSet& coeffs, const Filter& filter = Filter::none()) {
  const NonlocalSystem sys(state.grid(), coeffs, filter);
  return SolverState::from_pair(state.grid(), sys(state.t, state.pair()), state.t);
}

struct StepInfo {
  std::size_t step;
  double t;
  const UV& state;
};

struct IntegrateOptions {
  double guard = 1e6;
  std::vector<std::function<void(const StepInfo&)>> monitors;
};

struct IntegrateResult {
  SolverState final_state;
  std::size_t steps = 0;
  double growth_ratio = 1.0;  // final norm / initial norm
};

inline IntegrateResult integrate(const NonlocalSystem& sys, const SolverState& state0, const ButcherTableau& tab,
                                 double tau, double T, const IntegrateOptions& opt = {}) {
  StageSolver<UV> solver;
  if (!tab.is_explicit()) solver = sys.modal_stage_solver();
  const double h = sys.grid().spacing();
  UV y = state0.pair();
  const double n0 = y.norm(h);
  const double ref = n0 > 0.0 ? n0 : 1.0;
  const std::size_t n = step_count(tau, T);
  const double t0 = state0.t;
  for (const auto& m : opt.monitors) m(StepInfo{0, t0, y});
  double t = t0;
  for (std::size_t k = 0; k < n; ++k) {
    const double dt = (k + 1 == n) ? (t0 + T) - t : tau;
    y = rk_step(tab, sys, y, t, dt, solver);
    t = (k + 1 == n) ? t0 + T : t0 + static_cast<double>(k + 1) * tau;
    const double nk = y.norm(h);
    if (!std::isfinite(nk) || !y.finite() || nk > opt.guard * ref) throw Diverged(k + 1, t, nk / ref);
    for (const auto& m : opt.monitors) m(StepInfo{k + 1, t, y});
  }
  IntegrateResult res{SolverState::from_pair(sys.grid(), y, t), n, y.norm(h) / ref};
  return res;
}

inline IntegrateResult integrate(const SolverState& state0, const CoefficientSet& coeffs, const Filter& filter,
                                 const ButcherTableau& tab, double tau, double T, const IntegrateOptions& opt = {}) {
  return integrate(NonlocalSystem(state0.grid(), coeffs, filter), state0, tab, tau, T, opt);
}

/// Per-mode exact solution for constant sigma, c (the filter replaces |kappa| by |kappa| rho).
inline std::pair<SpectralField, SpectralField> exact_constant_solution(const SpectralField& u0, const SpectralField& v0,
                                                                        double c, double sigma, double epsilon, double t,
                                                                        const Filter& filter = Filter::none()) {
  const Grid& g = u0.grid();
  const CVector lam = Multiplier::half_laplacian(g, filter).symbol;
  const CVector& uh = u0.spectrum();
  const CVector& vh = v0.spectrum();
  CVector ut(uh.size()), vt(vh.size());
  for (Eigen::Index s = 0; s < uh.size(); ++s) {
    const double a = sigma * lam[s].real();
    if (a == 0.0) {
      ut[s] = uh[s];
      vt[s] = vh[s] - (c / epsilon) * uh[s] * t;
      continue;
    }
    const double w = std::sqrt(sigma * c * lam[s].real() / epsilon);
    const double cw = std::cos(w * t), sw = std::sin(w * t);
    ut[s] = uh[s] * cw + (a / w) * vh[s] * sw;
    vt[s] = vh[s] * cw - (c / (epsilon * w)) * uh[s] * sw;
  }
  return {SpectralField::from_spectrum(g, ut), SpectralField::from_spectrum(g, vt)};
}

struct EnergyRecord {
  double t = 0.0;
  double E = 0.0;
  double lambda_vv = 0.0;  // <L_rho v, v>
  double vv = 0.0;         // ||v||^2
  double cu = 0.0;         // <(c/sigma) u, u>
  /// 1/2 (eps <L_rho v, v> + <(c/sigma) u, u>): invariant of the constant-coefficient flow.
  double invariant = 0.0;
};

inline EnergyRecord energy(const UV& y, const NonlocalSystem& sys, double t) {
  const Grid& g = sys.grid();
  const double h = g.spacing();
  const CVector lv = detail::idft(sys.lambda_symbol().cwiseProduct(detail::dft(y.v)));
  EnergyRecord r;
  r.t = t;
  r.lambda_vv = inner(lv, y.v, h).real();
  r.vv = std::pow(l2_norm(y.v, h), 2);
  const auto& co = sys.coefficients();
  if (co.constant) {
    r.cu = (co.c_value / co.sigma_value) * std::pow(l2_norm(y.u, h), 2);
  } else {
    const RVector ratio = sys.sample(co.c, t, "c").cwiseQuotient(sys.sample(co.sigma, t, "sigma"));
    r.cu = h * (ratio.array() * y.u.cwiseAbs2().array()).sum();
  }
  r.E = 0.5 * (r.lambda_vv + r.vv + r.cu);
  r.invariant = 0.5 * (co.epsilon * r.lambda_vv + r.cu);
  return r;
}

inline EnergyRecord energy(const SolverState& state, const CoefficientSet& coeffs, const Filter& filter = Filter::none()) {
  return energy(state.pair(), NonlocalSystem(state.grid(), coeffs, filter), state.t);
}

struct OperatorSpectrum {
  std::vector<Complex> eigenvalues;
  double maxReal = 0.0;     // real parts below `resolution` count as 0
  double maxImag = 0.0;
  double rawMaxReal = 0.0;  // unfloored eigensolver output
  double resolution = 0.0;  // sqrt(eps) * ||A||_F
};

/// Dense spectrum of (u, v) -> (sigma L_rho v, -c u / eps) at time t.
inline OperatorSpectrum operator_spectrum(const CoefficientSet& coeffs, double t, const Grid& grid,
                                          const Filter& filter = Filter::none()) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  if (n > 2048) throw ConfigError("operator_spectrum is limited to N <= 2048");
  CoefficientSet bare = coeffs;
  bare.b = nullptr;
  bare.g1 = nullptr;
  bare.g2 = nullptr;
  const NonlocalSystem sys(grid, bare, filter);
  Eigen::MatrixXd A(2 * n, 2 * n);
  for (Eigen::Index col = 0; col < 2 * n; ++col) {
    UV e{CVector::Zero(n), CVector::Zero(n)};
    (col < n ? e.u[col] : e.v[col - n]) = 1.0;
    const UV d = sys(t, e);
    A.col(col).head(n) = d.u.real();
    A.col(col).tail(n) = d.v.real();
  }
  Eigen::EigenSolver<Eigen::MatrixXd> es(A, false);
  OperatorSpectrum out;
  // The mean mode is a 2x2 Jordan block at 0, so a backward-stable solver
  // only resolves real parts to about sqrt(eps) ||A||.
  out.resolution = std::sqrt(std::numeric_limits<double>::epsilon()) * A.norm();
  out.rawMaxReal = -std::numeric_limits<double>::infinity();
  out.maxReal = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const Complex lam = es.eigenvalues()[i];
    out.eigenvalues.push_back(lam);
    out.rawMaxReal = std::max(out.rawMaxReal, lam.real());
    out.maxReal = std::max(out.maxReal, std::abs(lam.real()) <= out.resolution ? 0.0 : lam.real());
    out.maxImag = std::max(out.maxImag, std::abs(lam.imag()));
  }
  return out;
}

struct WkbOptions {
  bool strict_mean = false;  // throw instead of dropping a nonzero mean of u_t
  double sigma = 1.0;
  Filter filter = Filter::none();
};

struct WkbInitial {
  SolverState state;
  Complex dropped_mean{0.0, 0.0};
};

inline Complex wkb_profile(double x, double eps) {
  const double amp = std::exp(-100.0 * (x - 0.5) * (x - 0.5));
  const double phase = std::log(20.0 * std::cosh(5.0 * x - 2.5)) / eps;
  return amp * std::exp(Complex(0.0, phase));
}

/// u(x,0) = u_t(x,0) = Gaussian-windowed WKB wave; v inverts sigma L_rho off the mean.
inline WkbInitial wkb_initial(const Grid& grid, double eps, const WkbOptions& opt = {}) {
  if (!(eps > 0.0)) throw ConfigError("epsilon must be positive");
  if (grid.spacing() > eps / 4.0 * (1.0 + 1e-12))
    throw AliasingGuard("grid spacing " + std::to_string(grid.spacing()) + " exceeds eps/4 = " + std::to_string(eps / 4.0));
  const auto n = static_cast<Eigen::Index>(grid.size());
  CVector u(n);
  for (Eigen::Index j = 0; j < n; ++j) u[j] = wkb_profile(grid.node(static_cast<std::size_t>(j)), eps);
  const CVector uth = detail::dft(u);
  const CVector lam = Multiplier::half_laplacian(grid, opt.filter).symbol;
  WkbInitial out{SolverState(SpectralField(grid, u), SpectralField(grid)), uth[0]};
  if (opt.strict_mean && std::abs(uth[0]) > 1e-12 * uth.cwiseAbs().maxCoeff())
    throw InconsistentInitialData("u_t has nonzero mean " + std::to_string(std::abs(uth[0])) +
                                  "; sigma L v cannot produce it");
  CVector vh = CVector::Zero(n);
  for (Eigen::Index s = 1; s < n; ++s) {
    const double a = opt.sigma * lam[s].real();
    if (a > 0.0) vh[s] = uth[s] / a;
  }
  out.state.v = SpectralField(grid, detail::idft(vh));
  return out;
}

}  // namespace nlwave
