#pragma once

// Filtered Lagrangian boundary-integral scheme for 2D deep-water waves.
//
//   B_j = (1/(4 pi i)) sum_{p-j odd} gamma_p cot((rz_j - rz_p)/2) 2h + gamma_j / (2 (1 + D_rho s_j))
//   dz_j/dt   = conj(B_j)
//   dphi_j/dt = |B_j|^2 / 2 - g y_j
//   D_rho phi_j = gamma_j / 2 + Re[(1 + D_rho s_j) (1/(4 pi i)) sum_{p-j odd} ...]
//
// s = z - alpha is periodic and rz = alpha + rho(s). The potential may carry a
// linear part, phi = beta alpha + periodic (a uniform current); beta is constant
// in time because dphi/dt is periodic.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "nlwave/errors.hpp"
#include "nlwave/rk.hpp"
#include "nlwave/spectral.hpp"
#include "nlwave/tableau.hpp"

namespace nlwave {

struct WaterWaveState {
  CVector z;
  RVector phi;            // full potential samples, beta * alpha + periodic part
  double phi_slope = 0.0; // beta
  double t = 0.0;
  RVector gamma;          // last solved vortex-sheet strength
  bool gamma_valid = false;

  std::size_t size() const { return static_cast<std::size_t>(z.size()); }
};

struct WaterWaveConfig {
  double g = 1.0;
  Filter filter = Filter::exponential();
  double gammaTol = 1e-12;
  int gammaMaxIter = 200;
  bool denseFallback = true;
  std::size_t denseFallbackMaxN = 1024;
  ButcherTableau tableau = ButcherTableau::rk4();
  double tau = 1.0 / 4000.0;
  double T = 3.5;
  std::vector<double> snapshotTimes{0.0, 1.0, 2.0, 3.0, 3.5, 3.7};
  double guard = 1e6;
  std::size_t diagnosticsEvery = 1;
  // Scans treat a destroyed interface (gamma solve, Jacobian or quadrature
  // breakdown) as divergence instead of an error.
  bool breakdownIsDivergence = false;
  int threads = 1;

  void validate() const {
    if (!(gammaTol > 0.0)) throw ConfigError("gammaTol must be positive");
    if (gammaMaxIter < 1) throw ConfigError("gammaMaxIter must be at least 1");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (!(T >= 0.0)) throw ConfigError("T must be non-negative");
    if (diagnosticsEvery == 0) throw ConfigError("diagnosticsEvery must be positive");
  }
};

/// RK state of the scheme.
struct WaveVars {
  CVector z;
  RVector phi;

  WaveVars& operator+=(const WaveVars& o) {
    z += o.z;
    phi += o.phi;
    return *this;
  }
  friend WaveVars operator*(double a, const WaveVars& x) { return WaveVars{a * x.z, a * x.phi}; }
};

struct GammaResult {
  RVector gamma;
  int iterations = 0;
  double residual = 0.0;  // relative l2 change of the final Picard sweep
  bool dense = false;     // fallback solve was used
};

/// Cotangent kernel on the alternating grid, K(j,p) = (h/2pi)(E_j+E_p)/(E_j-E_p)
/// for p-j odd, E = exp(i rz). Only the even-row/odd-column block is stored;
/// the odd-row/even-column block is its negative transpose.
class CotKernel {
 public:
  CotKernel() = default;
  CotKernel(const CVector& rz, double h, int threads = 1) {
    const auto n = rz.size();
    if (n % 2 != 0 || n < 2) throw InvalidField("kernel needs an even node count");
    const auto m = n / 2;
    CVector E(n);
    for (Eigen::Index j = 0; j < n; ++j) E[j] = std::exp(Complex(0.0, 1.0) * rz[j]);
    const double c = h / (2.0 * std::numbers::pi);
    re_.resize(m, m);
    im_.resize(m, m);
    std::atomic<bool> singular{false};
    auto rows = [&](Eigen::Index a0, Eigen::Index a1) {
      for (Eigen::Index b = 0; b < m; ++b) {
        const Complex Ep = E[2 * b + 1];
        for (Eigen::Index a = a0; a < a1; ++a) {
          const Complex Ej = E[2 * a];
          const Complex d = Ej - Ep;
          if (std::abs(d) <= 1e-10 * std::max(std::abs(Ej), std::abs(Ep))) singular = true;
          const Complex k = c * (Ej + Ep) / d;
          re_(a, b) = k.real();
          im_(a, b) = k.imag();
        }
      }
    };
    if (threads > 1 && m >= 128) {
      std::vector<std::thread> pool;
      const Eigen::Index chunk = (m + threads - 1) / threads;
      for (int t = 0; t < threads; ++t) {
        const Eigen::Index a0 = t * chunk, a1 = std::min<Eigen::Index>(m, a0 + chunk);
        if (a0 < a1) pool.emplace_back([&, a0, a1] { rows(a0, a1); });
      }
      for (auto& th : pool) th.join();
    } else {
      rows(0, m);
    }
    if (singular || !re_.allFinite() || !im_.allFinite())
      throw QuadratureSingular("filtered nodes of opposite parity coincide (separation <= 1e-10)");
  }

  Eigen::Index size() const { return 2 * re_.rows(); }

  /// (K gamma)_j for real gamma.
  CVector apply(const RVector& gamma) const {
    const auto m = re_.rows();
    RVector ge(m), go(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      ge[a] = gamma[2 * a];
      go[a] = gamma[2 * a + 1];
    }
    const RVector er = re_ * go, ei = im_ * go;
    const RVector odr = -(re_.transpose() * ge), odi = -(im_.transpose() * ge);
    CVector out(2 * m);
    for (Eigen::Index a = 0; a < m; ++a) {
      out[2 * a] = Complex(er[a], ei[a]);
      out[2 * a + 1] = Complex(odr[a], odi[a]);
    }
    return out;
  }

  /// Dense N x N complex matrix.
  Eigen::MatrixXcd dense() const {
    const auto m = re_.rows();
    Eigen::MatrixXcd K = Eigen::MatrixXcd::Zero(2 * m, 2 * m);
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b) {
        const Complex k(re_(a, b), im_(a, b));
        K(2 * a, 2 * b + 1) = k;
        K(2 * b + 1, 2 * a) = -k;
      }
    return K;
  }

 private:
  Eigen::MatrixXd re_, im_;
};

/// Grid-bound operators of the scheme.
class WaterWaveModel {
 public:
  WaterWaveModel(std::size_t n, WaterWaveConfig cfg) : grid_(n), cfg_(std::move(cfg)) {
    cfg_.validate();
    alpha_ = grid_.nodes();
    rho_ = Multiplier::smoothing(grid_, cfg_.filter).symbol;
    dsym_ = Multiplier::derivative(grid_, cfg_.filter).symbol;
  }

  const Grid& grid() const { return grid_; }
  const WaterWaveConfig& config() const { return cfg_; }
  const RVector& alpha() const { return alpha_; }

  /// D_rho on a real periodic sequence; the Nyquist mode is dropped (its derivative is not real).
  RVector real_derivative(const RVector& f) const {
    return detail::idft(dsym_.cwiseProduct(detail::dft(f.cast<Complex>()))).real();
  }

  CVector periodic_part(const CVector& z) const { return z - alpha_.cast<Complex>(); }

  /// rz = alpha + rho(z - alpha).
  CVector filtered_positions(const CVector& z) const {
    return alpha_.cast<Complex>() + detail::idft(rho_.cwiseProduct(detail::dft(periodic_part(z))));
  }

  /// 1 + D_rho s, with D_rho applied to Re s and Im s separately.
  CVector jacobian(const CVector& z) const {
    const CVector s = periodic_part(z);
    const RVector dx = real_derivative(s.real()), dy = real_derivative(s.imag());
    CVector za(s.size());
    for (Eigen::Index j = 0; j < s.size(); ++j) za[j] = Complex(1.0 + dx[j], dy[j]);
    return za;
  }

  /// D_rho phi for phi = beta alpha + periodic.
  RVector potential_derivative(const RVector& phi, double beta) const {
    const RVector per = phi - beta * alpha_;
    return (real_derivative(per).array() + beta).matrix();
  }

  CotKernel kernel(const CVector& z) const { return CotKernel(filtered_positions(z), grid_.spacing(), cfg_.threads); }

  /// Fixed point gamma = 2 D_rho phi - 2 Re[za K gamma].
  GammaResult solve_gamma(const CotKernel& K, const CVector& za, const RVector& dphi, const RVector* warm) const {
    const auto n = dphi.size();
    const RVector rhs0 = 2.0 * dphi;
    GammaResult res;
    RVector g = (warm && warm->size() == n && warm->allFinite()) ? *warm : rhs0;
    double change = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= cfg_.gammaMaxIter; ++it) {
      const RVector gn = rhs0 - 2.0 * za.cwiseProduct(K.apply(g)).real();
      const double scale = std::max(gn.norm(), std::numeric_limits<double>::min());
      change = (gn - g).norm() / scale;
      g = gn;
      res.iterations = it;
      if (!std::isfinite(change)) break;
      if (change <= cfg_.gammaTol) {
        res.gamma = std::move(g);
        res.residual = change;
        return res;
      }
    }
    res.residual = change;
    if (!cfg_.denseFallback || static_cast<std::size_t>(n) > cfg_.denseFallbackMaxN)
      throw GammaSolveFailed(res.iterations, change);
    const Eigen::MatrixXd M =
        Eigen::MatrixXd::Identity(n, n) + 2.0 * (za.asDiagonal() * K.dense()).real();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);
    RVector gd = lu.solve(rhs0);
    if (!gd.allFinite()) throw GammaSolveFailed(res.iterations, change);
    const double r = (M * gd - rhs0).norm() / std::max(rhs0.norm(), std::numeric_limits<double>::min());
    if (!(r <= std::max(cfg_.gammaTol, 1e-10))) throw GammaSolveFailed(res.iterations, r);
    res.gamma = std::move(gd);
    res.residual = r;
    res.dense = true;
    return res;
  }

  /// Relative l2 residual of the gamma equation.
  double gamma_residual(const CVector& z, const RVector& phi, double beta, const RVector& gamma) const {
    const RVector rhs0 = 2.0 * potential_derivative(phi, beta);
    const RVector r = gamma - (rhs0 - 2.0 * jacobian(z).cwiseProduct(kernel(z).apply(gamma)).real());
    return r.norm() / std::max(gamma.norm(), std::numeric_limits<double>::min());
  }

  struct Evaluation {
    WaveVars d;
    RVector gamma;
    CVector za;
    CVector B;  // conj(dz/dt)
    int iterations = 0;
    bool dense = false;
  };

  Evaluation evaluate(const WaveVars& y, double beta, const RVector* warm) const {
    const CVector za = jacobian(y.z);
    for (Eigen::Index j = 0; j < za.size(); ++j)
      if (!(std::abs(za[j]) >= 1e-10)) throw JacobianDegenerate("|1 + D_rho s_j| < 1e-10 at node " + std::to_string(j));
    const CotKernel K = kernel(y.z);
    GammaResult gr = solve_gamma(K, za, potential_derivative(y.phi, beta), warm);
    Evaluation ev;
    const CVector ks = K.apply(gr.gamma);
    ev.B.resize(za.size());
    for (Eigen::Index j = 0; j < za.size(); ++j) ev.B[j] = ks[j] + gr.gamma[j] / (2.0 * za[j]);
    ev.d.z = ev.B.conjugate();
    ev.d.phi = 0.5 * ev.B.cwiseAbs2() - cfg_.g * y.z.imag();
    ev.gamma = std::move(gr.gamma);
    ev.za = za;
    ev.iterations = gr.iterations;
    ev.dense = gr.dense;
    return ev;
  }

 private:
  Grid grid_;
  WaterWaveConfig cfg_;
  RVector alpha_;
  CVector rho_;
  CVector dsym_;
};

// ---------------------------------------------------------------------------
// State-level operations

inline void check_state(const WaterWaveState& s) {
  if (s.z.size() != s.phi.size() || s.z.size() < 2 || s.z.size() % 2 != 0)
    throw InvalidField("z and phi must share one even length");
  if (!detail::all_finite(s.z) || !s.phi.allFinite()) throw InvalidField("state has non-finite samples");
}

/// (1/(4 pi i)) sum_{p-j odd} gamma_p cot((rz_j - rz_p)/2) 2h, evaluated directly with the complex cotangent.
inline Complex cot_kernel_sum(const WaterWaveState& s, const RVector& gamma, std::size_t j,
                              const WaterWaveConfig& cfg = {}) {
  check_state(s);
  const WaterWaveModel model(s.size(), cfg);
  const CVector rz = model.filtered_positions(s.z);
  const double h = model.grid().spacing();
  const auto n = static_cast<Eigen::Index>(s.size());
  const auto jj = static_cast<Eigen::Index>(j);
  Complex sum{0.0, 0.0};
  for (Eigen::Index p = 0; p < n; ++p) {
    if ((p - jj) % 2 == 0) continue;
    const Complex d = rz[jj] - rz[p];
    const Complex half = 0.5 * d;
    const Complex sn = std::sin(half);
    if (std::abs(d - std::numbers::pi * 2.0 * std::round(d.real() / (2.0 * std::numbers::pi))) <= 1e-10)
      throw QuadratureSingular("filtered nodes " + std::to_string(j) + " and " + std::to_string(p) + " coincide");
    sum += gamma[p] * std::cos(half) / sn;
  }
  return sum * (2.0 * h) / (4.0 * std::numbers::pi * Complex(0.0, 1.0));
}

/// Batched form of cot_kernel_sum for every j.
inline CVector cot_kernel_sums(const WaterWaveState& s, const RVector& gamma, const WaterWaveConfig& cfg = {}) {
  check_state(s);
  const WaterWaveModel model(s.size(), cfg);
  return model.kernel(s.z).apply(gamma);
}

inline GammaResult solve_gamma_detailed(const WaterWaveState& s, const WaterWaveConfig& cfg = {}) {
  check_state(s);
  const WaterWaveModel model(s.size(), cfg);
  return model.solve_gamma(model.kernel(s.z), model.jacobian(s.z), model.potential_derivative(s.phi, s.phi_slope),
                           s.gamma_valid ? &s.gamma : nullptr);
}

inline RVector solve_gamma(const WaterWaveState& s, const WaterWaveConfig& cfg = {}) {
  return solve_gamma_detailed(s, cfg).gamma;
}

/// Time derivative (dz/dt, dphi/dt); gamma is re-solved for the given state.
inline WaveVars waterwave_rhs(const WaterWaveState& s, const WaterWaveConfig& cfg = {}) {
  check_state(s);
  const WaterWaveModel model(s.size(), cfg);
  return model.evaluate(WaveVars{s.z, s.phi}, s.phi_slope, s.gamma_valid ? &s.gamma : nullptr).d;
}

// ---------------------------------------------------------------------------
// Initial data

/// State whose gamma equation is satisfied by gamma0: D_rho phi = gamma0/2 + Re[za K gamma0],
/// split into its mean (the slope beta) and a periodic part of mean zero.
inline WaterWaveState initial_from_gamma(const CVector& z, const RVector& gamma0, const WaterWaveConfig& cfg = {}) {
  if (z.size() != gamma0.size()) throw InvalidField("z and gamma must share one length");
  const WaterWaveModel model(static_cast<std::size_t>(z.size()), cfg);
  const auto n = z.size();
  const RVector dphi = 0.5 * gamma0 + model.jacobian(z).cwiseProduct(model.kernel(z).apply(gamma0)).real();
  const double beta = dphi.mean();
  const CVector dh = detail::dft((dphi.array() - beta).matrix().cast<Complex>());
  const CVector dsym = Multiplier::derivative(model.grid(), cfg.filter).symbol;
  CVector ph = CVector::Zero(n);
  for (Eigen::Index s = 1; s < n; ++s) {
    if (s == n / 2) continue;
    if (std::abs(dsym[s]) > 1e-14) ph[s] = dh[s] / dsym[s];
  }
  WaterWaveState st;
  st.z = z;
  st.phi = detail::idft(ph).real() + beta * model.alpha();
  st.phi_slope = beta;
  return st;
}

/// x = alpha, y = A cos alpha, gamma = 1 + A sin alpha.
inline WaterWaveState turnover_initial(std::size_t n, double amplitude, const WaterWaveConfig& cfg = {}) {
  const Grid grid(n);
  const RVector a = grid.nodes();
  CVector z(a.size());
  RVector g(a.size());
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    z[j] = Complex(a[j], amplitude * std::cos(a[j]));
    g[j] = 1.0 + amplitude * std::sin(a[j]);
  }
  return initial_from_gamma(z, g, cfg);
}

/// Flat surface z = alpha carrying a uniform sheet gamma0 (phi = gamma0 alpha / 2).
inline WaterWaveState flat_initial(std::size_t n, double gamma0) {
  const Grid grid(n);
  WaterWaveState st;
  st.z = grid.nodes().cast<Complex>();
  st.phi_slope = 0.5 * gamma0;
  st.phi = st.phi_slope * grid.nodes();
  return st;
}

// ---------------------------------------------------------------------------
// Time stepping

struct WaveDiagnostics {
  std::size_t step = 0;
  double t = 0.0;
  double minJacobian = 0.0;  // min_j (1 + Re D_rho s_j)
  double maxAbsY = 0.0;
  int gammaIters = 0;
  double energyProxy = 0.0;
  bool denseSolve = false;
};

struct WaveSnapshot {
  double t = 0.0;
  CVector z;
  RVector phi;
  RVector gamma;
};

struct WaterWaveRun {
  WaterWaveState final_state;
  std::vector<WaveSnapshot> snapshots;
  std::vector<WaveDiagnostics> diagnostics;
  std::size_t steps = 0;
  double growth_ratio = 1.0;
  double turnover_time = std::numeric_limits<double>::quiet_NaN();  // first t with minJacobian < 0
  int max_gamma_iters = 0;
  std::size_t dense_solves = 0;

  bool turned_over() const { return !std::isnan(turnover_time); }
};

using WaveObserver = std::function<void(const WaterWaveModel&, const WaterWaveState&, const WaveDiagnostics&)>;

namespace detail {

/// l2 size of the fluctuating parts of s and phi; the means drift with the current and are excluded.
inline double wave_norm(const WaterWaveModel& m, const WaveVars& y, double beta) {
  const double h = m.grid().spacing();
  const CVector s = m.periodic_part(y.z);
  const RVector per = y.phi - beta * m.alpha();
  return l2_norm((s.array() - s.mean()).matrix(), h) + l2_norm((per.array() - per.mean()).matrix().cast<Complex>(), h);
}

/// Kinetic plus potential energy in the frame moving with the uniform current beta:
/// 1/2 sum h [ (phi - beta x) Im(conj(z_a)(dz/dt - beta)) + g y^2 x_a ].
inline double energy_proxy(const WaterWaveModel& m, const WaveVars& y, double beta, const CVector& za,
                           const CVector& B) {
  const double h = m.grid().spacing();
  double e = 0.0;
  for (Eigen::Index j = 0; j < y.z.size(); ++j) {
    const double pt = y.phi[j] - beta * y.z[j].real();
    const Complex vel = std::conj(B[j]) - beta;
    const double vn = (std::conj(za[j]) * vel).imag();
    e += pt * vn + m.config().g * y.z[j].imag() * y.z[j].imag() * za[j].real();
  }
  return 0.5 * h * e;
}

}  // namespace detail

inline WaterWaveRun run_waterwave(const WaterWaveState& initial, const WaterWaveConfig& cfg,
                                  const WaveObserver& observer = {}) {
  check_state(initial);
  if (!cfg.tableau.is_explicit()) throw UnsupportedImplicit("the water-wave scheme supports explicit tableaus only");
  const WaterWaveModel model(initial.size(), cfg);
  const double beta = initial.phi_slope;
  const double tau = cfg.tau;

  // The last evaluation is memoized so the diagnostics at an accepted state
  // double as the first stage of the next step.
  RVector warm = initial.gamma_valid ? initial.gamma : RVector();
  WaveVars last_in;
  WaterWaveModel::Evaluation last_ev;
  bool have_last = false;
  auto eval = [&](const WaveVars& y) -> const WaterWaveModel::Evaluation& {
    if (have_last && y.z == last_in.z && y.phi == last_in.phi) return last_ev;
    last_ev = model.evaluate(y, beta, warm.size() ? &warm : nullptr);
    warm = last_ev.gamma;
    last_in = y;
    have_last = true;
    return last_ev;
  };
  const RhsFn<WaveVars> f = [&](double, const WaveVars& y) { return eval(y).d; };

  WaterWaveRun run;
  WaveVars y{initial.z, initial.phi};
  const double n0 = detail::wave_norm(model, y, beta);
  const double ref = n0 > 0.0 ? n0 : 1.0;
  const std::size_t nsteps = cfg.T > 0.0 ? step_count(tau, cfg.T) : 0;
  const double t0 = initial.t;
  double t = t0;

  std::vector<bool> taken(cfg.snapshotTimes.size(), false);
  auto record = [&](std::size_t k) {
    const auto& ev = eval(y);
    run.max_gamma_iters = std::max(run.max_gamma_iters, ev.iterations);
    if (ev.dense) ++run.dense_solves;
    WaveDiagnostics d;
    d.step = k;
    d.t = t;
    d.minJacobian = ev.za.real().minCoeff();
    d.maxAbsY = y.z.imag().cwiseAbs().maxCoeff();
    d.gammaIters = ev.iterations;
    d.denseSolve = ev.dense;
    d.energyProxy = detail::energy_proxy(model, y, beta, ev.za, ev.B);
    if (d.minJacobian < 0.0 && !run.turned_over()) run.turnover_time = t;
    if (k % cfg.diagnosticsEvery == 0 || k == nsteps) run.diagnostics.push_back(d);
    for (std::size_t i = 0; i < cfg.snapshotTimes.size(); ++i) {
      if (taken[i]) continue;
      if (std::abs(t - cfg.snapshotTimes[i]) <= 0.5 * tau * (1.0 + 1e-9)) {
        taken[i] = true;
        run.snapshots.push_back(WaveSnapshot{t, y.z, y.phi, ev.gamma});
      }
    }
    if (observer) {
      WaterWaveState s{y.z, y.phi, beta, t, ev.gamma, true};
      observer(model, s, d);
    }
  };

  try {
    record(0);
    for (std::size_t k = 0; k < nsteps; ++k) {
      const double dt = (k + 1 == nsteps) ? (t0 + cfg.T) - t : tau;
      y = rk_step(cfg.tableau, f, y, t, dt);
      t = (k + 1 == nsteps) ? t0 + cfg.T : t0 + static_cast<double>(k + 1) * tau;
      const double nk = detail::wave_norm(model, y, beta);
      if (!std::isfinite(nk) || !detail::all_finite(y.z) || !y.phi.allFinite() || nk > cfg.guard * ref)
        throw Diverged(k + 1, t, nk / ref);
      run.steps = k + 1;
      record(k + 1);
    }
  } catch (const Diverged&) {
    throw;
  } catch (const Error& e) {
    const bool breakdown = dynamic_cast<const GammaSolveFailed*>(&e) || dynamic_cast<const JacobianDegenerate*>(&e) ||
                           dynamic_cast<const QuadratureSingular*>(&e);
    if (breakdown && cfg.breakdownIsDivergence)
      throw Diverged(run.steps + 1, t, std::numeric_limits<double>::infinity());
    throw;
  }

  run.final_state = WaterWaveState{y.z, y.phi, beta, t, have_last ? last_ev.gamma : RVector(), have_last};
  run.growth_ratio = detail::wave_norm(model, y, beta) / ref;
  return run;
}

}  // namespace nlwave
