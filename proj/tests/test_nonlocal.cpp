#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "nlwave/nonlocal.hpp"

using namespace nlwave;

namespace {

constexpr double pi = std::numbers::pi;

CVector sample(const Grid& g, auto&& f) {
  CVector v(static_cast<Eigen::Index>(g.size()));
  for (std::size_t j = 0; j < g.size(); ++j) v[static_cast<Eigen::Index>(j)] = Complex(f(g.node(j)));
  return v;
}

SolverState make_state(const Grid& g, auto&& u, auto&& v) {
  return SolverState(SpectralField(g, sample(g, u)), SpectralField(g, sample(g, v)));
}

double max_abs(const CVector& v) { return v.cwiseAbs().maxCoeff(); }

// Convergence-study data.
SolverState smooth_data(const Grid& g) {
  return make_state(
      g, [](double t) { return std::exp(std::sin(t)) + std::cos(t); }, [](double t) { return std::cos(t) * std::cos(t); });
}

}  // namespace

TEST(Rhs, CosineInVGivesCosineInU) {
  const Grid g(32);
  const auto s = make_state(g, [](double) { return 0.0; }, [](double t) { return std::cos(t); });
  const auto d = rhs(s, CoefficientSet::constant_coefficients(3.0, 1.0));
  EXPECT_LE(max_abs(d.u.samples() - sample(g, [](double t) { return std::cos(t); })), 1e-13);
  EXPECT_LE(max_abs(d.v.samples()), 1e-13);
}

TEST(Rhs, ConstantsLoseTheMeanThroughLambda) {
  const Grid g(16);
  const auto s = make_state(g, [](double) { return 1.0; }, [](double) { return 1.0; });
  const auto d = rhs(s, CoefficientSet::constant_coefficients(3.0, 1.0));
  EXPECT_LE(max_abs(d.u.samples()), 1e-14);
  EXPECT_LE(max_abs(d.v.samples().array() + 3.0), 1e-14);
}

TEST(Rhs, EpsilonScalesTheSecondEquation) {
  const Grid g(16);
  const auto s = make_state(g, [](double t) { return std::cos(t); }, [](double) { return 0.0; });
  const auto d = rhs(s, CoefficientSet::constant_coefficients(1.0, 1.0, 1.0 / 16.0));
  EXPECT_LE(max_abs(d.v.samples() + 16.0 * sample(g, [](double t) { return std::cos(t); })), 1e-12);
}

TEST(Rhs, VariableCoefficientsArePointwise) {
  const Grid g(32);
  const auto co = CoefficientSet::variable_example();
  const auto s = make_state(g, [](double t) { return std::sin(t); }, [](double t) { return std::cos(2.0 * t); });
  const double t = 0.7;
  SolverState st = s;
  st.t = t;
  const auto d = rhs(st, co);
  // L cos 2t = 2 cos 2t.
  const CVector ue = sample(g, [&](double th) { return (2.0 + std::sin(th + t)) * 2.0 * std::cos(2.0 * th); });
  const CVector ve = sample(g, [&](double th) { return -std::exp(std::cos(th + t)) * std::sin(th); });
  EXPECT_LE(max_abs(d.u.samples() - ue), 1e-12);
  EXPECT_LE(max_abs(d.v.samples() - ve), 1e-12);
}

TEST(Rhs, TransportNeedsAZeroFlatFilter) {
  const Grid g(32);
  auto co = CoefficientSet::constant_coefficients(1.0, 1.0);
  co.b = [](double, double) { return 0.5; };
  const auto s = make_state(g, [](double t) { return std::cos(t); }, [](double) { return 0.0; });
  EXPECT_THROW(rhs(s, co), FilterRequired);
  EXPECT_THROW(rhs(s, co, Filter::central_difference()), FilterRequired);
  const auto d = rhs(s, co, Filter::exponential());
  // b D_rho cos = -0.5 rho(h) sin at the first mode.
  const double r1 = Filter::exponential()(g.phase(1));
  EXPECT_LE(max_abs(d.u.samples() - sample(g, [&](double t) { return -0.5 * r1 * std::sin(t); })), 1e-12);
}

TEST(Rhs, ForcingIsAdded) {
  const Grid g(16);
  auto co = CoefficientSet::constant_coefficients(1.0, 1.0, 0.5);
  co.g1 = [](double th, double) { return Complex(std::sin(th), 0.0); };
  co.g2 = [](double, double) { return Complex(0.0, 1.0); };
  const auto s = make_state(g, [](double) { return 0.0; }, [](double) { return 0.0; });
  const auto d = rhs(s, co);
  EXPECT_LE(max_abs(d.u.samples() - sample(g, [](double t) { return std::sin(t); })), 1e-15);
  EXPECT_LE(max_abs(d.v.samples().array() - Complex(0.0, 2.0)), 1e-15);
}

TEST(Rhs, NonPositiveCoefficientIsRejected) {
  const Grid g(16);
  CoefficientSet co = CoefficientSet::constant_coefficients(1.0, 1.0);
  co.constant = false;
  co.c = [](double th, double) { return std::cos(th); };
  const auto s = make_state(g, [](double) { return 1.0; }, [](double) { return 1.0; });
  EXPECT_THROW(rhs(s, co), Error);
}

TEST(ExactSolution, PlaneWave) {
  const Grid g(32);
  const auto s = make_state(g, [](double t) { return std::cos(t); }, [](double) { return 0.0; });
  for (double t : {0.3, 1.0, 2.5}) {
    const auto [u, v] = exact_constant_solution(s.u, s.v, 3.0, 1.0, 1.0, t);
    const CVector ue = sample(g, [&](double th) { return std::cos(th) * std::cos(std::sqrt(3.0) * t); });
    EXPECT_LE(max_abs(u.samples() - ue), 1e-14);
  }
}

TEST(ExactSolution, MeanModeDriftsLinearly) {
  const Grid g(8);
  const auto s = make_state(g, [](double) { return 1.0; }, [](double) { return 0.0; });
  const auto [u, v] = exact_constant_solution(s.u, s.v, 3.0, 1.0, 1.0, 0.8);
  EXPECT_LE(max_abs(u.samples().array() - 1.0), 1e-15);
  EXPECT_LE(max_abs(v.samples().array() + 2.4), 1e-14);
}

TEST(ExactSolution, StartingFromV) {
  const Grid g(16);
  const auto s = make_state(g, [](double) { return 0.0; }, [](double t) { return std::cos(t); });
  const double t = 1.3;
  const auto [u, v] = exact_constant_solution(s.u, s.v, 3.0, 1.0, 1.0, t);
  const CVector ue = sample(g, [&](double th) { return std::cos(th) * std::sin(std::sqrt(3.0) * t) / std::sqrt(3.0); });
  EXPECT_LE(max_abs(u.samples() - ue), 1e-14);
}

TEST(ExactSolution, SatisfiesTheSystemByFiniteDifferences) {
  const Grid g(32);
  const auto s0 = smooth_data(g);
  const auto co = CoefficientSet::constant_coefficients(3.0, 1.0, 0.25);
  const double t = 0.4, dt = 1e-4;
  const auto [up, vp] = exact_constant_solution(s0.u, s0.v, 3.0, 1.0, 0.25, t + dt);
  const auto [um, vm] = exact_constant_solution(s0.u, s0.v, 3.0, 1.0, 0.25, t - dt);
  const auto [u, v] = exact_constant_solution(s0.u, s0.v, 3.0, 1.0, 0.25, t);
  const auto d = rhs(SolverState(u, v, t), co);
  const double scale = max_abs(d.u.samples()) + max_abs(d.v.samples());
  EXPECT_LE(max_abs((up.samples() - um.samples()) / (2 * dt) - d.u.samples()), 1e-6 * scale);
  EXPECT_LE(max_abs((vp.samples() - vm.samples()) / (2 * dt) - d.v.samples()), 1e-6 * scale);
}

TEST(Integrate, Rk4MatchesOracle) {
  const Grid g(32);
  const auto s = make_state(g, [](double t) { return std::cos(t); }, [](double) { return 0.0; });
  const auto co = CoefficientSet::constant_coefficients(3.0, 1.0);
  const auto res = integrate(s, co, Filter::none(), ButcherTableau::rk4(), 1e-3, 2.0);
  const auto [u, v] = exact_constant_solution(s.u, s.v, 3.0, 1.0, 1.0, 2.0);
  EXPECT_LE(max_abs(res.final_state.u.samples() - u.samples()), 1e-8);
  EXPECT_LE(max_abs(res.final_state.v.samples() - v.samples()), 1e-8);
  EXPECT_DOUBLE_EQ(res.final_state.t, 2.0);
}

TEST(Integrate, LastStepLandsOnT) {
  const Grid g(16);
  const auto s = smooth_data(g);
  const auto co = CoefficientSet::constant_coefficients(3.0, 1.0);
  std::vector<double> times;
  IntegrateOptions opt;
  opt.monitors.push_back([&](const StepInfo& i) { times.push_back(i.t); });
  const auto res = integrate(s, co, Filter::none(), ButcherTableau::rk4(), 0.3, 1.0, opt);
  EXPECT_EQ(res.steps, 4u);
  ASSERT_EQ(times.size(), 5u);
  EXPECT_DOUBLE_EQ(times.back(), 1.0);
  EXPECT_NEAR(times[3], 0.9, 1e-15);
}

TEST(Integrate, ForwardEulerDivergesOnTheVariableSetup) {
  // Smooth data plus seeded white noise, so the top modes start at O(1/sqrt N).
  const Grid g(128);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> noise(-1.0, 1.0);
  const auto s = make_state(
      g, [&](double t) { return std::exp(std::sin(t)) + std::cos(t) + noise(rng); },
      [&](double t) { return std::cos(t) * std::cos(t) + noise(rng); });
  try {
    integrate(s, CoefficientSet::variable_example(), Filter::none(), ButcherTableau::forward_euler(), 0.05, 10.0);
    FAIL() << "expected Diverged";
  } catch (const Diverged& d) {
    EXPECT_GT(d.step(), 0u);
    EXPECT_GT(d.ratio(), 1e6);
  }
}

TEST(Integrate, ZeroDataStaysZero) {
  const Grid g(32);
  const auto s = make_state(g, [](double) { return 0.0; }, [](double) { return 0.0; });
  for (const auto& tab : {ButcherTableau::rk4(), ButcherTableau::forward_euler()}) {
    const auto res = integrate(s, CoefficientSet::variable_example(), Filter::none(), tab, 0.01, 1.0);
    EXPECT_EQ(max_abs(res.final_state.u.samples()), 0.0);
    EXPECT_EQ(max_abs(res.final_state.v.samples()), 0.0);
  }
}

TEST(Integrate, ImplicitNeedsConstantCoefficients) {
  const Grid g(16);
  const auto s = smooth_data(g);
  EXPECT_THROW(integrate(s, CoefficientSet::variable_example(), Filter::none(), ButcherTableau::crank_nicolson(), 0.1, 1.0),
               UnsupportedImplicit);
}

TEST(Integrate, ImplicitModalSolverMatchesGrowthMatrix) {
  // One step of each implicit tableau on a single Fourier mode against the 2x2 brute-force matrix.
  const Grid g(16);
  const int k = 3;
  const double c = 3.0, sigma = 1.0, tau = 0.2;
  const auto s = make_state(g, [&](double t) { return std::cos(k * t); }, [&](double t) { return 0.5 * std::cos(k * t); });
  for (const auto& tab : {ButcherTableau::backward_euler(), ButcherTableau::crank_nicolson()}) {
    const auto res = integrate(s, CoefficientSet::constant_coefficients(c, sigma), Filter::none(), tab, tau, tau);
    // In scaled variables (sqrt(c) u, sqrt(sigma k) v) the mode system is the antisymmetric Q.
    const double nu = c * sigma * k;
    const Eigen::Matrix2d M = brute_force_growth(tab, tau, nu);
    const Eigen::Vector2d y0(std::sqrt(c) * 1.0, std::sqrt(sigma * k) * 0.5);
    const Eigen::Vector2d y1 = M * y0;
    const double u1 = res.final_state.u.samples()[0].real();
    const double v1 = res.final_state.v.samples()[0].real();
    EXPECT_NEAR(u1, y1[0] / std::sqrt(c), 1e-12) << tab.name;
    EXPECT_NEAR(v1, y1[1] / std::sqrt(sigma * k), 1e-12) << tab.name;
  }
}

TEST(Integrate, TemporalOrders) {
  const Grid g(32);
  const auto s = smooth_data(g);
  const auto co = CoefficientSet::constant_coefficients(3.0, 1.0);
  const auto [ue, ve] = exact_constant_solution(s.u, s.v, 3.0, 1.0, 1.0, 1.0);
  auto err = [&](const ButcherTableau& tab, double tau) {
    const auto r = integrate(s, co, Filter::none(), tab, tau, 1.0);
    const double h = g.spacing();
    return l2_norm(r.final_state.u.samples() - ue.samples(), h) + l2_norm(r.final_state.v.samples() - ve.samples(), h);
  };
  struct Case {
    ButcherTableau tab;
    double order;
    double tau;
  };
  for (const auto& c : {Case{ButcherTableau::forward_euler(), 1.0, 0.0025}, Case{ButcherTableau::backward_euler(), 1.0, 0.01},
                        Case{ButcherTableau::crank_nicolson(), 2.0, 0.01}, Case{ButcherTableau::rk4(), 4.0, 0.02}}) {
    const double p = std::log2(err(c.tab, c.tau) / err(c.tab, c.tau / 2));
    EXPECT_NEAR(p, c.order, 0.2) << c.tab.name;
  }
}

TEST(Dispersion, ZeroCrossingsMatchOmega) {
  // u = cos(k theta) cos(omega t): zero crossings at t = (m + 1/2) pi / omega.
  const Grid g(32);
  const double c = 3.0, sigma = 1.0;
  for (int k : {1, 4, 9}) {
    const double omega = std::sqrt(c * sigma * k);
    const auto s = make_state(g, [&](double t) { return std::cos(k * t); }, [](double) { return 0.0; });
    const double tau = 1e-3 / omega;
    std::vector<double> crossings;
    double prev = 1.0, tprev = 0.0;
    IntegrateOptions opt;
    opt.monitors.push_back([&](const StepInfo& i) {
      const double a = i.state.u[0].real();
      if (i.step > 0 && (a > 0) != (prev > 0)) {
        // Linear interpolation between steps of 1e-3 / omega.
        crossings.push_back(tprev + (i.t - tprev) * prev / (prev - a));
      }
      prev = a;
      tprev = i.t;
    });
    integrate(s, CoefficientSet::constant_coefficients(c, sigma), Filter::none(), ButcherTableau::rk4(), tau,
              3.2 * pi / omega, opt);
    ASSERT_GE(crossings.size(), 3u) << k;
    const double period = crossings[2] - crossings[0];
    EXPECT_NEAR(2.0 * pi / period, omega, 1e-6 * omega) << k;
  }
}

TEST(Energy, ZeroState) {
  const Grid g(16);
  const auto s = make_state(g, [](double) { return 0.0; }, [](double) { return 0.0; });
  const auto e = energy(s, CoefficientSet::variable_example());
  EXPECT_EQ(e.E, 0.0);
  EXPECT_EQ(e.invariant, 0.0);
}

TEST(Energy, HalfSumOfComponentsAndNonNegative) {
  const Grid g(64);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d;
  CVector u(64), v(64);
  for (int j = 0; j < 64; ++j) {
    u[j] = {d(rng), d(rng)};
    v[j] = {d(rng), d(rng)};
  }
  const SolverState s(SpectralField(g, u), SpectralField(g, v), 0.3);
  for (const auto& co : {CoefficientSet::variable_example(), CoefficientSet::constant_coefficients(3.0, 1.0)}) {
    const auto e = energy(s, co, Filter::exponential());
    EXPECT_GE(e.lambda_vv, 0.0);
    EXPECT_GE(e.E, 0.0);
    EXPECT_NEAR(e.E, 0.5 * (e.lambda_vv + e.vv + e.cu), 1e-12 * e.E);
  }
}

TEST(Energy, ConstantCoefficientInvariantIsConserved) {
  const Grid g(128);
  const auto s = smooth_data(g);
  const auto co = CoefficientSet::constant_coefficients(3.0, 1.0);
  const NonlocalSystem sys(g, co);
  const double tau = cfl_threshold(ButcherTableau::rk4(), 3.0, 1.0, g.spacing()) / 4.0;
  const double e0 = energy(s.pair(), sys, 0.0).invariant;
  double worst = 0.0;
  IntegrateOptions opt;
  opt.monitors.push_back(
      [&](const StepInfo& i) { worst = std::max(worst, std::abs(energy(i.state, sys, i.t).invariant - e0) / e0); });
  integrate(sys, s, ButcherTableau::rk4(), tau, 2.0, opt);
  EXPECT_LE(worst, 1e-6);
}

TEST(Energy, VariableCoefficientsFollowAGronwallShape) {
  const Grid g(64);
  const auto s = smooth_data(g);
  const auto co = CoefficientSet::variable_example();
  const NonlocalSystem sys(g, co, Filter::exponential());
  std::vector<double> ts, es;
  IntegrateOptions opt;
  opt.monitors.push_back([&](const StepInfo& i) {
    ts.push_back(i.t);
    es.push_back(std::sqrt(energy(i.state, sys, i.t).E));
  });
  integrate(sys, s, ButcherTableau::rk4(), 0.01, 4.0, opt);
  // Fit the smallest C1 (C2 = 0) for which sqrt(E(t)) <= sqrt(E(0)) exp(C1 t / 2) holds, then check
  // it is a finite rate and the bound is attained somewhere (bounded growth, not conservation).
  double c1 = 0.0;
  for (std::size_t i = 1; i < ts.size(); ++i) c1 = std::max(c1, 2.0 * std::log(es[i] / es[0]) / ts[i]);
  EXPECT_TRUE(std::isfinite(c1));
  EXPECT_LT(c1, 5.0);
  for (std::size_t i = 0; i < ts.size(); ++i) EXPECT_LE(es[i], es[0] * std::exp(c1 * ts[i] / 2.0) * (1 + 1e-12));
}

TEST(OperatorSpectrum, ConstantCoefficientsArePurelyImaginary) {
  const Grid g(32);
  const auto sp = operator_spectrum(CoefficientSet::constant_coefficients(3.0, 1.0), 0.0, g);
  EXPECT_EQ(sp.maxReal, 0.0);
  EXPECT_NEAR(sp.maxImag, std::sqrt(3.0 * 16.0), 1e-9);
  // Every nonzero eigenvalue is +-i sqrt(3|k|) for some k.
  for (const auto& lam : sp.eigenvalues) {
    if (std::abs(lam) < 1e-6) continue;
    const double k = lam.imag() * lam.imag() / 3.0;
    EXPECT_NEAR(k, std::round(k), 1e-8);
  }
}

TEST(OperatorSpectrum, MaxImagGrowsBySqrtTwo) {
  const auto co = CoefficientSet::constant_coefficients(3.0, 1.0);
  const double a = operator_spectrum(co, 0.0, Grid(32)).maxImag;
  const double b = operator_spectrum(co, 0.0, Grid(64)).maxImag;
  EXPECT_NEAR(b / a, std::sqrt(2.0), 1e-10);
}

TEST(OperatorSpectrum, VariableCoefficientsStayBounded) {
  const auto co = CoefficientSet::variable_example();
  std::vector<double> scaled;
  for (std::size_t n : {32u, 64u, 128u}) {
    const Grid g(n);
    const auto sp = operator_spectrum(co, 0.0, g);
    EXPECT_LE(sp.maxReal, 5.0) << n;
    scaled.push_back(sp.maxImag * std::sqrt(g.spacing()));
  }
  const auto [lo, hi] = std::minmax_element(scaled.begin(), scaled.end());
  EXPECT_LE(*hi / *lo, 1.3);
}

TEST(Wkb, AmplitudeAndWindow) {
  const double eps = 1.0 / 16.0;
  const Grid g(256, 1.0);
  const auto w = wkb_initial(g, eps);
  const CVector& u = w.state.u.samples();
  for (std::size_t j = 0; j < g.size(); ++j) {
    const double x = g.node(j);
    EXPECT_NEAR(std::abs(u[static_cast<Eigen::Index>(j)]), std::exp(-100.0 * (x - 0.5) * (x - 0.5)), 1e-14);
  }
  EXPECT_NEAR(std::abs(u[128]), 1.0, 1e-15);
  EXPECT_LE(max_abs(u), 1.0);
  EXPECT_NEAR(std::abs(wkb_profile(0.6, eps)), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(std::abs(wkb_profile(0.4, eps)), std::exp(-1.0), 1e-15);
}

TEST(Wkb, SpectrumSitsBelowPhaseSpeed) {
  const double eps = 1.0 / 64.0;
  const Grid g(1024, 1.0);
  const auto w = wkb_initial(g, eps);
  const CVector& uh = w.state.u.spectrum();
  // Gaussian window e^{-100 x^2} has spectral width ~ 2 sqrt(100) * a few; allow 6 standard deviations.
  const double bound = 5.0 / eps + 6.0 * std::sqrt(200.0);
  double inside = 0.0, total = 0.0;
  for (Eigen::Index s = 0; s < uh.size(); ++s) {
    const double kap = std::abs(g.wavenumber(g.index_of_slot(static_cast<std::size_t>(s))));
    total += std::norm(uh[s]);
    if (kap <= bound) inside += std::norm(uh[s]);
  }
  EXPECT_GE(inside / total, 1.0 - 1e-10);
}

TEST(Wkb, VReproducesTheProfileAsUt) {
  const double eps = 1.0 / 32.0;
  const Grid g(256, 1.0);
  const auto w = wkb_initial(g, eps);
  const auto d = rhs(w.state, CoefficientSet::constant_coefficients(1.0, 1.0, eps));
  const CVector expected = w.state.u.samples().array() - w.dropped_mean;
  EXPECT_LE(max_abs(d.u.samples() - expected), 1e-10);
  // The phase is stationary at x = 0.5, so the mean is not small.
  EXPECT_NEAR(std::abs(w.dropped_mean), std::abs(w.state.u.spectrum()[0]), 1e-15);
}

TEST(Wkb, Guards) {
  EXPECT_THROW(wkb_initial(Grid(32, 1.0), 1.0 / 16.0), AliasingGuard);
  EXPECT_NO_THROW(wkb_initial(Grid(64, 1.0), 1.0 / 16.0));
  WkbOptions strict;
  strict.strict_mean = true;
  EXPECT_THROW(wkb_initial(Grid(64, 1.0), 1.0 / 16.0, strict), InconsistentInitialData);
}
