#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "nlwave/stability.hpp"
#include "nlwave/tableau.hpp"

using namespace nlwave;
using cd = std::complex<double>;

namespace {

ButcherTableau random_explicit(int s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(s, s);
  for (int i = 1; i < s; ++i)
    for (int j = 0; j < i; ++j) G(i, j) = u(rng);
  Eigen::VectorXd w(s), p(s);
  for (int i = 0; i < s; ++i) w[i] = u(rng);
  w /= w.sum();
  p = G.rowwise().sum();
  return ButcherTableau::make("random", G, w, p);
}

ButcherTableau random_implicit(int s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Eigen::MatrixXd G(s, s);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) G(i, j) = u(rng);
  Eigen::VectorXd w = Eigen::VectorXd::Constant(s, 1.0 / s);
  return ButcherTableau::make("random-implicit", G, w, G.rowwise().sum());
}

// Independent oracle: the stability polynomial of an explicit method, 1 + sum_k z^k w^T G^(k-1) e.
cd explicit_polynomial(const ButcherTableau& t, cd z) {
  const int s = t.stages();
  Eigen::VectorXd v = Eigen::VectorXd::Ones(s);
  cd acc = 1.0, zk = 1.0;
  for (int k = 1; k <= s; ++k) {
    zk *= z;
    acc += zk * t.w.dot(v);
    v = t.G * v;
  }
  return acc;
}

}  // namespace

TEST(StabilityFunction, ForwardEuler) {
  const auto fe = ButcherTableau::forward_euler();
  for (cd z : {cd(0.3, 0), cd(-2, 1), cd(0, 5)}) EXPECT_LE(std::abs(stability_function(fe, z) - (1.0 + z)), 1e-15);
}

TEST(StabilityFunction, RK4IsTruncatedExponential) {
  const auto rk4 = ButcherTableau::rk4();
  for (cd z : {cd(0.5, 0), cd(-1, 2), cd(0, 2.8), cd(-2.7, -0.4)}) {
    const cd expect = 1.0 + z + z * z / 2.0 + z * z * z / 6.0 + z * z * z * z / 24.0;
    EXPECT_LE(std::abs(stability_function(rk4, z) - expect), 1e-14);
  }
}

TEST(StabilityFunction, CrankNicolson) {
  const auto cn = ButcherTableau::crank_nicolson();
  for (cd z : {cd(0.5, 0), cd(-3, 1), cd(0, 7)}) {
    EXPECT_LE(std::abs(stability_function(cn, z) - (1.0 + z / 2.0) / (1.0 - z / 2.0)), 1e-14);
  }
}

TEST(StabilityFunction, PoleThrows) {
  EXPECT_THROW(stability_function(ButcherTableau::backward_euler(), cd(1.0, 0.0)), PoleOfStabilityFunction);
  EXPECT_THROW(stability_function(ButcherTableau::crank_nicolson(), cd(2.0, 0.0)), PoleOfStabilityFunction);
  EXPECT_THROW(stability_function_det(ButcherTableau::crank_nicolson(), cd(2.0, 0.0)), PoleOfStabilityFunction);
}

TEST(StabilityFunction, DeterminantFormAgreesWithSolveForm) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 10; ++trial) {
    const auto t = trial % 2 ? random_explicit(2 + trial % 5, rng) : random_implicit(1 + trial % 4, rng);
    for (int k = 0; k < 100; ++k) {
      const cd z(u(rng), u(rng));
      cd a, b;
      try {
        a = stability_function(t, z);
        b = stability_function_det(t, z);
      } catch (const PoleOfStabilityFunction&) {
        continue;
      }
      EXPECT_LE(std::abs(a - b), 1e-10 * std::max(1.0, std::abs(a)));
    }
  }
}

TEST(StabilityFunction, ExplicitMatchesPolynomialOracle) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = random_explicit(1 + trial % 6, rng);
    const cd z(u(rng), u(rng));
    EXPECT_LE(std::abs(stability_function(t, z) - explicit_polynomial(t, z)), 1e-12 * std::max(1.0, std::abs(z)));
  }
}

TEST(GrowthFactor, RK4ClosedForm) {
  const auto rk4 = ButcherTableau::rk4();
  for (int i = 0; i <= 120; ++i) {
    const double z = 0.1 * i;
    const double expect = std::sqrt(z * z * z * z / 576.0 - z * z * z / 72.0 + 1.0);
    EXPECT_NEAR(growth_factor(rk4, GrowthQuery{1.0, z}), expect, 1e-13);
  }
  EXPECT_LE(growth_factor(rk4, GrowthQuery{1.0, 8.0}), 1.0);
  EXPECT_NEAR(growth_factor(rk4, GrowthQuery{1.0, 8.0}), 1.0, 1e-15);
}

TEST(GrowthFactor, WeightedEulerHalfIsOne) {
  const auto we = ButcherTableau::weighted_euler(0.5);
  for (double tau : {1e-3, 0.1, 1.0, 7.0})
    for (double nu : {0.0, 0.5, 10.0, 1e4}) EXPECT_NEAR(growth_factor(we, tau, nu), 1.0, 1e-14);
}

TEST(GrowthFactor, ForwardEuler) {
  const auto fe = ButcherTableau::forward_euler();
  for (double tau : {0.01, 0.3})
    for (double nu : {1.0, 40.0}) EXPECT_NEAR(growth_factor(fe, tau, nu), std::sqrt(1.0 + tau * tau * nu), 1e-15);
}

TEST(GrowthFactor, EqualsModulusOnImaginaryAxis) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::vector<ButcherTableau> tabs{ButcherTableau::rk4(), ButcherTableau::rk3(), ButcherTableau::crank_nicolson(),
                                   ButcherTableau::backward_euler(), ButcherTableau::weighted_euler(0.3)};
  for (int i = 0; i < 5; ++i) tabs.push_back(random_explicit(2 + i, rng));
  for (const auto& t : tabs) {
    for (int k = 0; k < 20; ++k) {
      const double tau = u(rng), nu = u(rng);
      const double psi = growth_factor(t, tau, nu);
      const double mod = std::abs(stability_function(t, cd(0.0, tau * std::sqrt(nu))));
      EXPECT_NEAR(psi, mod, 1e-12 * std::max(1.0, mod)) << t.name;
    }
  }
}

TEST(GrowthFactor, ExplicitAgreesWithDeterminantRatio) {
  // Determinant ratio sqrt(det(I + z B^2)), B = G - e w^T, evaluated here in double.
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> zd(0.0, 6.0);
  for (int k = 0; k < 50; ++k) {
    const auto t = random_explicit(2 + k % 5, rng);
    if (t.w.cwiseAbs().maxCoeff() > 10.0) continue;  // keep the double determinant well conditioned
    const Eigen::MatrixXd B = t.G - Eigen::VectorXd::Ones(t.stages()) * t.w.transpose();
    const double z = zd(rng);
    const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(t.stages(), t.stages()) + z * B * B;
    EXPECT_NEAR(growth_factor(t, 1.0, z), std::sqrt(std::abs(A.determinant())), 1e-10);
  }
}

TEST(GrowthFactor, LargeWeightsStayAccurate) {
  // w = (w0, 1 - w0) with |w| ~ 300; psi is |f(iy)| for f = 1 + x + (1 - w0) g x^2.
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(2, 2);
  G(1, 0) = 0.7;
  const double w0 = -300.0;
  const auto t = ButcherTableau::make("large", G, Eigen::Vector2d(w0, 1.0 - w0), Eigen::Vector2d(0.0, 0.7));
  for (double y : {0.5, 2.0, 5.0}) {
    const cd f = 1.0 + cd(0, y) + (1.0 - w0) * 0.7 * cd(0, y) * cd(0, y);
    EXPECT_NEAR(growth_factor(t, y, 1.0), std::abs(f), 1e-12 * std::abs(f));
  }
}

TEST(GrowthFactor, NuZeroGivesOne) {
  std::mt19937_64 rng(14);
  for (int s = 1; s <= 6; ++s) EXPECT_EQ(growth_factor(random_explicit(s, rng), 0.7, 0.0), 1.0);
  EXPECT_EQ(growth_factor(ButcherTableau::backward_euler(), 0.7, 0.0), 1.0);
}

TEST(GrowthFactor, ImplicitPoleThrows) {
  // G = [[0, 1], [-1, 0]] has G^2 = -I, so det(I + z G^2) vanishes at z = 1.
  Eigen::MatrixXd G(2, 2);
  G << 0, 1, -1, 0;
  const auto t = ButcherTableau::make("rotation", G, Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(1, -1));
  EXPECT_THROW(growth_factor(t, 1.0, 1.0), PoleOfStabilityFunction);
  EXPECT_THROW(brute_force_growth(t, 1.0, 1.0), PoleOfStabilityFunction);
}

TEST(BruteForce, ForwardEulerExample) {
  const auto M = brute_force_growth(ButcherTableau::forward_euler(), 0.1, 4.0);
  Eigen::Matrix2d expect;
  expect << 1.0, 0.2, -0.2, 1.0;
  EXPECT_LE((M - expect).norm(), 1e-15);
  EXPECT_NEAR(spectral_norm(M), std::sqrt(1.04), 1e-15);
}

TEST(BruteForce, NuZeroIsIdentity) {
  for (const auto& t : {ButcherTableau::rk4(), ButcherTableau::crank_nicolson(), ButcherTableau::backward_euler()})
    EXPECT_LE((brute_force_growth(t, 0.5, 0.0) - Eigen::Matrix2d::Identity()).norm(), 1e-15);
}

TEST(BruteForce, RK4BoundaryHasUnitNorm) {
  EXPECT_NEAR(spectral_norm(brute_force_growth(ButcherTableau::rk4(), 1.0, 8.0)), 1.0, 1e-13);
}

TEST(BruteForce, MatrixFormAndNormEqualGrowthFactor) {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto t = trial % 5 == 0 ? random_implicit(2, rng) : random_explicit(1 + trial % 6, rng);
    const double tau = u(rng), nu = u(rng) * 4.0;
    Eigen::Matrix2d M;
    try {
      M = brute_force_growth(t, tau, nu);
    } catch (const PoleOfStabilityFunction&) {
      continue;
    }
    // a I + b tau Q: equal diagonal, antisymmetric off-diagonal.
    EXPECT_NEAR(M(0, 0), M(1, 1), 1e-12);
    EXPECT_NEAR(M(0, 1), -M(1, 0), 1e-12);
    const double rho = std::hypot(M(0, 0), M(0, 1));
    EXPECT_NEAR(spectral_norm(M), rho, 1e-12);
    EXPECT_NEAR(spectral_norm(M), growth_factor(t, tau, nu), 1e-10);
  }
}

TEST(ImagAxisExtent, RK4IsSqrtEight) { EXPECT_NEAR(imag_axis_extent(ButcherTableau::rk4()), std::sqrt(8.0), 1e-6); }

TEST(ImagAxisExtent, ForwardEulerIsZero) {
  EXPECT_EQ(imag_axis_extent(ButcherTableau::forward_euler()), 0.0);
  EXPECT_EQ(imag_axis_extent(ButcherTableau::weighted_euler(0.3)), 0.0);
}

TEST(ImagAxisExtent, ImplicitAStableIsUnbounded) {
  EXPECT_TRUE(std::isinf(imag_axis_extent(ButcherTableau::crank_nicolson())));
  EXPECT_TRUE(std::isinf(imag_axis_extent(ButcherTableau::backward_euler())));
  EXPECT_TRUE(std::isinf(imag_axis_extent(ButcherTableau::weighted_euler(0.7))));
}

TEST(ImagAxisExtent, RK3IsSqrtThree) {
  // |f(iy)|^2 = 1 - y^4/12 + y^6/36 for three-stage third-order methods.
  EXPECT_NEAR(imag_axis_extent(ButcherTableau::rk3()), std::sqrt(3.0), 1e-6);
}

TEST(CflThreshold, Examples) {
  const auto rk4 = ButcherTableau::rk4();
  const double h = 2.0 * std::numbers::pi / 128.0;
  EXPECT_NEAR(cfl_threshold(rk4, 3.0, 1.0, h), std::sqrt(1.0 / 24.0), 1e-9);
  EXPECT_NEAR(cfl_threshold(rk4, 3.0, 1.0, 4.0 * h) / cfl_threshold(rk4, 3.0, 1.0, h), 2.0, 1e-12);
  EXPECT_NEAR(cfl_threshold(rk4, 3.0, 1.0, h, 0.25) / cfl_threshold(rk4, 3.0, 1.0, h), 0.5, 1e-12);
}

TEST(CflThreshold, Errors) {
  EXPECT_THROW(cfl_threshold(ButcherTableau::forward_euler(), 3.0, 1.0, 0.05), NoImaginaryAxisStability);
  EXPECT_TRUE(std::isinf(cfl_threshold(ButcherTableau::crank_nicolson(), 3.0, 1.0, 0.05)));
}

TEST(Classify, WeightedEulerThreeQuarters) {
  const auto rep = classify(ButcherTableau::weighted_euler(0.75));
  EXPECT_NEAR(rep.trG2, 9.0 / 16.0, 1e-15);
  EXPECT_NEAR(rep.trGewT2, 1.0 / 16.0, 1e-15);
  EXPECT_EQ(rep.classification, StabilityClass::StrongAsTauTo0);
}

TEST(Classify, ForwardEuler) {
  const auto rep = classify(ButcherTableau::forward_euler());
  EXPECT_EQ(rep.trG2, 0.0);
  EXPECT_EQ(rep.trGewT2, 1.0);
  EXPECT_EQ(rep.classification, StabilityClass::WeakAsTauTo0);
  EXPECT_EQ(rep.imagExtent, 0.0);
}

TEST(Classify, RK4WeakButSquareRootStable) {
  const auto rep = classify(ButcherTableau::rk4());
  EXPECT_EQ(rep.classification, StabilityClass::WeakAsTauTo0);
  EXPECT_NEAR(rep.imagExtent, std::sqrt(8.0), 1e-6);
  EXPECT_FALSE(rep.notes.empty());
}

TEST(Classify, TieIsWeak) {
  // delta = 1/2 gives tr(G^2) = tr((G - e w^T)^2) = 1/4.
  const auto rep = classify(ButcherTableau::weighted_euler(0.5));
  EXPECT_DOUBLE_EQ(rep.trG2, rep.trGewT2);
  EXPECT_EQ(rep.classification, StabilityClass::WeakAsTauTo0);
}

TEST(Properties, WeightedEulerStableIffDeltaAtLeastHalf) {
  for (double delta : {0.3, 0.5, 0.7}) {
    const auto t = ButcherTableau::weighted_euler(delta);
    double sup = 0.0;
    for (int i = 1; i <= 40; ++i)
      for (int j = 1; j <= 40; ++j) sup = std::max(sup, growth_factor(t, 0.05 * i, 0.5 * j));
    if (delta >= 0.5) EXPECT_LE(sup, 1.0 + 1e-14) << delta;
    else EXPECT_GT(sup, 1.0) << delta;
  }
}

TEST(Properties, SmallStepExpansion) {
  std::mt19937_64 rng(16);
  std::vector<ButcherTableau> tabs{ButcherTableau::forward_euler(), ButcherTableau::weighted_euler(0.75),
                                   ButcherTableau::weighted_euler(0.3), ButcherTableau::rk4()};
  for (int s = 2; s <= 5; ++s) tabs.push_back(random_explicit(s, rng));
  for (const auto& t : tabs) {
    const auto rep = classify(t, ExtentOptions{1e-2, 1.0});
    const double coef = 0.5 * (rep.trGewT2 - rep.trG2);
    // (psi - 1)/z = coef + O(z); Richardson removes the linear term.
    const double z = 1e-4;
    auto a = [&](double zz) { return (growth_factor(t, GrowthQuery{1.0, zz}) - 1.0) / zz; };
    const double rich = 2.0 * a(z / 2.0) - a(z);
    EXPECT_NEAR(rich, coef, 1e-6 * std::max(1.0, std::abs(coef))) << t.name;
  }
}

TEST(Tableau, ExplicitFlag) {
  EXPECT_TRUE(ButcherTableau::rk4().is_explicit());
  EXPECT_TRUE(ButcherTableau::forward_euler().is_explicit());
  EXPECT_FALSE(ButcherTableau::backward_euler().is_explicit());
  EXPECT_FALSE(ButcherTableau::crank_nicolson().is_explicit());
  EXPECT_TRUE(ButcherTableau::weighted_euler(0.0).is_explicit());
}

TEST(Tableau, ParsesRationalsAndComments) {
  const auto t = parse_tableau_string("# rk4\n4\n0 0 0 0 0\n1/2 1/2 0 0 0  # stage 2\n\n1/2 0 1/2 0 0\n1 0 0 1 0\n1/6 1/3 1/3 1/6\n");
  const auto ref = ButcherTableau::rk4();
  EXPECT_EQ(t.stages(), 4);
  EXPECT_EQ(t.G, ref.G);
  EXPECT_EQ(t.w, ref.w);
  EXPECT_EQ(t.p, ref.p);
  EXPECT_TRUE(t.warnings().empty());
}

TEST(Tableau, ParseErrorsCarryLineNumbers) {
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_tableau_string(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of(""), 1u);
  EXPECT_EQ(line_of("two\n"), 1u);
  EXPECT_EQ(line_of("1\n0 x\n1\n"), 2u);
  EXPECT_EQ(line_of("1\n0 1/0\n1\n"), 2u);
  EXPECT_EQ(line_of("2\n0 0 0\n1 1\n1/2 1/2\n"), 3u);
  EXPECT_EQ(line_of("# header\n2\n0 0 0\n1 1 0\n1/2\n"), 5u);
  EXPECT_EQ(line_of("1\n0 0\n"), 3u);
  EXPECT_EQ(line_of("1\n0 0\n1\n5\n"), 4u);
}

TEST(Tableau, InconsistentWeightsWarnButParse) {
  const auto t = parse_tableau_string("1\n0 0\n0.9\n");
  ASSERT_EQ(t.warnings().size(), 1u);
  EXPECT_NE(t.warnings()[0].find("0.9"), std::string::npos);
}

TEST(Tableau, ShippedFilesMatchBuiltins) {
  const std::string dir = std::string(NLWAVE_SOURCE_DIR) + "/tableaus/";
  const std::vector<std::pair<std::string, ButcherTableau>> cases{
      {"forward-euler.tab", ButcherTableau::forward_euler()},
      {"backward-euler.tab", ButcherTableau::backward_euler()},
      {"crank-nicolson.tab", ButcherTableau::crank_nicolson()},
      {"weighted-euler-0.5.tab", ButcherTableau::weighted_euler(0.5)},
      {"weighted-euler-0.75.tab", ButcherTableau::weighted_euler(0.75)},
      {"rk4.tab", ButcherTableau::rk4()},
      {"rk3.tab", ButcherTableau::rk3()}};
  for (const auto& [file, ref] : cases) {
    const auto t = load_tableau_file(dir + file);
    EXPECT_LE((t.G - ref.G).norm(), 1e-15) << file;
    EXPECT_LE((t.w - ref.w).norm(), 1e-15) << file;
    EXPECT_LE((t.p - ref.p).norm(), 1e-15) << file;
  }
}

TEST(Tableau, Resolve) {
  EXPECT_EQ(resolve_tableau("rk4").name, "rk4");
  EXPECT_EQ(resolve_tableau("fe").stages(), 1);
  EXPECT_NEAR(resolve_tableau("weighted-euler:0.7").w[1], 0.7, 1e-15);
  EXPECT_EQ(resolve_tableau(std::string(NLWAVE_SOURCE_DIR) + "/tableaus/crank-nicolson.tab").stages(), 2);
  EXPECT_THROW(resolve_tableau("no-such-method"), Error);
}
