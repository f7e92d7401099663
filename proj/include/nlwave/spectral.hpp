#pragma once

// Periodic grids, discrete Fourier transforms and the Fourier-multiplier
// operators (derivative, Hilbert transform, half-Laplacian) with optional
// smoothing filters.
//
// Wavenumber convention: a grid of N (even) nodes carries the index set
// {-N/2+1, ..., N/2}; the physical wavenumber of index k is 2*pi*k/L.
// Spectra are stored in FFT slot order, slot s <-> k = s for s <= N/2 and
// k = s - N otherwise, so the Nyquist slot N/2 maps to k = +N/2.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "nlwave/errors.hpp"

namespace nlwave {

using Complex = std::complex<double>;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// ---------------------------------------------------------------------------
// Grid

class Grid {
 public:
  explicit Grid(std::size_t n, double period = kTwoPi) : n_(n), period_(period) {
    if (n == 0 || n % 2 != 0) throw std::invalid_argument("grid size must be even and positive");
    if (!(period > 0.0) || !std::isfinite(period)) throw std::invalid_argument("grid period must be positive");
  }

  std::size_t size() const noexcept { return n_; }
  double period() const noexcept { return period_; }
  double spacing() const noexcept { return period_ / static_cast<double>(n_); }
  double node(std::size_t j) const noexcept { return static_cast<double>(j) * spacing(); }

  /// Wavenumber index k in {-N/2+1..N/2} stored at FFT slot s.
  int index_of_slot(std::size_t s) const noexcept {
    const auto n = static_cast<long>(n_);
    const auto k = static_cast<long>(s);
    return static_cast<int>(k <= n / 2 ? k : k - n);
  }
  std::size_t slot_of_index(int k) const noexcept {
    const auto n = static_cast<long>(n_);
    return static_cast<std::size_t>(k >= 0 ? k : k + n);
  }
  /// Physical wavenumber 2*pi*k/L.
  double wavenumber(int k) const noexcept { return kTwoPi * k / period_; }
  /// Normalized phase 2*pi*k/N in (-pi, pi], the argument of a filter.
  double phase(int k) const noexcept { return kTwoPi * k / static_cast<double>(n_); }
  /// Largest resolved |wavenumber| (the Nyquist mode), pi/h.
  double max_wavenumber() const noexcept { return std::numbers::pi / spacing(); }

  RVector nodes() const {
    RVector x(static_cast<Eigen::Index>(n_));
    for (std::size_t j = 0; j < n_; ++j) x[static_cast<Eigen::Index>(j)] = node(j);
    return x;
  }

  friend bool operator==(const Grid& a, const Grid& b) noexcept {
    return a.n_ == b.n_ && a.period_ == b.period_;
  }

 private:
  std::size_t n_;
  double period_;
};

// ---------------------------------------------------------------------------
// Discrete Fourier transform:  fhat_k = (1/N) sum_j f_j exp(-i k theta_j).

namespace detail {

inline Eigen::FFT<double>& fft_engine() {
  // Eigen's FFT caches plans internally, so one engine per thread.
  thread_local Eigen::FFT<double> engine = [] {
    Eigen::FFT<double> e;
    e.SetFlag(Eigen::FFT<double>::Unscaled);
    return e;
  }();
  return engine;
}

inline CVector dft(const CVector& samples) {
  CVector out;
  fft_engine().fwd(out, samples);
  out /= static_cast<double>(samples.size());
  return out;
}

inline CVector idft(const CVector& spectrum) {
  CVector out;
  fft_engine().inv(out, spectrum);
  return out;
}

inline bool all_finite(const CVector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i].real()) || !std::isfinite(v[i].imag())) return false;
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Filters

/// Even, non-negative Fourier filter rho on (-pi, pi] with rho(0) = 1.
///
/// `order` is the accuracy r in |rho(xi) - 1| = O(|xi|^r).  The endpoint
/// flags declare rho(pi) = 0 and rho'(pi) = 0; the tolerances say how close to
/// zero the filter has to come for the declaration to be accepted.
struct Filter {
  std::string name = "none";
  std::function<double(double)> rho = [](double) { return 1.0; };
  int order = 1000;
  bool endpoint_zero = false;
  bool endpoint_flat = false;
  double endpoint_value_tol = 1e-8;
  double endpoint_slope_tol = 1e-6;

  double operator()(double xi) const { return rho(xi); }
  bool is_identity() const noexcept { return name == "none"; }

  static Filter none() { return Filter{}; }

  /// rho(xi) = exp(-alpha (|xi|/pi)^p).  The default (10, 25) is the filter
  /// used for the water-wave runs; its endpoint values exp(-10) and
  /// -250/pi exp(-10) are "numerically zero", hence the looser tolerances.
  static Filter exponential(double alpha = 10.0, int p = 25) {
    Filter f;
    f.name = "exp(" + std::to_string(alpha) + "," + std::to_string(p) + ")";
    f.rho = [alpha, p](double xi) { return std::exp(-alpha * std::pow(std::abs(xi) / std::numbers::pi, p)); };
    f.order = p;
    f.endpoint_zero = true;
    f.endpoint_flat = true;
    f.endpoint_value_tol = 1e-4;
    f.endpoint_slope_tol = 1e-2;
    return f;
  }

  /// Second-order centered difference seen as a filtered spectral derivative.
  static Filter central_difference() {
    Filter f;
    f.name = "cd2";
    f.rho = [](double xi) { return xi == 0.0 ? 1.0 : std::sin(xi) / xi; };
    f.order = 2;
    f.endpoint_zero = true;
    return f;
  }

  /// Fourth-order centered difference (8 sin xi - sin 2 xi) / (6 xi).
  static Filter central_difference4() {
    Filter f;
    f.name = "cd4";
    f.rho = [](double xi) { return xi == 0.0 ? 1.0 : (8.0 * std::sin(xi) - std::sin(2.0 * xi)) / (6.0 * xi); };
    f.order = 4;
    f.endpoint_zero = true;
    return f;
  }
};

struct FilterReport {
  bool nonnegative = true;
  bool even = true;
  bool normalized = true;
  bool accuracy_bounded = true;
  double accuracy_constant = 0.0;  ///< sampled sup |xi|^-r |rho - 1|
  double endpoint_value = 0.0;     ///< rho(pi)
  double endpoint_slope = 0.0;     ///< centered-difference rho'(pi)
  bool endpoint_zero_ok = true;
  bool endpoint_flat_ok = true;

  bool ok() const noexcept {
    return nonnegative && even && normalized && accuracy_bounded && endpoint_zero_ok && endpoint_flat_ok;
  }
};

inline FilterReport check_filter(const Filter& filter) {
  constexpr double pi = std::numbers::pi;
  FilterReport rep;
  rep.normalized = std::abs(filter(0.0) - 1.0) <= 1e-14;

  const int samples = 4000;
  auto ratio = [&](double xi) {
    const double dev = std::abs(filter(xi) - 1.0);
    if (dev == 0.0) return 0.0;
    return std::exp(std::log(dev) - filter.order * std::log(xi));
  };
  for (int i = 1; i < samples; ++i) {
    const double xi = pi * i / samples;
    const double r = filter(xi);
    if (!(r >= 0.0)) rep.nonnegative = false;
    if (std::abs(filter(-xi) - r) > 1e-14) rep.even = false;
    rep.accuracy_constant = std::max(rep.accuracy_constant, ratio(xi));
  }
  // Bounded as xi -> 0: the ratio must level off instead of growing like a
  // negative power when the declared order is too high.
  for (int d = 2; d <= 4; ++d) {
    const double xi = std::pow(10.0, -d);
    // Deviations near rounding level carry no information about the order.
    if (std::abs(filter(xi) - 1.0) < 1e-10) continue;
    const double near = ratio(xi);
    const double far = ratio(10.0 * xi);
    rep.accuracy_constant = std::max(rep.accuracy_constant, near);
    if (near > 2.0 * far) rep.accuracy_bounded = false;
  }
  if (!std::isfinite(rep.accuracy_constant)) rep.accuracy_bounded = false;

  const double delta = 1e-5;
  rep.endpoint_value = filter(pi);
  rep.endpoint_slope = (filter(pi + delta) - filter(pi - delta)) / (2.0 * delta);
  if (filter.endpoint_zero) rep.endpoint_zero_ok = std::abs(rep.endpoint_value) <= filter.endpoint_value_tol;
  if (filter.endpoint_flat) rep.endpoint_flat_ok = std::abs(rep.endpoint_slope) <= filter.endpoint_slope_tol;
  return rep;
}

inline void validate_filter(const Filter& filter) {
  const FilterReport rep = check_filter(filter);
  if (rep.ok()) return;
  std::string why;
  if (!rep.nonnegative) why += " negative values;";
  if (!rep.even) why += " not even;";
  if (!rep.normalized) why += " rho(0) != 1;";
  if (!rep.accuracy_bounded) why += " accuracy order not attained;";
  if (!rep.endpoint_zero_ok) why += " rho(pi) not zero;";
  if (!rep.endpoint_flat_ok) why += " rho'(pi) not zero;";
  throw InvalidFilter("filter '" + filter.name + "' rejected:" + why);
}

// ---------------------------------------------------------------------------
// SpectralField

/// Grid function with lazily cached discrete Fourier coefficients.
///
/// The cache is guarded by a mutex, so a const field can be shared across
/// threads; any sample mutation drops the cache.
class SpectralField {
 public:
  explicit SpectralField(Grid grid) : grid_(grid), samples_(CVector::Zero(static_cast<Eigen::Index>(grid.size()))) {}

  SpectralField(Grid grid, CVector samples) : grid_(grid), samples_(std::move(samples)) {
    if (samples_.size() != static_cast<Eigen::Index>(grid_.size()))
      throw std::invalid_argument("sample count does not match grid");
  }

  template <class F>
  static SpectralField from_function(Grid grid, F&& f) {
    CVector s(static_cast<Eigen::Index>(grid.size()));
    for (std::size_t j = 0; j < grid.size(); ++j) s[static_cast<Eigen::Index>(j)] = Complex(f(grid.node(j)));
    return SpectralField(grid, std::move(s));
  }

  static SpectralField from_spectrum(Grid grid, const CVector& spectrum) {
    SpectralField f(grid, detail::idft(spectrum));
    f.cache_->spectrum = spectrum;
    return f;
  }

  SpectralField(const SpectralField& other) : grid_(other.grid_), samples_(other.samples_) {
    std::lock_guard lock(other.cache_->mutex);
    cache_->spectrum = other.cache_->spectrum;
  }
  SpectralField& operator=(const SpectralField& other) {
    if (this != &other) {
      SpectralField tmp(other);
      *this = std::move(tmp);
    }
    return *this;
  }
  SpectralField(SpectralField&& other) noexcept
      : grid_(other.grid_), samples_(std::move(other.samples_)), cache_(std::move(other.cache_)) {
    other.cache_ = std::make_unique<Cache>();
  }
  SpectralField& operator=(SpectralField&& other) noexcept {
    grid_ = other.grid_;
    samples_ = std::move(other.samples_);
    cache_ = std::move(other.cache_);
    other.cache_ = std::make_unique<Cache>();
    return *this;
  }
  ~SpectralField() = default;

  const Grid& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return grid_.size(); }
  const CVector& samples() const noexcept { return samples_; }
  Complex operator[](std::size_t j) const { return samples_[static_cast<Eigen::Index>(j)]; }

  void set_sample(std::size_t j, Complex value) {
    samples_[static_cast<Eigen::Index>(j)] = value;
    invalidate();
  }
  void assign(CVector samples) {
    if (samples.size() != samples_.size()) throw std::invalid_argument("sample count does not match grid");
    samples_ = std::move(samples);
    invalidate();
  }

  bool is_finite() const { return detail::all_finite(samples_); }

  /// Fourier coefficients in FFT slot order.
  const CVector& spectrum() const {
    std::lock_guard lock(cache_->mutex);
    if (!cache_->spectrum) cache_->spectrum = detail::dft(samples_);
    return *cache_->spectrum;
  }
  bool spectrum_cached() const {
    std::lock_guard lock(cache_->mutex);
    return cache_->spectrum.has_value();
  }
  Complex coefficient(int k) const { return spectrum()[static_cast<Eigen::Index>(grid_.slot_of_index(k))]; }

 private:
  struct Cache {
    std::mutex mutex;
    std::optional<CVector> spectrum;
  };

  void invalidate() {
    std::lock_guard lock(cache_->mutex);
    cache_->spectrum.reset();
  }

  Grid grid_;
  CVector samples_;
  std::unique_ptr<Cache> cache_ = std::make_unique<Cache>();
};

// ---------------------------------------------------------------------------
// Multipliers

/// A Fourier multiplier tabulated on one grid, in FFT slot order.
struct Multiplier {
  Grid grid;
  CVector symbol;

  template <class Symbol>
  static Multiplier from_symbol(Grid grid, Symbol&& m) {
    CVector sym(static_cast<Eigen::Index>(grid.size()));
    for (std::size_t s = 0; s < grid.size(); ++s) sym[static_cast<Eigen::Index>(s)] = Complex(m(grid.index_of_slot(s)));
    return Multiplier{grid, std::move(sym)};
  }

  static Multiplier identity(Grid g) {
    return from_symbol(g, [](int) { return 1.0; });
  }
  static Multiplier smoothing(Grid g, const Filter& f) {
    return from_symbol(g, [&](int k) { return f(g.phase(k)); });
  }
  static Multiplier derivative(Grid g, const Filter& f = Filter::none()) {
    return from_symbol(g, [&](int k) { return Complex(0.0, g.wavenumber(k)) * f(g.phase(k)); });
  }
  static Multiplier hilbert(Grid g, const Filter& f = Filter::none()) {
    return from_symbol(g, [&](int k) {
      const double sgn = k > 0 ? 1.0 : (k < 0 ? -1.0 : 0.0);
      return Complex(0.0, -sgn) * f(g.phase(k));
    });
  }
  static Multiplier half_laplacian(Grid g, const Filter& f = Filter::none()) {
    return from_symbol(g, [&](int k) { return std::abs(g.wavenumber(k)) * f(g.phase(k)); });
  }

  CVector apply_to_spectrum(const CVector& spectrum) const { return symbol.cwiseProduct(spectrum); }
  CVector apply(const CVector& samples) const { return detail::idft(symbol.cwiseProduct(detail::dft(samples))); }

  SpectralField operator()(const SpectralField& f) const {
    if (!(f.grid() == grid)) throw std::invalid_argument("multiplier applied on a different grid");
    if (!f.is_finite()) throw InvalidField("field has non-finite samples");
    return SpectralField::from_spectrum(grid, apply_to_spectrum(f.spectrum()));
  }
};

/// g_hat_k = m(k) f_hat_k for every k in {-N/2+1..N/2}.
template <class Symbol>
SpectralField apply_symbol(const SpectralField& f, Symbol&& m) {
  return Multiplier::from_symbol(f.grid(), std::forward<Symbol>(m))(f);
}

inline SpectralField derivative(const SpectralField& f) { return Multiplier::derivative(f.grid())(f); }
inline SpectralField hilbert(const SpectralField& f) { return Multiplier::hilbert(f.grid())(f); }
inline SpectralField lambda_op(const SpectralField& f) { return Multiplier::half_laplacian(f.grid())(f); }

inline SpectralField derivative_f(const SpectralField& f, const Filter& rho) {
  return Multiplier::derivative(f.grid(), rho)(f);
}
inline SpectralField hilbert_f(const SpectralField& f, const Filter& rho) {
  return Multiplier::hilbert(f.grid(), rho)(f);
}
inline SpectralField lambda_f(const SpectralField& f, const Filter& rho) {
  return Multiplier::half_laplacian(f.grid(), rho)(f);
}
inline SpectralField smooth(const SpectralField& f, const Filter& rho) {
  return Multiplier::smoothing(f.grid(), rho)(f);
}

// ---------------------------------------------------------------------------
// Norms and inner products

/// <f, g> = h sum_j f_j conj(g_j).
inline Complex inner(const CVector& f, const CVector& g, double h) {
  // Eigen's dot conjugates its first argument: g.dot(f) = sum conj(g_j) f_j.
  return h * g.dot(f);
}

inline Complex inner(const SpectralField& f, const SpectralField& g) {
  if (!(f.grid() == g.grid())) throw std::invalid_argument("fields live on different grids");
  return inner(f.samples(), g.samples(), f.grid().spacing());
}

inline double l2_norm(const CVector& f, double h) { return std::sqrt(h) * f.norm(); }
inline double l2_norm(const SpectralField& f) { return l2_norm(f.samples(), f.grid().spacing()); }
inline double linf_norm(const CVector& f) { return f.size() == 0 ? 0.0 : f.cwiseAbs().maxCoeff(); }
inline double linf_norm(const SpectralField& f) { return linf_norm(f.samples()); }

/// L sum_k (1 + |kappa_k| rho_k) |fhat_k|^2.
inline double h_half_sq(const SpectralField& f, const Filter& rho = Filter::none()) {
  const Grid& g = f.grid();
  const CVector& fh = f.spectrum();
  double acc = 0.0;
  for (std::size_t s = 0; s < g.size(); ++s) {
    const int k = g.index_of_slot(s);
    acc += (1.0 + std::abs(g.wavenumber(k)) * rho(g.phase(k))) * std::norm(fh[static_cast<Eigen::Index>(s)]);
  }
  return g.period() * acc;
}

/// ||f||^2 + ||D_rho f||^2.
inline double h1_sq(const SpectralField& f, const Filter& rho = Filter::none()) {
  const double a = l2_norm(f);
  const double b = l2_norm(derivative_f(f, rho));
  return a * a + b * b;
}

/// L sum_{k != 0} |fhat_k|^2 / (rho_k |kappa_k|); undefined for fields with a
/// mean or with energy in a mode the filter removes.
inline double q_norm_sq(const SpectralField& f, const Filter& rho = Filter::none()) {
  const Grid& g = f.grid();
  const CVector& fh = f.spectrum();
  const double scale = fh.norm();
  const double tol = 1e-12 * scale;
  if (std::abs(fh[0]) > tol) throw NormUndefined("q-norm needs a mean-free field");
  double acc = 0.0;
  for (std::size_t s = 1; s < g.size(); ++s) {
    const int k = g.index_of_slot(s);
    const double a2 = std::norm(fh[static_cast<Eigen::Index>(s)]);
    const double r = rho(g.phase(k));
    const double weight = r * std::abs(g.wavenumber(k));
    // sin(pi)/pi and friends are zero only up to rounding.
    if (r <= 1e-14) {
      if (std::sqrt(a2) > tol) throw NormUndefined("q-norm undefined: occupied mode is filtered out");
      continue;
    }
    acc += a2 / weight;
  }
  return g.period() * acc;
}

struct NormSet {
  double l2 = 0.0;
  double linf = 0.0;
  Complex inner;
  double h_half_sq = 0.0;
  double h1_sq = 0.0;
  std::optional<double> q_sq;  ///< empty when the q-norm is undefined for f
};

inline NormSet norms_and_inner(const SpectralField& f, const SpectralField& g, const Filter& rho = Filter::none()) {
  NormSet out;
  out.l2 = l2_norm(f);
  out.linf = linf_norm(f);
  out.inner = inner(f, g);
  out.h_half_sq = nlwave::h_half_sq(f, rho);
  out.h1_sq = nlwave::h1_sq(f, rho);
  try {
    out.q_sq = q_norm_sq(f, rho);
  } catch (const NormUndefined&) {
    out.q_sq.reset();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commutator smoothing diagnostic

/// max over random unit vectors w of || D_rho ( [phi, H] (rho w) ) ||_2.
///
/// With rho(pi) = 0 and smooth phi the value stays bounded as N grows; without
/// the filter the commutator is not smoothing and the value grows with N.
template <class Phi>
double commutator_smoothing_diag(Phi&& phi, Grid grid, const Filter& rho, int trials, std::uint64_t seed = 20240601) {
  const auto n = static_cast<Eigen::Index>(grid.size());
  const double h = grid.spacing();
  CVector phi_s(n);
  for (Eigen::Index j = 0; j < n; ++j) phi_s[j] = Complex(phi(grid.node(static_cast<std::size_t>(j))));

  const Multiplier smoother = Multiplier::smoothing(grid, rho);
  const Multiplier hil = Multiplier::hilbert(grid);
  const Multiplier dif = Multiplier::derivative(grid, rho);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    CVector w(n);
    for (Eigen::Index j = 0; j < n; ++j) w[j] = normal(rng);
    w /= l2_norm(w, h);
    const CVector a = smoother.apply(w);
    const CVector comm = phi_s.cwiseProduct(hil.apply(a)) - hil.apply(phi_s.cwiseProduct(a));
    worst = std::max(worst, l2_norm(dif.apply(comm), h));
  }
  return worst;
}

}  // namespace nlwave
