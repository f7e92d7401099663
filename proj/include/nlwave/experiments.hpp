#pragma once

// Experiment drivers behind the nlwave CLI: key-value configs, CSV artifacts
// with manifest sidecars, a job pool, stability scans with boundary search,
// the convergence study, the caustic sweep, water-wave runs and the tableau
// report.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "nlwave/errors.hpp"
#include "nlwave/nonlocal.hpp"
#include "nlwave/rk.hpp"
#include "nlwave/spectral.hpp"
#include "nlwave/stability.hpp"
#include "nlwave/tableau.hpp"
#include "nlwave/waterwave.hpp"

namespace nlwave::experiments {

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Formatting

inline std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',' || ch == ' ' || ch == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline bool to_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  // Accept powers of two written as 2^-4 for eps lists.
  if (const auto caret = s.find('^'); caret != std::string::npos) {
    double b = 0.0, e = 0.0;
    if (!to_double(s.substr(0, caret), b) || !to_double(s.substr(caret + 1), e)) return false;
    out = std::pow(b, e);
    return true;
  }
  return nlwave::detail::parse_plain_number(s, out);
}

inline std::string join(const std::vector<std::string>& v, const char* sep = ", ") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Key-value configuration
//
//   # comment
//   key = value
//   list.key = 1, 2, 4
//
// Every lookup records the effective value (defaults included); the recorded
// map is what goes into the manifest and the run id.

class Config {
 public:
  static Config parse(std::istream& in) {
    Config c;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
      ++no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError(no, "expected 'key = value'");
      const std::string key = detail::trim(line.substr(0, eq));
      if (key.empty()) throw ParseError(no, "empty key");
      if (c.values_.count(key)) throw ParseError(no, "duplicate key '" + key + "'");
      c.values_[key] = detail::trim(line.substr(eq + 1));
    }
    return c;
  }
  static Config parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }
  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
      return parse(in);
    } catch (const ParseError& e) {
      throw ParseError(e.line(), path.string() + ": " + e.what());
    }
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  /// "key=value" from a --set flag.
  void set_assignment(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
    set(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string text(const std::string& key, const std::string& def) const {
    const auto it = values_.find(key);
    return note(key, it == values_.end() ? def : it->second);
  }

  double number(const std::string& key, double def) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return note(key, def);
    double x = 0.0;
    if (!detail::to_double(it->second, x)) throw ConfigError("key '" + key + "': not a number: '" + it->second + "'");
    return note(key, x);
  }

  long integer(const std::string& key, long def) const {
    const double x = number(key, static_cast<double>(def));
    if (x != std::floor(x)) throw ConfigError("key '" + key + "': expected an integer");
    return static_cast<long>(x);
  }

  bool flag(const std::string& key, bool def) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return note(key, def);
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return note(key, true);
    if (v == "false" || v == "0" || v == "no" || v == "off") return note(key, false);
    throw ConfigError("key '" + key + "': expected true or false");
  }

  std::vector<double> numbers(const std::string& key, const std::vector<double>& def) const {
    const auto it = values_.find(key);
    std::vector<double> out = def;
    if (it != values_.end()) {
      out.clear();
      for (const auto& tok : detail::split_list(it->second)) {
        double x = 0.0;
        if (!detail::to_double(tok, x)) throw ConfigError("key '" + key + "': not a number: '" + tok + "'");
        out.push_back(x);
      }
    }
    std::vector<std::string> txt;
    for (double x : out) txt.push_back(fmt(x));
    resolved_[key] = detail::join(txt);
    return out;
  }

  std::vector<std::string> words(const std::string& key, const std::vector<std::string>& def) const {
    const auto it = values_.find(key);
    const auto out = it == values_.end() ? def : detail::split_list(it->second);
    resolved_[key] = detail::join(out);
    return out;
  }

  /// Unknown keys are almost always typos; refuse them.
  void require_known(const std::set<std::string>& known) const {
    for (const auto& [k, v] : values_)
      if (!known.count(k)) {
        std::vector<std::string> names(known.begin(), known.end());
        throw ConfigError("unknown config key '" + k + "' (known: " + detail::join(names) + ")");
      }
  }

  /// Effective values of every key read so far.
  const std::map<std::string, std::string>& resolved() const { return resolved_; }

 private:
  std::string note(const std::string& k, const std::string& v) const { return resolved_[k] = v; }
  double note(const std::string& k, double v) const {
    resolved_[k] = fmt(v);
    return v;
  }
  bool note(const std::string& k, bool v) const {
    resolved_[k] = v ? "true" : "false";
    return v;
  }

  std::map<std::string, std::string> values_;
  mutable std::map<std::string, std::string> resolved_;
};

// ---------------------------------------------------------------------------
// CSV

inline std::string cell(double x) { return fmt(x); }
inline std::string cell(int x) { return std::to_string(x); }
inline std::string cell(long x) { return std::to_string(x); }
inline std::string cell(std::size_t x) { return std::to_string(x); }
inline std::string cell(const std::string& s) { return s; }
inline std::string cell(const char* s) { return s; }

class CsvTable {
 public:
  CsvTable() = default;
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  template <class... Ts>
  void add(const Ts&... cells) {
    add_row({cell(cells)...});
  }
  void add_row(std::vector<std::string> row) {
    if (row.size() != header_.size())
      throw Error("csv row has " + std::to_string(row.size()) + " cells, header has " + std::to_string(header_.size()));
    rows_.push_back(std::move(row));
  }

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header_.size(); ++i)
      if (header_[i] == name) return i;
    throw Error("csv has no column '" + name + "' (available: " + detail::join(header_) + ")");
  }
  const std::string& at(std::size_t row, const std::string& name) const { return rows_.at(row).at(column(name)); }
  double number(std::size_t row, const std::string& name) const {
    double x = 0.0;
    if (!detail::to_double(at(row, name), x)) throw Error("csv cell '" + name + "' is not a number");
    return x;
  }

  static std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return out + "\"";
  }

  std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + quote(r[i]);
      out += '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }

  /// Writes through a temporary file so a crash never leaves a truncated CSV.
  void write(const std::filesystem::path& path) const {
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw Error("cannot write " + tmp);
      out << str();
    }
    std::filesystem::rename(tmp, path);
  }

  static std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char ch = line[i];
      if (quoted) {
        if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else if (ch == '"') {
          quoted = false;
        } else {
          cur += ch;
        }
      } else if (ch == '"') {
        quoted = true;
      } else if (ch == ',') {
        out.push_back(cur);
        cur.clear();
      } else if (ch != '\r') {
        cur += ch;
      }
    }
    out.push_back(cur);
    return out;
  }

  static CsvTable parse(std::istream& in) {
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw Error("csv is empty");
    t.header_ = split_line(line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      t.add_row(split_line(line));
    }
    return t;
  }
  static CsvTable read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return parse(in);
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Column layouts of the CSV artifacts; the plotting scripts read these names.
namespace schema {
inline const std::vector<std::string> scan{"run_id", "system", "tableau", "N", "h", "eps", "tau",
                                           "classification", "growthRatio", "stepsRun", "failure"};
inline const std::vector<std::string> boundary{"run_id", "system", "tableau", "N", "h", "eps", "tau_lo",
                                               "tau_hi", "tau_star", "evaluations", "status"};
inline const std::vector<std::string> fit{"run_id", "experiment", "series", "x", "y", "slope", "intercept", "points"};
inline const std::vector<std::string> errors{"run_id", "sweep", "scheme", "N", "h", "tau", "T", "error"};
inline const std::vector<std::string> amplitude{"run_id", "eps", "N", "h", "tau", "steps", "amp0", "max_amp",
                                                "max_amp_time"};
inline const std::vector<std::string> caustic_snapshot{"run_id", "eps", "t", "x", "abs_u"};
inline const std::vector<std::string> wave_snapshot{"run_id", "t", "j", "alpha", "x", "y", "phi", "gamma"};
inline const std::vector<std::string> wave_diagnostics{"run_id", "t", "minJacobian", "maxAbsY", "gammaIters",
                                                       "energyProxy"};
inline const std::vector<std::string> wave_summary{"run_id", "N", "tau", "T", "steps", "final_t", "turnover_time",
                                                   "max_gamma_iters", "dense_solves", "growth_ratio", "status"};
inline const std::vector<std::string> psi{"run_id", "z", "psi"};
}  // namespace schema

// ---------------------------------------------------------------------------
// Manifest

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RunManifest {
  std::string experiment;
  std::string version = kVersion;
  std::map<std::string, std::string> config;
  std::vector<std::string> artifacts;
  std::string started;
  std::string finished;
  int threads = 1;
  std::map<std::string, std::string> results;

  /// Depends on the experiment, version and config only, so equal manifests
  /// stamp equal ids into their CSVs.
  std::string run_id() const {
    std::string s = experiment + "\n" + version + "\n";
    for (const auto& [k, v] : config) s += k + "=" + v + "\n";
    return fnv1a(s);
  }

  std::string str() const {
    std::ostringstream o;
    o << "experiment = " << experiment << "\n"
      << "run_id = " << run_id() << "\n"
      << "version = " << version << "\n"
      << "started = " << started << "\n"
      << "finished = " << finished << "\n"
      << "threads = " << threads << "\n";
    for (const auto& a : artifacts) o << "artifact = " << a << "\n";
    for (const auto& [k, v] : config) o << "config." << k << " = " << v << "\n";
    for (const auto& [k, v] : results) o << "result." << k << " = " << v << "\n";
    return o.str();
  }

  std::filesystem::path path_in(const std::filesystem::path& dir) const { return dir / (experiment + ".manifest"); }

  void write(const std::filesystem::path& dir) const {
    std::ofstream out(path_in(dir), std::ios::binary);
    if (!out) throw Error("cannot write manifest in " + dir.string());
    out << str();
  }
};

// ---------------------------------------------------------------------------
// Job pool: jobs run on `threads` workers, results come back in index order.

template <class F>
auto run_jobs(std::size_t count, int threads, F&& job) -> std::vector<decltype(job(std::size_t{}))> {
  using R = decltype(job(std::size_t{}));
  std::vector<std::optional<R>> slots(count);
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex m;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < count;) {
      try {
        slots[i].emplace(job(i));
      } catch (...) {
        std::lock_guard<std::mutex> lock(m);
        if (!first) first = std::current_exception();
      }
    }
  };
  const auto nt = static_cast<std::size_t>(std::max(1, threads));
  if (nt == 1 || count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < std::min(nt, count); ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first) std::rethrow_exception(first);
  std::vector<R> out;
  out.reserve(count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------
// Fits and grids

struct LineFit {
  double slope = std::numeric_limits<double>::quiet_NaN();
  double intercept = std::numeric_limits<double>::quiet_NaN();
  std::size_t points = 0;
};

/// Least-squares line through (x, y).
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  LineFit f;
  f.points = x.size();
  if (x.size() != y.size() || x.size() < 2) return f;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) return f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  return f;
}

inline std::vector<double> log_space(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0) || !(hi >= lo) || count == 0) throw ConfigError("log_space needs 0 < lo <= hi and count >= 1");
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double s = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
    out[i] = lo * std::pow(hi / lo, s);
  }
  return out;
}

/// Log-spaced even grid sizes, duplicates removed.
inline std::vector<std::size_t> log_space_even(std::size_t lo, std::size_t hi, std::size_t count) {
  std::vector<std::size_t> out;
  for (double x : log_space(static_cast<double>(lo), static_cast<double>(hi), count)) {
    auto n = static_cast<std::size_t>(std::llround(x / 2.0)) * 2;
    n = std::max<std::size_t>(n, 2);
    if (out.empty() || out.back() != n) out.push_back(n);
  }
  return out;
}

inline Filter filter_by_name(const std::string& name) {
  if (name == "none") return Filter::none();
  if (name == "exponential" || name == "exp") return Filter::exponential();
  if (name == "cd2") return Filter::central_difference();
  if (name == "cd4") return Filter::central_difference4();
  throw ConfigError("unknown filter '" + name + "' (none, exponential, cd2, cd4)");
}

// ---------------------------------------------------------------------------
// Stability scans

enum class ScanSystem { Constant, Variable, WaterWave, HighFrequency };

inline ScanSystem parse_system(const std::string& s) {
  if (s == "constant") return ScanSystem::Constant;
  if (s == "variable") return ScanSystem::Variable;
  if (s == "waterwave") return ScanSystem::WaterWave;
  if (s == "hf" || s == "high-frequency") return ScanSystem::HighFrequency;
  throw ConfigError("unknown scan system '" + s + "' (constant, variable, waterwave, hf)");
}

inline const char* to_string(ScanSystem s) {
  switch (s) {
    case ScanSystem::Constant: return "constant";
    case ScanSystem::Variable: return "variable";
    case ScanSystem::WaterWave: return "waterwave";
    case ScanSystem::HighFrequency: return "hf";
  }
  return "?";
}

/// One spatial resolution of a scan.  The high-frequency system lives on
/// [0, 1) with h = eps * h_over_eps; the others on [0, 2 pi).
struct ScanLevel {
  std::size_t n = 0;
  double period = kTwoPi;
  double eps = 1.0;
  double h() const { return period / static_cast<double>(n); }
};

struct ScanSettings {
  ScanSystem system = ScanSystem::Constant;
  ButcherTableau tableau = ButcherTableau::rk4();
  std::vector<std::size_t> ns;
  std::vector<double> eps;   // high-frequency system only
  double h_over_eps = 0.25;
  std::vector<double> taus;  // grid mode
  double T = 10.0;
  double T_over_eps = 64.0;  // high-frequency system: T = T_over_eps * eps
  double guard = 1e6;
  double noise = 1.0;
  std::uint64_t seed = 7;
  Filter filter = Filter::none();
  double amplitude = 0.3;  // water-wave data
  // boundary search
  double tau_start = 0.01;
  double tau_min = 0.01 / 1024.0;  // give up halving below this
  double tau_max = 2.5;
  double march = 1.25;
  double tolerance = 0.01;

  std::vector<ScanLevel> levels() const {
    std::vector<ScanLevel> out;
    if (system == ScanSystem::HighFrequency) {
      for (double e : eps) {
        if (!(e > 0.0)) throw ConfigError("eps values must be positive");
        const auto n = static_cast<std::size_t>(std::llround(1.0 / (h_over_eps * e)));
        if (n < 2 || n % 2 != 0) throw ConfigError("eps = " + fmt(e) + " gives an odd grid size " + std::to_string(n));
        out.push_back(ScanLevel{n, 1.0, e});
      }
    } else {
      for (auto n : ns) {
        if (n < 2 || n % 2 != 0) throw ConfigError("grid sizes must be even, got " + std::to_string(n));
        out.push_back(ScanLevel{n, kTwoPi, 1.0});
      }
    }
    return out;
  }

  double final_time(const ScanLevel& l) const { return system == ScanSystem::HighFrequency ? T_over_eps * l.eps : T; }
  /// The high-frequency system measures tau_start and tau_max in units of eps.
  double tau_unit(const ScanLevel& l) const { return system == ScanSystem::HighFrequency ? l.eps : 1.0; }
};

struct ScanRecord {
  ScanLevel level;
  double tau = 0.0;
  std::string classification;  // stable, unstable, or failed (error other than divergence)
  double growthRatio = 0.0;
  std::size_t stepsRun = 0;
  std::string failure;

  bool stable() const { return classification == "stable"; }
};

namespace detail {

inline void add_noise(CVector& u, CVector& v, double amp, std::uint64_t seed) {
  if (amp == 0.0) return;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (Eigen::Index j = 0; j < u.size(); ++j) u[j] += amp * U(rng);
  for (Eigen::Index j = 0; j < v.size(); ++j) v[j] += amp * U(rng);
}

/// u0 = e^{sin theta} + cos theta, v0 = cos^2 theta.
inline SolverState smooth_data(const Grid& g) {
  const RVector th = g.nodes();
  CVector u(th.size()), v(th.size());
  for (Eigen::Index j = 0; j < th.size(); ++j) {
    u[j] = std::exp(std::sin(th[j])) + std::cos(th[j]);
    v[j] = std::cos(th[j]) * std::cos(th[j]);
  }
  return SolverState(SpectralField(g, u), SpectralField(g, v));
}

}  // namespace detail

/// Initial state of a nonlocal scan cell (seeded noise included).
inline SolverState scan_initial(const ScanSettings& s, const ScanLevel& l) {
  const Grid g(l.n, l.period);
  SolverState st = s.system == ScanSystem::HighFrequency
                       ? wkb_initial(g, l.eps, WkbOptions{false, 1.0, s.filter}).state
                       : detail::smooth_data(g);
  CVector u = st.u.samples(), v = st.v.samples();
  detail::add_noise(u, v, s.noise, s.seed);
  return SolverState(SpectralField(g, u), SpectralField(g, v));
}

inline WaterWaveState scan_wave_initial(const ScanSettings& s, const ScanLevel& l, const WaterWaveConfig& cfg) {
  WaterWaveState st = turnover_initial(l.n, s.amplitude, cfg);
  if (s.noise != 0.0) {
    std::mt19937_64 rng(s.seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (Eigen::Index j = 0; j < st.z.size(); ++j) st.z[j] += Complex(0.0, s.noise * U(rng));
  }
  return st;
}

/// Runs one (h, tau) cell.  Never throws: failures land in the record.
inline ScanRecord run_scan_cell(const ScanSettings& s, const ScanLevel& l, double tau) {
  ScanRecord r;
  r.level = l;
  r.tau = tau;
  try {
    const double T = s.final_time(l);
    if (s.system == ScanSystem::WaterWave) {
      WaterWaveConfig cfg;
      cfg.filter = s.filter;
      cfg.tableau = s.tableau;
      cfg.tau = tau;
      cfg.T = T;
      cfg.guard = s.guard;
      cfg.snapshotTimes.clear();
      cfg.diagnosticsEvery = std::numeric_limits<std::size_t>::max();
      cfg.breakdownIsDivergence = true;
      const auto run = run_waterwave(scan_wave_initial(s, l, cfg), cfg);
      r.growthRatio = run.growth_ratio;
      r.stepsRun = run.steps;
    } else {
      CoefficientSet co;
      switch (s.system) {
        case ScanSystem::Constant: co = CoefficientSet::constant_coefficients(3.0, 1.0); break;
        case ScanSystem::Variable: co = CoefficientSet::variable_example(); break;
        default: co = CoefficientSet::constant_coefficients(1.0, 1.0, l.eps); break;
      }
      IntegrateOptions opt;
      opt.guard = s.guard;
      const auto res = integrate(scan_initial(s, l), co, s.filter, s.tableau, tau, T, opt);
      r.growthRatio = res.growth_ratio;
      r.stepsRun = res.steps;
    }
    r.classification = "stable";
  } catch (const Diverged& d) {
    r.classification = "unstable";
    r.growthRatio = d.ratio();
    r.stepsRun = d.step();
  } catch (const std::exception& e) {
    r.classification = "failed";
    r.failure = e.what();
    r.growthRatio = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

inline std::vector<std::string> scan_row(const std::string& run_id, const ScanSettings& s, const ScanRecord& r) {
  const double eps = s.system == ScanSystem::HighFrequency ? r.level.eps
                     : s.system == ScanSystem::WaterWave   ? std::numeric_limits<double>::quiet_NaN()
                                                           : 1.0;
  return {run_id, to_string(s.system), s.tableau.name, cell(r.level.n), cell(r.level.h()), cell(eps), cell(r.tau),
          r.classification, cell(r.growthRatio), cell(r.stepsRun), r.failure};
}

/// Append-only record of finished cells so an interrupted scan can resume.
/// Lines are scan-schema CSV rows; rows from another run id are ignored.
class CellJournal {
 public:
  CellJournal() = default;
  CellJournal(std::filesystem::path path, std::string run_id) : path_(std::move(path)), run_id_(std::move(run_id)) {
    std::ifstream in(path_, std::ios::binary);
    std::string line;
    while (std::getline(in, line)) {
      const auto f = CsvTable::split_line(line);
      if (f.size() != schema::scan.size() || f[0] != run_id_) continue;
      ScanRecord r;
      double h = 0.0, eps = 0.0;
      if (!detail::to_double(f[4], h) || !detail::to_double(f[6], r.tau)) continue;
      detail::to_double(f[5], eps);
      r.level.n = static_cast<std::size_t>(std::stoul(f[3]));
      r.level.period = h * static_cast<double>(r.level.n);
      r.level.eps = eps;
      r.classification = f[7];
      detail::to_double(f[8], r.growthRatio);
      r.stepsRun = static_cast<std::size_t>(std::stoul(f[9]));
      r.failure = f[10];
      done_[key(r.level.n, r.tau)] = r;
    }
    loaded_ = done_.size();
  }

  bool enabled() const { return !path_.empty(); }
  std::size_t loaded() const { return loaded_; }

  std::optional<ScanRecord> find(std::size_t n, double tau) const {
    std::lock_guard<std::mutex> lock(m_);
    const auto it = done_.find(key(n, tau));
    if (it == done_.end()) return std::nullopt;
    return it->second;
  }

  void record(const ScanSettings& s, const ScanRecord& r) {
    std::lock_guard<std::mutex> lock(m_);
    done_[key(r.level.n, r.tau)] = r;
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    const auto row = scan_row(run_id_, s, r);
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << CsvTable::quote(row[i]);
    out << "\n";
  }

  void remove() {
    if (!path_.empty()) std::filesystem::remove(path_);
  }

 private:
  static std::string key(std::size_t n, double tau) { return std::to_string(n) + "|" + fmt(tau); }

  std::filesystem::path path_;
  std::string run_id_;
  mutable std::mutex m_;
  std::map<std::string, ScanRecord> done_;
  std::size_t loaded_ = 0;
};

namespace detail {

inline ScanRecord cached_cell(const ScanSettings& s, const ScanLevel& l, double tau, CellJournal* journal) {
  if (journal)
    if (auto r = journal->find(l.n, tau)) {
      r->level = l;
      return *r;
    }
  const ScanRecord r = run_scan_cell(s, l, tau);
  if (journal) journal->record(s, r);
  return r;
}

}  // namespace detail

/// Full raster: every (level, tau) cell, sorted by (h, tau).
inline std::vector<ScanRecord> grid_scan(const ScanSettings& s, int threads, CellJournal* journal = nullptr) {
  const auto levels = s.levels();
  if (s.taus.empty()) throw ConfigError("scan needs at least one tau");
  std::vector<std::pair<ScanLevel, double>> cells;
  for (const auto& l : levels)
    for (double tau : s.taus) cells.emplace_back(l, tau);
  auto out = run_jobs(cells.size(), threads,
                      [&](std::size_t i) { return detail::cached_cell(s, cells[i].first, cells[i].second, journal); });
  std::stable_sort(out.begin(), out.end(), [](const ScanRecord& a, const ScanRecord& b) {
    if (a.level.h() != b.level.h()) return a.level.h() < b.level.h();
    return a.tau < b.tau;
  });
  return out;
}

struct BoundaryRecord {
  ScanLevel level;
  double tau_lo = std::numeric_limits<double>::quiet_NaN();  // largest step seen stable
  double tau_hi = std::numeric_limits<double>::quiet_NaN();  // smallest step above it seen unstable
  double tau_star = std::numeric_limits<double>::quiet_NaN();
  std::size_t evaluations = 0;
  std::string status;  // ok, no-stable-step, no-boundary
};

/// Stable/unstable transition for one level: march up from tau_start by
/// `march` until a cell diverges, then bisect geometrically until
/// tau_hi / tau_lo <= 1 + tolerance.  A failed cell counts as not stable.
inline BoundaryRecord find_boundary(const ScanSettings& s, const ScanLevel& l, CellJournal* journal = nullptr) {
  BoundaryRecord b;
  b.level = l;
  auto stable = [&](double tau) {
    ++b.evaluations;
    return detail::cached_cell(s, l, tau, journal).stable();
  };
  const double tau_max = s.tau_max * s.tau_unit(l);
  const double tau_min = s.tau_min * s.tau_unit(l);
  double lo = s.tau_start * s.tau_unit(l);
  while (!stable(lo)) {
    lo *= 0.5;
    if (lo < tau_min) {
      b.status = "no-stable-step";
      return b;
    }
  }
  double hi = lo;
  for (;;) {
    hi = lo * s.march;
    if (hi > tau_max) {
      b.tau_lo = lo;
      b.tau_hi = std::numeric_limits<double>::infinity();
      b.tau_star = std::numeric_limits<double>::infinity();
      b.status = "no-boundary";
      return b;
    }
    if (!stable(hi)) break;
    lo = hi;
  }
  while (hi / lo > 1.0 + s.tolerance) {
    const double mid = std::sqrt(lo * hi);
    (stable(mid) ? lo : hi) = mid;
  }
  b.tau_lo = lo;
  b.tau_hi = hi;
  b.tau_star = std::sqrt(lo * hi);
  b.status = "ok";
  return b;
}

inline std::vector<BoundaryRecord> boundary_scan(const ScanSettings& s, int threads, CellJournal* journal = nullptr) {
  const auto levels = s.levels();
  auto out = run_jobs(levels.size(), threads, [&](std::size_t i) { return find_boundary(s, levels[i], journal); });
  std::stable_sort(out.begin(), out.end(),
                   [](const BoundaryRecord& a, const BoundaryRecord& b) { return a.level.h() < b.level.h(); });
  return out;
}

/// Slope of log tau* against log h over the levels with a located boundary.
inline LineFit boundary_slope(const std::vector<BoundaryRecord>& bs) {
  std::vector<double> x, y;
  for (const auto& b : bs)
    if (b.status == "ok") {
      x.push_back(std::log(b.level.h()));
      y.push_back(std::log(b.tau_star));
    }
  return fit_line(x, y);
}

inline std::set<std::string> scan_keys() {
  return {"system",  "mode",     "tableau",    "N",          "N.min",         "N.max",   "N.count",
          "tau.min", "tau.max",  "tau.count",  "tau",        "T",             "T_over_eps", "eps",
          "h_over_eps", "guard", "noise",      "seed",       "filter",        "amplitude", "boundary.tau_start",
          "boundary.tau_min", "boundary.tau_max", "boundary.march", "boundary.tolerance", "scan.mode", "threads"};
}

/// Reads scan settings; defaults depend on the system.
inline ScanSettings scan_settings(const Config& c, const std::string& forced_system = "") {
  ScanSettings s;
  s.system = parse_system(forced_system.empty() ? c.text("system", "constant") : forced_system);
  const bool ww = s.system == ScanSystem::WaterWave;
  const bool hf = s.system == ScanSystem::HighFrequency;
  s.tableau = resolve_tableau(c.text("tableau", "rk4"));
  if (hf) {
    s.eps = c.numbers("eps", {0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625});
    s.h_over_eps = c.number("h_over_eps", 0.25);
    s.T_over_eps = c.number("T_over_eps", 64.0);
  } else if (c.has("N")) {
    for (double x : c.numbers("N", {})) s.ns.push_back(static_cast<std::size_t>(x));
  } else {
    const auto lo = static_cast<std::size_t>(c.integer("N.min", ww ? 32 : 16));
    const auto hi = static_cast<std::size_t>(c.integer("N.max", ww ? 256 : 1024));
    const auto cnt = static_cast<std::size_t>(c.integer("N.count", 12));
    s.ns = log_space_even(lo, hi, cnt);
  }
  s.T = c.number("T", ww ? 4.0 : 10.0);
  if (c.has("tau")) {
    s.taus = c.numbers("tau", {});
  } else {
    s.taus = log_space(c.number("tau.min", 1e-3), c.number("tau.max", 1.0),
                       static_cast<std::size_t>(c.integer("tau.count", 40)));
  }
  s.guard = c.number("guard", 1e6);
  s.noise = c.number("noise", ww ? 1e-6 : 1.0);
  s.seed = static_cast<std::uint64_t>(c.integer("seed", 7));
  s.filter = filter_by_name(c.text("filter", ww ? "exponential" : "none"));
  s.amplitude = c.number("amplitude", 0.3);
  s.tau_start = c.number("boundary.tau_start", ww ? 0.02 : hf ? 0.05 : 0.01);
  s.tau_min = c.number("boundary.tau_min", s.tau_start / 1024.0);
  s.tau_max = c.number("boundary.tau_max", hf ? s.T_over_eps / 4.0 : s.T / 4.0);
  s.march = c.number("boundary.march", 1.25);
  s.tolerance = c.number("boundary.tolerance", 0.01);
  if (!(s.march > 1.0) || !(s.tolerance > 0.0) || !(s.tau_start > 0.0) || !(s.tau_min > 0.0) || !(s.guard > 1.0))
    throw ConfigError("boundary.march > 1, boundary.tolerance > 0, boundary.tau_start > 0 and guard > 1 are required");
  return s;
}

// ---------------------------------------------------------------------------
// Convergence study (constant coefficients c = 3, sigma = 1)

struct ConvergeSettings {
  std::vector<std::string> schemes{"forward-euler", "backward-euler", "crank-nicolson", "rk4"};
  std::string spatial_scheme = "rk4";
  std::vector<std::size_t> spatial_ns{8, 16, 32, 64, 128};
  double spatial_tau = 1e-5;
  std::size_t temporal_n = 128;
  double tau_start = 0.02;
  std::size_t tau_count = 6;
  double T = 2.0;
  double c = 3.0;
  double sigma = 1.0;
  std::string reference = "exact";  // or "numerical": RK4 with reference_tau
  std::size_t reference_n = 1024;
  double reference_tau = 1e-5;
};

struct ErrorRecord {
  std::string sweep;
  std::string scheme;
  std::size_t n = 0;
  double h = 0.0;
  double tau = 0.0;
  double error = 0.0;
};

struct ConvergeResult {
  std::vector<ErrorRecord> errors;
  std::map<std::string, LineFit> temporal_orders;  // by scheme name
};

inline double pair_error(const SolverState& a, const CVector& ue, const CVector& ve) {
  const double h = a.grid().spacing();
  return std::hypot(l2_norm(a.u.samples() - ue, h), l2_norm(a.v.samples() - ve, h));
}

inline ConvergeResult run_converge(const ConvergeSettings& s, int threads) {
  const auto co = CoefficientSet::constant_coefficients(s.c, s.sigma);
  // Both references live on a reference_n grid and are sampled at the coarse
  // nodes.  "exact" evolves the resolved Fourier modes of the data in closed
  // form, so it is the solution of the PDE, not of the coarse semi-discrete system.
  SolverState ref = detail::smooth_data(Grid(s.reference_n));
  if (s.reference == "numerical") {
    ref = integrate(ref, co, Filter::none(), ButcherTableau::rk4(), s.reference_tau, s.T).final_state;
  } else if (s.reference == "exact") {
    auto [ue, ve] = exact_constant_solution(ref.u, ref.v, s.c, s.sigma, 1.0, s.T);
    ref = SolverState(std::move(ue), std::move(ve), s.T);
  } else {
    throw ConfigError("reference must be 'exact' or 'numerical'");
  }
  auto target = [&](const Grid& g) -> std::pair<CVector, CVector> {
    if (s.reference_n % g.size() != 0) throw ConfigError("reference.N must be a multiple of every N");
    const auto stride = static_cast<Eigen::Index>(s.reference_n / g.size());
    CVector ue(static_cast<Eigen::Index>(g.size())), ve(static_cast<Eigen::Index>(g.size()));
    for (Eigen::Index j = 0; j < ue.size(); ++j) {
      ue[j] = ref.u.samples()[j * stride];
      ve[j] = ref.v.samples()[j * stride];
    }
    return {ue, ve};
  };

  struct Job {
    std::string sweep;
    std::string scheme;
    std::size_t n;
    double tau;
  };
  std::vector<Job> jobs;
  for (auto n : s.spatial_ns) jobs.push_back(Job{"spatial", s.spatial_scheme, n, s.spatial_tau});
  for (const auto& scheme : s.schemes) {
    double tau = s.tau_start;
    for (std::size_t i = 0; i < s.tau_count; ++i, tau *= 0.5) jobs.push_back(Job{"temporal", scheme, s.temporal_n, tau});
  }
  ConvergeResult out;
  out.errors = run_jobs(jobs.size(), threads, [&](std::size_t i) {
    const Job& j = jobs[i];
    const Grid g(j.n);
    const auto tab = resolve_tableau(j.scheme);
    const auto res = integrate(detail::smooth_data(g), co, Filter::none(), tab, j.tau, s.T);
    const auto [ue, ve] = target(g);
    return ErrorRecord{j.sweep, tab.name, j.n, g.spacing(), j.tau, pair_error(res.final_state, ue, ve)};
  });
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> pts;
  for (const auto& e : out.errors)
    if (e.sweep == "temporal") {
      pts[e.scheme].first.push_back(std::log(e.tau));
      pts[e.scheme].second.push_back(std::log(e.error));
    }
  for (const auto& [name, xy] : pts) out.temporal_orders[name] = fit_line(xy.first, xy.second);
  return out;
}

// ---------------------------------------------------------------------------
// High-frequency caustic sweep (sigma = c = 1 on [0, 1), WKB data)

struct CausticSettings {
  std::vector<double> eps{0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625, 0.001953125, 0.0009765625};
  std::vector<double> snapshot_eps{0.0625, 0.015625, 0.00390625, 0.0009765625};
  double T = 0.0625;
  double h_over_eps = 0.25;
  double tau_fraction = 0.5;  // tau = tau_fraction * cfl_threshold
  ButcherTableau tableau = ButcherTableau::rk4();
  Filter filter = Filter::none();
  std::size_t fit_last = 4;
};

struct CausticRecord {
  double eps = 0.0;
  std::size_t n = 0;
  double h = 0.0;
  double tau = 0.0;
  std::size_t steps = 0;
  double amp0 = 0.0;
  double max_amp = 0.0;
  double max_amp_time = 0.0;
  RVector x;       // filled for snapshot eps values
  RVector abs_u;   // |u(x, T)|
};

struct CausticResult {
  std::vector<CausticRecord> records;  // by decreasing eps
  LineFit fit;                         // log2 max_amp against -log2 eps, smallest fit_last eps values
};

inline CausticRecord run_caustic_eps(const CausticSettings& s, double eps, bool keep_snapshot) {
  const auto n = static_cast<std::size_t>(std::llround(1.0 / (s.h_over_eps * eps)));
  if (n < 2 || n % 2 != 0) throw ConfigError("eps = " + fmt(eps) + " gives an odd grid size");
  const Grid g(n, 1.0);
  const auto init = wkb_initial(g, eps, WkbOptions{false, 1.0, s.filter});
  CausticRecord r;
  r.eps = eps;
  r.n = n;
  r.h = g.spacing();
  r.tau = s.tau_fraction * cfl_threshold(s.tableau, 1.0, 1.0, r.h, eps);
  r.amp0 = linf_norm(init.state.u);
  IntegrateOptions opt;
  opt.monitors.push_back([&](const StepInfo& i) {
    const double a = linf_norm(i.state.u);
    if (a > r.max_amp) {
      r.max_amp = a;
      r.max_amp_time = i.t;
    }
  });
  const auto res = integrate(init.state, CoefficientSet::constant_coefficients(1.0, 1.0, eps), s.filter, s.tableau,
                             r.tau, s.T, opt);
  r.steps = res.steps;
  if (keep_snapshot) {
    r.x = g.nodes();
    r.abs_u = res.final_state.u.samples().cwiseAbs();
  }
  return r;
}

inline CausticResult run_caustic(const CausticSettings& s, int threads) {
  std::vector<double> eps = s.eps;
  std::sort(eps.begin(), eps.end(), std::greater<>());
  CausticResult out;
  out.records = run_jobs(eps.size(), threads, [&](std::size_t i) {
    const bool snap = std::any_of(s.snapshot_eps.begin(), s.snapshot_eps.end(),
                                  [&](double e) { return std::abs(e - eps[i]) <= 1e-12 * e; });
    return run_caustic_eps(s, eps[i], snap);
  });
  std::vector<double> x, y;
  const std::size_t first = eps.size() > s.fit_last ? eps.size() - s.fit_last : 0;
  for (std::size_t i = first; i < out.records.size(); ++i) {
    x.push_back(-std::log2(out.records[i].eps));
    y.push_back(std::log2(out.records[i].max_amp));
  }
  out.fit = fit_line(x, y);
  return out;
}

// ---------------------------------------------------------------------------
// Tableau report

struct TableauAnalysis {
  ButcherTableau tableau;
  StabilityReport report;
  std::vector<Complex> poles;
  double cfl = std::numeric_limits<double>::quiet_NaN();
  double c = 3.0, sigma = 1.0, h = kTwoPi / 128.0;
  std::vector<std::pair<double, double>> psi;  // (z, psi(z)) on [0, 2 C1^2]
  bool unconditional = false;                   // psi <= 1 on the whole sampled range
  bool identity = false;                        // psi == 1 there to rounding
};

inline TableauAnalysis analyze_tableau(const ButcherTableau& t, double c, double sigma, double h,
                                       std::size_t samples = 401, double z_max_fallback = 16.0) {
  TableauAnalysis a;
  a.tableau = t;
  a.c = c;
  a.sigma = sigma;
  a.h = h;
  a.report = classify(t);
  a.poles = stability_poles(t);
  const double ext = a.report.imagExtent;
  const double zmax = (ext > 0.0 && std::isfinite(ext)) ? 2.0 * ext * ext : z_max_fallback;
  a.unconditional = true;
  a.identity = true;
  for (std::size_t i = 0; i < samples; ++i) {
    const double z = zmax * static_cast<double>(i) / static_cast<double>(samples - 1);
    double p = std::numeric_limits<double>::infinity();
    try {
      p = growth_factor(t, GrowthQuery{std::sqrt(z), 1.0});
    } catch (const PoleOfStabilityFunction&) {
    }
    if (!(p <= 1.0 + 1e-12)) a.unconditional = false;
    if (!(std::abs(p - 1.0) <= 1e-12)) a.identity = false;
    a.psi.emplace_back(z, p);
  }
  if (ext > 0.0) a.cfl = cfl_threshold_from_extent(ext, c, sigma, h);
  return a;
}

inline std::string format_report(const TableauAnalysis& a) {
  std::ostringstream o;
  o.precision(10);
  const auto& t = a.tableau;
  o << "tableau: " << t.name << " (" << t.stages() << " stages, " << (t.is_explicit() ? "explicit" : "implicit")
    << ")\n";
  o << "tr(G^2) = " << a.report.trG2 << "\n";
  o << "tr((G - e w^T)^2) = " << a.report.trGewT2 << "\n";
  o << "classification as tau -> 0: " << to_string(a.report.classification) << "\n";
  if (!t.is_explicit()) {
    o << "poles of f(z):";
    if (a.poles.empty()) o << " none";
    for (const auto& p : a.poles) o << " (" << p.real() << (p.imag() < 0 ? " - " : " + ") << std::abs(p.imag()) << "i)";
    o << "\n";
  }
  const double ext = a.report.imagExtent;
  o << "imaginary-axis extent C1 = " << (std::isinf(ext) ? std::string("inf") : fmt(ext)) << "\n";
  if (std::isfinite(ext) && ext > 0.0) o << "stable for z = tau^2 nu <= " << ext * ext << "\n";
  if (a.identity && std::isinf(ext)) o << "psi == 1: unconditionally strongly stable\n";
  else if (a.unconditional && std::isinf(ext)) o << "psi <= 1: unconditionally strongly stable\n";
  if (ext == 0.0) {
    o << "no imaginary-axis segment: use the tau <= C h regime\n";
  } else {
    o << "cfl_threshold(c=" << a.c << ", sigma=" << a.sigma << ", h=" << a.h << ") = "
      << (std::isinf(a.cfl) ? std::string("inf") : fmt(a.cfl)) << "\n";
  }
  for (const auto& n : a.report.notes) o << "note: " << n << "\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Water-wave turn-over run

struct WaveRunSettings {
  std::size_t n = 512;
  double amplitude = 0.6;
  WaterWaveConfig cfg;
};

struct WaveRunOutcome {
  std::optional<WaterWaveRun> run;
  std::string status = "ok";  // or the error message
};

inline WaveRunOutcome run_wave(const WaveRunSettings& s) {
  WaveRunOutcome out;
  try {
    out.run = run_waterwave(turnover_initial(s.n, s.amplitude, s.cfg), s.cfg);
  } catch (const std::exception& e) {
    out.status = e.what();
  }
  return out;
}

inline WaveRunSettings wave_settings(const Config& c) {
  WaveRunSettings s;
  s.n = static_cast<std::size_t>(c.integer("N", 512));
  s.amplitude = c.number("amplitude", 0.6);
  auto& w = s.cfg;
  w.g = c.number("g", 1.0);
  w.filter = filter_by_name(c.text("filter", "exponential"));
  w.gammaTol = c.number("gamma.tol", 1e-12);
  w.gammaMaxIter = static_cast<int>(c.integer("gamma.max_iter", 200));
  w.denseFallback = c.flag("gamma.dense_fallback", true);
  w.tableau = resolve_tableau(c.text("tableau", "rk4"));
  w.tau = c.number("tau", 1.0 / 4000.0);
  w.T = c.number("T", 3.75);
  w.snapshotTimes = c.numbers("snapshot_times", {0.0, 1.0, 2.0, 3.0, 3.5, 3.7});
  w.guard = c.number("guard", 1e6);
  w.diagnosticsEvery = static_cast<std::size_t>(c.integer("diagnostics_every", 1));
  w.validate();
  if (s.n < 4 || s.n % 2 != 0) throw ConfigError("N must be even and at least 4");
  return s;
}

inline std::set<std::string> wave_keys() {
  return {"mode", "N", "amplitude", "g", "filter", "gamma.tol", "gamma.max_iter", "gamma.dense_fallback",
          "tableau", "tau", "T", "snapshot_times", "guard", "diagnostics_every", "threads"};
}

// ---------------------------------------------------------------------------
// Command drivers.  Each reads its keys from the config, writes its CSVs and
// a manifest into out_dir, and returns the manifest.

struct CommandOptions {
  std::filesystem::path out_dir = ".";
  int threads = 1;
  bool resume = true;
  std::ostream* log = nullptr;
};

namespace detail {

inline RunManifest begin_manifest(const std::string& experiment, const CommandOptions& o) {
  std::filesystem::create_directories(o.out_dir);
  RunManifest m;
  m.experiment = experiment;
  m.started = utc_now();
  m.threads = o.threads;
  return m;
}

inline void finish(RunManifest& m, const Config& c, const CommandOptions& o) {
  m.config = c.resolved();
  m.config.erase("threads");
  m.finished = utc_now();
  m.write(o.out_dir);
}

inline std::string id_for(const std::string& experiment, const Config& c) {
  RunManifest m;
  m.experiment = experiment;
  m.config = c.resolved();
  m.config.erase("threads");
  return m.run_id();
}

inline void say(const CommandOptions& o, const std::string& s) {
  if (o.log) *o.log << s << std::endl;
}

}  // namespace detail

inline RunManifest cmd_stability_scan(const Config& c, const CommandOptions& o, const std::string& experiment = "stability-scan",
                                      const std::string& forced_system = "") {
  auto keys = scan_keys();
  if (!forced_system.empty()) {
    const auto extra = wave_keys();
    keys.insert(extra.begin(), extra.end());
  }
  c.require_known(keys);
  RunManifest m = detail::begin_manifest(experiment, o);
  const ScanSettings s = scan_settings(c, forced_system);
  const std::string mode = forced_system.empty() ? c.text("mode", "grid") : c.text("scan.mode", "boundary");
  const bool grid = mode == "grid" || mode == "both";
  const bool boundary = mode == "boundary" || mode == "both";
  if (!grid && !boundary) throw ConfigError("mode must be grid, boundary or both");
  const std::string id = detail::id_for(experiment, c);
  const std::string stem = experiment == "stability-scan" ? "stability" : "waterwave";

  const auto jpath = o.out_dir / (stem + "_cells.partial");
  if (!o.resume) std::filesystem::remove(jpath);
  CellJournal journal(jpath, id);
  if (journal.loaded()) detail::say(o, "resuming: " + std::to_string(journal.loaded()) + " cells already done");

  if (grid) {
    const auto recs = grid_scan(s, o.threads, &journal);
    CsvTable t(schema::scan);
    std::size_t unstable = 0, failed = 0;
    for (const auto& r : recs) {
      t.add_row(scan_row(id, s, r));
      unstable += r.classification == "unstable";
      failed += r.classification == "failed";
    }
    t.write(o.out_dir / (stem + "_scan.csv"));
    m.artifacts.push_back(stem + "_scan.csv");
    m.results["cells"] = std::to_string(recs.size());
    m.results["unstable_cells"] = std::to_string(unstable);
    m.results["failed_cells"] = std::to_string(failed);
  }
  if (boundary) {
    const auto bs = boundary_scan(s, o.threads, &journal);
    CsvTable t(schema::boundary);
    for (const auto& b : bs) {
      const double eps = s.system == ScanSystem::HighFrequency ? b.level.eps
                         : s.system == ScanSystem::WaterWave   ? std::numeric_limits<double>::quiet_NaN()
                                                               : 1.0;
      t.add(id, to_string(s.system), s.tableau.name, b.level.n, b.level.h(), eps, b.tau_lo, b.tau_hi, b.tau_star,
            b.evaluations, b.status);
      detail::say(o, "N=" + std::to_string(b.level.n) + " tau*=" + fmt(b.tau_star) + " (" + b.status + ")");
    }
    t.write(o.out_dir / (stem + "_boundary.csv"));
    const LineFit f = boundary_slope(bs);
    CsvTable ft(schema::fit);
    ft.add(id, experiment, s.tableau.name, "log h", "log tau_star", f.slope, f.intercept, f.points);
    ft.write(o.out_dir / (stem + "_fit.csv"));
    m.artifacts.push_back(stem + "_boundary.csv");
    m.artifacts.push_back(stem + "_fit.csv");
    m.results["boundary_slope"] = fmt(f.slope);
    detail::say(o, "boundary slope " + fmt(f.slope));
  }
  journal.remove();
  detail::finish(m, c, o);
  return m;
}

inline RunManifest cmd_converge(const Config& c, const CommandOptions& o) {
  c.require_known({"schemes", "spatial.scheme", "spatial.N", "spatial.tau", "temporal.N", "temporal.tau_start",
                   "temporal.tau_count", "T", "c", "sigma", "reference", "reference.N", "reference.tau", "tableau",
                   "threads"});
  RunManifest m = detail::begin_manifest("converge", o);
  ConvergeSettings s;
  // --tableau narrows the temporal sweep to one scheme.
  s.schemes = c.has("tableau") ? std::vector<std::string>{c.text("tableau", "rk4")} : c.words("schemes", s.schemes);
  s.spatial_scheme = c.text("spatial.scheme", s.spatial_scheme);
  s.spatial_ns.clear();
  for (double x : c.numbers("spatial.N", {8, 16, 32, 64, 128})) s.spatial_ns.push_back(static_cast<std::size_t>(x));
  s.spatial_tau = c.number("spatial.tau", s.spatial_tau);
  s.temporal_n = static_cast<std::size_t>(c.integer("temporal.N", 128));
  s.tau_start = c.number("temporal.tau_start", s.tau_start);
  s.tau_count = static_cast<std::size_t>(c.integer("temporal.tau_count", 6));
  s.T = c.number("T", s.T);
  s.c = c.number("c", s.c);
  s.sigma = c.number("sigma", s.sigma);
  s.reference = c.text("reference", s.reference);
  s.reference_n = static_cast<std::size_t>(c.integer("reference.N", s.reference == "numerical" ? 128 : 1024));
  s.reference_tau = c.number("reference.tau", s.reference_tau);
  const std::string id = detail::id_for("converge", c);

  const auto r = run_converge(s, o.threads);
  CsvTable t(schema::errors);
  for (const auto& e : r.errors) t.add(id, e.sweep, e.scheme, e.n, e.h, e.tau, s.T, e.error);
  t.write(o.out_dir / "converge_errors.csv");
  CsvTable ft(schema::fit);
  for (const auto& [name, f] : r.temporal_orders) {
    ft.add(id, "converge", name, "log tau", "log error", f.slope, f.intercept, f.points);
    m.results["order." + name] = fmt(f.slope);
    detail::say(o, name + " temporal order " + fmt(f.slope));
  }
  ft.write(o.out_dir / "converge_orders.csv");
  m.artifacts = {"converge_errors.csv", "converge_orders.csv"};
  detail::finish(m, c, o);
  return m;
}

inline RunManifest cmd_hf_caustic(const Config& c, const CommandOptions& o) {
  c.require_known({"eps", "snapshot_eps", "T", "h_over_eps", "tau_fraction", "tableau", "filter", "fit_last", "threads"});
  RunManifest m = detail::begin_manifest("hf-caustic", o);
  CausticSettings s;
  s.eps = c.numbers("eps", s.eps);
  s.snapshot_eps = c.numbers("snapshot_eps", s.snapshot_eps);
  s.T = c.number("T", s.T);
  s.h_over_eps = c.number("h_over_eps", s.h_over_eps);
  s.tau_fraction = c.number("tau_fraction", s.tau_fraction);
  s.tableau = resolve_tableau(c.text("tableau", "rk4"));
  s.filter = filter_by_name(c.text("filter", "none"));
  s.fit_last = static_cast<std::size_t>(c.integer("fit_last", 4));
  const std::string id = detail::id_for("hf-caustic", c);

  const auto r = run_caustic(s, o.threads);
  CsvTable amp(schema::amplitude), snap(schema::caustic_snapshot);
  for (const auto& rec : r.records) {
    amp.add(id, rec.eps, rec.n, rec.h, rec.tau, rec.steps, rec.amp0, rec.max_amp, rec.max_amp_time);
    for (Eigen::Index j = 0; j < rec.x.size(); ++j) snap.add(id, rec.eps, s.T, rec.x[j], rec.abs_u[j]);
  }
  amp.write(o.out_dir / "caustic_amplitude.csv");
  snap.write(o.out_dir / "caustic_snapshots.csv");
  CsvTable ft(schema::fit);
  ft.add(id, "hf-caustic", "max_amp", "-log2 eps", "log2 max_amp", r.fit.slope, r.fit.intercept, r.fit.points);
  ft.write(o.out_dir / "caustic_fit.csv");
  m.artifacts = {"caustic_amplitude.csv", "caustic_snapshots.csv", "caustic_fit.csv"};
  m.results["slope"] = fmt(r.fit.slope);
  detail::say(o, "caustic slope " + fmt(r.fit.slope));
  detail::finish(m, c, o);
  return m;
}

inline RunManifest cmd_waterwave(const Config& c, const CommandOptions& o) {
  const std::string mode = c.text("mode", "run");
  if (mode == "scan") return cmd_stability_scan(c, o, "waterwave-scan", "waterwave");
  if (mode != "run") throw ConfigError("waterwave mode must be run or scan");
  c.require_known(wave_keys());
  RunManifest m = detail::begin_manifest("waterwave", o);
  const WaveRunSettings s = wave_settings(c);
  const std::string id = detail::id_for("waterwave", c);
  const auto out = run_wave(s);

  CsvTable snap(schema::wave_snapshot), diag(schema::wave_diagnostics), sum(schema::wave_summary);
  const RVector alpha = Grid(s.n).nodes();
  if (out.run) {
    const auto& r = *out.run;
    for (const auto& sn : r.snapshots)
      for (Eigen::Index j = 0; j < sn.z.size(); ++j)
        snap.add(id, sn.t, static_cast<long>(j), alpha[j], sn.z[j].real(), sn.z[j].imag(), sn.phi[j], sn.gamma[j]);
    for (const auto& d : r.diagnostics) diag.add(id, d.t, d.minJacobian, d.maxAbsY, d.gammaIters, d.energyProxy);
    sum.add(id, s.n, s.cfg.tau, s.cfg.T, r.steps, r.final_state.t, r.turnover_time, r.max_gamma_iters, r.dense_solves,
            r.growth_ratio, "ok");
    m.results["turnover_time"] = fmt(r.turnover_time);
    detail::say(o, "steps " + std::to_string(r.steps) + ", turn-over at t=" + fmt(r.turnover_time));
  } else {
    sum.add(id, s.n, s.cfg.tau, s.cfg.T, 0, 0.0, std::numeric_limits<double>::quiet_NaN(), 0, 0,
            std::numeric_limits<double>::quiet_NaN(), out.status);
    detail::say(o, "run failed: " + out.status);
  }
  m.results["status"] = out.status;
  snap.write(o.out_dir / "waterwave_snapshots.csv");
  diag.write(o.out_dir / "waterwave_diagnostics.csv");
  sum.write(o.out_dir / "waterwave_summary.csv");
  m.artifacts = {"waterwave_snapshots.csv", "waterwave_diagnostics.csv", "waterwave_summary.csv"};
  detail::finish(m, c, o);
  return m;
}

inline RunManifest cmd_rk_analyze(const Config& c, const CommandOptions& o, std::string* report = nullptr) {
  c.require_known({"tableau", "c", "sigma", "N", "samples", "threads"});
  RunManifest m = detail::begin_manifest("rk-analyze", o);
  const auto tab = resolve_tableau(c.text("tableau", "rk4"));
  const double cc = c.number("c", 3.0), sigma = c.number("sigma", 1.0);
  const double h = kTwoPi / static_cast<double>(c.integer("N", 128));
  const auto samples = static_cast<std::size_t>(c.integer("samples", 401));
  if (samples < 2) throw ConfigError("samples must be at least 2");
  const std::string id = detail::id_for("rk-analyze", c);
  const auto a = analyze_tableau(tab, cc, sigma, h, samples);
  const std::string text = format_report(a);
  CsvTable t(schema::psi);
  for (const auto& [z, p] : a.psi) t.add(id, z, p);
  t.write(o.out_dir / "rk_psi.csv");
  {
    std::ofstream rep(o.out_dir / "rk_report.txt", std::ios::binary);
    rep << text;
  }
  if (report) *report = text;
  m.artifacts = {"rk_psi.csv", "rk_report.txt"};
  m.results["imag_extent"] = fmt(a.report.imagExtent);
  detail::finish(m, c, o);
  return m;
}

}  // namespace nlwave::experiments
