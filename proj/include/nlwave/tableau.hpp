#pragma once

// Butcher tableaus: representation, text format and the built-in methods.
//
// File format (whitespace separated, rationals such as 1/6 allowed):
//   s
//   p_1  G_11 ... G_1s
//   ...
//   p_s  G_s1 ... G_ss
//   w_1 ... w_s
// Blank lines and text after '#' are ignored.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "nlwave/errors.hpp"

namespace nlwave {

struct ButcherTableau {
  std::string name;
  Eigen::MatrixXd G;
  Eigen::VectorXd w;
  Eigen::VectorXd p;

  int stages() const { return static_cast<int>(w.size()); }

  /// True when G is strictly lower triangular.
  bool is_explicit() const {
    for (Eigen::Index i = 0; i < G.rows(); ++i)
      for (Eigen::Index j = i; j < G.cols(); ++j)
        if (G(i, j) != 0.0) return false;
    return true;
  }

  std::vector<std::string> warnings() const {
    std::vector<std::string> out;
    const double sum = w.sum();
    if (std::abs(sum - 1.0) > 1e-12) {
      std::ostringstream os;
      os.precision(17);
      os << "weights sum to " << sum << ", not 1 (inconsistent method)";
      out.push_back(os.str());
    }
    return out;
  }

  static ButcherTableau make(std::string name, Eigen::MatrixXd G, Eigen::VectorXd w, Eigen::VectorXd p) {
    if (G.rows() != G.cols() || G.rows() != w.size() || w.size() != p.size() || w.size() == 0)
      throw Error("tableau dimensions are inconsistent");
    return ButcherTableau{std::move(name), std::move(G), std::move(w), std::move(p)};
  }

  // Built-in methods.

  static ButcherTableau forward_euler() {
    return make("forward-euler", Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1));
  }

  static ButcherTableau backward_euler() {
    return make("backward-euler", Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1));
  }

  static ButcherTableau crank_nicolson() {
    Eigen::MatrixXd G(2, 2);
    G << 0, 0, 0.5, 0.5;
    return make("crank-nicolson", G, Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(0.0, 1.0));
  }

  /// Two-stage method blending the explicit and implicit Euler stages with weight delta.
  static ButcherTableau weighted_euler(double delta) {
    Eigen::MatrixXd G(2, 2);
    G << 0, 0, 1.0 - delta, delta;
    std::ostringstream name;
    name << "weighted-euler(" << delta << ")";
    return make(name.str(), G, Eigen::Vector2d(1.0 - delta, delta), Eigen::Vector2d(0.0, 1.0));
  }

  static ButcherTableau rk4() {
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(4, 4);
    G(1, 0) = 0.5;
    G(2, 1) = 0.5;
    G(3, 2) = 1.0;
    Eigen::VectorXd w(4), p(4);
    w << 1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0;
    p << 0.0, 0.5, 0.5, 1.0;
    return make("rk4", G, w, p);
  }

  static ButcherTableau rk3() {
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(3, 3);
    G(1, 0) = 1.0;
    G(2, 0) = 0.25;
    G(2, 1) = 0.25;
    Eigen::VectorXd w(3), p(3);
    w << 1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0;
    p << 0.0, 1.0, 0.5;
    return make("rk3", G, w, p);
  }
};

namespace detail {

inline bool parse_plain_number(std::string_view tok, double& out) {
  std::string s(tok);
  if (s.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == s.size() && std::isfinite(out);
}

}  // namespace detail

/// Parses "a", "a/b" (decimal or integer a, b); throws ParseError on bad input.
inline double parse_rational(std::string_view tok, std::size_t line) {
  const auto slash = tok.find('/');
  double num = 0.0, den = 1.0;
  if (slash == std::string_view::npos) {
    if (!detail::parse_plain_number(tok, num)) throw ParseError(line, "not a number: '" + std::string(tok) + "'");
    return num;
  }
  if (!detail::parse_plain_number(tok.substr(0, slash), num) ||
      !detail::parse_plain_number(tok.substr(slash + 1), den))
    throw ParseError(line, "not a rational: '" + std::string(tok) + "'");
  if (den == 0.0) throw ParseError(line, "zero denominator in '" + std::string(tok) + "'");
  return num / den;
}

inline ButcherTableau parse_tableau(std::istream& in, std::string name = "custom") {
  struct Row {
    std::size_t line;
    std::vector<std::string> toks;
  };
  std::vector<Row> rows;
  std::string text;
  std::size_t lineno = 0;
  while (std::getline(in, text)) {
    ++lineno;
    if (auto hash = text.find('#'); hash != std::string::npos) text.erase(hash);
    std::istringstream ls(text);
    Row r{lineno, {}};
    for (std::string tok; ls >> tok;) r.toks.push_back(tok);
    if (!r.toks.empty()) rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ParseError(lineno == 0 ? 1 : lineno, "empty tableau");

  const auto& head = rows.front();
  if (head.toks.size() != 1) throw ParseError(head.line, "first line must hold only the stage count");
  double sd = parse_rational(head.toks[0], head.line);
  if (sd < 1 || sd != std::floor(sd) || sd > 64) throw ParseError(head.line, "stage count must be an integer in [1, 64]");
  const auto s = static_cast<std::size_t>(sd);

  if (rows.size() < s + 2) {
    const std::size_t at = rows.back().line + 1;
    throw ParseError(at, "expected " + std::to_string(s) + " stage rows and a weight row");
  }
  if (rows.size() > s + 2) throw ParseError(rows[s + 2].line, "unexpected trailing content");

  Eigen::MatrixXd G(s, s);
  Eigen::VectorXd p(s), w(s);
  for (std::size_t i = 0; i < s; ++i) {
    const auto& r = rows[i + 1];
    if (r.toks.size() != s + 1)
      throw ParseError(r.line, "stage row needs " + std::to_string(s + 1) + " entries (node then " +
                                   std::to_string(s) + " coefficients), got " + std::to_string(r.toks.size()));
    p[static_cast<Eigen::Index>(i)] = parse_rational(r.toks[0], r.line);
    for (std::size_t j = 0; j < s; ++j)
      G(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = parse_rational(r.toks[j + 1], r.line);
  }
  const auto& wr = rows[s + 1];
  if (wr.toks.size() != s)
    throw ParseError(wr.line, "weight row needs " + std::to_string(s) + " entries, got " + std::to_string(wr.toks.size()));
  for (std::size_t j = 0; j < s; ++j) w[static_cast<Eigen::Index>(j)] = parse_rational(wr.toks[j], wr.line);
  return ButcherTableau::make(std::move(name), G, w, p);
}

inline ButcherTableau parse_tableau_string(const std::string& text, std::string name = "custom") {
  std::istringstream in(text);
  return parse_tableau(in, std::move(name));
}

inline ButcherTableau load_tableau_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open tableau file " + path.string());
  return parse_tableau(in, path.stem().string());
}

/// Built-in name ("rk4", "fe", "weighted-euler:0.7", ...) or a tableau file path.
inline ButcherTableau resolve_tableau(const std::string& spec) {
  if (spec == "forward-euler" || spec == "fe" || spec == "euler") return ButcherTableau::forward_euler();
  if (spec == "backward-euler" || spec == "be") return ButcherTableau::backward_euler();
  if (spec == "crank-nicolson" || spec == "cn") return ButcherTableau::crank_nicolson();
  if (spec == "rk4") return ButcherTableau::rk4();
  if (spec == "rk3") return ButcherTableau::rk3();
  for (std::string prefix : {"weighted-euler:", "weighted-euler=", "weighted-euler-"}) {
    if (spec.rfind(prefix, 0) == 0) {
      double d = 0.0;
      const auto rest = spec.substr(prefix.size());
      if (std::filesystem::exists(spec)) break;
      if (!detail::parse_plain_number(rest, d)) throw Error("bad weighted-euler parameter in '" + spec + "'");
      return ButcherTableau::weighted_euler(d);
    }
  }
  if (std::filesystem::exists(spec)) return load_tableau_file(spec);
  throw Error("unknown tableau '" + spec + "' (not a built-in name or an existing file)");
}

}  // namespace nlwave
