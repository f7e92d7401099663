// nlwave: command-line driver for the stability, convergence, caustic,
// water-wave and tableau experiments.

#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "nlwave/experiments.hpp"

namespace ex = nlwave::experiments;

namespace {

struct Common {
  std::string config;
  std::string out_dir = ".";
  std::string tableau;
  int threads = 0;
  std::vector<std::string> sets;
  bool no_resume = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key-value config file")->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", c.out_dir, "directory for CSV artifacts and the manifest");
  cmd->add_option("--tableau", c.tableau, "built-in tableau name or tableau file");
  cmd->add_option("--threads", c.threads, "worker threads (default: config key, else all cores)");
  cmd->add_option("--set", c.sets, "override a config key, key=value (repeatable)");
  cmd->add_flag("--quiet", c.quiet, "no progress lines");
}

ex::Config load(const Common& c) {
  ex::Config cfg = c.config.empty() ? ex::Config{} : ex::Config::load(c.config);
  for (const auto& s : c.sets) cfg.set_assignment(s);
  if (!c.tableau.empty()) cfg.set("tableau", c.tableau);
  return cfg;
}

ex::CommandOptions options(const Common& c, const ex::Config& cfg) {
  ex::CommandOptions o;
  o.out_dir = c.out_dir;
  o.resume = !c.no_resume;
  o.log = c.quiet ? nullptr : &std::cerr;
  int t = c.threads;
  if (t <= 0 && cfg.has("threads")) t = std::stoi(cfg.values().at("threads"));
  if (t <= 0) t = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  o.threads = t;
  return o;
}

void report(const ex::RunManifest& m, const ex::CommandOptions& o) {
  std::cout << "manifest: " << m.path_in(o.out_dir).string() << "\n";
  for (const auto& a : m.artifacts) std::cout << "artifact: " << (o.out_dir / a).string() << "\n";
  for (const auto& [k, v] : m.results) std::cout << k << " = " << v << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonlocal hyperbolic system and water-wave experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ex::kVersion);

  Common scan, conv, caustic, wave, rk;
  auto* c_scan = app.add_subcommand("stability-scan", "stability map or boundary fit over (h, tau)");
  add_common(c_scan, scan);
  c_scan->add_flag("--no-resume", scan.no_resume, "ignore a partial scan left in --out-dir");
  auto* c_conv = app.add_subcommand("converge", "spatial and temporal error sweeps against the exact solution");
  add_common(c_conv, conv);
  auto* c_caus = app.add_subcommand("hf-caustic", "maximum amplitude of WKB data as eps decreases");
  add_common(c_caus, caustic);
  auto* c_wave = app.add_subcommand("waterwave", "turn-over run (mode = run) or stability scan (mode = scan)");
  add_common(c_wave, wave);
  c_wave->add_flag("--no-resume", wave.no_resume, "ignore a partial scan left in --out-dir");
  auto* c_rk = app.add_subcommand("rk-analyze", "stability report for a Butcher tableau");
  add_common(c_rk, rk);
  std::string rk_file;
  c_rk->add_option("file", rk_file, "tableau file or built-in name");

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_scan->parsed()) {
      const auto cfg = load(scan);
      const auto o = options(scan, cfg);
      report(ex::cmd_stability_scan(cfg, o), o);
    } else if (c_conv->parsed()) {
      const auto cfg = load(conv);
      const auto o = options(conv, cfg);
      report(ex::cmd_converge(cfg, o), o);
    } else if (c_caus->parsed()) {
      const auto cfg = load(caustic);
      const auto o = options(caustic, cfg);
      report(ex::cmd_hf_caustic(cfg, o), o);
    } else if (c_wave->parsed()) {
      const auto cfg = load(wave);
      const auto o = options(wave, cfg);
      report(ex::cmd_waterwave(cfg, o), o);
    } else if (c_rk->parsed()) {
      if (!rk_file.empty()) rk.tableau = rk_file;
      const auto cfg = load(rk);
      const auto o = options(rk, cfg);
      std::string text;
      const auto m = ex::cmd_rk_analyze(cfg, o, &text);
      std::cout << text;
      report(m, o);
    }
  } catch (const nlwave::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const nlwave::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
