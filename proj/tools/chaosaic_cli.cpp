// chaosaic: measure, reconstruct, slle, bandwidth and sweep from flat configs.

#include "chaosaic/chaosaic.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace chaosaic;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

Config load_config(const Common& c) {
  Config cfg = Config::load(c.config);
  if (c.seed) cfg.set("seed", std::to_string(*c.seed));
  return cfg;
}

// Paths inside a config are relative to the config file.
fs::path resolve(const Common& c, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : fs::path(c.config).parent_path() / path;
}

void warn_unused(const Config& cfg) {
  for (const auto& k : cfg.unused_keys())
    std::cerr << "warning: config key '" << k << "' was not used\n";
}

std::uint64_t seed_of(const Config& cfg) {
  return static_cast<std::uint64_t>(cfg.get_int("seed", 1));
}

SystemSpec system_from(const Config& cfg, const std::string& name) {
  SystemSpec sys = system_by_name(name);
  for (const auto& p : sys.params) {
    const std::string key = name + "." + p.name;
    if (cfg.has(key)) sys.set_param(p.name, cfg.get_double(key, p.value));
  }
  return sys;
}

ModulationConfig modulation_from(const Config& cfg) {
  ModulationConfig m;
  m.sys = system_from(cfg, cfg.get("system", "lorenz"));
  m.T = cfg.get_double("T", m.T);
  m.h = cfg.get_double("h", m.h);
  m.T_u = cfg.get_double("T_u", m.T_u);
  m.mod.row = static_cast<int>(cfg.get_int("mod_row", m.mod.row + 1)) - 1;
  m.mod.state = static_cast<int>(cfg.get_int("mod_state", m.mod.state + 1)) - 1;
  m.obs = static_cast<int>(cfg.get_int("obs", m.obs + 1)) - 1;
  m.amp_limit = cfg.get_double("amp_limit", m.amp_limit);
  m.burn_in = cfg.get_double("burn_in", m.burn_in);
  m.validate();
  return m;
}

void echo_modulation(std::ostream& os, const ModulationConfig& m, const BasisParams& b) {
  os << "system = " << m.sys.name << '\n';
  for (const auto& p : m.sys.params) os << m.sys.name << '.' << p.name << " = " << fmt(p.value) << '\n';
  os << "T = " << fmt(m.T) << "\nh = " << fmt(m.h) << "\nT_u = " << fmt(m.T_u)
     << "\nW = " << fmt(b.W()) << "\nmod_row = " << m.mod.row + 1
     << "\nmod_state = " << m.mod.state + 1 << "\nobs = " << m.obs + 1
     << "\namp_limit = " << fmt(m.amp_limit) << "\nburn_in = " << fmt(m.burn_in) << '\n';
}

int cmd_measure(const Common& c) {
  const Config cfg = load_config(c);
  const ModulationConfig m = modulation_from(cfg);
  const BasisParams basis(cfg.get_double("W", 5.0), m.T_u);
  const int K = static_cast<int>(cfg.get_int("K", 10));
  const auto dist = parse_distribution(cfg.get("dist", "gaussian"));
  const std::uint64_t seed = seed_of(cfg);
  warn_unused(cfg);

  Rng rng(mix64(seed ^ kSignalStream));
  const SparseCoeffs truth = gen_sparse_coeffs(basis, K, dist, m.amp_limit, rng);
  const Measurement meas = measure(m, truth, basis, mix64(seed ^ kDriveStream));

  ensure_dir(c.out);
  auto mo = open_out(fs::path(c.out) / "measurement.csv");
  write_measurement_csv(mo, meas.record);
  auto co = open_out(fs::path(c.out) / "coeffs_true.csv");
  write_coeffs_csv(co, truth);
  auto eo = open_out(fs::path(c.out) / "config_echo.txt");
  echo_modulation(eo, m, basis);
  eo << "K = " << K << "\ndist = " << to_string(dist) << "\nseed = " << seed << '\n';
  std::cout << "M = " << meas.record.M << " samples written to " << c.out << '\n';
  return 0;
}

int cmd_reconstruct(const Common& c) {
  const Config cfg = load_config(c);
  const ModulationConfig m = modulation_from(cfg);
  const BasisParams basis(cfg.get_double("W", 5.0), m.T_u);
  std::ifstream min(resolve(c, cfg.require("measurement")));
  if (!min) throw std::runtime_error("cannot open measurement file");
  const MeasurementRecord rec = read_measurement_csv(min);
  std::optional<SparseCoeffs> truth;
  if (cfg.has("truth")) {
    std::ifstream tin(resolve(c, cfg.require("truth")));
    if (!tin) throw std::runtime_error("cannot open truth file");
    truth = read_coeffs_csv(tin);
  }
  const StartPolicy start = parse_start(cfg.get("y0", start_name(StartPolicy{})));
  const IRNLSConfig solver = solver_from_config(cfg);
  const std::uint64_t seed = seed_of(cfg);
  warn_unused(cfg);

  ChaoticReconstruction model(m, basis, rec, initial_guess(m, rec.z, start.guess), start.mode);
  Rng rng(mix64(seed ^ kSolverStream));
  const IRNLSResult res = irnls_solve(model, solver, rng);

  ensure_dir(c.out);
  auto co = open_out(fs::path(c.out) / "coeffs.csv");
  write_coeffs_csv(co, res.coeffs);
  auto dout = open_out(fs::path(c.out) / "diagnostics.csv");
  write_diagnostics_csv(dout, res.diagnostics);
  auto eo = open_out(fs::path(c.out) / "config_echo.txt");
  echo_modulation(eo, m, basis);
  eo << "y0 = " << start_name(start) << "\nseed = " << seed << '\n';
  echo_solver(eo, solver);

  std::ostringstream summary;
  summary << "converged = " << (res.converged ? "true" : "false")
          << "\nouter_iterations = " << res.outer_iterations
          << "\nfinal_cost = " << fmt(res.final_cost) << '\n';
  if (truth) {
    const SupportMetrics sm = support_metrics(res.coeffs, *truth);
    summary << "err = " << fmt(relative_error(res.coeffs, *truth))
            << "\nsupport_precision = " << fmt(sm.precision)
            << "\nsupport_recall = " << fmt(sm.recall) << '\n';
  }
  auto so = open_out(fs::path(c.out) / "summary.txt");
  so << summary.str();
  std::cout << summary.str();
  return 0;
}

// One scan per series. A series varies one of obs, the Lorenz-style r, or
// the sparsity of a modulating signal.
int cmd_slle(const Common& c) {
  const Config cfg = load_config(c);
  ModulationConfig base = modulation_from(cfg);
  const std::vector<double> grid = cfg.get_doubles("T_grid", {0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4});
  const double T_L = cfg.get_double("T_L", 50.0);
  const int n_init = static_cast<int>(cfg.get_int("n_init", 100));
  const std::vector<int> obs_list = cfg.get_ints("obs_list", {base.obs + 1});
  const std::vector<double> r_list = cfg.get_doubles("r_list", {});
  const std::vector<int> K_list = cfg.get_ints("K_list", {});
  const double W = cfg.get_double("W", 5.0);
  const auto dist = parse_distribution(cfg.get("dist", "gaussian"));
  const std::uint64_t seed = seed_of(cfg);
  warn_unused(cfg);

  struct Series {
    std::string label;
    ModulationConfig cfg;
    std::optional<SignalSpec> signal;
  };
  std::vector<Series> series;
  if (!r_list.empty()) {
    for (double r : r_list) {
      Series s{"r=" + fmt(r), base, std::nullopt};
      s.cfg.sys.set_param("r", r);
      series.push_back(s);
    }
  } else if (!K_list.empty()) {
    const BasisParams basis(W, base.T_u);
    for (int K : K_list) {
      Rng rng(mix64(seed ^ kSignalStream ^ static_cast<std::uint64_t>(K)));
      series.push_back({"K=" + std::to_string(K), base,
                        SignalSpec{gen_sparse_coeffs(basis, K, dist, base.amp_limit, rng), basis}});
    }
  } else {
    for (int o : obs_list) {
      Series s{"obs=" + std::to_string(o), base, std::nullopt};
      s.cfg.obs = o - 1;
      s.cfg.validate();
      series.push_back(s);
    }
  }

  ensure_dir(c.out);
  auto plot = open_out(fs::path(c.out) / "plot_slle_vs_T.csv");
  plot << "x,y,series\n";
  auto cross = open_out(fs::path(c.out) / "crossings.csv");
  cross << "series,found,lo,hi,estimate\n";
  for (const auto& s : series) {
    Rng rng(mix64(seed));
    const ScanResult scan = threshold_scan(s.cfg, grid, T_L, n_init, rng, s.signal);
    std::string file = "scan_" + s.label + ".csv";
    std::replace(file.begin(), file.end(), '=', '_');
    auto so = open_out(fs::path(c.out) / file);
    write_scan_csv(so, scan);
    for (const auto& row : scan.rows)
      plot << fmt(row.T) << ',' << fmt(row.largest_slle) << ',' << s.label << '\n';
    cross << s.label << ',' << (scan.crossing.found ? 1 : 0) << ',' << fmt(scan.crossing.lo)
          << ',' << fmt(scan.crossing.hi) << ',' << fmt(scan.crossing.estimate) << '\n';
    std::cout << s.label << ": crossing in [" << fmt(scan.crossing.lo) << ", "
              << fmt(scan.crossing.hi) << "]\n";
  }
  auto eo = open_out(fs::path(c.out) / "config_echo.txt");
  echo_modulation(eo, base, BasisParams(W, base.T_u));
  eo << "T_L = " << fmt(T_L) << "\nn_init = " << n_init << "\nseed = " << seed << '\n';
  return 0;
}

int cmd_bandwidth(const Common& c) {
  const Config cfg = load_config(c);
  const auto systems = cfg.get_list("systems", {"lorenz", "liu"});
  const auto indices = cfg.get_ints("index", {1});
  const double span = cfg.get_double("span", 200.0);
  const double h = cfg.get_double("h", 1e-3);
  const double burn_in = cfg.get_double("burn_in", 20.0);
  std::vector<SystemSpec> specs;
  for (const auto& name : systems) specs.push_back(system_from(cfg, name));
  warn_unused(cfg);

  ensure_dir(c.out);
  auto os = open_out(fs::path(c.out) / "bandwidth.csv");
  os << "system,index,bandwidth_98\n";
  for (const auto& sys : specs)
    for (int idx : indices) {
      const double bw = attractor_bandwidth(sys, idx - 1, span, h, burn_in);
      os << sys.name << ',' << idx << ',' << fmt(bw) << '\n';
      std::cout << sys.name << " x" << idx << ": " << fmt(bw) << '\n';
    }
  auto eo = open_out(fs::path(c.out) / "config_echo.txt");
  for (const auto& sys : specs)
    for (const auto& p : sys.params) eo << sys.name << '.' << p.name << " = " << fmt(p.value) << '\n';
  eo << "span = " << fmt(span) << "\nh = " << fmt(h) << "\nburn_in = " << fmt(burn_in) << '\n';
  return 0;
}

int cmd_sweep(const Common& c) {
  const Config cfg = load_config(c);
  const auto grid = scenario_grid(cfg);
  const auto threads = static_cast<unsigned>(cfg.get_int("threads", 0));
  const bool quiet = cfg.get_bool("quiet", false);
  warn_unused(cfg);

  const SweepResult res = run_sweep(grid, threads, [&](const TrialResult& t) {
    if (quiet) return;
    std::fprintf(stderr, "%s %s K=%d T=%s trial %d: %s\n", t.system.c_str(),
                 std::string(to_string(t.dist)).c_str(), t.K, fmt(t.T).c_str(), t.trial,
                 t.failed ? ("failed: " + t.failure).c_str() : ("err " + fmt(t.err)).c_str());
  });
  emit_outputs(res, c.out, echo_grid(grid));
  write_sweep_csv(std::cout, res.cells);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chaotic analog-to-information conversion toolkit"};
  app.require_subcommand(1);

  Common common;
  auto add = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", common.config, "key = value config file")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", common.out, "output directory")->required();
    sub->add_option("--seed", common.seed, "overrides the config seed");
    return sub;
  };
  auto* measure_cmd = add("measure", "generate a sparse signal and sample the modulated system");
  auto* recon_cmd = add("reconstruct", "recover coefficients from a measurement file");
  auto* slle_cmd = add("slle", "largest SLLE over a grid of sampling intervals");
  auto* bw_cmd = add("bandwidth", "98% energy bandwidth of attractor states");
  auto* sweep_cmd = add("sweep", "Monte-Carlo sweep over system, dist, K and T");

  CLI11_PARSE(app, argc, argv);
  try {
    if (measure_cmd->parsed()) return cmd_measure(common);
    if (recon_cmd->parsed()) return cmd_reconstruct(common);
    if (slle_cmd->parsed()) return cmd_slle(common);
    if (bw_cmd->parsed()) return cmd_bandwidth(common);
    if (sweep_cmd->parsed()) return cmd_sweep(common);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
