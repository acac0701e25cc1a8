#pragma once

// Experiment orchestration: flat key = value configs, seeded trials,
// Monte-Carlo sweeps and CSV emission.

#include "chaosaic/chaomod.hpp"
#include "chaosaic/dynsys.hpp"
#include "chaosaic/irnls.hpp"
#include "chaosaic/rdemod.hpp"
#include "chaosaic/sigmodel.hpp"
#include "chaosaic/slle.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace chaosaic {

// ---------------------------------------------------------------- config

/// Flat UTF-8 config: one `key = value` per line, `#` starts a comment,
/// lists are comma separated. Later keys override earlier ones.
class Config {
 public:
  Config() = default;

  static Config parse(std::istream& in, const std::string& origin = "<config>") {
    Config c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                 ": expected 'key = value'");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty key");
      c.values_[key] = value;
    }
    return c;
  }

  static Config parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    return parse(in, path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) throw std::runtime_error("missing config key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    return has(key) ? to_double(key, require(key)) : (used_.insert(key), fallback);
  }

  long long get_int(const std::string& key, long long fallback) const {
    return has(key) ? to_int(key, require(key)) : (used_.insert(key), fallback);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    const std::string v = require(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::runtime_error("config key '" + key + "': expected a boolean, got '" + v + "'");
  }

  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    std::vector<std::string> out;
    std::stringstream ss(require(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    if (out.empty()) throw std::runtime_error("config key '" + key + "' is an empty list");
    return out;
  }

  std::vector<double> get_doubles(const std::string& key,
                                  const std::vector<double>& fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    std::vector<double> out;
    for (const auto& s : get_list(key, {})) out.push_back(to_double(key, s));
    return out;
  }

  std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    std::vector<int> out;
    for (const auto& s : get_list(key, {})) out.push_back(static_cast<int>(to_int(key, s)));
    return out;
  }

  /// Keys present in the file that no getter asked for; typos show up here.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static double to_double(const std::string& key, const std::string& s) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != s.size())
      throw std::runtime_error("config key '" + key + "': '" + s + "' is not a number");
    return v;
  }

  static long long to_int(const std::string& key, const std::string& s) {
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != s.size())
      throw std::runtime_error("config key '" + key + "': '" + s + "' is not an integer");
    return v;
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

// ---------------------------------------------------------------- formatting

/// Shortest round-trip-safe rendering; the same double always prints the
/// same bytes.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);  // shortest round trip
  return std::string(buf, r.ptr);
}

// ---------------------------------------------------------------- solver config

/// Solver settings for the chaotic reconstruction: default outer loop and
/// inner controls, with Marquardt scaling (the initial-state unknowns sit
/// on a very different scale from the coefficients) and a first solve
/// that starts from zero.
inline IRNLSConfig reconstruction_defaults() {
  IRNLSConfig s;
  s.inner.scaling = DampingScaling::marquardt;
  s.first_solve_from_zero = true;
  return s;
}

inline IRNLSConfig solver_from_config(const Config& c, IRNLSConfig s = reconstruction_defaults()) {
  s.mu = c.get_double("mu", s.mu);
  s.eps0 = c.get_double("eps0", s.eps0);
  s.c = c.get_double("c", s.c);
  s.lambda = c.get_double("lambda", s.lambda);
  s.p = c.get_double("p", s.p);
  s.err = c.get_double("err", s.err);
  s.max_outer = static_cast<int>(c.get_int("max_outer", s.max_outer));
  s.init_range = c.get_double("init_range", s.init_range);
  s.restarts = static_cast<int>(c.get_int("restarts", s.restarts));
  s.first_solve_from_zero = c.get_bool("first_solve_from_zero", s.first_solve_from_zero);
  s.inner.max_iterations = static_cast<int>(c.get_int("inner_max_iterations", s.inner.max_iterations));
  s.inner.initial_damping = c.get_double("inner_initial_damping", s.inner.initial_damping);
  const std::string scaling = c.get("inner_scaling", s.inner.scaling == DampingScaling::identity
                                                         ? "identity"
                                                         : "marquardt");
  if (scaling == "identity")
    s.inner.scaling = DampingScaling::identity;
  else if (scaling == "marquardt")
    s.inner.scaling = DampingScaling::marquardt;
  else
    throw std::runtime_error("inner_scaling must be identity or marquardt");
  s.validate();
  return s;
}

inline void echo_solver(std::ostream& os, const IRNLSConfig& s) {
  os << "mu = " << fmt(s.mu) << "\neps0 = " << fmt(s.eps0) << "\nc = " << fmt(s.c)
     << "\nlambda = " << fmt(s.lambda) << "\np = " << fmt(s.p) << "\nerr = " << fmt(s.err)
     << "\nmax_outer = " << s.max_outer << "\ninit_range = " << fmt(s.init_range)
     << "\nrestarts = " << s.restarts
     << "\nfirst_solve_from_zero = " << (s.first_solve_from_zero ? "true" : "false")
     << "\ninner_max_iterations = " << s.inner.max_iterations
     << "\ninner_initial_damping = " << fmt(s.inner.initial_damping) << "\ninner_scaling = "
     << (s.inner.scaling == DampingScaling::identity ? "identity" : "marquardt") << '\n';
}

// ---------------------------------------------------------------- scenario

/// Initial state of the driven replica: where it comes from and whether
/// the solver may move it. Config spellings: matched (default),
/// matched_fixed, estimated (standard start, then estimated), standard.
struct StartPolicy {
  InitialGuess guess = InitialGuess::matched;
  InitialStateMode mode = InitialStateMode::estimated;
};

inline StartPolicy parse_start(const std::string& name) {
  if (name == "matched") return {InitialGuess::matched, InitialStateMode::estimated};
  if (name == "matched_fixed") return {InitialGuess::matched, InitialStateMode::fixed};
  if (name == "estimated") return {InitialGuess::standard, InitialStateMode::estimated};
  if (name == "standard") return {InitialGuess::standard, InitialStateMode::fixed};
  throw std::runtime_error("y0 must be matched, matched_fixed, estimated or standard; got '" +
                           name + "'");
}

inline std::string start_name(const StartPolicy& s) {
  const bool est = s.mode == InitialStateMode::estimated;
  if (s.guess == InitialGuess::matched) return est ? "matched" : "matched_fixed";
  return est ? "estimated" : "standard";
}

struct Scenario {
  std::string system = "lorenz";  // lorenz, liu or rdemod
  CoeffDistribution dist = CoeffDistribution::gaussian;
  int K = 10;
  double T = 0.2;
  double W = 5.0;
  double T_u = 10.0;
  double h = 1e-3;
  int trials = 21;
  std::uint64_t base_seed = 1;
  IRNLSConfig solver = reconstruction_defaults();
  Modulation mod{1, 0};
  int obs = 1;
  StartPolicy start;
  double amp_limit = 4.0;
  double chip_rate = 10.0;
  int max_retries = 3;

  BasisParams basis() const { return BasisParams(W, T_u); }

  ModulationConfig modulation() const {
    ModulationConfig c;
    c.sys = system_by_name(system);
    c.mod = mod;
    c.obs = obs;
    c.T = T;
    c.h = h;
    c.T_u = T_u;
    c.amp_limit = amp_limit;
    return c;
  }

  RDConfig rd(std::uint64_t chip_seed) const {
    RDConfig c;
    c.chip_rate = chip_rate;
    c.T = T;
    c.basis = basis();
    c.seed = chip_seed;
    return c;
  }

  void validate() const {
    const BasisParams b = basis();
    if (K < 1 || K > b.N()) throw std::invalid_argument("K out of range");
    if (trials < 1) throw std::invalid_argument("trials must be positive");
    if (max_retries < 0) throw std::invalid_argument("max_retries must be non-negative");
    solver.validate();
    if (system == "rdemod")
      rd(0).validate();
    else
      modulation().validate();
  }
};

/// Trial seed: SplitMix64 of the base seed, xor the trial index, mixed
/// again. Retry r of a trial re-derives with mix64(seed + r).
inline std::uint64_t trial_seed(std::uint64_t base_seed, std::uint64_t trial_index) {
  return mix64(mix64(base_seed) ^ trial_index);
}

inline std::uint64_t retry_seed(std::uint64_t seed, int retry) {
  return retry == 0 ? seed : mix64(seed + static_cast<std::uint64_t>(retry));
}

// Stream tags so the signal, the driving start and the chips never share
// a generator state.
inline constexpr std::uint64_t kSignalStream = 0x5157;
inline constexpr std::uint64_t kDriveStream = 0xd71e;
inline constexpr std::uint64_t kChipStream = 0xc417;
inline constexpr std::uint64_t kSolverStream = 0x501e;

struct TrialResult {
  std::string system;
  CoeffDistribution dist = CoeffDistribution::gaussian;
  int K = 0;
  double T = 0.0;
  int trial = 0;
  std::uint64_t seed = 0;
  int retries = 0;
  bool failed = false;  // no estimate produced (measurement diverged on every retry)
  std::string failure;
  double err = std::numeric_limits<double>::quiet_NaN();
  double support_precision = 0.0;
  double support_recall = 0.0;
  int outer_iterations = 0;
  bool converged = false;
  double wall_time = 0.0;
};

inline TrialResult run_trial(const Scenario& sc, int trial_index) {
  sc.validate();
  TrialResult r;
  r.system = sc.system;
  r.dist = sc.dist;
  r.K = sc.K;
  r.T = sc.T;
  r.trial = trial_index;
  const auto t_start = std::chrono::steady_clock::now();
  const BasisParams basis = sc.basis();
  const std::uint64_t base = trial_seed(sc.base_seed, static_cast<std::uint64_t>(trial_index));

  for (int attempt = 0; attempt <= sc.max_retries; ++attempt) {
    const std::uint64_t seed = retry_seed(base, attempt);
    r.seed = seed;
    r.retries = attempt;
    Rng signal_rng(mix64(seed ^ kSignalStream));
    const SparseCoeffs truth = gen_sparse_coeffs(basis, sc.K, sc.dist, sc.amp_limit, signal_rng);
    Rng solver_rng(mix64(seed ^ kSolverStream));

    IRNLSResult res;
    if (sc.system == "rdemod") {
      const RDConfig rd = sc.rd(mix64(seed ^ kChipStream));
      const Eigen::MatrixXd phi = build_rd_matrix(rd);
      res = irls_solve(phi, phi * truth.alpha, sc.solver, solver_rng);
    } else {
      const ModulationConfig cfg = sc.modulation();
      std::optional<Measurement> meas;
      try {
        meas = measure(cfg, truth, basis, mix64(seed ^ kDriveStream));
      } catch (const DivergenceError& e) {
        r.failure = e.what();
        continue;
      }
      ChaoticReconstruction model(cfg, basis, meas->record,
                                  initial_guess(cfg, meas->record.z, sc.start.guess),
                                  sc.start.mode);
      res = irnls_solve(model, sc.solver, solver_rng);
    }
    r.failed = false;
    r.failure.clear();
    r.err = relative_error(res.coeffs, truth);
    const SupportMetrics sm = support_metrics(res.coeffs, truth);
    r.support_precision = sm.precision;
    r.support_recall = sm.recall;
    r.outer_iterations = res.outer_iterations;
    r.converged = res.converged;
    r.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return r;
  }
  r.failed = true;
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return r;
}

// ---------------------------------------------------------------- sweep

struct CellSummary {
  std::string system;
  CoeffDistribution dist = CoeffDistribution::gaussian;
  int K = 0;
  double T = 0.0;
  int trials = 0;
  double median_err = std::numeric_limits<double>::quiet_NaN();
  double q1_err = std::numeric_limits<double>::quiet_NaN();
  double q3_err = std::numeric_limits<double>::quiet_NaN();
  double support_recall_mean = std::numeric_limits<double>::quiet_NaN();
  int failures = 0;
};

struct SweepResult {
  std::vector<CellSummary> cells;
  std::vector<TrialResult> trials;
};

/// Quantile with linear interpolation between order statistics
/// (position q (n - 1) in the sorted sample).
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline auto cell_key(const std::string& system, CoeffDistribution dist, int K, double T) {
  return std::tuple{system, std::string(to_string(dist)), K, T};
}

inline CellSummary summarize(const Scenario& sc, const std::vector<TrialResult>& trials) {
  CellSummary s;
  s.system = sc.system;
  s.dist = sc.dist;
  s.K = sc.K;
  s.T = sc.T;
  s.trials = static_cast<int>(trials.size());
  std::vector<double> errs;
  double recall = 0.0;
  for (const auto& t : trials) {
    if (t.failed) {
      ++s.failures;
      continue;
    }
    errs.push_back(t.err);
    recall += t.support_recall;
  }
  if (!errs.empty()) {
    s.median_err = quantile(errs, 0.5);
    s.q1_err = quantile(errs, 0.25);
    s.q3_err = quantile(errs, 0.75);
    s.support_recall_mean = recall / static_cast<double>(errs.size());
  }
  return s;
}

/// Runs every (cell, trial) pair on `threads` workers (0 = hardware
/// concurrency). Results do not depend on the thread count.
inline SweepResult run_sweep(const std::vector<Scenario>& grid, unsigned threads = 0,
                             const std::function<void(const TrialResult&)>& progress = {}) {
  if (grid.empty()) throw std::invalid_argument("empty scenario grid");
  for (const auto& sc : grid) sc.validate();

  std::vector<std::pair<std::size_t, int>> jobs;
  for (std::size_t c = 0; c < grid.size(); ++c)
    for (int t = 0; t < grid[c].trials; ++t) jobs.emplace_back(c, t);
  std::vector<TrialResult> results(jobs.size());

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(jobs.size()));
  std::atomic<std::size_t> next{0};
  std::mutex progress_mu;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const auto [c, t] = jobs[j];
      try {
        results[j] = run_trial(grid[c], t);
      } catch (const std::exception& e) {
        TrialResult r;
        r.system = grid[c].system;
        r.dist = grid[c].dist;
        r.K = grid[c].K;
        r.T = grid[c].T;
        r.trial = t;
        r.seed = trial_seed(grid[c].base_seed, static_cast<std::uint64_t>(t));
        r.failed = true;
        r.failure = e.what();
        results[j] = r;
      }
      if (progress) {
        std::lock_guard lock(progress_mu);
        progress(results[j]);
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
  }

  SweepResult out;
  std::vector<std::size_t> order(grid.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cell_key(grid[a].system, grid[a].dist, grid[a].K, grid[a].T) <
           cell_key(grid[b].system, grid[b].dist, grid[b].K, grid[b].T);
  });
  for (std::size_t c : order) {
    std::vector<TrialResult> cell;
    for (std::size_t j = 0; j < jobs.size(); ++j)
      if (jobs[j].first == c) cell.push_back(results[j]);
    out.cells.push_back(summarize(grid[c], cell));
    out.trials.insert(out.trials.end(), cell.begin(), cell.end());
  }
  return out;
}

/// Cartesian grid from a config: `systems`, `dists`, `K`, `T` are lists;
/// everything else is shared by all cells.
inline std::vector<Scenario> scenario_grid(const Config& c) {
  Scenario base;
  base.W = c.get_double("W", base.W);
  base.T_u = c.get_double("T_u", base.T_u);
  base.h = c.get_double("h", base.h);
  base.trials = static_cast<int>(c.get_int("trials", base.trials));
  base.base_seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<long long>(base.base_seed)));
  base.amp_limit = c.get_double("amp_limit", base.amp_limit);
  base.chip_rate = c.get_double("chip_rate", base.chip_rate);
  base.max_retries = static_cast<int>(c.get_int("max_retries", base.max_retries));
  base.mod.row = static_cast<int>(c.get_int("mod_row", base.mod.row + 1)) - 1;
  base.mod.state = static_cast<int>(c.get_int("mod_state", base.mod.state + 1)) - 1;
  base.obs = static_cast<int>(c.get_int("obs", base.obs + 1)) - 1;
  base.start = parse_start(c.get("y0", start_name(base.start)));
  base.solver = solver_from_config(c);

  std::vector<Scenario> grid;
  for (const auto& sys : c.get_list("systems", {"lorenz"}))
    for (const auto& d : c.get_list("dists", {"gaussian"}))
      for (int K : c.get_ints("K", {10}))
        for (double T : c.get_doubles("T", {0.2})) {
          Scenario s = base;
          s.system = sys;
          s.dist = parse_distribution(d);
          s.K = K;
          s.T = T;
          s.validate();
          grid.push_back(s);
        }
  return grid;
}

// ---------------------------------------------------------------- output

inline const char* kSweepHeader =
    "system,dist,K,T,trials,median_err,q1_err,q3_err,support_recall_mean,failures";

inline void write_sweep_csv(std::ostream& os, const std::vector<CellSummary>& cells) {
  os << kSweepHeader << '\n';
  for (const auto& c : cells)
    os << c.system << ',' << to_string(c.dist) << ',' << c.K << ',' << fmt(c.T) << ','
       << c.trials << ',' << fmt(c.median_err) << ',' << fmt(c.q1_err) << ','
       << fmt(c.q3_err) << ',' << fmt(c.support_recall_mean) << ',' << c.failures << '\n';
}

inline void write_trials_csv(std::ostream& os, const std::vector<TrialResult>& trials) {
  os << "system,dist,K,T,trial,seed,retries,failed,err,support_precision,support_recall,"
        "outer_iterations,converged\n";
  for (const auto& t : trials)
    os << t.system << ',' << to_string(t.dist) << ',' << t.K << ',' << fmt(t.T) << ','
       << t.trial << ',' << t.seed << ',' << t.retries << ',' << (t.failed ? 1 : 0) << ','
       << fmt(t.err) << ',' << fmt(t.support_precision) << ',' << fmt(t.support_recall) << ','
       << t.outer_iterations << ',' << (t.converged ? 1 : 0) << '\n';
}

// Wall time lives in its own file so the result CSVs stay byte-identical
// across reruns.
inline void write_timing_csv(std::ostream& os, const std::vector<TrialResult>& trials) {
  os << "system,dist,K,T,trial,wall_time_s\n";
  for (const auto& t : trials)
    os << t.system << ',' << to_string(t.dist) << ',' << t.K << ',' << fmt(t.T) << ','
       << t.trial << ',' << fmt(t.wall_time) << '\n';
}

/// Plot-ready (x, y, series) rows: median Err against K, one series per
/// (system, dist, T), and against T, one series per (system, dist, K).
inline void write_plot_csvs(const std::filesystem::path& dir,
                            const std::vector<CellSummary>& cells) {
  std::ofstream byK(dir / "plot_err_vs_K.csv");
  std::ofstream byT(dir / "plot_err_vs_T.csv");
  byK << "x,y,series\n";
  byT << "x,y,series\n";
  for (const auto& c : cells) {
    byK << c.K << ',' << fmt(c.median_err) << ',' << c.system << '/' << to_string(c.dist)
        << "/T=" << fmt(c.T) << '\n';
    byT << fmt(c.T) << ',' << fmt(c.median_err) << ',' << c.system << '/' << to_string(c.dist)
        << "/K=" << c.K << '\n';
  }
  if (!byK || !byT) throw std::runtime_error("failed writing plot CSVs in " + dir.string());
}

/// Side-by-side medians where two systems share (dist, K, T). Informational.
inline std::string comparison_report(const std::vector<CellSummary>& cells) {
  std::ostringstream os;
  std::map<std::tuple<std::string, int, double>, std::map<std::string, double>> by_cell;
  for (const auto& c : cells)
    by_cell[{std::string(to_string(c.dist)), c.K, c.T}][c.system] = c.median_err;
  const std::vector<std::pair<std::string, std::string>> pairs = {
      {"lorenz", "liu"}, {"lorenz", "rdemod"}, {"liu", "rdemod"}};
  for (const auto& [a, b] : pairs) {
    int wins = 0;
    int total = 0;
    for (const auto& [key, m] : by_cell) {
      if (!m.count(a) || !m.count(b)) continue;
      const auto& [dist, K, T] = key;
      const double ea = m.at(a);
      const double eb = m.at(b);
      os << a << " vs " << b << "  dist=" << dist << " K=" << K << " T=" << fmt(T)
         << "  " << fmt(ea) << " vs " << fmt(eb) << '\n';
      ++total;
      if (ea < eb) ++wins;
    }
    if (total > 0)
      os << a << " lower median Err than " << b << " in " << wins << " of " << total
         << " matched cells\n";
  }
  if (os.str().empty()) os << "no matched cells across systems\n";
  return os.str();
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

/// sweep.csv, trials.csv, timing.csv, config_echo.txt, plot CSVs and
/// report.txt under out_dir.
inline void emit_outputs(const SweepResult& res, const std::filesystem::path& out_dir,
                         const std::string& config_echo) {
  ensure_dir(out_dir);
  {
    auto os = open_out(out_dir / "sweep.csv");
    write_sweep_csv(os, res.cells);
  }
  {
    auto os = open_out(out_dir / "trials.csv");
    write_trials_csv(os, res.trials);
  }
  {
    auto os = open_out(out_dir / "timing.csv");
    write_timing_csv(os, res.trials);
  }
  {
    auto os = open_out(out_dir / "config_echo.txt");
    os << config_echo;
  }
  write_plot_csvs(out_dir, res.cells);
  auto os = open_out(out_dir / "report.txt");
  os << comparison_report(res.cells);
}

/// Every resolved parameter of a grid, defaults included.
inline std::string echo_grid(const std::vector<Scenario>& grid) {
  std::ostringstream os;
  if (grid.empty()) return "";
  const Scenario& b = grid.front();
  std::set<std::string> systems, dists;
  std::set<int> Ks;
  std::set<double> Ts;
  for (const auto& s : grid) {
    systems.insert(s.system);
    dists.insert(std::string(to_string(s.dist)));
    Ks.insert(s.K);
    Ts.insert(s.T);
  }
  auto join = [](const auto& set, auto f) {
    std::string out;
    for (const auto& v : set) out += (out.empty() ? "" : ", ") + f(v);
    return out;
  };
  auto id = [](const std::string& s) { return s; };
  os << "systems = " << join(systems, id) << "\ndists = " << join(dists, id)
     << "\nK = " << join(Ks, [](int k) { return std::to_string(k); })
     << "\nT = " << join(Ts, [](double t) { return fmt(t); }) << "\nW = " << fmt(b.W)
     << "\nT_u = " << fmt(b.T_u) << "\nh = " << fmt(b.h) << "\ntrials = " << b.trials
     << "\nseed = " << b.base_seed << "\namp_limit = " << fmt(b.amp_limit)
     << "\nchip_rate = " << fmt(b.chip_rate) << "\nmax_retries = " << b.max_retries
     << "\nmod_row = " << b.mod.row + 1 << "\nmod_state = " << b.mod.state + 1
     << "\nobs = " << b.obs + 1 << "\ny0 = " << start_name(b.start) << '\n';
  echo_solver(os, b.solver);
  return os.str();
}

// ---------------------------------------------------------------- CSV io

inline void write_coeffs_csv(std::ostream& os, const SparseCoeffs& c) {
  os << "index,value\n";
  for (Eigen::Index i = 0; i < c.size(); ++i) os << i + 1 << ',' << fmt(c.alpha[i]) << '\n';
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

inline SparseCoeffs read_coeffs_csv(std::istream& in) {
  std::string line;
  std::vector<std::pair<long, double>> rows;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line == "index,value") continue;
    }
    const auto f = split_csv(line);
    if (f.size() != 2) throw std::runtime_error("bad coefficient row '" + line + "'");
    rows.emplace_back(std::stol(f[0]), std::stod(f[1]));
  }
  Eigen::VectorXd a = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows.size()));
  for (const auto& [i, v] : rows) {
    if (i < 1 || i > static_cast<long>(rows.size()))
      throw std::runtime_error("coefficient index " + std::to_string(i) + " out of range");
    a[i - 1] = v;
  }
  return SparseCoeffs(a);
}

inline void write_measurement_csv(std::ostream& os, const MeasurementRecord& r) {
  os << "# system = " << r.system << "\n# T = " << fmt(r.T) << "\n# M = " << r.M
     << "\n# obs_index = " << r.obs + 1 << "\n# seed = " << r.seed
     << "\n# fingerprint = " << r.fingerprint << "\nm,t,z_m\n";
  for (int m = 0; m < r.M; ++m)
    os << m + 1 << ',' << fmt((m + 1) * r.T) << ',' << fmt(r.z[m]) << '\n';
}

inline MeasurementRecord read_measurement_csv(std::istream& in) {
  MeasurementRecord r;
  std::string line;
  std::vector<double> z;
  bool have_T = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto key = line.substr(1, eq - 1);
      auto val = line.substr(eq + 1);
      key.erase(0, key.find_first_not_of(' '));
      key.erase(key.find_last_not_of(' ') + 1);
      val.erase(0, val.find_first_not_of(' '));
      if (key == "system") r.system = val;
      else if (key == "T") { r.T = std::stod(val); have_T = true; }
      else if (key == "M") r.M = std::stoi(val);
      else if (key == "obs_index") r.obs = std::stoi(val) - 1;
      else if (key == "seed") r.seed = std::stoull(val);
      else if (key == "fingerprint") r.fingerprint = val;
      continue;
    }
    if (line == "m,t,z_m") continue;
    const auto f = split_csv(line);
    if (f.size() != 3) throw std::runtime_error("bad measurement row '" + line + "'");
    if (std::stol(f[0]) != static_cast<long>(z.size()) + 1)
      throw std::runtime_error("measurement rows out of order at m = " + f[0]);
    z.push_back(std::stod(f[2]));
  }
  if (!have_T) throw std::runtime_error("measurement file lacks a '# T' header");
  if (r.M != static_cast<int>(z.size()))
    throw std::runtime_error("measurement header says M = " + std::to_string(r.M) + " but has " +
                             std::to_string(z.size()) + " rows");
  r.z = Eigen::Map<const Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(z.size()));
  return r;
}

inline void write_diagnostics_csv(std::ostream& os, const std::vector<OuterRecord>& d) {
  os << "outer_iter,cost,eps,step_ratio,inner_iters\n";
  for (const auto& r : d)
    os << r.outer_iter << ',' << fmt(r.cost) << ',' << fmt(r.eps) << ',' << fmt(r.step_ratio)
       << ',' << r.inner_iters << '\n';
}

inline void write_scan_csv(std::ostream& os, const ScanResult& s) {
  os << "T,largest_slle,crossing_flag\n";
  for (const auto& row : s.rows) {
    const bool flag = s.crossing.found && (row.T == s.crossing.lo || row.T == s.crossing.hi);
    os << fmt(row.T) << ',' << fmt(row.largest_slle) << ',' << (flag ? 1 : 0) << '\n';
  }
}

}  // namespace chaosaic
