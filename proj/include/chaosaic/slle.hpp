#pragma once

// Reconstructability analysis: local and supreme local Lyapunov exponents
// of the impulsive error system, threshold scans over the sampling
// interval, and 98%-energy bandwidth of a chaotic state.

#include "chaosaic/chaomod.hpp"
#include "chaosaic/dynsys.hpp"
#include "chaosaic/sigmodel.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace chaosaic {

/// A modulating signal: coefficients on a basis (periodically extended
/// beyond T_u).
struct SignalSpec {
  SparseCoeffs coeffs;
  BasisParams basis;
};

/// Finite-time exponents ln(sigma_i) / T_L of the error-system propagator
/// along the driving trajectory from x0, with the obs component of the
/// error zeroed at every t = mT. Sorted descending.
inline State local_lles(const ModulationConfig& cfg, const State& x0, double T_L,
                        const std::optional<SignalSpec>& signal = {}) {
  cfg.validate();
  const std::size_t spp = cfg.steps_per_sample();
  const std::size_t steps = whole_steps(T_L, cfg.h, "T_L");
  std::optional<ResetSchedule> resets;
  if (cfg.T <= T_L) {
    if (steps % spp != 0) throw std::invalid_argument("T_L is not a whole multiple of T");
    resets = ResetSchedule{cfg.T, cfg.obs};
  }
  std::optional<DriveInput> drive;
  if (signal) drive = DriveInput{cfg.mod, SignalEvaluator(signal->coeffs, signal->basis)};
  TangentOptions opts;
  opts.divergence_bound = cfg.divergence_bound;
  auto [traj, prop] = integrate_with_tangent(cfg.sys, x0, 0.0, T_L, cfg.h, drive, resets, opts);
  return prop.exponents();
}

struct SLLEResult {
  double T = 0.0;
  double T_L = 0.0;
  int obs = 0;
  State exponents;  // componentwise max over the scanned initial states
  int n_init = 0;
  Eigen::MatrixXd per_init;  // n_init x n, each row sorted descending
  double largest() const { return exponents[0]; }
};

struct AttractorSampling {
  double burn_in = 20.0;
  double burn_in_jitter = 10.0;
  double spacing = 1.0;
};

/// n_init states at equal time spacing along one long attractor trajectory
/// of the autonomous system; the start offset is drawn from `rng`.
inline std::vector<State> attractor_samples(const SystemSpec& sys, int n_init,
                                            double h, Rng& rng,
                                            const AttractorSampling& s = {}) {
  if (n_init < 1) throw std::invalid_argument("n_init must be at least 1");
  const auto spacing_steps = whole_steps(s.spacing, h, "sample spacing");
  const auto jitter_steps = static_cast<std::uint64_t>(std::floor(s.burn_in_jitter / h));
  std::uniform_int_distribution<std::uint64_t> jitter(0, jitter_steps);
  const auto burn_steps = static_cast<std::uint64_t>(std::llround(s.burn_in / h)) + jitter(rng);

  State x = State::Ones(sys.n);
  if (burn_steps > 0)
    x = integrate(sys, x, 0.0, static_cast<double>(burn_steps) * h, h).states.back();
  std::vector<State> out;
  out.reserve(static_cast<std::size_t>(n_init));
  out.push_back(x);
  if (n_init > 1) {
    const auto traj = integrate(sys, x, 0.0,
                                static_cast<double>(spacing_steps * (n_init - 1)) * h, h);
    for (int i = 1; i < n_init; ++i)
      out.push_back(traj.states[static_cast<std::size_t>(i) * spacing_steps]);
  }
  return out;
}

inline SLLEResult supreme_lles_from(const ModulationConfig& cfg,
                                    const std::vector<State>& inits, double T_L,
                                    const std::optional<SignalSpec>& signal = {}) {
  const int n = cfg.sys.n;
  SLLEResult res;
  res.T = cfg.T;
  res.T_L = T_L;
  res.obs = cfg.obs;
  res.n_init = static_cast<int>(inits.size());
  res.per_init.resize(res.n_init, n);
  res.exponents = State::Constant(n, -std::numeric_limits<double>::infinity());
  for (int i = 0; i < res.n_init; ++i) {
    const State e = local_lles(cfg, inits[static_cast<std::size_t>(i)], T_L, signal);
    res.per_init.row(i) = e.transpose();
    res.exponents = res.exponents.cwiseMax(e);
  }
  return res;
}

/// Supremum over x0 approximated by the maximum over n_init on-attractor
/// initial states.
inline SLLEResult supreme_lles(const ModulationConfig& cfg, double T_L, int n_init,
                               Rng& rng, const std::optional<SignalSpec>& signal = {}) {
  cfg.validate();
  return supreme_lles_from(cfg, attractor_samples(cfg.sys, n_init, cfg.h, rng), T_L,
                           signal);
}

struct ScanRow {
  double T = 0.0;
  double T_L = 0.0;  // whole number of periods actually used
  double largest_slle = 0.0;
};

/// Where the largest SLLE changes sign from negative to positive. When the
/// grid has no sign change the interval is open on one side (lo = 0 or
/// hi = +inf) and `found` is false.
struct Crossing {
  bool found = false;
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  double estimate = std::numeric_limits<double>::quiet_NaN();
};

struct ScanResult {
  std::vector<ScanRow> rows;
  Crossing crossing;
};

inline Crossing find_crossing(const std::vector<ScanRow>& rows) {
  Crossing c;
  if (rows.empty()) return c;
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    const auto& a = rows[i];
    const auto& b = rows[i + 1];
    if (a.largest_slle < 0.0 && b.largest_slle >= 0.0) {
      c.found = true;
      c.lo = a.T;
      c.hi = b.T;
      c.estimate = a.T + (b.T - a.T) * (-a.largest_slle) / (b.largest_slle - a.largest_slle);
      return c;
    }
  }
  if (rows.front().largest_slle >= 0.0) {
    c.lo = 0.0;
    c.hi = rows.front().T;
  } else {
    c.lo = rows.back().T;
    c.hi = std::numeric_limits<double>::infinity();
  }
  return c;
}

/// Largest SLLE over a grid of sampling intervals. The same initial states
/// serve every T; T_L is rounded to the nearest whole number of periods.
inline ScanResult threshold_scan(const ModulationConfig& tmpl,
                                 const std::vector<double>& T_grid, double T_L,
                                 int n_init, Rng& rng,
                                 const std::optional<SignalSpec>& signal = {}) {
  if (T_grid.empty()) throw std::invalid_argument("empty T grid");
  if (!std::is_sorted(T_grid.begin(), T_grid.end()))
    throw std::invalid_argument("T grid must be sorted");
  tmpl.validate();
  const auto inits = attractor_samples(tmpl.sys, n_init, tmpl.h, rng);
  ScanResult out;
  for (double T : T_grid) {
    ModulationConfig cfg = tmpl;
    cfg.T = T;
    cfg.steps_per_sample();
    const double periods = std::max(1.0, std::round(T_L / T));
    const double span = periods * T;
    const SLLEResult r = supreme_lles_from(cfg, inits, span, signal);
    out.rows.push_back({T, span, r.largest()});
  }
  out.crossing = find_crossing(out.rows);
  return out;
}

/// Fraction of spectral energy that defines the bandwidth.
inline constexpr double kBandwidthEnergy = 0.98;

namespace detail {

// Largest length <= n whose only prime factors are 2, 3 and 5.
inline std::size_t smooth_length(std::size_t n) {
  for (std::size_t m = n; m > 1; --m) {
    std::size_t r = m;
    for (std::size_t f : {2u, 3u, 5u})
      while (r % f == 0) r /= f;
    if (r == 1) return m;
  }
  return 1;
}

}  // namespace detail

/// Smallest f with cumulative one-sided periodogram energy on [0, f] at
/// least 98% of the total. Mean removed, no window; the series is truncated
/// to a 5-smooth length for the FFT.
inline double bandwidth_98(const std::vector<double>& series, double h) {
  if (series.size() < 256) throw std::invalid_argument("trajectory too short for a spectrum");
  const std::size_t len = detail::smooth_length(series.size());
  std::vector<double> x(series.begin(), series.begin() + static_cast<std::ptrdiff_t>(len));
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(len);
  for (double& v : x) v -= mean;

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, x);
  const std::size_t half = len / 2;
  std::vector<double> power(half + 1);
  double total = 0.0;
  for (std::size_t k = 0; k <= half; ++k) {
    power[k] = std::norm(spec[k]);
    total += power[k];
  }
  if (!(total > 0.0)) return 0.0;
  const double df = 1.0 / (static_cast<double>(len) * h);
  double acc = 0.0;
  for (std::size_t k = 0; k <= half; ++k) {
    acc += power[k];
    if (acc >= kBandwidthEnergy * total) return static_cast<double>(k) * df;
  }
  return static_cast<double>(half) * df;
}

inline double bandwidth_98(const Trajectory& traj, int index) {
  if (traj.states.empty() || index < 0 || index >= traj.states.front().size())
    throw std::invalid_argument("state index out of range");
  std::vector<double> series;
  series.reserve(traj.states.size());
  for (const auto& s : traj.states) series.push_back(s[index]);
  return bandwidth_98(series, traj.h);
}

/// Bandwidth of one state of the autonomous system over `span` time units
/// after a burn-in from (1, ..., 1).
inline double attractor_bandwidth(const SystemSpec& sys, int index, double span = 200.0,
                                  double h = 1e-3, double burn_in = 20.0) {
  const State start =
      integrate(sys, State::Ones(sys.n), 0.0, burn_in, h).states.back();
  return bandwidth_98(integrate(sys, start, 0.0, span, h), index);
}

}  // namespace chaosaic
