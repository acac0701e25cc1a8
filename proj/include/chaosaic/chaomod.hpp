#pragma once

// Chaotic modulation: the measurement subsystem (signal modulated onto a
// chaotic state, one state sampled every T) and the impulsively driven
// replica that maps candidate coefficients to predicted samples.

#include "chaosaic/dynsys.hpp"
#include "chaosaic/sigmodel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

namespace chaosaic {

/// SplitMix64 finalizer; the integer mixer behind every derived seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct ModulationConfig {
  SystemSpec sys = lorenz_system();
  Modulation mod{1, 0};  // u(t) x1 added to dx2/dt
  int obs = 1;           // x2 is sampled and reset
  double T = 0.2;
  double h = 1e-3;
  double T_u = 10.0;
  double burn_in = 20.0;
  /// Upper bound of the seed-derived extra settling time.
  double burn_in_jitter = 10.0;
  double amp_limit = 4.0;
  double divergence_bound = 1e6;

  int M() const { return static_cast<int>(std::floor(T_u / T + 1e-9)); }
  std::size_t steps_per_sample() const { return whole_steps(T, h, "sampling interval T"); }

  void validate() const {
    sys.validate();
    detail::check_modulation(sys, mod);
    if (obs < 0 || obs >= sys.n) throw std::invalid_argument("obs index out of range");
    steps_per_sample();
    if (!(T_u > 0.0) || M() < 1) throw std::invalid_argument("need T_u >= T");
    if (!(burn_in >= 0.0) || !(burn_in_jitter >= 0.0))
      throw std::invalid_argument("burn-in must be non-negative");
  }

  std::string fingerprint() const {
    std::ostringstream os;
    os.precision(17);
    os << sys.name;
    for (const auto& p : sys.params) os << ';' << p.name << '=' << p.value;
    os << ";mod=" << mod.row + 1 << ',' << mod.state + 1 << ";obs=" << obs + 1
       << ";T=" << T << ";h=" << h << ";T_u=" << T_u;
    return os.str();
  }
};

/// Lorenz setup: u x1 on row 2, x2 sampled.
inline ModulationConfig lorenz_config(double T = 0.2) {
  ModulationConfig c;
  c.sys = lorenz_system();
  c.T = T;
  return c;
}

/// Liu setup: u x1 on row 2 (the r x1 term), x2 sampled.
inline ModulationConfig liu_config(double T = 0.2) {
  ModulationConfig c;
  c.sys = liu_system();
  c.T = T;
  return c;
}

struct MeasurementRecord {
  Eigen::VectorXd z;
  double T = 0.0;
  int M = 0;
  int obs = 0;
  std::string system;
  std::uint64_t seed = 0;
  std::string fingerprint;
};

struct Measurement {
  MeasurementRecord record;
  /// Hidden driving trajectory; test oracles only.
  Trajectory truth;
};

/// On-attractor start: (1, ..., 1) settled for burn_in plus a seed-derived
/// extra duration in [0, burn_in_jitter).
inline State driving_initial_state(const ModulationConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto jitter_steps = static_cast<std::uint64_t>(std::floor(cfg.burn_in_jitter / cfg.h));
  const std::uint64_t extra = jitter_steps == 0 ? 0 : mix64(seed) % jitter_steps;
  const auto base = static_cast<std::uint64_t>(std::llround(cfg.burn_in / cfg.h));
  const std::uint64_t steps = base + extra;
  const State start = State::Ones(cfg.sys.n);
  if (steps == 0) return start;
  const double span = static_cast<double>(steps) * cfg.h;
  return integrate(cfg.sys, start, 0.0, span, cfg.h, {}, {cfg.divergence_bound})
      .states.back();
}

/// Samples z_m = x[obs](mT), m = 1..M, of the modulated driving system.
inline Measurement measure(const ModulationConfig& cfg, const SparseCoeffs& coeffs,
                           const BasisParams& basis, std::uint64_t seed) {
  cfg.validate();
  const SignalEvaluator signal(coeffs, basis);
  const double peak = signal.grid_max();
  if (!(peak < cfg.amp_limit))
    throw std::invalid_argument("signal amplitude " + std::to_string(peak) +
                                " is not below amp_limit " +
                                std::to_string(cfg.amp_limit));

  const int M = cfg.M();
  const std::size_t spp = cfg.steps_per_sample();
  const State x0 = driving_initial_state(cfg, seed);

  Measurement out;
  try {
    out.truth = integrate(cfg.sys, x0, 0.0, static_cast<double>(M * spp) * cfg.h,
                          cfg.h, DriveInput{cfg.mod, signal}, {cfg.divergence_bound});
  } catch (const DivergenceError& e) {
    throw DivergenceError(std::string(e.what()) + " with signal amplitude " +
                              std::to_string(peak),
                          e.step(), e.time());
  }
  auto& rec = out.record;
  rec.z.resize(M);
  for (int m = 1; m <= M; ++m)
    rec.z[m - 1] = out.truth.states[static_cast<std::size_t>(m) * spp][cfg.obs];
  rec.T = cfg.T;
  rec.M = M;
  rec.obs = cfg.obs;
  rec.system = cfg.sys.name;
  rec.seed = seed;
  rec.fingerprint = cfg.fingerprint();
  return out;
}

/// Driven replica started at the obs component z_1 and the system's
/// attractor means elsewhere.
inline State standard_initial_state(const ModulationConfig& cfg,
                                    const Eigen::VectorXd& z) {
  State y0 = cfg.sys.attractor_mean;
  y0[cfg.obs] = z[0];
  return y0;
}

struct MatchOptions {
  double burn_in = 20.0;
  double span = 1000.0;  // length of the unmodulated reference trajectory
  std::size_t stride = 10;
  int samples = 5;  // leading measurements compared
};

/// Attractor point whose unmodulated x[obs] at T, 2T, ... best matches the
/// first few samples. The modulation is ignored, so this is only a start
/// for the estimated mode: the attractor means are usually far enough off
/// that the opening transient dominates the residual.
inline State matched_initial_state(const ModulationConfig& cfg, const Eigen::VectorXd& z,
                                   const MatchOptions& opt = {}) {
  cfg.validate();
  if (opt.samples < 1 || opt.stride < 1 || !(opt.span > 0.0))
    throw std::invalid_argument("invalid match options");
  const int L = std::min<int>(opt.samples, static_cast<int>(z.size()));
  if (L < 1) throw std::invalid_argument("no measurements to match");
  const std::size_t spp = cfg.steps_per_sample();
  const State settled = integrate(cfg.sys, State::Ones(cfg.sys.n), 0.0, opt.burn_in, cfg.h,
                                  {}, {cfg.divergence_bound})
                            .states.back();
  const auto lib = integrate(cfg.sys, settled, 0.0, opt.span, cfg.h, {}, {cfg.divergence_bound});
  const std::size_t reach = static_cast<std::size_t>(L) * spp;
  if (lib.states.size() <= reach) throw std::invalid_argument("match span too short");
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_i = 0;
  for (std::size_t i = 0; i + reach < lib.states.size(); i += opt.stride) {
    double d = 0.0;
    for (int m = 1; m <= L && d < best; ++m) {
      const double e = lib.states[i + static_cast<std::size_t>(m) * spp][cfg.obs] - z[m - 1];
      d += e * e;
    }
    if (d < best) {
      best = d;
      best_i = i;
    }
  }
  return lib.states[best_i];
}

/// Where the replica's initial state comes from.
enum class InitialGuess { standard, matched };

inline State initial_guess(const ModulationConfig& cfg, const Eigen::VectorXd& z,
                           InitialGuess g) {
  return g == InitialGuess::matched ? matched_initial_state(cfg, z)
                                    : standard_initial_state(cfg, z);
}

/// Whether the driven replica starts from a fixed y0 or carries its
/// initial state as extra (unpenalized) unknowns.
enum class InitialStateMode { fixed, estimated };

/// Residual entries reported for a candidate whose driven system diverged.
inline constexpr double kDivergedResidual = 1e3;

/// The measurement map H of the reconstruction subsystem, its residual
/// H(a) - z and the forward-sensitivity Jacobian. Holds the basis tabulated
/// on the RK4 half-step grid so repeated evaluations only cost one
/// matrix-vector product for u(t).
class ChaoticReconstruction {
 public:
  struct Evaluation {
    Eigen::VectorXd predicted;  // z-hat, pre-reset samples
    Eigen::VectorXd residual;   // z-hat - z
    Eigen::MatrixXd jacobian;   // empty unless requested
    bool diverged = false;
  };

  /// Called right after the reset at sample m (0-based) with the
  /// post-reset state and sensitivity matrix (n x N).
  using Sensitivity = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ResetObserver = std::function<void(int m, const State& y, const Sensitivity& sens)>;

  ChaoticReconstruction(ModulationConfig cfg, BasisParams basis, Eigen::VectorXd z,
                        std::optional<State> y0 = {},
                        InitialStateMode mode = InitialStateMode::fixed)
      : cfg_(std::move(cfg)), basis_(basis), z_(std::move(z)), mode_(mode) {
    cfg_.validate();
    if (z_.size() != cfg_.M())
      throw std::invalid_argument("measurement length " + std::to_string(z_.size()) +
                                  " does not match M = " + std::to_string(cfg_.M()));
    if (!z_.allFinite()) throw std::invalid_argument("non-finite measurement");
    y0_ = y0 ? *y0 : standard_initial_state(cfg_, z_);
    detail::check_state(cfg_.sys, y0_);
    spp_ = cfg_.steps_per_sample();
    steps_ = spp_ * static_cast<std::size_t>(z_.size());
    const auto rows = static_cast<Eigen::Index>(2 * steps_ + 1);
    table_.resize(rows, basis_.N());
    for (Eigen::Index j = 0; j < rows; ++j)
      detail::basis_into(basis_, 0.5 * cfg_.h * static_cast<double>(j),
                         table_.row(j).data());
  }

  ChaoticReconstruction(const ModulationConfig& cfg, const BasisParams& basis,
                        const MeasurementRecord& rec, std::optional<State> y0 = {},
                        InitialStateMode mode = InitialStateMode::fixed)
      : ChaoticReconstruction(checked(cfg, rec), basis, rec.z, std::move(y0), mode) {}

  /// Coefficients first, then (in estimated mode) the n initial-state
  /// components of the driven replica.
  Eigen::Index num_params() const { return basis_.N() + num_nuisance(); }
  Eigen::Index num_coefficients() const { return basis_.N(); }
  Eigen::Index num_nuisance() const {
    return mode_ == InitialStateMode::estimated ? cfg_.sys.n : 0;
  }
  /// Starting values of the nuisance parameters (the standard y0).
  Eigen::VectorXd initial_nuisance() const {
    if (mode_ == InitialStateMode::fixed) return {};
    return Eigen::VectorXd(y0_);
  }
  Eigen::Index num_residuals() const { return z_.size(); }
  const State& initial_state() const { return y0_; }
  const Eigen::VectorXd& measurements() const { return z_; }
  const ModulationConfig& config() const { return cfg_; }

  Eigen::VectorXd residual(const Eigen::VectorXd& a) const {
    return evaluate(a, false).residual;
  }
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& a) const {
    return evaluate(a, true).jacobian;
  }

  Evaluation evaluate(const Eigen::VectorXd& a, bool with_jacobian,
                      const ResetObserver& observer = {}) const {
    if (a.size() != num_params())
      throw std::invalid_argument("parameter length does not match the model");
    if (!a.allFinite()) throw std::invalid_argument("non-finite coefficients");
    return with_jacobian ? run<true>(a, observer) : run<false>(a, observer);
  }

 private:
  static const ModulationConfig& checked(const ModulationConfig& cfg,
                                         const MeasurementRecord& rec) {
    if (rec.M != cfg.M() || rec.obs != cfg.obs || std::abs(rec.T - cfg.T) > 1e-12)
      throw std::invalid_argument("measurement record inconsistent with config");
    return cfg;
  }

  template <bool WithSens>
  Evaluation run(const Eigen::VectorXd& a, const ResetObserver& observer) const {
    const int n = cfg_.sys.n;
    const Eigen::Index N = basis_.N();
    const Eigen::Index M = z_.size();
    const double h = cfg_.h;
    const int mr = cfg_.mod.row, ms = cfg_.mod.state, obs = cfg_.obs;

    const Eigen::Index P = num_params();
    const Eigen::VectorXd u = table_ * a.head(N);

    Evaluation out;
    out.predicted.resize(M);
    if constexpr (WithSens) out.jacobian.setZero(M, P);

    State y = y0_;
    if (mode_ == InitialStateMode::estimated) y = a.tail(n);
    State k1(n), k2(n), k3(n), k4(n), ys(n);
    ModulationTerm term{cfg_.mod, 0.0};

    // RK4 applied to the linear sensitivity equation collapses to
    // s <- R s + V [psi(t); psi(t + h/2); psi(t + h)] with R n x n and
    // V n x 3, so the n x P work per step is two products instead of four.
    using Source = Eigen::Matrix<double, Eigen::Dynamic, 3, 0, kMaxDim, 3>;
    Sensitivity s, next;
    SquareMatrix jac(n, n), A(n, n), Asum(n, n), R(n, n);
    Source B(n, 3), Bsum(n, 3);
    const SquareMatrix I = SquareMatrix::Identity(n, n);
    if constexpr (WithSens) {
      s.setZero(n, P);
      if (P > N) s.rightCols(n).setIdentity();
      next.resize(n, P);
    }

    // One stage: ky = f(yv); (A, B) <- J (I + c A_prev, c B_prev) + source.
    auto stage = [&](Eigen::Index j, const State& yv, State& ky, double c, int col,
                     double weight) {
      term.u = u[j];
      detail::field_into(cfg_.sys, yv, &term, ky);
      if constexpr (WithSens) {
        detail::jacobian_into(cfg_.sys, yv, &term, jac);
        if (c == 0.0) {
          A = jac;
          B.setZero();
        } else {
          A = jac * (I + c * A);
          B = jac * (c * B);
        }
        B(mr, col) += yv[ms];
        Asum += weight * A;
        Bsum += weight * B;
      }
    };

    Eigen::Index m = 0;
    for (std::size_t k = 0; k < steps_; ++k) {
      const auto j = static_cast<Eigen::Index>(2 * k);
      if constexpr (WithSens) {
        Asum.setZero();
        Bsum.setZero();
      }
      stage(j, y, k1, 0.0, 0, 1.0);
      ys = y + 0.5 * h * k1;
      stage(j + 1, ys, k2, 0.5 * h, 1, 2.0);
      ys = y + 0.5 * h * k2;
      stage(j + 1, ys, k3, 0.5 * h, 1, 2.0);
      ys = y + h * k3;
      stage(j + 2, ys, k4, h, 2, 1.0);
      y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if constexpr (WithSens) {
        R = I + (h / 6.0) * Asum;
        Bsum *= h / 6.0;
        // Row-wise so every update is a contiguous length-P axpy.
        for (int i = 0; i < n; ++i) {
          auto row = next.row(i);
          row = R(i, 0) * s.row(0);
          for (int l = 1; l < n; ++l) row += R(i, l) * s.row(l);
          row.head(N) += Bsum(i, 0) * table_.row(j) + Bsum(i, 1) * table_.row(j + 1) +
                         Bsum(i, 2) * table_.row(j + 2);
        }
        s.swap(next);
      }

      if (!(y.norm() <= cfg_.divergence_bound)) {
        mark_diverged(out, m);
        return out;
      }
      if ((k + 1) % spp_ == 0) {
        out.predicted[m] = y[obs];
        if constexpr (WithSens) out.jacobian.row(m) = s.row(obs);
        y[obs] = z_[m];
        if constexpr (WithSens) s.row(obs).setZero();
        if (observer) observer(static_cast<int>(m), y, s);
        ++m;
      }
    }
    out.residual = out.predicted - z_;
    return out;
  }

  void mark_diverged(Evaluation& out, Eigen::Index samples_done) const {
    out.diverged = true;
    out.residual.resize(z_.size());
    for (Eigen::Index i = 0; i < z_.size(); ++i) {
      if (i < samples_done) {
        out.residual[i] = std::clamp(out.predicted[i] - z_[i], -kDivergedResidual,
                                     kDivergedResidual);
      } else {
        out.residual[i] = kDivergedResidual;
        out.predicted[i] = z_[i] + kDivergedResidual;
      }
    }
    if (out.jacobian.size() != 0) out.jacobian.setZero();
  }

  ModulationConfig cfg_;
  BasisParams basis_;
  Eigen::VectorXd z_;
  InitialStateMode mode_ = InitialStateMode::fixed;
  State y0_;
  std::size_t spp_ = 0;
  std::size_t steps_ = 0;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> table_;
};

inline Eigen::VectorXd driven_response(const ModulationConfig& cfg,
                                       const BasisParams& basis,
                                       const MeasurementRecord& rec,
                                       const SparseCoeffs& coeffs, const State& y0) {
  return ChaoticReconstruction(cfg, basis, rec, y0).evaluate(coeffs.alpha, false).predicted;
}

inline Eigen::VectorXd residual(const ModulationConfig& cfg, const BasisParams& basis,
                                const MeasurementRecord& rec,
                                const SparseCoeffs& coeffs) {
  return ChaoticReconstruction(cfg, basis, rec).residual(coeffs.alpha);
}

inline Eigen::MatrixXd residual_jacobian(const ModulationConfig& cfg,
                                         const BasisParams& basis,
                                         const MeasurementRecord& rec,
                                         const SparseCoeffs& coeffs) {
  return ChaoticReconstruction(cfg, basis, rec).jacobian(coeffs.alpha);
}

}  // namespace chaosaic
