#pragma once

// Continuous-time dynamical systems, fixed-step RK4 integration and
// variational (tangent) propagation with impulsive resets.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace chaosaic {

inline constexpr int kMaxDim = 4;

/// State vector: dynamic size, stack storage up to kMaxDim.
using State = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using SquareMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

enum class FieldId { lorenz, liu, zero, linear_diagonal };

struct Parameter {
  std::string name;
  double value = 0.0;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t step, double time)
      : std::runtime_error(what), step_(step), time_(time) {}
  std::size_t step() const noexcept { return step_; }
  double time() const noexcept { return time_; }

 private:
  std::size_t step_;
  double time_;
};

struct SystemSpec {
  std::string name;
  int n = 0;
  std::vector<Parameter> params;
  FieldId field = FieldId::zero;
  bool has_jacobian = true;
  /// Long-run state means on the attractor; seeds the driven replica.
  State attractor_mean;

  double param(std::string_view key) const {
    for (const auto& p : params)
      if (p.name == key) return p.value;
    throw std::invalid_argument("system '" + name + "' has no parameter '" +
                                std::string(key) + "'");
  }

  void set_param(std::string_view key, double value) {
    for (auto& p : params)
      if (p.name == key) {
        p.value = value;
        return;
      }
    throw std::invalid_argument("system '" + name + "' has no parameter '" +
                                std::string(key) + "'");
  }

  void validate() const {
    if (n < 1 || n > kMaxDim)
      throw std::invalid_argument("system dimension must be in [1, " +
                                  std::to_string(kMaxDim) + "]");
    for (const auto& p : params)
      if (!std::isfinite(p.value))
        throw std::invalid_argument("parameter '" + p.name + "' is not finite");
    if (attractor_mean.size() != n)
      throw std::invalid_argument("attractor_mean has wrong length");
    switch (field) {
      case FieldId::lorenz:
      case FieldId::liu:
        if (n != 3) throw std::invalid_argument("built-in systems are 3-D");
        break;
      case FieldId::linear_diagonal:
        if (static_cast<int>(params.size()) != n)
          throw std::invalid_argument("linear_diagonal needs one rate per state");
        break;
      case FieldId::zero:
        break;
      default:
        throw std::invalid_argument("unknown field_id");
    }
  }
};

// Attractor means at the default parameters, from a 2000-unit RK4 run
// (h = 1e-3) after a 50-unit burn-in from (1, 1, 1).
inline SystemSpec lorenz_system(double sigma = 30.0, double r = 50.0,
                                double b = 3.0) {
  SystemSpec s;
  s.name = "lorenz";
  s.n = 3;
  s.params = {{"sigma", sigma}, {"r", r}, {"b", b}};
  s.field = FieldId::lorenz;
  s.attractor_mean = State(3);
  s.attractor_mean << 0.0, 0.0, 44.43;
  s.validate();
  return s;
}

inline SystemSpec liu_system(double sigma = 30.0, double r = 42.0,
                             double b = 2.5, double c = 4.0) {
  SystemSpec s;
  s.name = "liu";
  s.n = 3;
  s.params = {{"sigma", sigma}, {"r", r}, {"b", b}, {"c", c}};
  s.field = FieldId::liu;
  s.attractor_mean = State(3);
  s.attractor_mean << 0.0, 0.0, 41.22;
  s.validate();
  return s;
}

inline SystemSpec zero_system(int n) {
  SystemSpec s;
  s.name = "zero";
  s.n = n;
  s.field = FieldId::zero;
  s.attractor_mean = State::Zero(n);
  s.validate();
  return s;
}

/// dx_i/dt = rates[i] * x_i
inline SystemSpec linear_diagonal_system(const std::vector<double>& rates) {
  SystemSpec s;
  s.name = "linear_diagonal";
  s.n = static_cast<int>(rates.size());
  for (std::size_t i = 0; i < rates.size(); ++i)
    s.params.push_back({"a" + std::to_string(i + 1), rates[i]});
  s.field = FieldId::linear_diagonal;
  s.attractor_mean = State::Zero(s.n);
  s.validate();
  return s;
}

inline SystemSpec system_by_name(std::string_view name) {
  if (name == "lorenz") return lorenz_system();
  if (name == "liu") return liu_system();
  throw std::invalid_argument("unknown system '" + std::string(name) + "'");
}

/// Multiplicative modulation: u(t) * x[state] is added to dx[row]/dt.
/// Indices are 0-based.
struct Modulation {
  int row = 0;
  int state = 0;
};

struct ModulationTerm {
  Modulation where;
  double u = 0.0;
};

namespace detail {

inline void check_modulation(const SystemSpec& sys, const Modulation& m) {
  if (m.row < 0 || m.row >= sys.n || m.state < 0 || m.state >= sys.n)
    throw std::invalid_argument("modulation indices out of range");
}

inline void check_state(const SystemSpec& sys, const State& x) {
  if (x.size() != sys.n)
    throw std::invalid_argument("state length does not match system dimension");
  if (!x.allFinite()) throw std::invalid_argument("non-finite state");
}

// Unchecked kernels used by the integrators.
inline void field_into(const SystemSpec& sys, const State& x,
                       const ModulationTerm* mod, State& dx) {
  dx.resize(sys.n);
  const auto& p = sys.params;
  switch (sys.field) {
    case FieldId::lorenz: {
      const double sigma = p[0].value, r = p[1].value, b = p[2].value;
      dx[0] = sigma * (x[1] - x[0]);
      dx[1] = r * x[0] - x[1] - x[0] * x[2];
      dx[2] = x[0] * x[1] - b * x[2];
      break;
    }
    case FieldId::liu: {
      const double sigma = p[0].value, r = p[1].value, b = p[2].value,
                   c = p[3].value;
      dx[0] = sigma * (x[1] - x[0]);
      dx[1] = r * x[0] - x[0] * x[2];
      dx[2] = c * x[0] * x[0] - b * x[2];
      break;
    }
    case FieldId::zero:
      dx.setZero();
      break;
    case FieldId::linear_diagonal:
      for (int i = 0; i < sys.n; ++i) dx[i] = p[i].value * x[i];
      break;
    default:
      throw std::invalid_argument("unknown field_id");
  }
  if (mod) dx[mod->where.row] += mod->u * x[mod->where.state];
}

inline void jacobian_into(const SystemSpec& sys, const State& x,
                          const ModulationTerm* mod, SquareMatrix& jac) {
  jac.setZero(sys.n, sys.n);
  const auto& p = sys.params;
  switch (sys.field) {
    case FieldId::lorenz: {
      const double sigma = p[0].value, r = p[1].value, b = p[2].value;
      jac(0, 0) = -sigma;
      jac(0, 1) = sigma;
      jac(1, 0) = r - x[2];
      jac(1, 1) = -1.0;
      jac(1, 2) = -x[0];
      jac(2, 0) = x[1];
      jac(2, 1) = x[0];
      jac(2, 2) = -b;
      break;
    }
    case FieldId::liu: {
      const double sigma = p[0].value, r = p[1].value, b = p[2].value,
                   c = p[3].value;
      jac(0, 0) = -sigma;
      jac(0, 1) = sigma;
      jac(1, 0) = r - x[2];
      jac(1, 2) = -x[0];
      jac(2, 0) = 2.0 * c * x[0];
      jac(2, 2) = -b;
      break;
    }
    case FieldId::zero:
      break;
    case FieldId::linear_diagonal:
      for (int i = 0; i < sys.n; ++i) jac(i, i) = p[i].value;
      break;
    default:
      throw std::invalid_argument("unknown field_id");
  }
  if (mod) jac(mod->where.row, mod->where.state) += mod->u;
}

}  // namespace detail

inline State eval_vector_field(const SystemSpec& sys, const State& x,
                               const std::optional<ModulationTerm>& mod = {}) {
  detail::check_state(sys, x);
  if (mod) detail::check_modulation(sys, mod->where);
  State dx(sys.n);
  detail::field_into(sys, x, mod ? &*mod : nullptr, dx);
  return dx;
}

inline SquareMatrix eval_jacobian(const SystemSpec& sys, const State& x,
                                  const std::optional<ModulationTerm>& mod = {}) {
  detail::check_state(sys, x);
  if (mod) detail::check_modulation(sys, mod->where);
  SquareMatrix jac(sys.n, sys.n);
  detail::jacobian_into(sys, x, mod ? &*mod : nullptr, jac);
  return jac;
}

/// Time-varying excitation u(t) applied through a Modulation.
struct DriveInput {
  Modulation where;
  std::function<double(double)> u;
};

struct Trajectory {
  double t0 = 0.0;
  double h = 0.0;
  std::vector<State> states;

  std::size_t steps() const { return states.empty() ? 0 : states.size() - 1; }
  double time(std::size_t k) const { return t0 + static_cast<double>(k) * h; }
};

struct IntegrationOptions {
  double divergence_bound = 1e6;
};

/// Number of fixed steps covering `span`; throws when span/h is not whole.
inline std::size_t whole_steps(double span, double h, const char* what) {
  if (!(h > 0.0)) throw std::invalid_argument("step size must be positive");
  if (!(span > 0.0)) throw std::invalid_argument(std::string(what) + " must be positive");
  const double q = span / h;
  const double k = std::round(q);
  if (k < 1.0 || std::abs(q - k) > 1e-6 * std::max(1.0, q))
    throw std::invalid_argument(std::string(what) + " is not a whole multiple of h");
  return static_cast<std::size_t>(k);
}

namespace detail {

inline void check_divergence(const State& x, double bound, std::size_t step,
                             double t) {
  const double norm = x.norm();
  if (!(norm <= bound))
    throw DivergenceError("state diverged (|x| = " + std::to_string(norm) +
                              ") at step " + std::to_string(step) +
                              ", t = " + std::to_string(t),
                          step, t);
}

}  // namespace detail

/// Classical fourth-order Runge-Kutta with fixed step h over [t0, t1].
inline Trajectory integrate(const SystemSpec& sys, const State& x0, double t0,
                            double t1, double h,
                            const std::optional<DriveInput>& input = {},
                            const IntegrationOptions& opts = {}) {
  sys.validate();
  detail::check_state(sys, x0);
  if (input) detail::check_modulation(sys, input->where);
  const std::size_t steps = whole_steps(t1 - t0, h, "integration span");

  Trajectory traj;
  traj.t0 = t0;
  traj.h = h;
  traj.states.reserve(steps + 1);
  traj.states.push_back(x0);

  State x = x0, k1(sys.n), k2(sys.n), k3(sys.n), k4(sys.n), tmp(sys.n);
  ModulationTerm term;
  if (input) term.where = input->where;
  const ModulationTerm* mod = input ? &term : nullptr;

  for (std::size_t k = 0; k < steps; ++k) {
    const double t = t0 + static_cast<double>(k) * h;
    if (input) term.u = input->u(t);
    detail::field_into(sys, x, mod, k1);
    if (input) term.u = input->u(t + 0.5 * h);
    tmp = x + 0.5 * h * k1;
    detail::field_into(sys, tmp, mod, k2);
    tmp = x + 0.5 * h * k2;
    detail::field_into(sys, tmp, mod, k3);
    if (input) term.u = input->u(t + h);
    tmp = x + h * k3;
    detail::field_into(sys, tmp, mod, k4);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    detail::check_divergence(x, opts.divergence_bound, k + 1, t + h);
    traj.states.push_back(x);
  }
  return traj;
}

/// Fundamental matrix of the linearized flow kept as Q * R, with R reduced
/// to its accumulated diagonal log-scales.
struct TangentPropagator {
  SquareMatrix q;
  State log_scales;
  double t_span = 0.0;

  double log_det() const { return log_scales.sum(); }

  /// Finite-time exponents log_scale / t_span, sorted descending.
  State exponents() const {
    State e = log_scales / t_span;
    std::sort(e.data(), e.data() + e.size(), std::greater<>());
    return e;
  }
};

/// Impulsive reset of one error component at every whole multiple of
/// `interval` after t0.
struct ResetSchedule {
  double interval = 0.0;
  int index = 0;
};

struct TangentOptions {
  double divergence_bound = 1e6;
  int reorthogonalize_every = 100;
  /// Column-norm spread (natural log) that forces an early refactorization.
  double max_log_spread = 30.0;
};

namespace detail {

// Floor for a diagonal entry annihilated by a reset.
inline constexpr double kMinScale = std::numeric_limits<double>::min();

inline void refactor(SquareMatrix& y, State& log_scales) {
  Eigen::HouseholderQR<SquareMatrix> qr(y);
  const SquareMatrix r = qr.matrixQR().template triangularView<Eigen::Upper>();
  SquareMatrix q = qr.householderQ();
  for (int i = 0; i < y.rows(); ++i) {
    const double d = r(i, i);
    if (d < 0.0) q.col(i) = -q.col(i);
    log_scales[i] += std::log(std::max(std::abs(d), kMinScale));
  }
  y = q;
}

inline bool needs_refactor(const SquareMatrix& y, double max_log_spread) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int j = 0; j < y.cols(); ++j) {
    const double nrm = y.col(j).norm();
    if (!(nrm > 0.0) || !std::isfinite(nrm)) return true;
    const double l = std::log(nrm);
    lo = std::min(lo, l);
    hi = std::max(hi, l);
  }
  return hi - lo > max_log_spread || std::abs(hi) > max_log_spread;
}

}  // namespace detail

/// Co-integrates the state and the variational equation dE/dt = J(x(t)) E.
/// Resets zero the propagator row `resets->index` at each t = t0 + mT
/// (the linearization of e[index] <- 0); the driving state is untouched.
inline std::pair<Trajectory, TangentPropagator> integrate_with_tangent(
    const SystemSpec& sys, const State& x0, double t0, double t1, double h,
    const std::optional<DriveInput>& input = {},
    const std::optional<ResetSchedule>& resets = {},
    const TangentOptions& opts = {}) {
  sys.validate();
  detail::check_state(sys, x0);
  if (input) detail::check_modulation(sys, input->where);
  const std::size_t steps = whole_steps(t1 - t0, h, "integration span");
  std::size_t reset_every = 0;
  if (resets) {
    if (resets->index < 0 || resets->index >= sys.n)
      throw std::invalid_argument("reset index out of range");
    reset_every = whole_steps(resets->interval, h, "reset interval");
  }

  const int n = sys.n;
  Trajectory traj;
  traj.t0 = t0;
  traj.h = h;
  traj.states.reserve(steps + 1);
  traj.states.push_back(x0);

  State x = x0, k1(n), k2(n), k3(n), k4(n), xs(n);
  SquareMatrix y = SquareMatrix::Identity(n, n);
  SquareMatrix jac(n, n), m1(n, n), m2(n, n), m3(n, n), m4(n, n), ys(n, n);
  State log_scales = State::Zero(n);
  ModulationTerm term;
  if (input) term.where = input->where;
  const ModulationTerm* mod = input ? &term : nullptr;

  auto stage = [&](const State& xv, const SquareMatrix& yv, State& kx,
                   SquareMatrix& ky) {
    detail::field_into(sys, xv, mod, kx);
    detail::jacobian_into(sys, xv, mod, jac);
    ky.noalias() = jac * yv;
  };

  for (std::size_t k = 0; k < steps; ++k) {
    const double t = t0 + static_cast<double>(k) * h;
    if (input) term.u = input->u(t);
    stage(x, y, k1, m1);
    if (input) term.u = input->u(t + 0.5 * h);
    xs = x + 0.5 * h * k1;
    ys = y + 0.5 * h * m1;
    stage(xs, ys, k2, m2);
    xs = x + 0.5 * h * k2;
    ys = y + 0.5 * h * m2;
    stage(xs, ys, k3, m3);
    if (input) term.u = input->u(t + h);
    xs = x + h * k3;
    ys = y + h * m3;
    stage(xs, ys, k4, m4);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    y += (h / 6.0) * (m1 + 2.0 * m2 + 2.0 * m3 + m4);
    detail::check_divergence(x, opts.divergence_bound, k + 1, t + h);
    traj.states.push_back(x);

    const std::size_t done = k + 1;
    const bool reset_now = reset_every != 0 && done % reset_every == 0;
    if (reset_now) y.row(resets->index).setZero();
    if (reset_now || done % static_cast<std::size_t>(opts.reorthogonalize_every) == 0 ||
        done == steps || detail::needs_refactor(y, opts.max_log_spread))
      detail::refactor(y, log_scales);
  }

  TangentPropagator prop;
  prop.q = y;
  prop.log_scales = log_scales;
  prop.t_span = static_cast<double>(steps) * h;
  return {std::move(traj), std::move(prop)};
}

}  // namespace chaosaic
