#pragma once

// epsilon-regularized iteratively reweighted nonlinear least squares for
//   min ||H(a) - z||^2 + mu ||a||_p^p
// with a Levenberg-Marquardt solver for each weighted subproblem.

#include "chaosaic/sigmodel.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

namespace chaosaic {

/// Anything exposing a residual vector and its Jacobian in the unknowns.
template <class P>
concept ResidualModel = requires(const P& p, const Eigen::VectorXd& a) {
  { p.num_params() } -> std::convertible_to<Eigen::Index>;
  { p.residual(a) } -> std::convertible_to<Eigen::VectorXd>;
  { p.jacobian(a) } -> std::convertible_to<Eigen::MatrixXd>;
};

/// Number of leading parameters carrying the sparsity penalty; models may
/// append unpenalized nuisance parameters after them.
template <ResidualModel Model>
Eigen::Index num_penalized(const Model& model) {
  if constexpr (requires { { model.num_coefficients() } -> std::convertible_to<Eigen::Index>; })
    return model.num_coefficients();
  else
    return model.num_params();
}

template <ResidualModel Model>
Eigen::VectorXd nuisance_start(const Model& model) {
  if constexpr (requires { { model.initial_nuisance() } -> std::convertible_to<Eigen::VectorXd>; })
    return model.initial_nuisance();
  else
    return Eigen::VectorXd::Zero(model.num_params() - num_penalized(model));
}

/// Residual Phi a - z of a fixed linear map.
struct LinearModel {
  Eigen::MatrixXd phi;
  Eigen::VectorXd z;

  Eigen::Index num_params() const { return phi.cols(); }
  Eigen::VectorXd residual(const Eigen::VectorXd& a) const { return phi * a - z; }
  Eigen::MatrixXd jacobian(const Eigen::VectorXd&) const { return phi; }
};

/// Damping added to the Gauss-Newton matrix: lambda * I, or lambda times
/// its own diagonal.
enum class DampingScaling { identity, marquardt };

struct InnerControls {
  DampingScaling scaling = DampingScaling::identity;
  double initial_damping = 1e-3;
  double damping_factor = 10.0;
  double max_damping = 1e12;
  int max_iterations = 50;
  double gradient_tol = 1e-10;
  double step_tol = 1e-10;
};

struct IRNLSConfig {
  double mu = 1e-2;
  double eps0 = 1e-2;
  double c = 1e-1;
  double lambda = 1e-1;
  double p = 0.5;
  double err = 1e-3;
  int max_outer = 100;
  InnerControls inner;
  double init_range = 1.0;
  int restarts = 1;
  /// Where the first weighted solve starts: at the random a^0 itself, or
  /// at zero with a^0 only supplying the first weights.
  bool first_solve_from_zero = false;

  void validate() const {
    if (!(p >= 0.0 && p <= 2.0)) throw std::invalid_argument("p must lie in [0, 2]");
    if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("lambda must lie in (0, 1)");
    if (!(mu > 0.0)) throw std::invalid_argument("mu must be positive");
    if (!(eps0 > 0.0)) throw std::invalid_argument("eps0 must be positive");
    if (!(c >= 0.0) || !(err >= 0.0)) throw std::invalid_argument("c and err must be non-negative");
    if (max_outer < 1 || restarts < 1 || inner.max_iterations < 1)
      throw std::invalid_argument("iteration counts must be positive");
    if (!(init_range > 0.0)) throw std::invalid_argument("init_range must be positive");
  }
};

/// w_k = (a_k^2 + eps)^((p - 2) / 2)
inline Eigen::VectorXd compute_weights(const Eigen::VectorXd& a, double eps, double p) {
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
  const double e = 0.5 * (p - 2.0);
  return (a.array().square() + eps).pow(e).matrix();
}

inline Eigen::VectorXd compute_weights(const SparseCoeffs& c, double eps, double p) {
  return compute_weights(c.alpha, eps, p);
}

enum class InnerStop { gradient, step, max_iterations, stalled };

struct InnerResult {
  Eigen::VectorXd a;
  double cost = 0.0;          // ||r||^2 + mu ||W^(1/2) a||^2
  double data_cost = 0.0;     // ||r||^2
  int iterations = 0;
  int evaluations = 0;
  InnerStop stop = InnerStop::max_iterations;
  bool stalled() const { return stop == InnerStop::stalled; }
};

/// Levenberg-Marquardt on the augmented residual [H(a) - z; sqrt(mu) W^(1/2) a]. Accepted steps strictly decrease the
/// augmented cost, so the result is never worse than `init`. `weights`
/// covers the penalized head of the parameter vector.
template <ResidualModel Model>
InnerResult inner_weighted_nls(const Model& model, const Eigen::VectorXd& weights,
                               double mu, const Eigen::VectorXd& init,
                               const InnerControls& ctl = {}) {
  const Eigen::Index n = model.num_params();
  if (init.size() != n || weights.size() != num_penalized(model))
    throw std::invalid_argument("init/weights length does not match the model");
  if ((weights.array() <= 0.0).any() || !weights.allFinite())
    throw std::invalid_argument("weights must be positive and finite");
  if (mu < 0.0) throw std::invalid_argument("mu must be non-negative");

  Eigen::VectorXd mw = Eigen::VectorXd::Zero(n);
  mw.head(weights.size()) = mu * weights;
  auto penalty = [&](const Eigen::VectorXd& a) {
    return (mw.array() * a.array().square()).sum();
  };

  InnerResult res;
  res.a = init;
  Eigen::VectorXd r = model.residual(res.a);
  res.evaluations = 1;
  res.data_cost = r.squaredNorm();
  res.cost = res.data_cost + penalty(res.a);

  double damping = ctl.initial_damping;
  for (res.iterations = 0; res.iterations < ctl.max_iterations;) {
    const Eigen::MatrixXd jac = model.jacobian(res.a);
    const Eigen::VectorXd grad = jac.transpose() * r + mw.cwiseProduct(res.a);
    if (grad.lpNorm<Eigen::Infinity>() <= ctl.gradient_tol) {
      res.stop = InnerStop::gradient;
      return res;
    }
    Eigen::MatrixXd normal = jac.transpose() * jac;
    normal.diagonal() += mw;
    const Eigen::VectorXd diag =
        ctl.scaling == DampingScaling::identity
            ? Eigen::VectorXd::Ones(n)
            : Eigen::VectorXd(normal.diagonal()
                                  .cwiseMax(1e-12 * normal.diagonal().maxCoeff())
                                  .cwiseMax(std::numeric_limits<double>::min()));

    bool accepted = false;
    Eigen::VectorXd step;
    while (!accepted) {
      Eigen::MatrixXd damped = normal;
      damped.diagonal() += damping * diag;
      step = damped.ldlt().solve(-grad);
      const Eigen::VectorXd trial = res.a + step;
      const Eigen::VectorXd r_trial = model.residual(trial);
      ++res.evaluations;
      const double data_cost = r_trial.squaredNorm();
      const double cost = data_cost + penalty(trial);
      if (std::isfinite(cost) && cost < res.cost) {
        res.a = trial;
        r = r_trial;
        res.cost = cost;
        res.data_cost = data_cost;
        damping = std::max(damping / ctl.damping_factor, 1e-15);
        accepted = true;
      } else {
        damping *= ctl.damping_factor;
        if (damping > ctl.max_damping) {
          res.stop = InnerStop::stalled;
          return res;
        }
      }
    }
    ++res.iterations;
    if (step.norm() <= ctl.step_tol * (res.a.norm() + ctl.step_tol)) {
      res.stop = InnerStop::step;
      return res;
    }
  }
  res.stop = InnerStop::max_iterations;
  return res;
}

struct OuterRecord {
  int outer_iter = 0;
  double cost = 0.0;  // ||H(a) - z||^2 + mu ||a||_p^p at the new iterate
  double eps = 0.0;   // eps_j used for this iteration's weights
  double step_ratio = 0.0;
  int inner_iters = 0;
};

struct IRNLSResult {
  SparseCoeffs coeffs;
  /// Final values of unpenalized nuisance parameters (may be empty).
  Eigen::VectorXd nuisance;
  std::vector<OuterRecord> diagnostics;
  bool converged = false;
  int outer_iterations = 0;
  int restart = 0;
  double final_cost = 0.0;
  bool inner_stalled = false;
};

inline double lp_penalty(const Eigen::VectorXd& a, double p) {
  if (p == 0.0) return static_cast<double>((a.array() != 0.0).count());
  return a.array().abs().pow(p).sum();
}

namespace detail {

inline double step_ratio(const Eigen::VectorXd& next, const Eigen::VectorXd& prev) {
  const double num = (next - prev).norm();
  const double den = prev.norm();
  if (den > 0.0) return num / den;
  return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
}

/// The reweighting loop shared by the nonlinear and linear solvers.
/// `solve(weights, start)` returns {iterate, inner iterations, stalled}.
template <class InnerSolve, class CostFn>
IRNLSResult reweighting_loop(Eigen::VectorXd a, Eigen::Index penalized,
                             const IRNLSConfig& cfg, InnerSolve&& solve,
                             CostFn&& cost_of) {
  IRNLSResult res;
  double eps = cfg.eps0;
  for (int j = 0; j < cfg.max_outer; ++j) {
    const Eigen::VectorXd w = compute_weights(a.head(penalized), eps, cfg.p);
    Eigen::VectorXd from = a;
    if (j == 0 && cfg.first_solve_from_zero) from.head(penalized).setZero();
    const auto [next, inner_iters, stalled] = solve(w, from);
    res.inner_stalled = res.inner_stalled || stalled;
    const double ratio = step_ratio(next.head(penalized), a.head(penalized));

    OuterRecord rec;
    rec.outer_iter = j + 1;
    rec.eps = eps;
    rec.step_ratio = ratio;
    rec.inner_iters = inner_iters;
    rec.cost = cost_of(next);
    res.diagnostics.push_back(rec);

    if (ratio <= cfg.c * std::sqrt(eps)) eps *= cfg.lambda;
    a = next;
    res.outer_iterations = j + 1;
    if (ratio <= cfg.err) {
      res.converged = true;
      break;
    }
  }
  res.coeffs = SparseCoeffs(a.head(penalized));
  res.nuisance = a.tail(a.size() - penalized);
  res.final_cost = res.diagnostics.empty() ? cost_of(a) : res.diagnostics.back().cost;
  return res;
}

}  // namespace detail

inline Eigen::VectorXd random_start(Eigen::Index n, double range, Rng& rng) {
  std::uniform_real_distribution<double> uni(-range, range);
  Eigen::VectorXd a(n);
  for (Eigen::Index i = 0; i < n; ++i) a[i] = uni(rng);
  return a;
}

/// Reweight, solve the weighted NLS, shrink eps when the relative step
/// falls below c sqrt(eps), stop when it falls below err. With restarts > 1
/// the lowest-cost run is returned.
template <ResidualModel Model>
IRNLSResult irnls_solve(const Model& model, const IRNLSConfig& cfg, Rng& rng) {
  cfg.validate();
  const Eigen::Index n = model.num_params();
  const Eigen::Index k = num_penalized(model);
  auto cost_of = [&](const Eigen::VectorXd& a) {
    return model.residual(a).squaredNorm() + cfg.mu * lp_penalty(a.head(k), cfg.p);
  };

  IRNLSResult best;
  for (int r = 0; r < cfg.restarts; ++r) {
    Eigen::VectorXd start(n);
    start.head(k) = random_start(k, cfg.init_range, rng);
    start.tail(n - k) = nuisance_start(model);
    auto solve = [&](const Eigen::VectorXd& w, const Eigen::VectorXd& a) {
      InnerResult in = inner_weighted_nls(model, w, cfg.mu, a, cfg.inner);
      return std::tuple{in.a, in.iterations, in.stalled()};
    };
    IRNLSResult run = detail::reweighting_loop(start, k, cfg, solve, cost_of);
    run.restart = r;
    if (r == 0 || run.final_cost < best.final_cost) best = std::move(run);
  }
  return best;
}

}  // namespace chaosaic
