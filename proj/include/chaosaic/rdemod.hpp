#pragma once

// Random demodulation baseline: +-1 chipping sequence, integrate-and-dump
// sampler, and the linear reweighted least-squares solver.

#include "chaosaic/irnls.hpp"
#include "chaosaic/sigmodel.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace chaosaic {

struct RDConfig {
  double chip_rate = 10.0;  // chips per time unit
  double T = 0.2;           // output sampling interval
  BasisParams basis;
  std::uint64_t seed = 1;

  int M() const { return static_cast<int>(std::floor(basis.T_u() / T + 1e-9)); }

  int num_chips() const {
    return static_cast<int>(std::ceil(basis.T_u() * chip_rate - 1e-9));
  }

  void validate() const {
    if (!(chip_rate > 0.0) || !std::isfinite(chip_rate))
      throw std::invalid_argument("chip_rate must be positive");
    if (!(T > 0.0) || !std::isfinite(T)) throw std::invalid_argument("T must be positive");
    if (M() < 1) throw std::invalid_argument("T exceeds T_u; no samples");
  }
};

/// Chip values in {-1, +1}, one per 1/chip_rate cell over [0, T_u).
inline std::vector<double> chip_sequence(const RDConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> chips(static_cast<std::size_t>(cfg.num_chips()));
  for (double& c : chips) c = coin(rng) ? 1.0 : -1.0;
  return chips;
}

namespace detail {

// Add scale * integral over [a, b] of the basis to `row`.
inline void add_basis_integral(const BasisParams& p, double a, double b, double scale,
                               double* row) {
  const int half = p.half();
  const double w0 = 2.0 * std::numbers::pi * p.df();
  for (int i = 1; i <= half; ++i) {
    const double w = w0 * i;
    row[i - 1] += scale * (std::sin(w * b) - std::sin(w * a)) / w;
    row[half + i - 1] += scale * (std::cos(w * a) - std::cos(w * b)) / w;
  }
}

}  // namespace detail

/// Row m integrates chip(t) * psi(t) over ((m-1)T, mT]. Chip cells that
/// straddle a window edge are split, so chip_rate * T need not be whole.
inline Eigen::MatrixXd build_rd_matrix(const RDConfig& cfg, const std::vector<double>& chips) {
  cfg.validate();
  if (static_cast<int>(chips.size()) != cfg.num_chips())
    throw std::invalid_argument("chip sequence length does not match configuration");
  const int M = cfg.M();
  const int N = cfg.basis.N();
  const double cell = 1.0 / cfg.chip_rate;
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(M, N);
  Eigen::VectorXd row(N);
  for (int m = 0; m < M; ++m) {
    const double lo = m * cfg.T;
    const double hi = (m + 1) * cfg.T;
    row.setZero();
    const auto first = static_cast<std::size_t>(std::floor(lo / cell + 1e-9));
    for (std::size_t k = first; k < chips.size(); ++k) {
      const double a = std::max(lo, static_cast<double>(k) * cell);
      const double b = std::min(hi, static_cast<double>(k + 1) * cell);
      if (a >= hi) break;
      if (b > a) detail::add_basis_integral(cfg.basis, a, b, chips[k], row.data());
    }
    phi.row(m) = row.transpose();
  }
  return phi;
}

inline Eigen::MatrixXd build_rd_matrix(const RDConfig& cfg) {
  return build_rd_matrix(cfg, chip_sequence(cfg));
}

inline Eigen::VectorXd rd_measure(const RDConfig& cfg, const SparseCoeffs& coeffs) {
  if (coeffs.size() != cfg.basis.N())
    throw std::invalid_argument("coefficient length does not match basis size");
  return build_rd_matrix(cfg) * coeffs.alpha;
}

/// Reweighting loop with the inner step solved exactly:
/// (Phi^T Phi + mu diag(w)) a = Phi^T y.
inline IRNLSResult irls_solve(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y,
                              const IRNLSConfig& cfg, Rng& rng) {
  cfg.validate();
  if (phi.rows() != y.size())
    throw std::invalid_argument("measurement length does not match matrix rows");
  const Eigen::MatrixXd gram = phi.transpose() * phi;
  const Eigen::VectorXd rhs = phi.transpose() * y;

  auto solve = [&](const Eigen::VectorXd& w, const Eigen::VectorXd&) {
    Eigen::MatrixXd lhs = gram;
    lhs.diagonal() += cfg.mu * w;
    Eigen::LLT<Eigen::MatrixXd> llt(lhs);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("weighted normal matrix is not positive definite");
    return std::tuple<Eigen::VectorXd, int, bool>{llt.solve(rhs), 1, false};
  };
  auto cost_of = [&](const Eigen::VectorXd& a) {
    return (phi * a - y).squaredNorm() + cfg.mu * lp_penalty(a, cfg.p);
  };
  return detail::reweighting_loop(random_start(phi.cols(), cfg.init_range, rng),
                                  phi.cols(), cfg, solve, cost_of);
}

inline IRNLSResult irls_solve(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y,
                              const IRNLSConfig& cfg) {
  Rng rng(0);
  return irls_solve(phi, y, cfg, rng);
}

}  // namespace chaosaic
