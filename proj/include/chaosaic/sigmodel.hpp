#pragma once

// Real Fourier basis, sparse multi-tone signals and reconstruction metrics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace chaosaic {

using Rng = std::mt19937_64;

/// Band-limited real Fourier basis on [0, T_u): N = 2 W T_u functions,
/// frequency resolution 1 / T_u.
class BasisParams {
 public:
  BasisParams() = default;
  BasisParams(double bandwidth, double duration) : W_(bandwidth), T_u_(duration) {
    if (!(bandwidth > 0.0) || !(duration > 0.0))
      throw std::invalid_argument("bandwidth and duration must be positive");
    const double n = 2.0 * bandwidth * duration;
    const double rounded = std::round(n);
    if (std::abs(n - rounded) > 1e-9 * std::max(1.0, n) || rounded < 2.0 ||
        static_cast<long long>(rounded) % 2 != 0)
      throw std::invalid_argument("2 W T_u must be a positive even integer");
    N_ = static_cast<int>(rounded);
  }

  double W() const { return W_; }
  double T_u() const { return T_u_; }
  int N() const { return N_; }
  int half() const { return N_ / 2; }
  double df() const { return 1.0 / T_u_; }

 private:
  double W_ = 5.0;
  double T_u_ = 10.0;
  int N_ = 100;
};

namespace detail {

// Basis at any t; the functions are T_u-periodic so no range check.
inline void basis_into(const BasisParams& p, double t, double* out) {
  const int half = p.half();
  const double w = 2.0 * std::numbers::pi * p.df() * t;
  for (int i = 1; i <= half; ++i) {
    out[i - 1] = std::cos(w * i);
    out[half + i - 1] = std::sin(w * i);
  }
}

inline void check_time(const BasisParams& p, double t) {
  if (!(t >= 0.0 && t < p.T_u()))
    throw std::invalid_argument("t = " + std::to_string(t) +
                                " outside [0, T_u)");
}

}  // namespace detail

/// Entry i (0-based, i < N/2) is cos(2 pi (i+1) df t); entry N/2 + i is
/// the matching sine.
inline Eigen::VectorXd eval_basis(const BasisParams& p, double t) {
  detail::check_time(p, t);
  Eigen::VectorXd out(p.N());
  detail::basis_into(p, t, out.data());
  return out;
}

struct SparseCoeffs {
  Eigen::VectorXd alpha;

  SparseCoeffs() = default;
  explicit SparseCoeffs(Eigen::VectorXd a) : alpha(std::move(a)) {}
  static SparseCoeffs zeros(int n) { return SparseCoeffs(Eigen::VectorXd::Zero(n)); }

  Eigen::Index size() const { return alpha.size(); }
  int K() const { return static_cast<int>((alpha.array() != 0.0).count()); }

  std::vector<int> support() const {
    std::vector<int> s;
    for (Eigen::Index i = 0; i < alpha.size(); ++i)
      if (alpha[i] != 0.0) s.push_back(static_cast<int>(i));
    return s;
  }
};

inline double synthesize(const SparseCoeffs& c, const BasisParams& p, double t) {
  if (c.size() != p.N())
    throw std::invalid_argument("coefficient length does not match basis size");
  return eval_basis(p, t).dot(c.alpha);
}

/// u(t) for any t, using only the nonzero coefficients; the basis is
/// T_u-periodic so t beyond T_u wraps.
class SignalEvaluator {
 public:
  SignalEvaluator(const SparseCoeffs& c, const BasisParams& p) : basis_(p) {
    if (c.size() != p.N())
      throw std::invalid_argument("coefficient length does not match basis size");
    for (Eigen::Index i = 0; i < c.size(); ++i) {
      if (c.alpha[i] == 0.0) continue;
      const int half = p.half();
      const bool is_sin = i >= half;
      const int harmonic = static_cast<int>(is_sin ? i - half : i) + 1;
      terms_.push_back({harmonic, is_sin, c.alpha[i]});
    }
  }

  double operator()(double t) const {
    const double w = 2.0 * std::numbers::pi * basis_.df() * t;
    double u = 0.0;
    for (const auto& term : terms_)
      u += term.value * (term.is_sin ? std::sin(w * term.harmonic)
                                     : std::cos(w * term.harmonic));
    return u;
  }

  /// max |u| over t = k * step, k * step < T_u.
  double grid_max(double step = 1e-3) const {
    const auto count = static_cast<long>(std::ceil(basis_.T_u() / step - 1e-9));
    double m = 0.0;
    for (long k = 0; k < count; ++k)
      m = std::max(m, std::abs((*this)(static_cast<double>(k) * step)));
    return m;
  }

 private:
  struct Term {
    int harmonic;
    bool is_sin;
    double value;
  };
  BasisParams basis_;
  std::vector<Term> terms_;
};

enum class CoeffDistribution { gaussian, bernoulli };

inline CoeffDistribution parse_distribution(std::string_view s) {
  if (s == "gaussian") return CoeffDistribution::gaussian;
  if (s == "bernoulli") return CoeffDistribution::bernoulli;
  throw std::invalid_argument("unknown coefficient distribution '" +
                              std::string(s) + "'");
}

inline std::string_view to_string(CoeffDistribution d) {
  return d == CoeffDistribution::gaussian ? "gaussian" : "bernoulli";
}

/// Fraction of the amplitude limit targeted by the scaling step.
inline constexpr double kAmplitudeHeadroom = 0.95;

/// K-sparse coefficients with uniformly placed support, scaled so the
/// grid maximum of |u(t)| is kAmplitudeHeadroom * amp_limit.
inline SparseCoeffs gen_sparse_coeffs(const BasisParams& p, int K,
                                      CoeffDistribution dist, double amp_limit,
                                      Rng& rng) {
  if (K < 1 || K > p.N()) throw std::invalid_argument("sparsity K out of range");
  if (!(amp_limit > 0.0)) throw std::invalid_argument("amp_limit must be positive");

  std::vector<int> idx(p.N());
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates: first K entries are a uniform K-subset.
  for (int i = 0; i < K; ++i) {
    std::uniform_int_distribution<int> pick(i, p.N() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::sort(idx.begin(), idx.begin() + K);

  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(p.N());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  for (int i = 0; i < K; ++i) {
    double v = 0.0;
    if (dist == CoeffDistribution::gaussian) {
      do v = normal(rng); while (v == 0.0);
    } else {
      v = coin(rng) ? 1.0 : -1.0;
    }
    alpha[idx[i]] = v;
  }

  SparseCoeffs c(alpha);
  const double peak = SignalEvaluator(c, p).grid_max();
  c.alpha *= kAmplitudeHeadroom * amp_limit / peak;
  return c;
}

/// ||est - truth||_2 / ||truth||_2
inline double relative_error(const SparseCoeffs& est, const SparseCoeffs& truth) {
  if (est.size() != truth.size())
    throw std::invalid_argument("coefficient vectors differ in length");
  const double denom = truth.alpha.norm();
  if (!(denom > 0.0)) throw std::invalid_argument("truth has zero norm");
  return (est.alpha - truth.alpha).norm() / denom;
}

struct SupportMetrics {
  double precision = 0.0;
  double recall = 0.0;
};

/// Positions of the K largest-magnitude nonzero entries of `est`
/// (K = truth.K()) against the true support.
inline SupportMetrics support_metrics(const SparseCoeffs& est,
                                      const SparseCoeffs& truth) {
  if (est.size() != truth.size())
    throw std::invalid_argument("coefficient vectors differ in length");
  const std::vector<int> s = truth.support();
  if (s.empty()) throw std::invalid_argument("truth has empty support");

  std::vector<int> order(static_cast<std::size_t>(est.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::abs(est.alpha[a]) > std::abs(est.alpha[b]);
  });
  std::vector<int> top;
  for (int i : order) {
    if (top.size() == s.size() || est.alpha[i] == 0.0) break;
    top.push_back(i);
  }
  int hits = 0;
  for (int i : top)
    if (std::binary_search(s.begin(), s.end(), i)) ++hits;
  SupportMetrics m;
  m.precision = top.empty() ? 0.0 : static_cast<double>(hits) / top.size();
  m.recall = static_cast<double>(hits) / s.size();
  return m;
}

}  // namespace chaosaic
