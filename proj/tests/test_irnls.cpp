#include "chaosaic/irnls.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace chaosaic;

namespace {

Eigen::MatrixXd gaussian_matrix(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

// y_i = a0 exp(a1 t_i) + a2, a small smooth nonlinear fit.
struct ExpModel {
  Eigen::VectorXd t, y;
  Eigen::Index num_params() const { return 3; }
  Eigen::VectorXd residual(const Eigen::VectorXd& a) const {
    return (a[0] * (a[1] * t.array()).exp() + a[2]).matrix() - y;
  }
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& a) const {
    Eigen::MatrixXd j(t.size(), 3);
    j.col(0) = (a[1] * t.array()).exp().matrix();
    j.col(1) = (a[0] * t.array() * (a[1] * t.array()).exp()).matrix();
    j.col(2).setOnes();
    return j;
  }
};

// Linear map plus one unpenalized offset appended after the coefficients.
struct OffsetModel {
  Eigen::MatrixXd phi;
  Eigen::VectorXd z;
  Eigen::Index num_params() const { return phi.cols() + 1; }
  Eigen::Index num_coefficients() const { return phi.cols(); }
  Eigen::VectorXd residual(const Eigen::VectorXd& a) const {
    return (phi * a.head(phi.cols())).array() + a[phi.cols()] - z.array();
  }
  Eigen::MatrixXd jacobian(const Eigen::VectorXd&) const {
    Eigen::MatrixXd j(phi.rows(), phi.cols() + 1);
    j << phi, Eigen::VectorXd::Ones(phi.rows());
    return j;
  }
};

std::vector<int> top_k(const Eigen::VectorXd& a, int k) {
  std::vector<int> idx(static_cast<std::size_t>(a.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [&](int x, int y) { return std::abs(a[x]) > std::abs(a[y]); });
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

TEST(Weights, PTwoGivesOnes) {
  const Eigen::VectorXd a = Eigen::VectorXd::LinSpaced(7, -3.0, 3.0);
  EXPECT_TRUE(compute_weights(a, 0.5, 2.0).isOnes());
}

TEST(Weights, FormulaValues) {
  Eigen::VectorXd a(2);
  a << 0.0, 3.0;
  EXPECT_NEAR(compute_weights(a, 1e-2, 0.5)[0], std::pow(10.0, 1.5), 1e-10);
  EXPECT_NEAR(compute_weights(a, 1e-6, 0.5)[1], 0.19245, 1e-5);
  EXPECT_NEAR(compute_weights(a, 1e-6, 0.5)[1], std::pow(9.0 + 1e-6, -0.75), 1e-15);
}

TEST(Weights, PositiveFiniteAndRejectNonPositiveEps) {
  Rng rng(1);
  const Eigen::VectorXd a = random_start(50, 10.0, rng);
  for (double p : {0.0, 0.5, 1.0}) {
    const Eigen::VectorXd w = compute_weights(a, 1e-12, p);
    EXPECT_TRUE(w.allFinite());
    EXPECT_GT(w.minCoeff(), 0.0);
  }
  EXPECT_THROW(compute_weights(a, 0.0, 0.5), std::invalid_argument);
  EXPECT_THROW(compute_weights(a, -1.0, 0.5), std::invalid_argument);
}

TEST(LpPenalty, CountsAndNorms) {
  Eigen::VectorXd a(4);
  a << 0.0, -4.0, 1.0, 0.25;
  EXPECT_EQ(lp_penalty(a, 0.0), 3.0);
  EXPECT_DOUBLE_EQ(lp_penalty(a, 1.0), 5.25);
  EXPECT_DOUBLE_EQ(lp_penalty(a, 0.5), 2.0 + 1.0 + 0.5);
}

TEST(Inner, StationaryInitIsReturned) {
  const Eigen::MatrixXd phi = gaussian_matrix(12, 5, 2);
  const Eigen::VectorXd a = Eigen::VectorXd::LinSpaced(5, -1.0, 1.0);
  const LinearModel model{phi, phi * a};
  const auto res = inner_weighted_nls(model, Eigen::VectorXd::Ones(5), 0.0, a);
  EXPECT_EQ(res.a, a);
  EXPECT_EQ(res.cost, 0.0);
}

TEST(Inner, LinearProblemMatchesNormalEquations) {
  const Eigen::MatrixXd phi = gaussian_matrix(20, 10, 3);
  const Eigen::VectorXd z = gaussian_matrix(20, 1, 4).col(0);
  const LinearModel model{phi, z};
  const Eigen::VectorXd ls = (phi.transpose() * phi).ldlt().solve(phi.transpose() * z);
  for (auto scaling : {DampingScaling::identity, DampingScaling::marquardt}) {
    InnerControls ctl;
    ctl.scaling = scaling;
    const auto res =
        inner_weighted_nls(model, Eigen::VectorXd::Ones(10), 0.0, Eigen::VectorXd::Zero(10), ctl);
    EXPECT_LE((res.a - ls).norm() / ls.norm(), 1e-8);
  }
}

TEST(Inner, WeightedRidgeMatchesClosedForm) {
  const Eigen::MatrixXd phi = gaussian_matrix(15, 8, 5);
  const Eigen::VectorXd z = gaussian_matrix(15, 1, 6).col(0);
  Eigen::VectorXd w(8);
  w << 1, 2, 3, 4, 0.5, 0.25, 10, 7;
  const double mu = 0.3;
  Eigen::MatrixXd lhs = phi.transpose() * phi;
  lhs.diagonal() += mu * w;
  const Eigen::VectorXd exact = lhs.llt().solve(phi.transpose() * z);
  const auto res = inner_weighted_nls(LinearModel{phi, z}, w, mu, Eigen::VectorXd::Zero(8));
  EXPECT_LE((res.a - exact).norm() / exact.norm(), 1e-8);
}

TEST(Inner, SolutionNormShrinksAsMuGrows) {
  const Eigen::MatrixXd phi = gaussian_matrix(20, 10, 7);
  const Eigen::VectorXd z = gaussian_matrix(20, 1, 8).col(0);
  const LinearModel model{phi, z};
  double prev = std::numeric_limits<double>::infinity();
  for (double mu : {0.0, 1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0}) {
    const auto res =
        inner_weighted_nls(model, Eigen::VectorXd::Ones(10), mu, Eigen::VectorXd::Zero(10));
    const double n = res.a.norm();
    EXPECT_LE(n, prev * (1 + 1e-12)) << "mu = " << mu;
    prev = n;
  }
}

TEST(Inner, NonlinearFitDescendsAndConverges) {
  ExpModel model;
  model.t = Eigen::VectorXd::LinSpaced(30, 0.0, 2.0);
  model.y = (1.5 * (-0.8 * model.t.array()).exp() + 0.3).matrix();
  Eigen::VectorXd init(3);
  init << 1.0, 0.0, 0.0;
  const double init_cost = model.residual(init).squaredNorm();
  const auto res = inner_weighted_nls(model, Eigen::VectorXd::Ones(3), 0.0, init);
  EXPECT_LT(res.cost, init_cost);
  EXPECT_NEAR(res.a[0], 1.5, 1e-6);
  EXPECT_NEAR(res.a[1], -0.8, 1e-6);
  EXPECT_NEAR(res.a[2], 0.3, 1e-6);
  EXPECT_NE(res.stop, InnerStop::max_iterations);
}

TEST(Inner, NeverWorseThanInitEvenWithOneIteration) {
  ExpModel model;
  model.t = Eigen::VectorXd::LinSpaced(30, 0.0, 2.0);
  model.y = (2.0 * (0.5 * model.t.array()).exp()).matrix();
  InnerControls ctl;
  ctl.max_iterations = 1;
  Eigen::VectorXd a(3);
  a << -1.0, 2.0, 5.0;
  double prev = model.residual(a).squaredNorm();
  for (int i = 0; i < 20; ++i) {
    const auto res = inner_weighted_nls(model, Eigen::VectorXd::Ones(3), 0.0, a, ctl);
    EXPECT_LE(res.cost, prev);
    prev = res.cost;
    a = res.a;
  }
}

TEST(Inner, RejectsBadArguments) {
  const LinearModel model{gaussian_matrix(5, 3, 1), Eigen::VectorXd::Zero(5)};
  const Eigen::VectorXd a = Eigen::VectorXd::Zero(3);
  EXPECT_THROW(inner_weighted_nls(model, Eigen::VectorXd::Ones(2), 0.1, a), std::invalid_argument);
  EXPECT_THROW(inner_weighted_nls(model, Eigen::VectorXd::Zero(3), 0.1, a), std::invalid_argument);
  EXPECT_THROW(inner_weighted_nls(model, Eigen::VectorXd::Ones(3), -1.0, a), std::invalid_argument);
}

TEST(Config, Validation) {
  IRNLSConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.mu, 1e-2);
  EXPECT_EQ(c.eps0, 1e-2);
  EXPECT_EQ(c.c, 1e-1);
  EXPECT_EQ(c.lambda, 1e-1);
  EXPECT_EQ(c.p, 0.5);
  EXPECT_EQ(c.err, 1e-3);
  auto bad = c;
  bad.p = 2.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.lambda = 1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.mu = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.eps0 = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

// With 8 rows some 2-sparse instances sit outside the l_p basin of the
// truth (seed 4 fails even at p = 1 with restarts), so most, not all.
TEST(Solve, RecoversBruteForceOptimalSupport) {
  int hits = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Eigen::MatrixXd phi = gaussian_matrix(8, 16, 100 + seed);
    Rng rng(seed);
    std::uniform_int_distribution<int> pos(0, 15);
    std::normal_distribution<double> val(0.0, 1.0);
    Eigen::VectorXd truth = Eigen::VectorXd::Zero(16);
    const int i0 = pos(rng);
    int i1 = pos(rng);
    while (i1 == i0) i1 = pos(rng);
    truth[i0] = 1.0 + std::abs(val(rng));
    truth[i1] = -(1.0 + std::abs(val(rng)));
    const Eigen::VectorXd z = phi * truth;

    // Brute force over all 2-subsets.
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> best_support;
    for (int i = 0; i < 16; ++i)
      for (int j = i + 1; j < 16; ++j) {
        Eigen::MatrixXd sub(8, 2);
        sub << phi.col(i), phi.col(j);
        const Eigen::VectorXd x = sub.colPivHouseholderQr().solve(z);
        const double r = (sub * x - z).norm();
        if (r < best) {
          best = r;
          best_support = {i, j};
        }
      }

    Rng solver(seed);
    const auto res = irnls_solve(LinearModel{phi, z}, IRNLSConfig{}, solver);
    hits += top_k(res.coeffs.alpha, 2) == best_support;
  }
  EXPECT_GE(hits, 18);
}

TEST(Solve, EpsStaysAtStartWhenTriggerNeverFires) {
  const Eigen::MatrixXd phi = gaussian_matrix(8, 16, 9);
  const Eigen::VectorXd z = gaussian_matrix(8, 1, 10).col(0);
  IRNLSConfig cfg;
  cfg.c = 0.0;
  cfg.err = 0.0;
  cfg.max_outer = 15;
  Rng rng(1);
  const auto res = irnls_solve(LinearModel{phi, z}, cfg, rng);
  ASSERT_EQ(res.diagnostics.size(), 15u);
  for (const auto& d : res.diagnostics) EXPECT_EQ(d.eps, cfg.eps0);
  EXPECT_FALSE(res.converged);
  EXPECT_EQ(res.outer_iterations, 15);
}

TEST(Solve, EpsShrinksExactlyWhenTriggered) {
  const Eigen::MatrixXd phi = gaussian_matrix(10, 20, 11);
  Eigen::VectorXd truth = Eigen::VectorXd::Zero(20);
  truth[3] = 1.0;
  truth[12] = -0.5;
  IRNLSConfig cfg;
  cfg.err = 1e-8;
  Rng rng(2);
  const auto res = irnls_solve(LinearModel{phi, phi * truth}, cfg, rng);
  ASSERT_GT(res.diagnostics.size(), 2u);
  int shrinks = 0;
  for (std::size_t j = 0; j + 1 < res.diagnostics.size(); ++j) {
    const auto& d = res.diagnostics[j];
    const bool fire = d.step_ratio <= cfg.c * std::sqrt(d.eps);
    const double next = res.diagnostics[j + 1].eps;
    EXPECT_EQ(next, fire ? d.eps * cfg.lambda : d.eps) << "iteration " << j + 1;
    EXPECT_LE(next, d.eps);
    shrinks += fire;
  }
  EXPECT_GT(shrinks, 0);
}

TEST(Solve, StopsOnStepRatio) {
  const Eigen::MatrixXd phi = gaussian_matrix(10, 20, 12);
  Eigen::VectorXd truth = Eigen::VectorXd::Zero(20);
  truth[5] = 2.0;
  IRNLSConfig cfg;
  Rng rng(3);
  const auto res = irnls_solve(LinearModel{phi, phi * truth}, cfg, rng);
  EXPECT_TRUE(res.converged);
  EXPECT_LE(res.diagnostics.back().step_ratio, cfg.err);
  for (std::size_t j = 0; j + 1 < res.diagnostics.size(); ++j)
    EXPECT_GT(res.diagnostics[j].step_ratio, cfg.err);
}

TEST(Solve, SameSeedSameIterates) {
  const Eigen::MatrixXd phi = gaussian_matrix(8, 16, 13);
  const Eigen::VectorXd z = gaussian_matrix(8, 1, 14).col(0);
  const LinearModel model{phi, z};
  Rng a(5), b(5);
  const auto ra = irnls_solve(model, IRNLSConfig{}, a);
  const auto rb = irnls_solve(model, IRNLSConfig{}, b);
  EXPECT_EQ(ra.coeffs.alpha, rb.coeffs.alpha);
  ASSERT_EQ(ra.diagnostics.size(), rb.diagnostics.size());
  for (std::size_t j = 0; j < ra.diagnostics.size(); ++j)
    EXPECT_EQ(ra.diagnostics[j].cost, rb.diagnostics[j].cost);
}

TEST(Solve, RestartsKeepTheCheapestRun) {
  const Eigen::MatrixXd phi = gaussian_matrix(8, 16, 15);
  const Eigen::VectorXd z = gaussian_matrix(8, 1, 16).col(0);
  IRNLSConfig cfg;
  cfg.restarts = 4;
  Rng rng(6);
  const auto best = irnls_solve(LinearModel{phi, z}, cfg, rng);
  cfg.restarts = 1;
  Rng rng1(6);
  const auto first = irnls_solve(LinearModel{phi, z}, cfg, rng1);
  EXPECT_LE(best.final_cost, first.final_cost);
  EXPECT_GE(best.restart, 0);
  EXPECT_LT(best.restart, 4);
}

TEST(Solve, NuisanceParametersAreNotPenalized) {
  const Eigen::MatrixXd phi = gaussian_matrix(12, 20, 17);
  Eigen::VectorXd truth = Eigen::VectorXd::Zero(20);
  truth[2] = 1.0;
  truth[9] = -1.5;
  const double offset = 5.0;
  const OffsetModel model{phi, (phi * truth).array() + offset};
  IRNLSConfig cfg;
  cfg.err = 1e-6;
  Rng rng(7);
  const auto res = irnls_solve(model, cfg, rng);
  ASSERT_EQ(res.coeffs.size(), 20);
  ASSERT_EQ(res.nuisance.size(), 1);
  EXPECT_NEAR(res.nuisance[0], offset, 1e-2);
  EXPECT_EQ(top_k(res.coeffs.alpha, 2), (std::vector<int>{2, 9}));
}

TEST(Solve, FirstSolveFromZeroChangesOnlyTheStart) {
  const Eigen::MatrixXd phi = gaussian_matrix(20, 10, 18);
  const Eigen::VectorXd z = gaussian_matrix(20, 1, 19).col(0);
  IRNLSConfig cfg;
  cfg.max_outer = 1;
  cfg.first_solve_from_zero = true;
  cfg.inner.max_iterations = 1;
  cfg.inner.initial_damping = 1e6;
  Rng rng(8);
  // With huge damping a single step barely moves: the iterate stays near
  // its start, which is zero here.
  const auto res = irnls_solve(LinearModel{phi, z}, cfg, rng);
  EXPECT_LT(res.coeffs.alpha.norm(), 1e-3);
}
