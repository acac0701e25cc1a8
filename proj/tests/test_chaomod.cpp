#include "chaosaic/chaomod.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace chaosaic;

namespace {

const BasisParams kBasis(5.0, 10.0);

// Synchronization at T = 0.2 contracts roughly a decade per second, so the
// 1e-6 level needs ~15 s from a cold start. Those checks use a 30 s record
// and skip the first 20 s.
constexpr double kLongTu = 30.0;
constexpr int kSettle = 100;

struct Instance {
  ModulationConfig cfg;
  SparseCoeffs truth;
  Measurement meas;
};

Instance make_instance(int K, std::uint64_t seed, double T = 0.2, double T_u = 10.0) {
  Instance in;
  in.cfg = lorenz_config(T);
  in.cfg.T_u = T_u;
  const BasisParams basis(5.0, T_u);
  Rng rng(seed);
  in.truth = gen_sparse_coeffs(basis, K, CoeffDistribution::gaussian, 4.0, rng);
  in.meas = measure(in.cfg, in.truth, basis, seed);
  return in;
}

const BasisParams kLongBasis(5.0, kLongTu);

double tail_max(const Eigen::VectorXd& v, int from) {
  return v.tail(v.size() - from).cwiseAbs().maxCoeff();
}

}  // namespace

TEST(Mix64, KnownValuesAndSpread) {
  EXPECT_EQ(mix64(0), 0xe220a8397b1dcdafULL);
  EXPECT_NE(mix64(1), mix64(2));
}

TEST(Measure, SampleCountFollowsSamplingInterval) {
  const auto zero = SparseCoeffs::zeros(100);
  EXPECT_EQ(measure(lorenz_config(0.2), zero, kBasis, 1).record.M, 50);
  EXPECT_EQ(measure(lorenz_config(0.1), zero, kBasis, 1).record.z.size(), 100);
  EXPECT_EQ(measure(lorenz_config(0.3), zero, kBasis, 1).record.M, 33);
}

TEST(Measure, ZeroSignalSamplesTheAutonomousTrajectory) {
  const auto cfg = lorenz_config(0.2);
  const auto m = measure(cfg, SparseCoeffs::zeros(100), kBasis, 9);
  const State x0 = driving_initial_state(cfg, 9);
  const auto free = integrate(cfg.sys, x0, 0.0, 10.0, cfg.h);
  for (int k = 1; k <= m.record.M; ++k)
    EXPECT_EQ(m.record.z[k - 1], free.states[static_cast<std::size_t>(200 * k)][1]);
}

TEST(Measure, RecordCarriesMetadataAndIsDeterministic) {
  const auto a = make_instance(5, 3);
  const auto b = make_instance(5, 3);
  EXPECT_EQ(a.meas.record.z, b.meas.record.z);
  EXPECT_EQ(a.meas.record.obs, 1);
  EXPECT_EQ(a.meas.record.system, "lorenz");
  EXPECT_EQ(a.meas.record.fingerprint, a.cfg.fingerprint());
  EXPECT_TRUE(a.meas.record.z.allFinite());
  // Different seeds start from different points on the attractor.
  EXPECT_NE(driving_initial_state(a.cfg, 1), driving_initial_state(a.cfg, 2));
}

TEST(Measure, RejectsSignalsAtOrAboveAmplitudeLimit) {
  auto c = SparseCoeffs::zeros(100);
  c.alpha[0] = 4.0;
  EXPECT_THROW(measure(lorenz_config(), c, kBasis, 1), std::invalid_argument);
}

TEST(Measure, ReportsDivergenceWithAmplitude) {
  auto cfg = lorenz_config();
  cfg.amp_limit = 1e12;
  auto c = SparseCoeffs::zeros(100);
  c.alpha[0] = 1e9;
  try {
    measure(cfg, c, kBasis, 1);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("amplitude"), std::string::npos);
  }
}

TEST(ModulationConfig, Validation) {
  auto cfg = lorenz_config(0.2);
  EXPECT_NO_THROW(cfg.validate());
  cfg.T = 0.2005;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = lorenz_config(20.0);
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = lorenz_config();
  cfg.obs = 3;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(DrivenResponse, TrueStateAndCoefficientsReproduceSamples) {
  const auto in = make_instance(10, 21);
  const Eigen::VectorXd zhat =
      driven_response(in.cfg, kBasis, in.meas.record, in.truth, in.meas.truth.states[0]);
  EXPECT_LT((zhat - in.meas.record.z).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(DrivenResponse, SynchronizesFromStandardStart) {
  const auto in = make_instance(10, 22, 0.2, kLongTu);
  const State y0 = standard_initial_state(in.cfg, in.meas.record.z);
  EXPECT_EQ(y0[1], in.meas.record.z[0]);
  const Eigen::VectorXd zhat = driven_response(in.cfg, kLongBasis, in.meas.record, in.truth, y0);
  EXPECT_LE(tail_max(zhat - in.meas.record.z, kSettle), 1e-6);
}

TEST(DrivenResponse, SynchronizesFromArbitraryStart) {
  const auto in = make_instance(10, 23, 0.2, kLongTu);
  State y0(3);
  y0 << -15.0, 20.0, 10.0;
  const Eigen::VectorXd zhat = driven_response(in.cfg, kLongBasis, in.meas.record, in.truth, y0);
  EXPECT_LE(tail_max(zhat - in.meas.record.z, kSettle), 1e-6);
}

TEST(Residual, StandardStartDecaysBelowTolerance) {
  const auto in = make_instance(10, 24, 0.2, kLongTu);
  const Eigen::VectorXd r = residual(in.cfg, kLongBasis, in.meas.record, in.truth);
  EXPECT_EQ(r.size(), 150);
  EXPECT_LE(tail_max(r, kSettle), 1e-5);
}

TEST(Residual, ZeroCandidateLeavesNonzeroResidual) {
  const auto in = make_instance(10, 25);
  EXPECT_GT(residual(in.cfg, kBasis, in.meas.record, SparseCoeffs::zeros(100)).norm(), 1e-2);
}

TEST(Residual, SensesSmallCoefficientPerturbation) {
  const auto in = make_instance(10, 26);
  const ChaoticReconstruction model(in.cfg, kBasis, in.meas.record, in.meas.truth.states[0]);
  Eigen::VectorXd a = in.truth.alpha;
  const double base = model.residual(a).norm();
  a[in.truth.support().front()] += 1e-3;
  EXPECT_GT(model.residual(a).norm(), base + 1e-6);
}

TEST(Residual, PreResetRecordingIsNotTrivial) {
  // Recording after the clamp would return z for every candidate. The
  // observer sees the post-reset state, which must equal z_m, while the
  // recorded samples of a wrong candidate must not.
  const auto in = make_instance(10, 27);
  const ChaoticReconstruction model(in.cfg, kBasis, in.meas.record);
  const Eigen::VectorXd wrong = Eigen::VectorXd::Constant(100, 0.01);
  Eigen::VectorXd post(50);
  const auto ev = model.evaluate(wrong, false, [&](int m, const State& y, const auto&) {
    post[m] = y[1];
  });
  EXPECT_EQ(post, in.meas.record.z);
  EXPECT_GT(ev.residual.cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_GT(tail_max(ev.residual, 20), 1e-3);
}

TEST(Residual, IsDeterministic) {
  const auto in = make_instance(4, 28);
  const ChaoticReconstruction model(in.cfg, kBasis, in.meas.record);
  const Eigen::VectorXd a = Eigen::VectorXd::LinSpaced(100, -0.1, 0.1);
  EXPECT_EQ(model.residual(a), model.residual(a));
  EXPECT_EQ(model.jacobian(a), model.jacobian(a));
}

TEST(Residual, DivergentCandidateIsFlaggedNotThrown) {
  auto in = make_instance(3, 29);
  const ChaoticReconstruction model(in.cfg, kBasis, in.meas.record);
  const Eigen::VectorXd huge = Eigen::VectorXd::Constant(100, 1e3);
  ChaoticReconstruction::Evaluation ev;
  ASSERT_NO_THROW(ev = model.evaluate(huge, true));
  EXPECT_TRUE(ev.diverged);
  EXPECT_TRUE(ev.residual.allFinite());
  EXPECT_LE(ev.residual.cwiseAbs().maxCoeff(), kDivergedResidual);
  EXPECT_EQ(ev.residual[49], kDivergedResidual);
  EXPECT_TRUE(ev.jacobian.isZero());
}

TEST(Residual, RejectsInconsistentRecord) {
  const auto in = make_instance(3, 30);
  EXPECT_THROW(ChaoticReconstruction(lorenz_config(0.25), kBasis, in.meas.record),
               std::invalid_argument);
  const ChaoticReconstruction model(in.cfg, kBasis, in.meas.record);
  EXPECT_THROW(model.residual(Eigen::VectorXd::Zero(99)), std::invalid_argument);
}

TEST(Jacobian, MatchesCentralDifferences) {
  const auto in = make_instance(3, 31);
  const ChaoticReconstruction model(in.cfg, kBasis, in.meas.record);
  // A nearby candidate, not the truth itself.
  Eigen::VectorXd a = 0.9 * in.truth.alpha;
  a[0] += 0.05;
  const Eigen::MatrixXd J = model.jacobian(a);
  ASSERT_EQ(J.rows(), 50);
  ASSERT_EQ(J.cols(), 100);
  const double step = 1e-5;
  Eigen::MatrixXd fd(50, 100);
  for (int k = 0; k < 100; ++k) {
    Eigen::VectorXd ap = a, am = a;
    ap[k] += step;
    am[k] -= step;
    fd.col(k) = (model.residual(ap) - model.residual(am)) / (2 * step);
  }
  EXPECT_LE((J - fd).cwiseAbs().maxCoeff() / J.cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Jacobian, NuisanceColumnsMatchCentralDifferences) {
  const auto in = make_instance(3, 32);
  const ChaoticReconstruction model(in.cfg, kBasis, in.meas.record, {},
                                    InitialStateMode::estimated);
  ASSERT_EQ(model.num_params(), 103);
  ASSERT_EQ(model.num_coefficients(), 100);
  Eigen::VectorXd a(103);
  a.head(100) = 0.8 * in.truth.alpha;
  a.tail(3) = model.initial_nuisance();
  const Eigen::MatrixXd J = model.jacobian(a);
  const double step = 1e-5;
  for (int k = 100; k < 103; ++k) {
    Eigen::VectorXd ap = a, am = a;
    ap[k] += step;
    am[k] -= step;
    const Eigen::VectorXd fd = (model.residual(ap) - model.residual(am)) / (2 * step);
    EXPECT_LE((J.col(k) - fd).cwiseAbs().maxCoeff(),
              1e-4 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
  }
}

TEST(Jacobian, EstimatedModeWithTrueStateHasZeroResidual) {
  const auto in = make_instance(5, 33);
  const ChaoticReconstruction model(in.cfg, kBasis, in.meas.record, {},
                                    InitialStateMode::estimated);
  Eigen::VectorXd a(103);
  a.head(100) = in.truth.alpha;
  a.tail(3) = in.meas.truth.states[0];
  EXPECT_LT(model.residual(a).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Jacobian, SensitivityObsRowIsZeroAfterEachReset) {
  const auto in = make_instance(3, 34);
  const ChaoticReconstruction model(in.cfg, kBasis, in.meas.record);
  int calls = 0;
  model.evaluate(in.truth.alpha, true,
                 [&](int, const State&, const ChaoticReconstruction::Sensitivity& s) {
                   ++calls;
                   EXPECT_TRUE(s.row(1).isZero());
                   EXPECT_FALSE(s.row(0).isZero());
                 });
  EXPECT_EQ(calls, 50);
}

TEST(Jacobian, OffSupportColumnsAreNonzero) {
  const auto in = make_instance(3, 35);
  const Eigen::MatrixXd J = residual_jacobian(in.cfg, kBasis, in.meas.record, in.truth);
  int off = 0, nonzero = 0;
  for (int k = 0; k < 100; ++k) {
    if (in.truth.alpha[k] != 0.0) continue;
    ++off;
    if (J.col(k).norm() > 1e-6) ++nonzero;
  }
  EXPECT_EQ(nonzero, off);
}

TEST(InitialState, MatchedStartFitsLeadingSamplesBetterThanMeans) {
  const auto cfg = lorenz_config(0.2);
  const auto m = measure(cfg, SparseCoeffs::zeros(100), kBasis, 40);
  const auto& z = m.record.z;
  auto mismatch = [&](const State& y0) {
    const auto traj = integrate(cfg.sys, y0, 0.0, 1.0, cfg.h);
    double d = 0.0;
    for (int k = 1; k <= 5; ++k) d += std::pow(traj.states[200 * k][1] - z[k - 1], 2);
    return std::sqrt(d / 5);
  };
  const State matched = matched_initial_state(cfg, z);
  EXPECT_LT(mismatch(matched), mismatch(standard_initial_state(cfg, z)));
  EXPECT_LT(mismatch(matched), 2.0);
  EXPECT_EQ(initial_guess(cfg, z, InitialGuess::matched), matched);
  EXPECT_EQ(initial_guess(cfg, z, InitialGuess::standard), standard_initial_state(cfg, z));
}
