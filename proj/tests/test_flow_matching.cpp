#include "flowfill/flow_matching.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace flowfill;

TEST(SampleConditional, AtTimeOneStdIsSigmaMin) {
  Rng rng(1);
  const Mat x1 = rng.normal_matrix(3, 4);
  const OTPathConfig cfg{0.1};
  const ConditionalSample s = sample_conditional(x1, 1.0, cfg, rng);
  EXPECT_TRUE(s.x_t.isApprox(0.1 * s.x0 + x1, 1e-14));
}

TEST(SampleConditional, SigmaOneKeepsUnitNoise) {
  Rng rng(2);
  const Mat x1 = rng.normal_matrix(2, 2);
  const ConditionalSample s = sample_conditional(x1, 0.3, OTPathConfig{1.0 - 1e-15}, rng);
  EXPECT_TRUE(s.x_t.isApprox(s.x0 + 0.3 * x1, 1e-12));
}

TEST(SampleConditional, MonteCarloMomentsAtHalfTime) {
  Rng rng(3);
  const Mat x1 = Mat::Zero(100, 100);
  const ConditionalSample s = sample_conditional(x1, 0.5, OTPathConfig{0.0}, rng);
  const double n = static_cast<double>(s.x_t.size());
  const double mean = s.x_t.sum() / n;
  const double sd = std::sqrt((s.x_t.array() - mean).square().sum() / n);
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(sd, 0.5, 0.02);
}

TEST(SampleConditional, MomentsTrackPathFormula) {
  Rng rng(4);
  const double t = 0.7, sigma = 0.2;
  const int n = 20000;
  Mat x1(n, 1);
  x1.setConstant(1.5);
  const ConditionalSample s = sample_conditional(x1, t, OTPathConfig{sigma}, rng);
  const double mean = s.x_t.mean();
  const double sd = std::sqrt((s.x_t.array() - mean).square().mean());
  const double expect_sd = 1.0 - (1.0 - sigma) * t;
  EXPECT_NEAR(mean, t * 1.5, 3.0 * expect_sd / std::sqrt(n));
  EXPECT_NEAR(sd, expect_sd, 3.0 * expect_sd / std::sqrt(n));
}

TEST(SampleConditional, TimeOutsideUnitIntervalIsDomainError) {
  Rng rng(5);
  const Mat x1 = Mat::Zero(1, 1);
  EXPECT_THROW(sample_conditional(x1, -0.1, OTPathConfig{}, rng), DomainError);
  EXPECT_THROW(sample_conditional(x1, 1.1, OTPathConfig{}, rng), DomainError);
  EXPECT_THROW(sample_conditional(x1, std::nan(""), OTPathConfig{}, rng), DomainError);
}

TEST(TargetField, HandExample) {
  Mat x(1, 2), x1(1, 2);
  x << 1, 0;
  x1 << 2, 0;
  const Mat u = target_field(x, x1, 0.5, OTPathConfig{0.0});
  EXPECT_DOUBLE_EQ(u(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(u(0, 1), 0.0);
}

TEST(TargetField, TimeZeroIsUndividedDifference) {
  Rng rng(6);
  const Mat x = rng.normal_matrix(2, 3), x1 = rng.normal_matrix(2, 3);
  const OTPathConfig cfg{0.05};
  EXPECT_EQ(target_field(x, x1, 0.0, cfg), Mat(x1 - 0.95 * x));
}

TEST(TargetField, SingularAtTimeOneWithZeroSigma) {
  const Mat x = Mat::Ones(1, 1);
  EXPECT_THROW(target_field(x, x, 1.0, OTPathConfig{0.0}), DomainError);
  EXPECT_NO_THROW(target_field(x, x, 1.0, OTPathConfig{1e-5}));
  EXPECT_THROW(target_field(Mat::Ones(1, 2), x, 0.5, OTPathConfig{}), ContractError);
}

TEST(TargetField, ConstantAlongTrajectory) {
  Rng rng(7);
  const Mat x0 = rng.normal_matrix(4, 3), x1 = rng.normal_matrix(4, 3);
  const OTPathConfig cfg{0.05};
  const Mat expect = x1 - (1.0 - cfg.sigma_min) * x0;
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double t = k / 99.0;
    worst = std::max(worst, (target_field(path_point(x0, x1, t, cfg), x1, t, cfg) - expect).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(CfmLoss, Examples) {
  Rng rng(8);
  const Mat a = rng.normal_matrix(4, 4), b = rng.normal_matrix(4, 4);
  EXPECT_DOUBLE_EQ(cfm_loss(a, a), 0.0);
  EXPECT_DOUBLE_EQ(cfm_loss(Mat::Ones(2, 3), Mat::Zero(2, 3)), 1.0);
  double s = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) s += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
  EXPECT_NEAR(cfm_loss(a, b), s / 16.0, 1e-14);
  EXPECT_THROW(cfm_loss(Mat::Ones(2, 2), Mat::Ones(2, 3)), ContractError);
}

TEST(MaskedLoss, UnitErrorOnMaskedFramesOnly) {
  const Mat u = Mat::Zero(4, 2);
  Mat v = Mat::Zero(4, 2);
  v.topRows(2).setOnes();
  const FrameMask m(std::vector<bool>{true, true, false, false});
  EXPECT_DOUBLE_EQ(masked_audio_cfm_loss(v, u, m), 0.9);
}

TEST(MaskedLoss, AllMaskedIsWeightedCfm) {
  Rng rng(9);
  const Mat v = rng.normal_matrix(5, 3), u = rng.normal_matrix(5, 3);
  const FrameMask m(5, true);
  EXPECT_NEAR(masked_audio_cfm_loss(v, u, m), 0.9 * cfm_loss(v, u), 1e-15);
  const FrameMask none(5, false);
  EXPECT_NEAR(masked_audio_cfm_loss(v, u, none), 0.1 * cfm_loss(v, u), 1e-15);
}

TEST(MaskedLoss, MixedSixFrameCase) {
  // Per-frame squared errors {1, 1, 0, 4, 0, 0} with F = 1.
  Mat v(6, 1), u = Mat::Zero(6, 1);
  v << 1, -1, 0, 2, 0, 0;
  const FrameMask m(std::vector<bool>{true, true, true, false, false, false});
  EXPECT_NEAR(masked_audio_cfm_loss(v, u, m), 0.9 * (2.0 / 3.0) + 0.1 * (4.0 / 3.0), 1e-15);
}

TEST(MaskedLoss, EqualWeightsAverageRegionMeans) {
  Rng rng(10);
  const Mat v = rng.normal_matrix(7, 2), u = rng.normal_matrix(7, 2);
  const FrameMask m(std::vector<bool>{true, false, false, true, true, false, false});
  const MaskedLoss c = masked_cfm_components(v, u, m, {0.5, 0.5});
  EXPECT_NEAR(c.total, 0.5 * (c.masked + c.context), 1e-15);
}

TEST(MaskedLoss, RowWeightsReproduceLoss) {
  Rng rng(11);
  const Mat v = rng.normal_matrix(6, 3), u = rng.normal_matrix(6, 3);
  for (const FrameMask& m : {FrameMask(std::vector<bool>{true, false, true, false, false, false}), FrameMask(6, true),
                             FrameMask(6, false)}) {
    const auto w = masked_loss_row_weights(m, 3, LossWeights{});
    double s = 0;
    for (int i = 0; i < 6; ++i) s += w[static_cast<std::size_t>(i)] * (v.row(i) - u.row(i)).squaredNorm();
    EXPECT_NEAR(s, masked_audio_cfm_loss(v, u, m), 1e-14);
  }
}

TEST(MaskedLoss, ShapeChecks) {
  EXPECT_THROW(masked_audio_cfm_loss(Mat::Zero(3, 2), Mat::Zero(3, 2), FrameMask(2, true)), ContractError);
  EXPECT_THROW(masked_audio_cfm_loss(Mat::Zero(3, 2), Mat::Zero(2, 2), FrameMask(3, true)), ContractError);
}

TEST(IntegrateFlow, ZeroFieldReturnsStart) {
  Rng rng(12);
  const Mat x0 = rng.normal_matrix(3, 2);
  const VectorField zero = [](const Mat& x, double) { return Mat(Mat::Zero(x.rows(), x.cols())); };
  EXPECT_EQ(integrate_flow(zero, x0, 7, OdeMethod::euler), x0);
  EXPECT_EQ(integrate_flow(zero, x0, 7, OdeMethod::midpoint), x0);
}

TEST(IntegrateFlow, ConditionalFieldReachesEndpointForAnyStepCount) {
  Rng rng(13);
  const Mat x0 = rng.normal_matrix(5, 4), x1 = rng.normal_matrix(5, 4);
  const OTPathConfig cfg{0.05};
  const VectorField f = [&](const Mat& x, double t) { return target_field(x, x1, t, cfg); };
  const Mat expect = cfg.sigma_min * x0 + x1;
  for (int steps : {1, 3, 4, 32})
    for (OdeMethod m : {OdeMethod::euler, OdeMethod::midpoint})
      EXPECT_LT((integrate_flow(f, x0, steps, m) - expect).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(IntegrateFlow, EulerOnLinearField) {
  const Mat x0 = Mat::Constant(1, 2, 1.5);
  const VectorField f = [](const Mat& x, double) { return x; };
  const Mat x = integrate_flow(f, x0, 1000, OdeMethod::euler);
  EXPECT_LT(std::abs(x(0, 0) / (std::exp(1.0) * 1.5) - 1.0), 0.002);
}

TEST(IntegrateFlow, MidpointConvergesQuadratically) {
  const Mat x0 = Mat::Ones(1, 1);
  const VectorField f = [](const Mat& x, double) { return x; };
  const double e = std::exp(1.0);
  for (int n : {8, 16, 32}) {
    const double err_n = std::abs(integrate_flow(f, x0, n)(0, 0) - e);
    const double err_2n = std::abs(integrate_flow(f, x0, 2 * n)(0, 0) - e);
    const double ratio = err_n / err_2n;
    EXPECT_GE(ratio, 3.5);
    EXPECT_LE(ratio, 4.5);
  }
}

TEST(IntegrateFlow, NonFiniteFieldNamesStep) {
  const VectorField f = [](const Mat& x, double t) {
    Mat v = Mat::Zero(x.rows(), x.cols());
    if (t >= 0.5) v(0, 0) = std::numeric_limits<double>::infinity();
    return v;
  };
  try {
    integrate_flow(f, Mat::Zero(1, 1), 4, OdeMethod::euler);
    FAIL() << "expected IntegrationError";
  } catch (const IntegrationError& e) {
    EXPECT_EQ(e.step(), 2);
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos);
  }
  EXPECT_THROW(integrate_flow(f, Mat::Zero(1, 1), 0), ContractError);
}

TEST(OdeMethod, ParseRoundTrip) {
  EXPECT_EQ(parse_ode_method(to_string(OdeMethod::euler)), OdeMethod::euler);
  EXPECT_EQ(parse_ode_method(to_string(OdeMethod::midpoint)), OdeMethod::midpoint);
  EXPECT_THROW(parse_ode_method("rk4"), ConfigError);
}

TEST(OTPathConfig, Validation) {
  EXPECT_NO_THROW(validate(OTPathConfig{0.0}));
  EXPECT_THROW(validate(OTPathConfig{1.0}), ConfigError);
  EXPECT_THROW(validate(OTPathConfig{-0.1}), ConfigError);
}
