#include "oracles.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

namespace {

using trn::Matrix;
using trn::Vector;

TEST(Matrix, RejectsWrongValueCount) {
  EXPECT_THROW(Matrix<double>(2, 3, std::vector<double>(5)), trn::DimensionError);
}

TEST(Matrix, CastRoundTripsThroughDouble) {
  Matrix<float> m(2, 2, std::vector<float>{1.5f, -2.25f, 3.0f, 0.1f});
  EXPECT_EQ(m.cast<double>().cast<float>(), m);
}

TEST(Linear, MatchesHandComputation) {
  Matrix<double> w(2, 3, std::vector<double>{1, 2, 3, -1, 0, 4});
  std::vector<double> b{0.5, -1.0};
  std::vector<double> x{1, -1, 2};
  const auto y = trn::linear<double>(w, b, x);
  ASSERT_EQ(y.size(), 2u);
  EXPECT_DOUBLE_EQ(y[0], 1 - 2 + 6 + 0.5);
  EXPECT_DOUBLE_EQ(y[1], -1 + 0 + 8 - 1.0);
}

TEST(Linear, ShapeMismatchNamesBothShapes) {
  Matrix<double> w(2, 3);
  std::vector<double> b(2), x(4);
  try {
    trn::linear<double>(w, b, x);
    FAIL() << "expected DimensionError";
  } catch (const trn::DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4]"), std::string::npos) << msg;
  }
}

TEST(Softmax, SumsToOneAndSurvivesLargeLogits) {
  const std::vector<double> z{1000.0, 1001.0, 999.0};
  const auto p = trn::softmax<double>(z);
  double s = 0;
  for (double v : p) {
    EXPECT_TRUE(std::isfinite(v));
    s += v;
  }
  EXPECT_NEAR(s, 1.0, 1e-15);
  EXPECT_GT(p[1], p[0]);
}

TEST(Softmax, UniformLogitsGiveUniformDistribution) {
  const auto p = trn::softmax<double>(std::vector<double>(21, 3.0));
  for (double v : p) EXPECT_NEAR(v, 1.0 / 21, 1e-15);
  EXPECT_NEAR(trn::cross_entropy<double>(p, 4), std::log(21.0), 1e-12);
}

TEST(CrossEntropy, ClampsZeroProbability) {
  const std::vector<double> p{1.0, 0.0};
  EXPECT_NEAR(trn::cross_entropy<double>(p, 1), -std::log(1e-12), 1e-9);
  EXPECT_THROW(trn::cross_entropy<double>(p, 2), std::out_of_range);
}

TEST(CheckFinite, NamesTheOffendingIndex) {
  const std::vector<double> v{0.0, std::numeric_limits<double>::quiet_NaN()};
  try {
    trn::check_finite<double>(v, "probe");
    FAIL();
  } catch (const trn::NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("probe"), std::string::npos);
  }
}

TEST(Lstm, MatchesScalarReference) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t in = 1 + trial % 5;
    const std::size_t hidden = 1 + trial % 4;
    trn::LstmParams<double> p(in, hidden);
    p.weight = trn::testing::random_matrix(rng, 4 * hidden, in + hidden);
    p.bias = trn::testing::random_matrix(rng, 4 * hidden, 1);
    const auto x = trn::testing::random_matrix(rng, 1, in).row(0);
    const auto h0 = trn::testing::random_matrix(rng, 1, hidden).row(0);
    const auto c0 = trn::testing::random_matrix(rng, 1, hidden).row(0);
    const auto step = trn::lstm_step<double>(p, std::vector<double>(x.begin(), x.end()),
                                             std::vector<double>(h0.begin(), h0.end()),
                                             std::vector<double>(c0.begin(), c0.end()));
    std::vector<double> h(h0.begin(), h0.end()), c(c0.begin(), c0.end());
    trn::oracle::lstm(p, std::vector<double>(x.begin(), x.end()), h, c);
    for (std::size_t k = 0; k < hidden; ++k) {
      EXPECT_NEAR(step.h[k], h[k], 1e-14);
      EXPECT_NEAR(step.c[k], c[k], 1e-14);
    }
  }
}

TEST(Lstm, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const std::size_t in = 3, hidden = 4;
  trn::LstmParams<double> p(in, hidden);
  p.weight = trn::testing::random_matrix(rng, 4 * hidden, in + hidden);
  p.bias = trn::testing::random_matrix(rng, 4 * hidden, 1);
  const auto xr = trn::testing::random_matrix(rng, 1, in + 2 * hidden);
  std::vector<double> theta(xr.values().begin(), xr.values().end());
  // Scalar objective: sum_k a_k h_k + b_k c_k with fixed random weights.
  const auto a = trn::testing::random_matrix(rng, 1, hidden);
  const auto bw = trn::testing::random_matrix(rng, 1, hidden);
  auto objective = [&](std::span<const double> v) {
    const auto s = trn::lstm_step<double>(p, v.subspan(0, in), v.subspan(in, hidden), v.subspan(in + hidden));
    double f = 0;
    for (std::size_t k = 0; k < hidden; ++k) f += a(0, k) * s.h[k] + bw(0, k) * s.c[k];
    return f;
  };
  const auto s = trn::lstm_step<double>(p, std::span<const double>(theta).subspan(0, in),
                                        std::span<const double>(theta).subspan(in, hidden),
                                        std::span<const double>(theta).subspan(in + hidden));
  trn::LstmParams<double> grads(in, hidden);
  const auto g = trn::lstm_backward<double>(p, s, a.row(0), bw.row(0), grads);
  std::vector<double> analytic = g.dx;
  analytic.insert(analytic.end(), g.dh_prev.begin(), g.dh_prev.end());
  analytic.insert(analytic.end(), g.dc_prev.begin(), g.dc_prev.end());
  const auto report = trn::grad_check(objective, theta, analytic);
  EXPECT_LT(report.max_relative_error, 1e-8);
}

TEST(GradCheck, DetectsAWrongGradient) {
  auto f = [](std::span<const double> v) { return v[0] * v[0] + 3.0 * v[1]; };
  const std::vector<double> theta{2.0, -1.0};
  EXPECT_LT(trn::grad_check(f, theta, std::vector<double>{4.0, 3.0}).max_relative_error, 1e-8);
  const auto bad = trn::grad_check(f, theta, std::vector<double>{4.0, 2.0});
  EXPECT_NEAR(bad.max_relative_error, 1.0 / 3.0, 1e-6);
  EXPECT_EQ(bad.worst_index, 1u);
}

TEST(GradCheck, RejectsNonFiniteLoss) {
  auto f = [](std::span<const double> v) { return std::log(v[0]); };
  EXPECT_THROW(trn::grad_check(f, std::vector<double>{0.0}, std::vector<double>{1.0}), trn::NonFiniteError);
}

TEST(ReluBackward, MasksInactiveUnits) {
  const std::vector<double> out{0.0, 2.0, 0.0, 1e-300};
  std::vector<double> dy{1.0, 1.0, 1.0, 1.0};
  trn::relu_backward<double>(out, dy);
  EXPECT_EQ(dy, (std::vector<double>{0.0, 1.0, 0.0, 1.0}));
}

}  // namespace
