#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "teachclip/core_math.hpp"

using namespace teachclip;

namespace {

// Independent Pearson: single-pass sums in long double.
double pearson_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  long double n = a.size(), sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
    saa += (long double)a[i] * a[i];
    sbb += (long double)b[i] * b[i];
    sab += (long double)a[i] * b[i];
  }
  const long double cov = sab - sa * sb / n;
  const long double va = saa - sa * sa / n;
  const long double vb = sbb - sb * sb / n;
  return static_cast<double>(cov / std::sqrt(va * vb));
}

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

}  // namespace

TEST(Softmax, SymmetricPair) {
  const auto p = softmax(std::vector<double>{0.0, 0.0});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Softmax, LogRatios) {
  const auto p = softmax(std::vector<double>{std::log(1.0), std::log(2.0), std::log(3.0)});
  EXPECT_NEAR(p[0], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(p[1], 2.0 / 6.0, 1e-15);
  EXPECT_NEAR(p[2], 3.0 / 6.0, 1e-15);
}

TEST(Softmax, LargeInputsDoNotOverflow) {
  const auto p = softmax(std::vector<double>{1000.0, 0.0});
  EXPECT_TRUE(std::isfinite(p[0]) && std::isfinite(p[1]));
  EXPECT_NEAR(p[0], 1.0, 1e-15);
  EXPECT_NEAR(p[1], 0.0, 1e-15);
}

TEST(Softmax, TemperatureScalesInputs) {
  const auto a = softmax(std::vector<double>{1.0, 3.0}, 2.0);
  const auto b = softmax(std::vector<double>{0.5, 1.5});
  EXPECT_NEAR(a[0], b[0], 1e-15);
  EXPECT_NEAR(a[1], b[1], 1e-15);
}

TEST(Softmax, Errors) {
  EXPECT_THROW(softmax(std::vector<double>{}), InvalidInput);
  EXPECT_THROW(softmax(std::vector<double>{1.0, NAN}), InvalidInput);
  EXPECT_THROW(softmax(std::vector<double>{1.0, INFINITY}), InvalidInput);
  EXPECT_THROW(softmax(std::vector<double>{1.0}, 0.0), InvalidInput);
  EXPECT_THROW(softmax(std::vector<double>{1.0}, -1.0), InvalidInput);
}

TEST(SoftmaxProperty, ShiftInvarianceAndNormalization) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> mag(-1e4, 1e4);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + trial % 17;
    std::vector<double> x(n);
    for (double& v : x) v = mag(rng) * (trial % 2 ? 1.0 : 1e-4);
    const double c = mag(rng) * 1e-2;
    std::vector<double> shifted(x);
    for (double& v : shifted) v += c;
    const auto p = softmax(x);
    const auto q = softmax(shifted);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(p[i], q[i], 1e-12);
      EXPECT_GE(p[i], 0.0);
      total += p[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Cosine, Examples) {
  EXPECT_DOUBLE_EQ(cosine(std::vector<double>{1, 0}, std::vector<double>{1, 0}), 1.0);
  EXPECT_DOUBLE_EQ(cosine(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0);
  EXPECT_NEAR(cosine(std::vector<double>{1, 1}, std::vector<double>{1, 0}), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Cosine, ClampedToUnitInterval) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 200; ++t) {
    auto a = random_vec(rng, 7, 1e3);
    const double c = cosine(a, a);
    EXPECT_LE(c, 1.0);
    EXPECT_NEAR(c, 1.0, 1e-12);
  }
}

TEST(Cosine, Errors) {
  EXPECT_THROW(cosine(std::vector<double>{0, 0}, std::vector<double>{1, 0}), DegenerateInput);
  EXPECT_THROW(cosine(std::vector<double>{1, 0}, std::vector<double>{1, 0, 0}), InvalidInput);
}

TEST(Pearson, Examples) {
  const std::vector<double> a{1, 2, 3};
  std::vector<double> neg{-1, -2, -3};
  EXPECT_NEAR(pearson_rho(a, a), 1.0, 1e-15);
  EXPECT_NEAR(pearson_rho(a, neg), -1.0, 1e-15);
  const double expected = 9.0 / (2.0 * std::sqrt(21.0));
  EXPECT_NEAR(pearson_rho(a, std::vector<double>{1, 2, 4}), expected, 1e-15);
  EXPECT_NEAR(expected, 0.98198051, 1e-8);
}

TEST(Pearson, DistanceExamples) {
  const std::vector<double> a{1, 2, 3};
  EXPECT_NEAR(pearson_distance(a, a), 0.0, 1e-15);
  EXPECT_NEAR(pearson_distance(a, std::vector<double>{-1, -2, -3}), 2.0, 1e-15);
  EXPECT_NEAR(pearson_distance(a, std::vector<double>{1, 2, 4}), 1.0 - 9.0 / (2.0 * std::sqrt(21.0)), 1e-15);
  EXPECT_NEAR(1.0 - 9.0 / (2.0 * std::sqrt(21.0)), 0.01801949, 1e-8);
}

TEST(Pearson, ConstantVectorIsNeutral) {
  EXPECT_EQ(pearson_rho(std::vector<double>{2, 2, 2}, std::vector<double>{1, 2, 3}), 0.0);
  EXPECT_EQ(pearson_distance(std::vector<double>{1, 2, 3}, std::vector<double>{5, 5, 5}), 1.0);
}

TEST(Pearson, Errors) {
  EXPECT_THROW(pearson_rho(std::vector<double>{1}, std::vector<double>{1}), InvalidInput);
  EXPECT_THROW(pearson_rho(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), InvalidInput);
}

TEST(PearsonProperty, MatchesOracleAndAffineInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> alpha(0.01, 100.0), beta(-50.0, 50.0);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + t % 30;
    auto a = random_vec(rng, n);
    auto b = random_vec(rng, n);
    EXPECT_NEAR(pearson_rho(a, b), pearson_oracle(a, b), 1e-12);
    const double al = alpha(rng), be = beta(rng);
    std::vector<double> ab(a);
    for (double& v : ab) v = al * v + be;
    const double d = pearson_distance(a, b);
    EXPECT_LT(std::abs(pearson_distance(ab, b) - d), 1e-10);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 2.0);
    EXPECT_LT(pearson_distance(a, a), 1e-12);
  }
}

TEST(CrossEntropy, Examples) {
  const std::vector<double> u{1.0 / 3, 1.0 / 3, 1.0 / 3};
  EXPECT_NEAR(cross_entropy(u, u), std::log(3.0), 1e-15);
  EXPECT_NEAR(cross_entropy(std::vector<double>{1, 0, 0}, std::vector<double>{0.5, 0.25, 0.25}), std::log(2.0),
              1e-15);
  const std::vector<double> p{0.2, 0.5, 0.3};
  EXPECT_NEAR(cross_entropy(p, p), entropy(p), 1e-15);
}

TEST(CrossEntropy, ClampsZeroPrediction) {
  const double ce = cross_entropy(std::vector<double>{1, 0}, std::vector<double>{0, 1});
  EXPECT_NEAR(ce, -std::log(kLogClamp), 1e-9);
}

TEST(CrossEntropy, LengthMismatch) {
  EXPECT_THROW(cross_entropy(std::vector<double>{1}, std::vector<double>{0.5, 0.5}), InvalidInput);
}

TEST(CrossEntropyProperty, GibbsDecomposition) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + t % 10;
    const auto p = softmax(random_vec(rng, n));
    const auto q = softmax(random_vec(rng, n));
    const double kl = kl_divergence(p, q);
    EXPECT_NEAR(cross_entropy(p, q) - entropy(p), kl, 1e-12);
    EXPECT_GE(kl, -1e-15);
    EXPECT_NEAR(kl_divergence(p, p), 0.0, 1e-12);
  }
}
