#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "teachclip/autodiff.hpp"
#include "teachclip/core_math.hpp"
#include "teachclip/losses.hpp"

using namespace teachclip;

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Tensor t(r, c);
  for (double& v : t.data) v = g(rng);
  return t;
}

Tensor prob_rows(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  Tensor t = random_tensor(rng, r, c);
  for (std::size_t i = 0; i < r; ++i) {
    const auto p = softmax(t.row(i));
    std::copy(p.begin(), p.end(), t.row(i).begin());
  }
  return t;
}

// Direct long-double InfoNCE: no log-sum-exp shift, no shared helpers.
double info_nce_oracle(const Tensor& B, double logit_scale) {
  const std::size_t b = B.rows;
  const long double s = std::exp((long double)logit_scale);
  long double rows = 0, cols = 0;
  for (std::size_t i = 0; i < b; ++i) {
    long double z = 0;
    for (std::size_t j = 0; j < b; ++j) z += std::exp(s * B(i, j));
    rows += -std::log(std::exp(s * B(i, i)) / z);
  }
  for (std::size_t j = 0; j < b; ++j) {
    long double z = 0;
    for (std::size_t i = 0; i < b; ++i) z += std::exp(s * B(i, j));
    cols += -std::log(std::exp(s * B(j, j)) / z);
  }
  return static_cast<double>(0.5L * (rows + cols) / b);
}

long double pearson_dist_ld(const std::vector<long double>& x, const std::vector<long double>& y) {
  const std::size_t n = x.size();
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return 1.0L - sxy / std::sqrt(sxx * syy);
}

std::vector<long double> softmax_ld(std::vector<long double> v) {
  long double mx = v[0], z = 0;
  for (auto x : v) mx = std::max(mx, x);
  for (auto& x : v) z += (x = std::exp(x - mx));
  for (auto& x : v) x /= z;
  return v;
}

double cgt_oracle(const Tensor& B, const Tensor& Y) {
  const std::size_t b = B.rows;
  long double total = 0;
  for (int side = 0; side < 2; ++side)
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<long double> x(b), y(b);
      for (std::size_t j = 0; j < b; ++j) {
        x[j] = side == 0 ? B(i, j) : B(j, i);
        y[j] = side == 0 ? Y(i, j) : Y(j, i);
      }
      total += pearson_dist_ld(softmax_ld(x), softmax_ld(y)) / b;
    }
  return static_cast<double>(total);
}

double mean_row_entropy(const Tensor& p) {
  double h = 0.0;
  for (std::size_t i = 0; i < p.rows; ++i) h += entropy(p.row(i));
  return h / static_cast<double>(p.rows);
}

}  // namespace

TEST(InfoNce, Examples) {
  EXPECT_NEAR(info_nce(Tensor(2, 2, 0.0), 0.0), std::log(2.0), 1e-15);
  const Tensor eye(2, 2, {1.0, 0.0, 0.0, 1.0});
  EXPECT_NEAR(info_nce(eye, 0.0), std::log1p(std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(std::log1p(std::exp(-1.0)), 0.31326, 1e-5);
  EXPECT_LT(info_nce(eye, std::log(100.0)), 1e-40);
}

TEST(InfoNce, MatchesOracle) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 200; ++t) {
    const std::size_t b = 2 + t % 9;
    const Tensor B = random_tensor(rng, b, b, 0.5);
    const double ls = 0.5 * (t % 5);
    EXPECT_NEAR(info_nce(B, ls), info_nce_oracle(B, ls), 1e-11);
  }
}

TEST(InfoNce, RejectsNonSquare) {
  EXPECT_THROW(info_nce(Tensor(2, 3, 0.0), 0.0), InvalidInput);
  EXPECT_THROW(info_nce(Tensor(1, 1, 0.0), 0.0), InvalidInput);
}

TEST(InfoNceProperty, MonotoneInDiagonalDominance) {
  for (std::size_t b : {2u, 4u, 8u}) {
    double prev = INFINITY;
    for (int k = 0; k <= 100; ++k) {
      Tensor B(b, b, 0.0);
      for (std::size_t i = 0; i < b; ++i) B(i, i) = 0.05 * k;
      const double l = info_nce(B, 0.0);
      if (k > 0) {
        EXPECT_LT(l, prev);
      }
      prev = l;
    }
  }
}

TEST(CgtLoss, Examples) {
  std::mt19937_64 rng(4);
  const Tensor B = random_tensor(rng, 5, 5);
  EXPECT_NEAR(cgt_loss(B, B), 0.0, 1e-15);
  Tensor shifted = B;
  for (double& v : shifted.data) v += 7.0;
  EXPECT_NEAR(cgt_loss(B, shifted), 0.0, 1e-12);

  const Tensor eye(2, 2, {1.0, 0.0, 0.0, 1.0});
  const Tensor anti(2, 2, {0.0, 1.0, 1.0, 0.0});
  EXPECT_NEAR(cgt_loss(eye, anti), 4.0, 1e-9);
  const CgtTerms t = cgt_terms(eye, anti);
  EXPECT_NEAR(t.rows, 2.0, 1e-9);
  EXPECT_NEAR(t.cols, 2.0, 1e-9);
}

TEST(CgtLoss, ShapeMismatch) {
  EXPECT_THROW(cgt_loss(Tensor(2, 2, 0.0), Tensor(3, 3, 0.0)), InvalidInput);
}

TEST(CgtLoss, MatchesOracle) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 200; ++t) {
    const std::size_t b = 3 + t % 8;
    const Tensor B = random_tensor(rng, b, b);
    const Tensor Y = random_tensor(rng, b, b);
    EXPECT_NEAR(cgt_loss(B, Y), cgt_oracle(B, Y), 1e-12);
  }
}

TEST(CgtLossProperty, DirectionalConstantInvariance) {
  // Row constants leave every row softmax of y_c unchanged, so the row term
  // is invariant; likewise columns. The two-sided sum is only invariant to a
  // shift common to both.
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> c(-20.0, 20.0);
  for (int t = 0; t < 300; ++t) {
    const std::size_t b = 2 + t % 10;
    const Tensor B = random_tensor(rng, b, b);
    const Tensor Y = random_tensor(rng, b, b);
    Tensor row_shift = Y, col_shift = Y;
    for (std::size_t i = 0; i < b; ++i) {
      const double ri = c(rng), ci = c(rng);
      for (std::size_t j = 0; j < b; ++j) {
        row_shift(i, j) += ri;
        col_shift(j, i) += ci;
      }
    }
    const CgtTerms base = cgt_terms(B, Y);
    EXPECT_NEAR(cgt_terms(B, row_shift).rows, base.rows, 1e-10);
    EXPECT_NEAR(cgt_terms(B, col_shift).cols, base.cols, 1e-10);
  }
}

TEST(CgtLossProperty, RangeZeroToFour) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 500; ++t) {
    const std::size_t b = 2 + t % 12;
    const double l = cgt_loss(random_tensor(rng, b, b, 3.0), random_tensor(rng, b, b, 3.0));
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 4.0);
  }
}

TEST(FgtLoss, Examples) {
  EXPECT_NEAR(fgt_loss(Tensor(1, 3, 1.0 / 3.0), Tensor(1, 3, 1.0 / 3.0)), std::log(3.0), 1e-15);
  std::mt19937_64 rng(2);
  const Tensor p = prob_rows(rng, 4, 6);
  EXPECT_NEAR(fgt_loss(p, p), mean_row_entropy(p), 1e-15);
  const Tensor w(2, 2, {0.5, 0.5, 0.25, 0.75});
  const Tensor y(2, 2, {1.0, 0.0, 0.0, 1.0});
  const double expected = 0.5 * (std::log(2.0) + std::log(4.0 / 3.0));
  EXPECT_NEAR(fgt_loss(w, y), expected, 1e-15);
  EXPECT_NEAR(expected, 0.4904, 1e-4);
}

TEST(FgtLoss, ShapeMismatch) {
  EXPECT_THROW(fgt_loss(Tensor(2, 3, 0.3), Tensor(2, 4, 0.25)), InvalidInput);
}

TEST(FgtLossProperty, GibbsMinimumByDirectOptimization) {
  std::mt19937_64 rng(23);
  for (int t = 0; t < 5; ++t) {
    const Tensor y = prob_rows(rng, 3, 5);
    const double h = mean_row_entropy(y);
    EXPECT_NEAR(fgt_loss(y, y), h, 1e-9);

    Tensor z = random_tensor(rng, 3, 5);
    double last = INFINITY;
    for (int step = 0; step < 2000; ++step) {
      Tape tape;
      Var zv = tape.leaf(z);
      Var l = fgt_loss(row_softmax(zv), y);
      EXPECT_GE(l.scalar(), h - 1e-12);
      last = l.scalar();
      tape.backward(l);
      const Tensor& g = tape.grad(zv);
      for (std::size_t k = 0; k < z.size(); ++k) z.data[k] -= 3.0 * g.data[k];
    }
    EXPECT_LT(last - h, 1e-9);
    Tape tape;
    const Tensor w = row_softmax(tape.leaf(z, false)).value();
    for (std::size_t k = 0; k < w.size(); ++k) EXPECT_NEAR(w.data[k], y.data[k], 1e-4);
    // Any other point sits strictly above the minimum.
    const Tensor other = prob_rows(rng, 3, 5);
    EXPECT_GT(fgt_loss(other, y), h + 1e-9);
  }
}

TEST(TotalLoss, TeachingDisabledEqualsInfoNce) {
  std::mt19937_64 rng(3);
  const Tensor B = random_tensor(rng, 4, 4);
  const Tensor w = prob_rows(rng, 4, 3);
  const LossBreakdown l = total_loss(B, {}, w, 0.3, 1.0, LossTerms{true, false, false});
  EXPECT_DOUBLE_EQ(l.total, info_nce(B, 0.3));
  EXPECT_EQ(l.l_cgt, 0.0);
  EXPECT_EQ(l.l_fgt, 0.0);
}

TEST(TotalLoss, PerfectStudentFixture) {
  std::mt19937_64 rng(5);
  const Tensor B = random_tensor(rng, 4, 4);
  const Tensor w = prob_rows(rng, 4, 6);
  const LossBreakdown l = total_loss(B, {&B, &w}, w, 0.0);
  EXPECT_NEAR(l.l_cgt, 0.0, 1e-15);
  EXPECT_NEAR(l.l_fgt, mean_row_entropy(w), 1e-15);
  EXPECT_DOUBLE_EQ(l.total, l.l_in + l.l_cgt + l.l_fgt);
}

TEST(TotalLoss, ComposesAdditively) {
  std::mt19937_64 rng(6);
  const Tensor B = random_tensor(rng, 5, 5);
  const Tensor Y = random_tensor(rng, 5, 5);
  const Tensor w = prob_rows(rng, 5, 4);
  const Tensor yf = prob_rows(rng, 5, 4);
  const LossBreakdown l = total_loss(B, {&Y, &yf}, w, 0.7);
  EXPECT_DOUBLE_EQ(l.l_in, info_nce(B, 0.7));
  EXPECT_DOUBLE_EQ(l.l_cgt, cgt_loss(B, Y));
  EXPECT_DOUBLE_EQ(l.l_fgt, fgt_loss(w, yf));
  EXPECT_DOUBLE_EQ(l.total, l.l_in + l.l_cgt + l.l_fgt);

  Tape tape;
  const auto g = total_loss(tape.leaf(B), tape.leaf(w), tape.leaf(Tensor(1, 1, 0.7)), {&Y, &yf});
  EXPECT_NEAR(g.values.total, l.total, 1e-13);
}

TEST(TotalLoss, DisablingZeroesExactlyThatComponent) {
  std::mt19937_64 rng(7);
  const Tensor B = random_tensor(rng, 4, 4);
  const Tensor Y = random_tensor(rng, 4, 4);
  const Tensor w = prob_rows(rng, 4, 3);
  const Tensor yf = prob_rows(rng, 4, 3);
  const LossBreakdown all = total_loss(B, {&Y, &yf}, w, 0.0);
  for (int mask = 1; mask < 8; ++mask) {
    const LossTerms terms{bool(mask & 1), bool(mask & 2), bool(mask & 4)};
    const LossBreakdown l = total_loss(B, {&Y, &yf}, w, 0.0, 1.0, terms);
    EXPECT_EQ(l.l_in, terms.in ? all.l_in : 0.0);
    EXPECT_EQ(l.l_cgt, terms.cgt ? all.l_cgt : 0.0);
    EXPECT_EQ(l.l_fgt, terms.fgt ? all.l_fgt : 0.0);
  }
}

TEST(TotalLoss, MissingTargets) {
  const Tensor B(2, 2, 0.0), w(2, 2, 0.5);
  EXPECT_THROW(total_loss(B, {}, w, 0.0), InvalidInput);
}

TEST(TotalLossProperty, ComposedGradCheck) {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 20; ++t) {
    const std::size_t b = 2 + t % 5, m = 2 + t % 4;
    const Tensor Y = random_tensor(rng, b, b);
    const Tensor yf = prob_rows(rng, b, m);
    GraphFunction f = [&](Tape&, std::span<const Var> v) {
      return total_loss(v[0], row_softmax(v[1]), v[2], {&Y, &yf}).total;
    };
    const double err = grad_check(f, {random_tensor(rng, b, b), random_tensor(rng, b, m), Tensor(1, 1, 0.5)}, 1e-5);
    EXPECT_LT(err, 1e-4) << "trial " << t;
  }
}

TEST(LossTermsParse, Names) {
  EXPECT_EQ(parse_loss_terms("all"), (LossTerms{true, true, true}));
  EXPECT_EQ(parse_loss_terms("in,fgt"), (LossTerms{true, false, true}));
  EXPECT_EQ(loss_terms_string(LossTerms{false, true, true}), "cgt,fgt");
  EXPECT_THROW(parse_loss_terms("in,huber"), InvalidConfig);
  EXPECT_THROW(parse_loss_terms(""), InvalidConfig);
}

TEST(LossHistory, RoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "teachclip_loss_history.csv";
  std::vector<LossBreakdown> h{{0.1, 0.2, 0.3, 0.6}, {1.0 / 3.0, 0.0, 2.0 / 7.0, 1.0 / 3.0 + 2.0 / 7.0}};
  write_loss_history(path, h);
  append_loss_record(path, 2, {0.5, 0.25, 0.125, 0.875});
  const auto back = read_loss_history(path);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[1].first, 1u);
  EXPECT_EQ(back[1].second.l_in, h[1].l_in);
  EXPECT_EQ(back[1].second.l_fgt, h[1].l_fgt);
  EXPECT_EQ(back[2].second.total, 0.875);
  {
    std::ofstream out(path, std::ios::app);
    out << "3,abc\n";
  }
  EXPECT_THROW(read_loss_history(path), CorpusIntegrity);
  std::filesystem::remove(path);
}
