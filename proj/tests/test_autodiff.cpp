#include <gtest/gtest.h>

#include <cmath>
#include <functional>
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

// Values bounded away from zero so relu probes stay off the kink.
Tensor away_from_zero(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  Tensor t = random_tensor(rng, r, c);
  for (double& v : t.data) v = v >= 0 ? v + 0.05 : v - 0.05;
  return t;
}

// Contract an op output with fixed random weights to get a scalar whose
// gradient exercises every output entry.
Var contract(Var y, const Tensor& weights) {
  return sum(mul(y, y.tape().constant(weights)));
}

struct OpCase {
  const char* name;
  // Builds inputs for a random trial and the graph over them.
  std::function<std::vector<Tensor>(std::mt19937_64&, std::size_t, std::size_t)> inputs;
  std::function<Var(Tape&, std::span<const Var>)> graph;
};

std::size_t dim(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  // Each graph draws its contraction weights from a generator seeded by the
  // output shape so that every probe sees the same scalar function.
  auto weights_for = [](std::size_t r, std::size_t c) {
    std::mt19937_64 rng(r * 131 + c);
    return random_tensor(rng, r, c);
  };
  auto finish = [weights_for](Var y) { return contract(y, weights_for(y.rows(), y.cols())); };

  cases.push_back({"matmul",
                   [](auto& rng, std::size_t r, std::size_t c) {
                     const std::size_t k = dim(rng, 1, 4);
                     return std::vector<Tensor>{random_tensor(rng, r, k), random_tensor(rng, k, c)};
                   },
                   [finish](Tape&, std::span<const Var> v) { return finish(matmul(v[0], v[1])); }});
  cases.push_back({"transpose",
                   [](auto& rng, std::size_t r, std::size_t c) { return std::vector<Tensor>{random_tensor(rng, r, c)}; },
                   [finish](Tape&, std::span<const Var> v) { return finish(transpose(v[0])); }});
  cases.push_back({"add",
                   [](auto& rng, std::size_t r, std::size_t c) {
                     return std::vector<Tensor>{random_tensor(rng, r, c), random_tensor(rng, r, c)};
                   },
                   [finish](Tape&, std::span<const Var> v) { return finish(add(v[0], v[1])); }});
  cases.push_back({"add_row_broadcast",
                   [](auto& rng, std::size_t r, std::size_t c) {
                     return std::vector<Tensor>{random_tensor(rng, r, c), random_tensor(rng, 1, c)};
                   },
                   [finish](Tape&, std::span<const Var> v) { return finish(add(v[0], v[1])); }});
  cases.push_back({"mul",
                   [](auto& rng, std::size_t r, std::size_t c) {
                     return std::vector<Tensor>{random_tensor(rng, r, c), random_tensor(rng, r, c)};
                   },
                   [finish](Tape&, std::span<const Var> v) { return finish(mul(v[0], v[1])); }});
  cases.push_back({"relu",
                   [](auto& rng, std::size_t r, std::size_t c) { return std::vector<Tensor>{away_from_zero(rng, r, c)}; },
                   [finish](Tape&, std::span<const Var> v) { return finish(relu(v[0])); }});
  cases.push_back({"scale",
                   [](auto& rng, std::size_t r, std::size_t c) { return std::vector<Tensor>{random_tensor(rng, r, c)}; },
                   [finish](Tape&, std::span<const Var> v) { return finish(scale(v[0], -1.7)); }});
  cases.push_back({"row_softmax",
                   [](auto& rng, std::size_t r, std::size_t c) { return std::vector<Tensor>{random_tensor(rng, r, c)}; },
                   [finish](Tape&, std::span<const Var> v) { return finish(row_softmax(v[0], 0.7)); }});
  cases.push_back({"mean_rows",
                   [](auto& rng, std::size_t r, std::size_t c) { return std::vector<Tensor>{random_tensor(rng, r, c)}; },
                   [finish](Tape&, std::span<const Var> v) { return finish(mean_rows(v[0])); }});
  cases.push_back({"weighted_sum_rows",
                   [](auto& rng, std::size_t r, std::size_t c) {
                     return std::vector<Tensor>{random_tensor(rng, r, c), random_tensor(rng, 1, r)};
                   },
                   [finish](Tape&, std::span<const Var> v) { return finish(weighted_sum_rows(v[0], v[1])); }});
  cases.push_back({"normalize_rows",
                   [](auto& rng, std::size_t r, std::size_t c) { return std::vector<Tensor>{random_tensor(rng, r, c)}; },
                   [finish](Tape&, std::span<const Var> v) { return finish(normalize_rows(v[0])); }});
  cases.push_back({"cosine_rows",
                   [](auto& rng, std::size_t r, std::size_t c) {
                     const std::size_t k = dim(rng, 1, 4);
                     return std::vector<Tensor>{random_tensor(rng, r, c), random_tensor(rng, k, c)};
                   },
                   [finish](Tape&, std::span<const Var> v) { return finish(cosine_rows(v[0], v[1])); }});
  cases.push_back({"layer_norm",
                   [](auto& rng, std::size_t r, std::size_t c) {
                     c = std::max<std::size_t>(c, 2);
                     return std::vector<Tensor>{random_tensor(rng, r, c), random_tensor(rng, 1, c),
                                                random_tensor(rng, 1, c)};
                   },
                   [finish](Tape&, std::span<const Var> v) { return finish(layer_norm(v[0], v[1], v[2])); }});
  cases.push_back({"concat_rows",
                   [](auto& rng, std::size_t r, std::size_t c) {
                     return std::vector<Tensor>{random_tensor(rng, r, c), random_tensor(rng, dim(rng, 1, 3), c)};
                   },
                   [finish](Tape&, std::span<const Var> v) { return finish(concat_rows(v)); }});
  cases.push_back({"concat_cols",
                   [](auto& rng, std::size_t r, std::size_t c) {
                     return std::vector<Tensor>{random_tensor(rng, r, c), random_tensor(rng, r, dim(rng, 1, 3))};
                   },
                   [finish](Tape&, std::span<const Var> v) { return finish(concat_cols(v)); }});
  cases.push_back({"slice_rows",
                   [](auto& rng, std::size_t r, std::size_t c) { return std::vector<Tensor>{random_tensor(rng, r + 2, c)}; },
                   [finish](Tape&, std::span<const Var> v) { return finish(slice_rows(v[0], 1, v[0].rows() - 2)); }});
  cases.push_back({"slice_cols",
                   [](auto& rng, std::size_t r, std::size_t c) { return std::vector<Tensor>{random_tensor(rng, r, c + 2)}; },
                   [finish](Tape&, std::span<const Var> v) { return finish(slice_cols(v[0], 2, v[0].cols() - 2)); }});
  return cases;
}

}  // namespace

TEST(AutodiffOps, MatmulIdentity) {
  Tape tape;
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor(rng, 3, 4);
  Var y = matmul(tape.constant(Tensor::identity(3)), tape.constant(a));
  EXPECT_EQ(y.value(), a);
}

TEST(AutodiffOps, Relu) {
  Tape tape;
  Var y = relu(tape.constant(Tensor(1, 3, {-1.0, 0.0, 2.0})));
  EXPECT_EQ(y.value(), Tensor(1, 3, {0.0, 0.0, 2.0}));
}

TEST(AutodiffOps, WeightedSumOneHot) {
  Tape tape;
  Var x = tape.constant(Tensor(2, 3, {1, 2, 3, 4, 5, 6}));
  Var y = weighted_sum_rows(x, tape.constant(Tensor(1, 2, {1.0, 0.0})));
  EXPECT_EQ(y.value(), Tensor(1, 3, {1, 2, 3}));
}

TEST(AutodiffOps, ShapeMismatchThrows) {
  Tape tape;
  EXPECT_THROW(matmul(tape.constant(Tensor(2, 3)), tape.constant(Tensor(2, 3))), InvalidShape);
  EXPECT_THROW(add(tape.constant(Tensor(2, 3)), tape.constant(Tensor(3, 2))), InvalidShape);
  EXPECT_THROW(weighted_sum_rows(tape.constant(Tensor(2, 3)), tape.constant(Tensor(1, 3))), InvalidShape);
}

TEST(AutodiffBackward, SquareAtThree) {
  Tape tape;
  Var x = tape.leaf(Tensor(1, 1, 3.0));
  tape.backward(mul(x, x));
  EXPECT_DOUBLE_EQ(tape.grad(x)(0, 0), 6.0);
}

TEST(AutodiffBackward, SumOfSoftmaxHasZeroGradient) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    Tape tape;
    Var x = tape.leaf(random_tensor(rng, 1, 5, 3.0));
    tape.backward(sum(row_softmax(x)));
    for (double g : tape.grad(x).data) EXPECT_NEAR(g, 0.0, 1e-15);
  }
}

TEST(AutodiffBackward, SoftmaxCrossEntropyIdentity) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    const Tensor x0 = random_tensor(rng, 1, 6);
    const Tensor target = Tensor::row_vector(softmax(random_tensor(rng, 1, 6).data));
    Tape tape;
    Var x = tape.leaf(x0);
    tape.backward(fgt_loss(row_softmax(x), target));
    const auto p = softmax(x0.data);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(tape.grad(x).data[k], p[k] - target.data[k], 1e-14);
    const double err = grad_check([&](Tape&, Var v) { return fgt_loss(row_softmax(v), target); }, x0, 1e-5);
    EXPECT_LT(err, 1e-8);
  }
}

TEST(AutodiffBackward, ReluKinkHasZeroGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor(1, 3, {-1.0, 0.0, 1.0}));
  tape.backward(sum(relu(x)));
  EXPECT_EQ(tape.grad(x), Tensor(1, 3, {0.0, 0.0, 1.0}));
}

TEST(AutodiffBackward, NonScalarLossThrows) {
  Tape tape;
  Var x = tape.leaf(Tensor(2, 2, 1.0));
  EXPECT_THROW(tape.backward(x), InvalidInput);
}

TEST(AutodiffBackward, GradientAccumulatesAcrossUses) {
  Tape tape;
  Var x = tape.leaf(Tensor(1, 2, {1.0, 2.0}));
  tape.backward(sum(add(x, scale(x, 3.0))));
  EXPECT_EQ(tape.grad(x), Tensor(1, 2, {4.0, 4.0}));
}

TEST(AutodiffTape, NodesAreTopological) {
  std::mt19937_64 rng(6);
  Tape tape;
  Var a = tape.leaf(random_tensor(rng, 3, 4));
  Var b = tape.leaf(random_tensor(rng, 4, 2));
  sum(row_softmax(matmul(a, b)));
  for (std::size_t id = 0; id < tape.size(); ++id)
    for (NodeId in : tape.node(id).inputs) EXPECT_LT(in, id);
}

TEST(AutodiffTape, BackwardIsBitwiseDeterministic) {
  std::mt19937_64 rng(8);
  const Tensor a0 = random_tensor(rng, 4, 5), b0 = random_tensor(rng, 5, 3);
  auto run = [&] {
    Tape tape;
    Var a = tape.leaf(a0), b = tape.leaf(b0);
    Var y = sum(mul(row_softmax(matmul(a, b)), tape.constant(Tensor(4, 3, 0.3))));
    tape.backward(y);
    return std::pair{tape.grad(a), tape.grad(b)};
  };
  const auto first = run();
  const auto second = run();
  EXPECT_EQ(first.first.data, second.first.data);
  EXPECT_EQ(first.second.data, second.second.data);
}

TEST(GradCheck, QuadraticForm) {
  std::mt19937_64 rng(10);
  const Tensor A = random_tensor(rng, 5, 5);
  const Tensor x0 = random_tensor(rng, 1, 5);
  const double err = grad_check(
      [&](Tape& t, Var x) { return sum(mul(x, matmul(x, t.constant(A)))); }, x0, 1e-5);
  EXPECT_LT(err, 1e-8);
}

TEST(GradCheck, ReluAwayFromKink) {
  const double err = grad_check([](Tape&, Var x) { return sum(relu(x)); }, Tensor(1, 1, 1.0), 1e-5);
  EXPECT_LT(err, 1e-8);
}

TEST(GradCheck, StepRangeEnforced) {
  auto f = [](Tape&, Var x) { return sum(x); };
  EXPECT_THROW(grad_check(f, Tensor(1, 1, 1.0), 1e-8), InvalidInput);
  EXPECT_THROW(grad_check(f, Tensor(1, 1, 1.0), 1e-2), InvalidInput);
}

TEST(GradCheck, NonFiniteProbeIsReported) {
  auto f = [](Tape&, Var x) { return sum(mul(scale(x, 1e200), scale(x, 1e200))); };
  EXPECT_THROW(grad_check(f, Tensor(1, 1, 1.0), 1e-5), ProbeFailure);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // A custom op whose backward is deliberately off by a factor of two.
  auto f = [](Tape&, Var x) {
    Tensor value(1, 1, x.value()(0, 0) * x.value()(0, 0));
    const double x0 = x.value()(0, 0);
    Var ins[] = {x};
    return custom_op(ins, value, [x0](const Tensor& g, std::span<Tensor* const> gi) {
      if (gi[0]) gi[0]->data[0] += g.data[0] * 4.0 * x0;
    });
  };
  EXPECT_GT(grad_check(f, Tensor(1, 1, 1.5), 1e-5), 0.1);
}

// Every forward op over 100 random shapes and seeds.
TEST(GradCheckProperty, EveryOpOverRandomShapes) {
  for (const OpCase& c : op_cases()) {
    std::mt19937_64 rng(std::hash<std::string>{}(c.name));
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t r = dim(rng, 1, 5), cols = dim(rng, 1, 5);
      const auto inputs = c.inputs(rng, r, cols);
      worst = std::max(worst, grad_check(c.graph, inputs, 1e-5));
    }
    EXPECT_LT(worst, 1e-6) << c.name;
  }
}
