#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cormult/errors.hpp"
#include "cormult/grad_check.hpp"
#include "cormult/gradient_suite.hpp"
#include "cormult/nn.hpp"
#include "cormult/ops.hpp"
#include "cormult/tape.hpp"
#include "test_util.hpp"

namespace cormult {
namespace {

using testing::expect_near;
using testing::expect_values;
using testing::random_tensor;

// sum(w * y) with fixed random weights turns any op output into a scalar
// whose gradient touches every output element.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  const Tensor w = random_tensor(y.shape(), seed + 1000);
  return ops::sum(ops::mul(y, w));
}

TEST(Elementwise, AddZerosIsIdentity) {
  const Tensor x = random_tensor({2, 3}, 1);
  EXPECT_TRUE(ops::add(Tensor::zeros({2, 3}), x).same_values(x));
}

TEST(Elementwise, ScalarMulByOneIsIdentity) {
  const Tensor x = random_tensor({4}, 2);
  EXPECT_TRUE(ops::scalar_mul(1.0, x).same_values(x));
}

TEST(Elementwise, GradOfSumOfSquares) {
  const Tensor x = Tensor::from({1, 2, 3});
  Tape tape;
  Tensor leaf = x;
  tape.watch(leaf);
  const Tensor loss = ops::sum(ops::mul(leaf, leaf));
  expect_values(tape.backward(loss).of(leaf), {2, 4, 6}, 0.0);

  const auto report = grad_check(
      [](const Tensor& v) { return ops::sum(ops::mul(v, v)); }, x, 1e-5, 1e-4);
  EXPECT_TRUE(report.pass) << describe(report);
}

TEST(Elementwise, BroadcastRightAligned) {
  const Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor row = Tensor::from({10, 20, 30});
  expect_values(ops::add(a, row), {11, 22, 33, 14, 25, 36}, 0.0);
  const Tensor col = Tensor::from({2, 1}, {100, 200});
  expect_values(ops::add(a, col), {101, 102, 103, 204, 205, 206}, 0.0);
  EXPECT_EQ(ops::broadcast_shape({4, 1, 3}, {2, 1}), (Shape{4, 2, 3}));
}

TEST(Elementwise, ShapeMismatchWhenNotBroadcastable) {
  EXPECT_THROW(ops::add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeMismatch);
  EXPECT_THROW(ops::mul(Tensor::zeros({3, 2}), Tensor::zeros({2, 3})), ShapeMismatch);
}

TEST(Matmul, IdentityAndHandCase) {
  const Tensor x = random_tensor({3, 4}, 3);
  EXPECT_TRUE(ops::matmul(Tensor::eye(3), x).same_values(x));
  const Tensor y = ops::matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
  EXPECT_EQ(y.shape(), (Shape{1, 1}));
  EXPECT_EQ(y.item(), 11.0);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Tensor a = random_tensor({4, 5}, 4);
  Tensor b = random_tensor({5, 3}, 5);
  const std::vector<Tensor*> in{&a, &b};
  const auto report = grad_check(
      [&] { return weighted_sum(ops::matmul(a, b), 6); }, in, 1e-5, 1e-6);
  EXPECT_TRUE(report.pass) << describe(report);
}

TEST(Matmul, BatchedBroadcastGradients) {
  Tensor a = random_tensor({2, 3, 4, 5}, 7);
  Tensor b = random_tensor({3, 5, 2}, 8);
  EXPECT_EQ(ops::matmul(a, b).shape(), (Shape{2, 3, 4, 2}));
  const std::vector<Tensor*> in{&a, &b};
  const auto report =
      grad_check([&] { return weighted_sum(ops::matmul(a, b), 9); }, in, 1e-5, 1e-6);
  EXPECT_TRUE(report.pass) << describe(report);
}

TEST(Matmul, InnerMismatchThrows) {
  EXPECT_THROW(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeMismatch);
  EXPECT_THROW(ops::matmul(Tensor::zeros({2, 2, 3}), Tensor::zeros({3, 3, 1})), ShapeMismatch);
}

TEST(Softmax, SymmetricAndShiftInvariant) {
  expect_values(ops::softmax(Tensor::from({0, 0}), 0), {0.5, 0.5}, 1e-15);
  const Tensor x = random_tensor({3, 6}, 10);
  const Tensor shifted = ops::add_scalar(x, 7.25);
  expect_near(ops::softmax(x, -1), ops::softmax(shifted, -1), 1e-14);
}

TEST(Softmax, RowsSumToOne) {
  const Tensor y = ops::softmax(random_tensor({5, 7}, 11, 10.0), 1);
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 7; ++j) {
      EXPECT_GT(y.at({r, j}), 0.0);
      s += y.at({r, j});
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  // Along a non-final axis too.
  const Tensor z = ops::softmax(random_tensor({4, 3}, 12), 0);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < 4; ++r) s += z.at({r, c});
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  const Tensor x = random_tensor({3, 5}, 13);
  const auto report =
      grad_check([](const Tensor& v) { return weighted_sum(ops::softmax(v, -1), 14); }, x,
                 1e-5, 1e-6);
  EXPECT_TRUE(report.pass) << describe(report);
}

TEST(LayerNorm, ConstantRowAndTwoPointRow) {
  const Tensor g3 = Tensor::ones({3}), b3 = Tensor::zeros({3});
  expect_values(ops::layer_norm(Tensor::from({1, 3}, {4, 4, 4}), g3, b3), {0, 0, 0}, 0.0);
  const Tensor g2 = Tensor::ones({2}), b2 = Tensor::zeros({2});
  // Population variance of [1, 3] is 1; eps shifts the result by ~5e-6.
  expect_values(ops::layer_norm(Tensor::from({1, 2}, {1, 3}), g2, b2), {-1, 1}, 1e-5);
  expect_values(ops::layer_norm(Tensor::from({1, 2}, {1, 3}), g2, b2, 0.0), {-1, 1}, 1e-15);
}

TEST(LayerNorm, RowsAreStandardized) {
  const Tensor x = random_tensor({6, 10}, 15, 3.0);
  const Tensor y = ops::layer_norm(x, Tensor::ones({10}), Tensor::zeros({10}), 1e-12);
  for (std::size_t r = 0; r < 6; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 10; ++j) mu += y.at({r, j});
    mu /= 10.0;
    for (std::size_t j = 0; j < 10; ++j) var += (y.at({r, j}) - mu) * (y.at({r, j}) - mu);
    var /= 10.0;
    EXPECT_LT(std::fabs(mu), 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-9);
  }
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  Tensor x = random_tensor({4, 6}, 16);
  Tensor g = random_tensor({6}, 17);
  Tensor b = random_tensor({6}, 18);
  const std::vector<Tensor*> in{&x, &g, &b};
  const auto report = grad_check(
      [&] { return weighted_sum(ops::layer_norm(x, g, b), 19); }, in, 1e-5, 1e-5);
  EXPECT_TRUE(report.pass) << describe(report);
}

TEST(LayerNorm, ExtentMismatchThrows) {
  EXPECT_THROW(ops::layer_norm(Tensor::zeros({2, 3}), Tensor::ones({2}), Tensor::zeros({3})),
               ShapeMismatch);
}

TEST(Structural, ReluConcatMeanTranspose) {
  expect_values(ops::relu(Tensor::from({-1, 2})), {0, 2}, 0.0);
  const Tensor a = random_tensor({2, 3}, 20);
  EXPECT_TRUE(ops::concat({a}, 1).same_values(a));
  const Tensor m = ops::mean(Tensor::ones({3, 4}), 0);
  EXPECT_EQ(m.shape(), (Shape{4}));
  expect_values(m, {1, 1, 1, 1}, 0.0);
  const Tensor t = ops::transpose(Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}), {1, 0});
  EXPECT_EQ(t.shape(), (Shape{3, 2}));
  expect_values(t, {1, 4, 2, 5, 3, 6}, 0.0);
}

TEST(Structural, ConcatThenSplitIsIdentity) {
  const Tensor a = random_tensor({2, 3, 4}, 21);
  const Tensor b = random_tensor({2, 5, 4}, 22);
  const Tensor c = ops::concat({a, b}, 1);
  EXPECT_EQ(c.shape(), (Shape{2, 8, 4}));
  const auto parts = ops::split(c, 1, {3, 5});
  EXPECT_TRUE(parts[0].same_values(a));
  EXPECT_TRUE(parts[1].same_values(b));
  EXPECT_THROW(ops::concat({a, Tensor::zeros({2, 3, 5})}, 1), ShapeMismatch);
}

TEST(Structural, MatmulAssociatesWithIdentity) {
  const Tensor a = random_tensor({3, 4}, 23);
  const Tensor b = random_tensor({4, 2}, 24);
  const Tensor left = ops::matmul(ops::matmul(a, Tensor::eye(4)), b);
  const Tensor right = ops::matmul(a, ops::matmul(Tensor::eye(4), b));
  expect_near(left, right, 1e-14);
  expect_near(left, ops::matmul(a, b), 1e-14);
}

TEST(Conv1d, KernelOneIsPointwiseMatmul) {
  const Tensor x = random_tensor({2, 5, 3}, 25);
  const Tensor w = random_tensor({1, 3, 4}, 26);
  const Tensor y = ops::conv1d(x, w);
  const Tensor ref = ops::matmul(x, ops::reshape(w, {3, 4}));
  expect_near(y, ref, 1e-14);
}

TEST(Conv1d, ZeroInputAndPadding) {
  const Tensor w = random_tensor({3, 2, 2}, 27);
  const Tensor y = ops::conv1d(Tensor::zeros({1, 4, 2}), w);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 2}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
  // Single impulse at t=0 with one channel: output t=0 sees taps 1 and t=1 sees tap 0.
  Tensor x({1, 3, 1});
  x.mutable_data()[0] = 1.0;
  Tensor k({3, 1, 1});
  k.mutable_data()[0] = 10.0;
  k.mutable_data()[1] = 20.0;
  k.mutable_data()[2] = 30.0;
  expect_values(ops::conv1d(x, k), {20, 10, 0}, 0.0);
  EXPECT_THROW(ops::conv1d(Tensor::zeros({1, 4, 2}), Tensor::zeros({2, 2, 2})), ShapeMismatch);
  EXPECT_THROW(ops::conv1d(Tensor::zeros({1, 4, 2}), Tensor::zeros({3, 3, 2})), ShapeMismatch);
}

TEST(Conv1d, GradientMatchesFiniteDifferences) {
  Tensor x = random_tensor({2, 5, 3}, 28);
  Tensor k = random_tensor({3, 3, 4}, 29);
  const std::vector<Tensor*> in{&x, &k};
  const auto report =
      grad_check([&] { return weighted_sum(ops::conv1d(x, k), 30); }, in, 1e-5, 1e-5);
  EXPECT_TRUE(report.pass) << describe(report);
}

TEST(Backward, SumAndHalfSquaredNorm) {
  Tensor x = random_tensor({2, 3}, 31);
  {
    Tape tape;
    tape.watch(x);
    const auto g = tape.backward(ops::sum(x)).of(x);
    expect_values(g, std::vector<double>(6, 1.0), 0.0);
  }
  {
    Tape tape;
    tape.watch(x);
    const auto g = tape.backward(ops::scalar_mul(0.5, ops::sum(ops::square(x)))).of(x);
    expect_near(g, x.detach(), 1e-15);
  }
}

TEST(Backward, NotScalarAndConsumption) {
  Tensor x = random_tensor({3}, 32);
  Tape tape;
  tape.watch(x);
  const Tensor y = ops::mul(x, x);
  EXPECT_THROW(tape.backward(y), NotScalar);
  const Tensor loss = ops::sum(y);
  tape.backward(loss);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(loss), Error);
}

TEST(Backward, VisitsEachReachableNodeOnce) {
  Tensor x = random_tensor({3}, 33);
  Tape tape;
  tape.watch(x);
  // x feeds two branches that rejoin: leaf, square, exp, add, sum.
  const Tensor loss = ops::sum(ops::add(ops::square(x), ops::exp(x)));
  EXPECT_EQ(tape.node_count(), 5u);
  const auto grads = tape.backward(loss);
  EXPECT_EQ(tape.visited(), 5u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(grads.of(x)[i], 2.0 * x[i] + std::exp(x[i]), 1e-12);
  }
}

TEST(Backward, NoTapeRecordsNothing) {
  Tensor x = random_tensor({3}, 34);
  const Tensor y = ops::exp(x);
  EXPECT_FALSE(y.node().has_value());
  EXPECT_FALSE(y.requires_grad());
}

TEST(Backward, CompositeAttentionBlock) {
  Rng rng(35);
  nn::MultiheadAttention mha(8, 2, rng);
  nn::LayerNorm ln(8);
  Tensor x = random_tensor({2, 4, 8}, 36);
  nn::ParamList params;
  mha.collect(params, "mha");
  ln.collect(params, "ln");
  auto block = [&] {
    const Tensor h = ln.forward(x);
    return weighted_sum(ops::add(h, mha.forward(h, h)), 37);
  };
  // Softmax ignores a per-query constant, so the key bias gradient is exactly
  // zero and finite differences only see noise there.
  std::vector<Tensor*> inputs;
  for (const auto& p : params) {
    if (p.name != "mha.k.bias") inputs.push_back(p.tensor);
  }
  inputs.push_back(&x);
  const auto report = grad_check(block, inputs, 1e-5, 1e-4);
  EXPECT_TRUE(report.pass) << describe(report);

  Tape tape;
  for (auto* t : nn::tensors_of(params)) tape.watch(*t);
  const auto grads = tape.backward(block());
  const Tensor gk = grads.of(mha.k.bias);
  for (double g : gk.values()) EXPECT_LT(std::fabs(g), 1e-12);
}

TEST(GradCheck, SumIsExact) {
  const Tensor x = random_tensor({7}, 38);
  const auto report = grad_check([](const Tensor& v) { return ops::sum(v); }, x);
  EXPECT_LT(report.max_rel_err, 1e-10);
}

TEST(GradCheck, SoftmaxMatmulChainPasses) {
  const Tensor w = random_tensor({4, 3}, 39);
  const Tensor x = random_tensor({2, 4}, 40);
  const auto report = grad_check(
      [&](const Tensor& v) { return weighted_sum(ops::softmax(ops::matmul(v, w), -1), 41); },
      x, 1e-5, 1e-4);
  EXPECT_TRUE(report.pass) << describe(report);
}

TEST(GradCheck, CorruptedGradientIsCaught) {
  const Tensor x = random_tensor({5}, 42);
  auto f = [](const Tensor& v) { return ops::sum(ops::square(v)); };
  Tensor g = ops::scalar_mul(2.0, x);
  g.mutable_data()[3] += 0.01;
  const auto report = compare_with_finite_differences(f, x, g, 1e-5, 1e-4);
  EXPECT_FALSE(report.pass);
  EXPECT_EQ(report.worst_index, 3u);
}

TEST(Determinism, IdenticalInputsGiveBitIdenticalOutputs) {
  Rng rng(43);
  nn::MultiheadAttention mha(8, 2, rng);
  const Tensor x = random_tensor({2, 5, 8}, 44);
  EXPECT_TRUE(mha.forward(x, x).same_values(mha.forward(x, x)));
}

// Every differentiable primitive against central differences on ten seeded
// inputs, step 1e-5, tolerance 1e-4.
TEST(GradCheckSuite, EveryPrimitiveOnTenSeeds) {
  for (const auto& c : primitive_gradient_cases()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto report = c.run(100 + seed);
      EXPECT_TRUE(report.pass) << c.name << " seed " << seed << ": " << describe(report);
    }
  }
}

}  // namespace
}  // namespace cormult
