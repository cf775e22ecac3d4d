#include <gtest/gtest.h>

#include "fanet/ops.hpp"
#include "fanet/random.hpp"
#include "fanet/tensor.hpp"

using fanet::Rng;
using fanet::Tensor;

namespace {

Tensor<double> random_tensor(fanet::Shape shape, Rng& rng, bool rg = true) {
  std::vector<double> v(static_cast<size_t>(fanet::numel_of(shape)));
  for (auto& e : v) e = rng.uniform(-2.0, 2.0);
  return Tensor<double>::from(std::move(shape), std::move(v), rg);
}

}  // namespace

TEST(Tensor, SumBackwardIsOnes) {
  auto x = Tensor<double>::from({4}, {1.0, -2.0, 3.0, 0.5}, true);
  fanet::sum(x).backward();
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Tensor, SumOfSquaresBackwardIsTwoX) {
  auto x = Tensor<double>::from({3}, {1.0, -2.0, 3.0}, true);
  fanet::sum(fanet::mul(x, x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -4.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 6.0);
}

TEST(Tensor, FanOutGradientsAccumulate) {
  auto x = Tensor<double>::from({3}, {1.0, 2.0, 3.0}, true);
  auto loss = fanet::add(fanet::sum(x), fanet::sum(x));
  loss.backward();
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 2.0);
}

TEST(Tensor, SharedSubexpressionVisitedOnce) {
  // y = x + x reused twice: grad would come out wrong if the node ran more
  // than once during traversal.
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  auto y = fanet::add(x, x);
  auto loss = fanet::sum(fanet::add(y, y));
  loss.backward();
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 4.0);
}

TEST(Tensor, BackwardRequiresScalarRoot) {
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  auto y = fanet::mul(x, x);
  EXPECT_THROW(y.backward(), fanet::ConfigError);
}

TEST(Tensor, DoubleBackwardOnConsumedGraphThrows) {
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  auto loss = fanet::sum(x);
  loss.backward();
  EXPECT_THROW(loss.backward(), fanet::ConfigError);
}

TEST(Tensor, ConstantInputsProduceDetachedOutputs) {
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, false);
  auto y = fanet::mul(x, x);
  EXPECT_FALSE(y.requires_grad());
  auto loss = fanet::sum(y);
  loss.backward();  // vacuous, nothing requires grad
  EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, RequiresGradToggleOnlyOnLeaves) {
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  auto y = fanet::mul(x, x);
  EXPECT_THROW(y.set_requires_grad(false), fanet::ConfigError);
}

TEST(Tensor, ShapeMismatchNamesOpAndShapes) {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({3, 2});
  try {
    fanet::add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const fanet::ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos);
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos);
    EXPECT_NE(msg.find("[3, 2]"), std::string::npos);
  }
}

TEST(Tensor, FromRejectsWrongElementCount) {
  EXPECT_THROW(Tensor<double>::from({2, 2}, {1.0, 2.0, 3.0}),
               fanet::ShapeError);
}

TEST(Tensor, DeterministicForwardForFixedSeed) {
  auto run = [] {
    Rng rng(123);
    auto x = random_tensor({2, 3, 4, 4}, rng);
    auto w = random_tensor({2, 3, 3, 3}, rng);
    auto b = random_tensor({2}, rng);
    return fanet::conv2d(x, w, b, 1, 1).values();
  };
  auto a = run();
  auto b = run();
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Tensor, GradAccumulatesAcrossBackwardCalls) {
  // Two separate graphs rooted on the same leaf: gradients add up until the
  // caller clears them.
  auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  fanet::sum(x).backward();
  fanet::sum(x).backward();
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 2.0);
  x.zero_grad();
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 0.0);
}
