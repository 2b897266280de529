#include <gtest/gtest.h>

#include "loasp/ops.hpp"
#include "loasp/tensor.hpp"
#include "test_util.hpp"

using namespace loasp;

TEST(Tensor, ZerosHasRequestedShapeAndValues) {
    Tensor t = Tensor::zeros({2, 3});
    EXPECT_EQ(t.size(), 6);
    EXPECT_EQ(t.shape(), (std::vector<long>{2, 3}));
    for (long i = 0; i < t.size(); ++i) EXPECT_EQ(t.data()[i], 0.0);
}

TEST(Tensor, FromDataRejectsMismatchedLength) {
    EXPECT_THROW(Tensor::from_data({1.0, 2.0, 3.0}, {2, 2}), ShapeError);
}

TEST(Tensor, RejectsNonPositiveExtents) {
    EXPECT_THROW(Tensor::zeros({2, 0}), ShapeError);
    EXPECT_THROW(Tensor::zeros({-1}), ShapeError);
}

TEST(Tensor, ItemRequiresSingleElement) {
    EXPECT_THROW(Tensor::zeros({2}).item(), ShapeError);
    EXPECT_EQ(Tensor::scalar(4.5).item(), 4.5);
}

TEST(Autograd, ProductLossGivesSwappedGradients) {
    Tensor x = Tensor::scalar(3.0).set_requires_grad(true);
    Tensor y = Tensor::scalar(5.0).set_requires_grad(true);
    Tensor loss = mul(x, y);
    backward(loss);
    EXPECT_EQ(x.grad()[0], 5.0);
    EXPECT_EQ(y.grad()[0], 3.0);
}

TEST(Autograd, RepeatedBackwardAccumulatesExactly) {
    Tensor x = Tensor::scalar(3.0).set_requires_grad(true);
    Tensor y = Tensor::scalar(5.0).set_requires_grad(true);
    Tensor loss = mul(x, y);
    backward(loss);
    backward(loss);
    EXPECT_EQ(x.grad()[0], 10.0);
    EXPECT_EQ(y.grad()[0], 6.0);
}

TEST(Autograd, ZeroGradResets) {
    Tensor x = Tensor::scalar(2.0).set_requires_grad(true);
    Tensor loss = mul(x, x);
    backward(loss);
    EXPECT_EQ(x.grad()[0], 4.0);  // d(x^2)/dx = 2x, both uses accumulate
    x.zero_grad();
    EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Autograd, NonScalarLossRejected) {
    Tensor x = Tensor::from_data({1.0, 2.0}, {2}).set_requires_grad(true);
    Tensor y = relu(x);
    EXPECT_THROW(backward(y), ShapeError);
}

TEST(Autograd, BackwardWithoutGraphRejected) {
    Tensor x = Tensor::scalar(1.0);
    EXPECT_THROW(backward(x), ContractError);
}

TEST(Autograd, SharedSubexpressionAccumulatesWithinOnePass) {
    Tensor x = Tensor::scalar(4.0).set_requires_grad(true);
    Tensor s = add(x, x);  // ds/dx = 2
    Tensor loss = mul(s, s);
    backward(loss);
    EXPECT_EQ(loss.item(), 64.0);
    EXPECT_EQ(x.grad()[0], 32.0);  // d(2x)^2/dx = 8x
}

TEST(Autograd, NoGradGuardSkipsGraphRecording) {
    Tensor x = Tensor::scalar(2.0).set_requires_grad(true);
    NoGradGuard ng;
    Tensor y = mul(x, x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.is_leaf());
}

TEST(Autograd, NonFiniteForwardValueRaisesNamedError) {
    Tensor x = Tensor::from_data({1e308, 1e308}, {2}).set_requires_grad(true);
    try {
        Tensor y = add(x, x);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
    }
}

TEST(FiniteDifference, SumOfSquares) {
    Tensor x = Tensor::from_data({1.0, 2.0}, {2});
    auto objective = [&x]() {
        double s = 0.0;
        for (long i = 0; i < x.size(); ++i) s += x.data()[i] * x.data()[i];
        return s;
    };
    std::vector<double> g = finite_difference_grad(objective, x, 1e-6);
    EXPECT_NEAR(g[0], 2.0, 1e-6);
    EXPECT_NEAR(g[1], 4.0, 1e-6);
}

TEST(FiniteDifference, ConstantObjectiveGivesZeros) {
    Tensor x = Tensor::from_data({1.0, 2.0, 3.0}, {3});
    std::vector<double> g = finite_difference_grad([]() { return 7.0; }, x, 1e-6);
    for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDifference, LinearObjectiveGivesOnes) {
    Tensor x = Tensor::from_data({1.0, -2.0, 0.5, 9.0}, {4});
    auto objective = [&x]() {
        double s = 0.0;
        for (long i = 0; i < x.size(); ++i) s += x.data()[i];
        return s;
    };
    std::vector<double> g = finite_difference_grad(objective, x, 1e-6);
    for (double v : g) EXPECT_NEAR(v, 1.0, 1e-8);
}

TEST(FiniteDifference, RejectsNonPositiveEps) {
    Tensor x = Tensor::scalar(1.0);
    EXPECT_THROW(finite_difference_grad([]() { return 0.0; }, x, 0.0), ContractError);
}

TEST(FiniteDifference, PerturbationRestoresValues) {
    Tensor x = Tensor::from_data({1.25, -4.5}, {2});
    finite_difference_grad([&x]() { return x.data()[0] * x.data()[1]; }, x, 1e-6);
    EXPECT_EQ(x.data()[0], 1.25);
    EXPECT_EQ(x.data()[1], -4.5);
}
