#include <cmath>

#include <gtest/gtest.h>

#include "loasp/ops.hpp"
#include "test_util.hpp"

using namespace loasp;
using loasp_test::check_grads_match_fd;
using loasp_test::fill_away_from_zero;
using loasp_test::fill_uniform;

// -------------------- conv2d --------------------

TEST(Conv2d, IdentityOneByOneKernel) {
    Rng rng(7);
    Tensor x = Tensor::zeros({1, 3, 4, 4});
    fill_uniform(x, rng, -1.0, 1.0);
    Tensor w = Tensor::zeros({3, 3, 1, 1});
    for (long o = 0; o < 3; ++o) w.data()[o * 3 + o] = 1.0;
    Tensor y = conv2d(x, w);
    ASSERT_EQ(y.shape(), x.shape());
    for (long i = 0; i < x.size(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, DepthwiseIdentityKernelIsIdentityMap) {
    Rng rng(11);
    Tensor x = Tensor::zeros({2, 4, 5, 5});
    fill_uniform(x, rng, -2.0, 2.0);
    Tensor w = Tensor::full({4, 1, 1, 1}, 1.0);
    Tensor y = conv2d(x, w, {.stride = 1, .pad = 0, .groups = 4});
    ASSERT_EQ(y.shape(), x.shape());
    for (long i = 0; i < x.size(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, AllOnesKernelOnConstantInput) {
    Tensor x = Tensor::full({1, 1, 5, 5}, 2.0);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor y = conv2d(x, w);
    ASSERT_EQ(y.shape(), (std::vector<long>{1, 1, 3, 3}));
    for (long i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], 18.0);
}

TEST(Conv2d, OutputExtentFormula) {
    Tensor x = Tensor::zeros({1, 1, 16, 16});
    Tensor w = Tensor::zeros({1, 1, 3, 3});
    Tensor y = conv2d(x, w, {.stride = 4, .pad = 1});
    EXPECT_EQ(y.shape(), (std::vector<long>{1, 1, 4, 4}));
}

TEST(Conv2d, KernelLargerThanPaddedInputRejectedWithBothShapes) {
    Tensor x = Tensor::zeros({1, 2, 3, 3});
    Tensor w = Tensor::zeros({1, 2, 5, 5});
    try {
        conv2d(x, w);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("[1,2,3,3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("5"), std::string::npos) << msg;
    }
}

TEST(Conv2d, GroupMismatchRejected) {
    Tensor x = Tensor::zeros({1, 4, 4, 4});
    Tensor w = Tensor::zeros({4, 2, 1, 1});
    EXPECT_THROW(conv2d(x, w, {.stride = 1, .pad = 0, .groups = 3}), ShapeError);
    EXPECT_THROW(conv2d(x, w, {.stride = 1, .pad = 0, .groups = 1}), ShapeError);
}

TEST(Conv2d, MatchesDirectSummationOracle) {
    Rng rng(23);
    Tensor x = Tensor::zeros({2, 3, 6, 5});
    Tensor w = Tensor::zeros({4, 3, 3, 3});
    fill_uniform(x, rng, -1.0, 1.0);
    fill_uniform(w, rng, -1.0, 1.0);
    long stride = 2, pad = 1;
    Tensor y = conv2d(x, w, {.stride = stride, .pad = pad});
    long Ho = y.dim(2), Wo = y.dim(3);
    for (long n = 0; n < 2; ++n)
        for (long o = 0; o < 4; ++o)
            for (long yy = 0; yy < Ho; ++yy)
                for (long xx = 0; xx < Wo; ++xx) {
                    double acc = 0.0;
                    for (long c = 0; c < 3; ++c)
                        for (long ky = 0; ky < 3; ++ky)
                            for (long kx = 0; kx < 3; ++kx) {
                                long sy = yy * stride - pad + ky;
                                long sx = xx * stride - pad + kx;
                                if (sy < 0 || sy >= 6 || sx < 0 || sx >= 5) continue;
                                acc += w.at({o, c, ky, kx}) * x.at({n, c, sy, sx});
                            }
                    EXPECT_NEAR(y.at({n, o, yy, xx}), acc, 1e-12);
                }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
    Rng rng(31);
    Tensor x = Tensor::zeros({2, 4, 8, 8});
    Tensor w = Tensor::zeros({4, 4, 3, 3});
    Tensor lw = Tensor::zeros({2, 4, 4, 4});
    fill_uniform(x, rng, -1.0, 1.0);
    fill_uniform(w, rng, -0.5, 0.5);
    fill_uniform(lw, rng, -1.0, 1.0);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    auto forward = [&]() { return sum(mul(conv2d(x, w, {.stride = 2, .pad = 1}), lw)); };
    check_grads_match_fd(forward, {x, w});
}

TEST(Conv2d, GroupedGradientsMatchFiniteDifferences) {
    Rng rng(37);
    Tensor x = Tensor::zeros({2, 4, 6, 6});
    Tensor w = Tensor::zeros({4, 1, 3, 3});  // depthwise
    Tensor lw = Tensor::zeros({2, 4, 6, 6});
    fill_uniform(x, rng, -1.0, 1.0);
    fill_uniform(w, rng, -0.5, 0.5);
    fill_uniform(lw, rng, -1.0, 1.0);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    auto forward = [&]() { return sum(mul(conv2d(x, w, {.stride = 1, .pad = 1, .groups = 4}), lw)); };
    check_grads_match_fd(forward, {x, w});
}

// -------------------- batch norm --------------------

TEST(BatchNorm, TwoValueChannelNormalizesToUnitRange) {
    Tensor x = Tensor::from_data({0.0, 2.0}, {2, 1, 1, 1});
    BatchNorm bn(1);
    Tensor y = batch_norm(x, bn, true);
    double expect = 1.0 / std::sqrt(1.0 + bn.eps);
    EXPECT_NEAR(y.data()[0], -expect, 1e-12);
    EXPECT_NEAR(y.data()[1], expect, 1e-12);
}

TEST(BatchNorm, TrainingNormalizesBatchStatistics) {
    Rng rng(41);
    Tensor x = Tensor::zeros({4, 3, 6, 6});
    fill_uniform(x, rng, -3.0, 5.0);
    BatchNorm bn(3);
    Tensor y = batch_norm(x, bn, true);
    long HW = 36, N = 4, C = 3;
    for (long c = 0; c < C; ++c) {
        double s = 0.0, s2 = 0.0;
        for (long n = 0; n < N; ++n)
            for (long i = 0; i < HW; ++i) {
                double v = y.data()[(n * C + c) * HW + i];
                s += v;
                s2 += v * v;
            }
        double m = s / (N * HW);
        double var = s2 / (N * HW) - m * m;
        EXPECT_NEAR(m, 0.0, 1e-10);
        EXPECT_NEAR(var, 1.0, 1e-4);  // eps-limited
    }
}

TEST(BatchNorm, GammaZeroCollapsesToBeta) {
    Rng rng(43);
    Tensor x = Tensor::zeros({2, 2, 3, 3});
    fill_uniform(x, rng, -1.0, 1.0);
    BatchNorm bn(2);
    std::fill(bn.gamma.data(), bn.gamma.data() + 2, 0.0);
    bn.beta.data()[0] = 0.7;
    bn.beta.data()[1] = -0.3;
    Tensor y = batch_norm(x, bn, true);
    for (long n = 0; n < 2; ++n)
        for (long i = 0; i < 9; ++i) {
            EXPECT_EQ(y.at({n, 0, i / 3, i % 3}), 0.7);
            EXPECT_EQ(y.at({n, 1, i / 3, i % 3}), -0.3);
        }
}

TEST(BatchNorm, InferenceDependsOnlyOnRunningStatistics) {
    Rng rng(47);
    Tensor x1 = Tensor::zeros({2, 2, 4, 4});
    Tensor x2 = Tensor::zeros({2, 2, 4, 4});
    fill_uniform(x1, rng, -1.0, 1.0);
    fill_uniform(x2, rng, 5.0, 9.0);
    BatchNorm bn(2);
    bn.running_mean = Tensor::from_data({0.5, -0.5}, {2});
    bn.running_var = Tensor::from_data({4.0, 0.25}, {2});
    Tensor y1 = batch_norm(x1, bn, false);
    Tensor y2 = batch_norm(x2, bn, false);
    // same affine map applied to both inputs, regardless of batch content
    for (long c = 0; c < 2; ++c) {
        double is = 1.0 / std::sqrt(bn.running_var.data()[c] + bn.eps);
        for (long n = 0; n < 2; ++n)
            for (long i = 0; i < 16; ++i) {
                EXPECT_NEAR(y1.at({n, c, i / 4, i % 4}),
                            (x1.at({n, c, i / 4, i % 4}) - bn.running_mean.data()[c]) * is, 1e-12);
                EXPECT_NEAR(y2.at({n, c, i / 4, i % 4}),
                            (x2.at({n, c, i / 4, i % 4}) - bn.running_mean.data()[c]) * is, 1e-12);
            }
    }
}

TEST(BatchNorm, RunningVarianceStaysPositive) {
    Tensor x = Tensor::full({2, 1, 2, 2}, 3.0);  // constant batch, zero variance
    BatchNorm bn(1);
    for (int i = 0; i < 50; ++i) batch_norm(x, bn, true);
    EXPECT_GT(bn.running_var.data()[0], 0.0);
}

TEST(BatchNorm, DegenerateTrainingBatchRejected) {
    Tensor x = Tensor::zeros({1, 2, 1, 1});
    BatchNorm bn(2);
    EXPECT_THROW(batch_norm(x, bn, true), ContractError);
    EXPECT_NO_THROW(batch_norm(x, bn, false));
}

TEST(BatchNorm, TrainingGradientsMatchFiniteDifferences) {
    Rng rng(53);
    Tensor x = Tensor::zeros({2, 3, 4, 4});
    Tensor lw = Tensor::zeros({2, 3, 4, 4});
    fill_uniform(x, rng, -1.0, 1.0);
    fill_uniform(lw, rng, -1.0, 1.0);
    x.set_requires_grad(true);
    BatchNorm bn(3);
    bn.update_running = false;
    fill_uniform(bn.gamma, rng, 0.5, 1.5);
    fill_uniform(bn.beta, rng, -0.5, 0.5);
    auto forward = [&]() { return sum(mul(batch_norm(x, bn, true), lw)); };
    check_grads_match_fd(forward, {x, bn.gamma, bn.beta});
}

TEST(BatchNorm, InferenceGradientsMatchFiniteDifferences) {
    Rng rng(59);
    Tensor x = Tensor::zeros({2, 3, 4, 4});
    Tensor lw = Tensor::zeros({2, 3, 4, 4});
    fill_uniform(x, rng, -1.0, 1.0);
    fill_uniform(lw, rng, -1.0, 1.0);
    x.set_requires_grad(true);
    BatchNorm bn(3);
    bn.running_mean = Tensor::from_data({0.2, -0.1, 0.4}, {3});
    bn.running_var = Tensor::from_data({1.5, 0.7, 2.0}, {3});
    auto forward = [&]() { return sum(mul(batch_norm(x, bn, false), lw)); };
    check_grads_match_fd(forward, {x, bn.gamma, bn.beta});
}

// -------------------- bilinear sampling --------------------

TEST(BilinearSample, LatticeAndCenterValues) {
    Tensor f = Tensor::from_data({1.0, 2.0, 3.0, 4.0}, {1, 2, 2});
    Tensor c = Tensor::from_data({0, 0, 0, 1, 1, 0, 1, 1, 0.5, 0.5}, {5, 2});
    Tensor y = bilinear_sample(f, c);
    EXPECT_DOUBLE_EQ(y.data()[0], 1.0);
    EXPECT_DOUBLE_EQ(y.data()[1], 2.0);
    EXPECT_DOUBLE_EQ(y.data()[2], 3.0);
    EXPECT_DOUBLE_EQ(y.data()[3], 4.0);
    EXPECT_DOUBLE_EQ(y.data()[4], 2.5);
}

TEST(BilinearSample, CoordinatesClampToBorder) {
    Tensor f = Tensor::from_data({1.0, 2.0, 3.0, 4.0}, {1, 2, 2});
    Tensor c = Tensor::from_data({-0.5, 0.0, 0.0, 9.0, 7.0, 7.0}, {3, 2});
    Tensor y = bilinear_sample(f, c);
    EXPECT_DOUBLE_EQ(y.data()[0], 1.0);
    EXPECT_DOUBLE_EQ(y.data()[1], 2.0);
    EXPECT_DOUBLE_EQ(y.data()[2], 4.0);
}

TEST(BilinearSample, GradientsMatchFiniteDifferences) {
    Rng rng(61);
    Tensor f = Tensor::zeros({3, 6, 6});
    fill_uniform(f, rng, -1.0, 1.0);
    f.set_requires_grad(true);
    // fractional in-range coordinates, away from the lattice and the border
    std::vector<double> cv;
    for (int p = 0; p < 8; ++p) {
        cv.push_back(rng.uniform(0.3, 4.6) + 0.13);
        cv.push_back(rng.uniform(0.3, 4.6) + 0.21);
    }
    Tensor c = Tensor::from_data(cv, {8, 2}).set_requires_grad(true);
    Tensor lw = Tensor::zeros({3, 8});
    fill_uniform(lw, rng, -1.0, 1.0);
    auto forward = [&]() { return sum(mul(bilinear_sample(f, c), lw)); };
    check_grads_match_fd(forward, {f, c});
}

TEST(BilinearSample, ClampedCoordinateHasZeroGradient) {
    Tensor f = Tensor::from_data({1.0, 2.0, 3.0, 4.0}, {1, 2, 2});
    Tensor c = Tensor::from_data({-3.0, 0.5}, {1, 2}).set_requires_grad(true);
    Tensor y = bilinear_sample(f, c);
    backward(sum(y));
    EXPECT_EQ(c.grad()[0], 0.0);   // row clamped
    EXPECT_NE(c.grad()[1], 0.0);   // column interpolates freely
}

// -------------------- resampling --------------------

TEST(NearestUpsample, ReplicatesBlocks) {
    Tensor x = Tensor::from_data({1.0, 2.0, 3.0, 4.0}, {1, 1, 2, 2});
    Tensor y = nearest_upsample(x, 2);
    std::vector<double> expect = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    ASSERT_EQ(y.shape(), (std::vector<long>{1, 1, 4, 4}));
    for (long i = 0; i < y.size(); ++i) EXPECT_EQ(y.data()[i], expect[i]);
}

TEST(NearestUpsample, FactorOneIsIdentity) {
    Rng rng(67);
    Tensor x = Tensor::zeros({2, 3, 4, 4});
    fill_uniform(x, rng, -1.0, 1.0);
    Tensor y = nearest_upsample(x, 1);
    for (long i = 0; i < x.size(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(NearestUpsample, GradientSumsOverCoveredCells) {
    Tensor x = Tensor::from_data({1.0, 2.0, 3.0, 4.0}, {1, 1, 2, 2}).set_requires_grad(true);
    backward(sum(nearest_upsample(x, 2)));
    for (long i = 0; i < 4; ++i) EXPECT_EQ(x.grad()[i], 4.0);
}

TEST(NearestResize, DownscaleTakesTopLeftOfEachCell) {
    Tensor x = Tensor::from_data({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16}, {1, 1, 4, 4});
    Tensor y = nearest_resize(x, 2, 2);
    EXPECT_EQ(y.at({0, 0, 0, 0}), 1.0);
    EXPECT_EQ(y.at({0, 0, 0, 1}), 3.0);
    EXPECT_EQ(y.at({0, 0, 1, 0}), 9.0);
    EXPECT_EQ(y.at({0, 0, 1, 1}), 11.0);
}

TEST(NearestResize, GradientsMatchFiniteDifferences) {
    Rng rng(71);
    Tensor x = Tensor::zeros({1, 2, 4, 6});
    Tensor lw = Tensor::zeros({1, 2, 3, 3});
    fill_uniform(x, rng, -1.0, 1.0);
    fill_uniform(lw, rng, -1.0, 1.0);
    x.set_requires_grad(true);
    auto forward = [&]() { return sum(mul(nearest_resize(x, 3, 3), lw)); };
    check_grads_match_fd(forward, {x});
}

TEST(CenterCropOrPad, CropTakesCenteredWindow) {
    Tensor x = Tensor::from_data({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16}, {1, 1, 4, 4});
    Tensor y = center_crop_or_pad(x, 2, 2);
    EXPECT_EQ(y.at({0, 0, 0, 0}), 6.0);
    EXPECT_EQ(y.at({0, 0, 0, 1}), 7.0);
    EXPECT_EQ(y.at({0, 0, 1, 0}), 10.0);
    EXPECT_EQ(y.at({0, 0, 1, 1}), 11.0);
}

TEST(CenterCropOrPad, PadSurroundsWithZeros) {
    Tensor x = Tensor::from_data({5.0}, {1, 1, 1, 1});
    Tensor y = center_crop_or_pad(x, 3, 3);
    for (long r = 0; r < 3; ++r)
        for (long c = 0; c < 3; ++c) EXPECT_EQ(y.at({0, 0, r, c}), (r == 1 && c == 1) ? 5.0 : 0.0);
}

TEST(AvgPool, GlobalPoolAveragesSpatially) {
    Tensor x = Tensor::from_data({1, 2, 3, 4, 10, 20, 30, 40}, {1, 2, 2, 2});
    Tensor y = global_avg_pool(x);
    EXPECT_DOUBLE_EQ(y.at({0, 0}), 2.5);
    EXPECT_DOUBLE_EQ(y.at({0, 1}), 25.0);
}

TEST(AvgPool, Pool2GradientsMatchFiniteDifferences) {
    Rng rng(73);
    Tensor x = Tensor::zeros({2, 2, 4, 4});
    Tensor lw = Tensor::zeros({2, 2, 2, 2});
    fill_uniform(x, rng, -1.0, 1.0);
    fill_uniform(lw, rng, -1.0, 1.0);
    x.set_requires_grad(true);
    auto forward = [&]() { return sum(mul(avg_pool2(x), lw)); };
    check_grads_match_fd(forward, {x});
}

// -------------------- elementwise, linear, bias --------------------

TEST(Elementwise, ReluGradientIsMaskAwayFromKink) {
    Rng rng(79);
    Tensor x = Tensor::zeros({2, 4, 4, 4});
    Tensor lw = Tensor::zeros({2, 4, 4, 4});
    fill_away_from_zero(x, rng, 0.1, 1.0);
    fill_uniform(lw, rng, -1.0, 1.0);
    x.set_requires_grad(true);
    auto forward = [&]() { return sum(mul(relu(x), lw)); };
    check_grads_match_fd(forward, {x});
}

TEST(Elementwise, TanhGradientsMatchFiniteDifferences) {
    Rng rng(83);
    Tensor x = Tensor::zeros({2, 3, 3, 3});
    Tensor lw = Tensor::zeros({2, 3, 3, 3});
    fill_uniform(x, rng, -2.0, 2.0);
    fill_uniform(lw, rng, -1.0, 1.0);
    x.set_requires_grad(true);
    auto forward = [&]() { return sum(mul(tanh_op(x), lw)); };
    check_grads_match_fd(forward, {x});
}

TEST(Elementwise, ShapeMismatchNamesBothShapes) {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({3, 2});
    try {
        add(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("[2,3]"), std::string::npos);
        EXPECT_NE(msg.find("[3,2]"), std::string::npos);
    }
}

TEST(Linear, MatchesManualMatmulAndGradients) {
    Rng rng(89);
    Tensor x = Tensor::zeros({3, 4});
    Tensor w = Tensor::zeros({2, 4});
    Tensor b = Tensor::zeros({2});
    Tensor lw = Tensor::zeros({3, 2});
    fill_uniform(x, rng, -1.0, 1.0);
    fill_uniform(w, rng, -1.0, 1.0);
    fill_uniform(b, rng, -1.0, 1.0);
    fill_uniform(lw, rng, -1.0, 1.0);
    Tensor y = linear(x, w, b);
    for (long n = 0; n < 3; ++n)
        for (long m = 0; m < 2; ++m) {
            double acc = b.data()[m];
            for (long k = 0; k < 4; ++k) acc += x.at({n, k}) * w.at({m, k});
            EXPECT_NEAR(y.at({n, m}), acc, 1e-12);
        }
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    auto forward = [&]() { return sum(mul(linear(x, w, b), lw)); };
    check_grads_match_fd(forward, {x, w, b});
}

TEST(BiasAdd, PerChannelShiftAndGradients) {
    Rng rng(97);
    Tensor x = Tensor::zeros({2, 3, 4, 4});
    Tensor b = Tensor::from_data({1.0, -2.0, 0.5}, {3});
    Tensor lw = Tensor::zeros({2, 3, 4, 4});
    fill_uniform(x, rng, -1.0, 1.0);
    fill_uniform(lw, rng, -1.0, 1.0);
    Tensor y = bias_add(x, b);
    EXPECT_DOUBLE_EQ(y.at({0, 1, 2, 2}), x.at({0, 1, 2, 2}) - 2.0);
    x.set_requires_grad(true);
    b.set_requires_grad(true);
    auto forward = [&]() { return sum(mul(bias_add(x, b), lw)); };
    check_grads_match_fd(forward, {x, b});
}

// -------------------- cross entropy --------------------

TEST(CrossEntropy, UniformLogitsGiveLogC) {
    Tensor logits = Tensor::zeros({1, 5});
    Tensor loss = cross_entropy(logits, {2});
    EXPECT_DOUBLE_EQ(loss.item(), std::log(5.0));
}

TEST(CrossEntropy, SaturatedCorrectLogitGivesNearZero) {
    Tensor logits = Tensor::from_data({10.0, -10.0}, {1, 2});
    Tensor loss = cross_entropy(logits, {0});
    EXPECT_NEAR(loss.item(), 0.0, 1e-8);
}

TEST(CrossEntropy, BatchLossIsMeanOfRowLosses) {
    Rng rng(101);
    Tensor both = Tensor::zeros({2, 4});
    fill_uniform(both, rng, -2.0, 2.0);
    Tensor row0 = Tensor::from_data({both.at({0, 0}), both.at({0, 1}), both.at({0, 2}), both.at({0, 3})}, {1, 4});
    Tensor row1 = Tensor::from_data({both.at({1, 0}), both.at({1, 1}), both.at({1, 2}), both.at({1, 3})}, {1, 4});
    double l0 = cross_entropy(row0, {1}).item();
    double l1 = cross_entropy(row1, {3}).item();
    EXPECT_NEAR(cross_entropy(both, {1, 3}).item(), 0.5 * (l0 + l1), 1e-12);
}

TEST(CrossEntropy, LossIsNonNegative) {
    Rng rng(103);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor logits = Tensor::zeros({3, 5});
        fill_uniform(logits, rng, -4.0, 4.0);
        std::vector<long> labels = {static_cast<long>(rng.next_below(5)),
                                    static_cast<long>(rng.next_below(5)),
                                    static_cast<long>(rng.next_below(5))};
        EXPECT_GE(cross_entropy(logits, labels).item(), 0.0);
    }
}

TEST(CrossEntropy, OutOfRangeLabelNamesIndex) {
    Tensor logits = Tensor::zeros({2, 3});
    try {
        cross_entropy(logits, {1, 7});
        FAIL() << "expected ContractError";
    } catch (const ContractError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("index 1"), std::string::npos) << msg;
        EXPECT_NE(msg.find("7"), std::string::npos) << msg;
    }
}

TEST(CrossEntropy, GradientsMatchFiniteDifferences) {
    Rng rng(107);
    Tensor logits = Tensor::zeros({4, 5});
    fill_uniform(logits, rng, -2.0, 2.0);
    logits.set_requires_grad(true);
    std::vector<long> labels = {0, 2, 4, 1};
    auto forward = [&]() { return cross_entropy(logits, labels); };
    check_grads_match_fd(forward, {logits});
}

TEST(CrossEntropy, SoftmaxRowsSumToOne) {
    Rng rng(109);
    Tensor logits = Tensor::zeros({6, 5});
    fill_uniform(logits, rng, -30.0, 30.0);
    std::vector<double> p = softmax_rows(logits);
    for (long n = 0; n < 6; ++n) {
        double s = 0.0;
        for (long c = 0; c < 5; ++c) s += p[n * 5 + c];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}
