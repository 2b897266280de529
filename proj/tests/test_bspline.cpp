#include "loasp/bspline.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "loasp/ops.hpp"
#include "test_util.hpp"

using namespace loasp;
using loasp_test::check_grads_match_fd;
using loasp_test::fill_uniform;
using loasp_test::rel_err;

TEST(KnotVector, ClampedUniformLayout) {
    KnotVector kv = make_clamped_uniform_knots(2, 2, -1.0, 1.0);
    std::vector<double> expect = {-1, -1, -1, 0, 1, 1, 1};
    EXPECT_EQ(kv.knots, expect);
    EXPECT_EQ(kv.basis_count(), 4);
    EXPECT_EQ(kv.lo(), -1.0);
    EXPECT_EQ(kv.hi(), 1.0);
}

TEST(KnotVector, DegreeZeroLayout) {
    KnotVector kv = make_clamped_uniform_knots(0, 3, 0.0, 3.0);
    std::vector<double> expect = {0, 1, 2, 3};
    EXPECT_EQ(kv.knots, expect);
    EXPECT_EQ(kv.basis_count(), 3);
}

TEST(KnotVector, SmallestCase) {
    KnotVector kv = make_clamped_uniform_knots(1, 1, 0.0, 5.0);
    std::vector<double> expect = {0, 0, 5, 5};
    EXPECT_EQ(kv.knots, expect);
    EXPECT_EQ(kv.basis_count(), 2);
}

TEST(KnotVector, RejectsBadArguments) {
    EXPECT_THROW(make_clamped_uniform_knots(2, 0), ContractError);
    EXPECT_THROW(make_clamped_uniform_knots(-1, 3), ContractError);
    EXPECT_THROW(make_clamped_uniform_knots(2, 3, 1.0, 1.0), ContractError);
    EXPECT_THROW(make_clamped_uniform_knots(2, 3, 2.0, -2.0), ContractError);
    EXPECT_THROW(KnotVector(0, {0.0, 2.0, 1.0}), ContractError);       // decreasing
    EXPECT_THROW(KnotVector(1, {0.0, 1.0, 2.0}), ContractError);       // too few knots
    EXPECT_THROW(KnotVector(1, {0.0, 1.0, 1.0, 2.0}), ContractError);  // degenerate domain
}

TEST(BsplineBasis, DegreeZeroIndicator) {
    KnotVector kv(0, {0.0, 1.0, 2.0});
    EXPECT_EQ(bspline_basis(0, 0, 0.5, kv), 1.0);
    EXPECT_EQ(bspline_basis(1, 0, 0.5, kv), 0.0);
    EXPECT_EQ(bspline_basis(0, 0, 1.0, kv), 0.0);  // half-open interior span
    EXPECT_EQ(bspline_basis(1, 0, 1.0, kv), 1.0);
}

TEST(BsplineBasis, DegreeOneHat) {
    KnotVector kv(0, {0.0, 1.0, 2.0});
    EXPECT_EQ(bspline_basis(0, 1, 0.5, kv), 0.5);
    EXPECT_EQ(bspline_basis(0, 1, 1.5, kv), 0.5);
    EXPECT_EQ(bspline_basis(0, 1, 1.0, kv), 1.0);
}

TEST(BsplineBasis, RightEndpointClosed) {
    KnotVector kv = make_clamped_uniform_knots(2, 2, -1.0, 1.0);
    EXPECT_EQ(bspline_basis(3, 2, 1.0, kv), 1.0);
    EXPECT_EQ(bspline_basis(0, 2, 1.0, kv), 0.0);
    EXPECT_EQ(bspline_basis(1, 2, 1.0, kv), 0.0);
    EXPECT_EQ(bspline_basis(2, 2, 1.0, kv), 0.0);

    KnotVector flat(0, {0.0, 1.0, 2.0, 3.0});
    EXPECT_EQ(bspline_basis(2, 0, 3.0, flat), 1.0);
}

TEST(BsplineBasis, RejectsBadIndex) {
    KnotVector kv = make_clamped_uniform_knots(2, 2);
    EXPECT_THROW(bspline_basis(-1, 2, 0.0, kv), ContractError);
    EXPECT_THROW(bspline_basis(4, 2, 0.0, kv), ContractError);
    EXPECT_THROW(bspline_basis(0, -1, 0.0, kv), ContractError);
    EXPECT_THROW(bspline_basis(0, 6, 0.0, kv), ContractError);  // degree eats all knots
}

TEST(BasisAll, BoundaryValues) {
    KnotVector kv = make_clamped_uniform_knots(2, 2, -1.0, 1.0);
    std::vector<double> at_lo = basis_all(2, -1.0, kv);
    ASSERT_EQ(at_lo.size(), 4u);
    EXPECT_EQ(at_lo[0], 1.0);
    EXPECT_EQ(at_lo[1], 0.0);
    EXPECT_EQ(at_lo[2], 0.0);
    EXPECT_EQ(at_lo[3], 0.0);

    // Inputs beyond the domain clamp to the endpoint evaluation.
    EXPECT_EQ(basis_all(2, 7.0, kv), basis_all(2, 1.0, kv));
    EXPECT_EQ(basis_all(2, -7.0, kv), basis_all(2, -1.0, kv));
}

// Partition of unity, non-negativity, local support, and exact agreement
// with the naive recursion, across every degree and grid size in use.
TEST(BasisAll, PropertiesAcrossDegreesAndGrids) {
    Rng rng(20240811u);
    for (int p = 0; p <= 4; ++p) {
        for (int G = 1; G <= 8; ++G) {
            KnotVector kv = make_clamped_uniform_knots(p, G, -1.0, 1.0);
            const int n = kv.basis_count();
            ASSERT_EQ(n, G + p);
            for (int trial = 0; trial < 100; ++trial) {
                double x = rng.uniform(-1.0, 1.0);
                if (trial == 0) x = -1.0;
                if (trial == 1) x = 1.0;
                std::vector<double> all = basis_all(p, x, kv);
                ASSERT_EQ(static_cast<int>(all.size()), n);

                double sum = 0.0;
                int nonzero = 0;
                for (int i = 0; i < n; ++i) {
                    EXPECT_GE(all[i], 0.0);
                    sum += all[i];
                    if (all[i] != 0.0) ++nonzero;
                    EXPECT_EQ(all[i], bspline_basis(i, p, x, kv))
                        << "p=" << p << " G=" << G << " i=" << i << " x=" << x;
                    if (x < kv.knots[i] || x > kv.knots[i + p + 1]) {
                        EXPECT_EQ(all[i], 0.0) << "support violation at i=" << i;
                    }
                }
                EXPECT_NEAR(sum, 1.0, 1e-12);
                EXPECT_LE(nonzero, p + 1);
            }
        }
    }
}

TEST(BasisAll, DerivativeMatchesFiniteDifferences) {
    Rng rng(7u);
    for (int p = 1; p <= 4; ++p) {
        KnotVector kv = make_clamped_uniform_knots(p, 5, -1.0, 1.0);
        const int n = kv.basis_count();
        int checked = 0;
        while (checked < 30) {
            double x = rng.uniform(-0.95, 0.95);
            bool near_knot = false;
            for (double u : kv.knots)
                if (std::abs(x - u) < 1e-3) near_knot = true;
            if (near_knot) continue;
            ++checked;
            const double eps = 1e-6;
            std::vector<double> hi = basis_all(p, x + eps, kv);
            std::vector<double> lo = basis_all(p, x - eps, kv);
            std::vector<double> d = basis_all_derivative(p, x, kv);
            for (int i = 0; i < n; ++i) {
                double fd = (hi[i] - lo[i]) / (2 * eps);
                EXPECT_LT(rel_err(d[i], fd), 1e-4) << "p=" << p << " i=" << i << " x=" << x;
            }
        }
    }
}

TEST(BasisAll, DegreeZeroDerivativeIsZero) {
    KnotVector kv = make_clamped_uniform_knots(0, 4);
    std::vector<double> d = basis_all_derivative(0, 0.3, kv);
    for (double v : d) EXPECT_EQ(v, 0.0);
}

TEST(Greville, HandComputedAbscissae) {
    KnotVector kv = make_clamped_uniform_knots(2, 2, -1.0, 1.0);
    std::vector<double> g = greville_abscissae(kv);
    std::vector<double> expect = {-1.0, -0.5, 0.5, 1.0};
    EXPECT_EQ(g, expect);

    KnotVector lin(1, {0.0, 0.0, 1.0, 1.0});
    std::vector<double> g1 = greville_abscissae(lin);
    std::vector<double> expect1 = {0.0, 1.0};
    EXPECT_EQ(g1, expect1);
}

TEST(Greville, DegreeZeroRejected) {
    KnotVector kv = make_clamped_uniform_knots(0, 4);
    EXPECT_THROW(greville_abscissae(kv), ContractError);
    EXPECT_THROW(greville_identity_init(kv, 3), ContractError);
}

TEST(Greville, InitFillsEveryChannel) {
    KnotVector kv = make_clamped_uniform_knots(2, 2);
    Tensor c = greville_identity_init(kv, 3);
    ASSERT_EQ(c.shape(), (std::vector<long>{3, 4}));
    for (int ch = 0; ch < 3; ++ch) {
        EXPECT_EQ(c.data()[ch * 4 + 0], -1.0);
        EXPECT_EQ(c.data()[ch * 4 + 1], -0.5);
        EXPECT_EQ(c.data()[ch * 4 + 2], 0.5);
        EXPECT_EQ(c.data()[ch * 4 + 3], 1.0);
    }
    EXPECT_THROW(greville_identity_init(kv, 0), ContractError);
}

TEST(Greville, IdentityReproduction) {
    Rng rng(99u);
    for (int p : {1, 2, 3, 4}) {
        for (int G : {1, 3, 6}) {
            KnotVector kv = make_clamped_uniform_knots(p, G, -1.0, 1.0);
            std::vector<double> c = greville_abscissae(kv);
            for (int trial = 0; trial < 200; ++trial) {
                double x = rng.uniform(-0.999, 0.999);
                std::vector<double> b = basis_all(p, x, kv);
                double y = 0.0;
                for (std::size_t i = 0; i < b.size(); ++i) y += c[i] * b[i];
                EXPECT_NEAR(y, x, 1e-12) << "p=" << p << " G=" << G;
            }
        }
    }
}

namespace {

SplineActivation identity_act(int p, int G, int channels) {
    KnotVector kv = make_clamped_uniform_knots(p, G, -1.0, 1.0);
    return SplineActivation(kv, greville_identity_init(kv, channels));
}

}  // namespace

TEST(SplineEval, ZeroCoefficientsGiveZeroOutput) {
    KnotVector kv = make_clamped_uniform_knots(3, 6);
    SplineActivation act(kv, Tensor::zeros({2, kv.basis_count()}));
    Tensor x = Tensor::zeros({1, 2, 3, 3});
    Rng rng(5);
    fill_uniform(x, rng, -1.0, 1.0);
    Tensor y = spline_eval(act, x);
    for (long i = 0; i < y.size(); ++i) EXPECT_EQ(y.data()[i], 0.0);
}

TEST(SplineEval, GrevilleIdentityPointValues) {
    SplineActivation act = identity_act(2, 2, 1);
    Tensor x = Tensor::from_data({0.0, 0.37, -0.61, 0.999}, {1, 1, 2, 2});
    Tensor y = spline_eval(act, x);
    EXPECT_NEAR(y.data()[0], 0.0, 1e-15);
    EXPECT_NEAR(y.data()[1], 0.37, 1e-12);
    EXPECT_NEAR(y.data()[2], -0.61, 1e-12);
    EXPECT_NEAR(y.data()[3], 0.999, 1e-12);
}

TEST(SplineEval, InputsClampToDomain) {
    SplineActivation act = identity_act(3, 4, 1);
    Tensor x = Tensor::from_data({7.0, -42.0}, {1, 1, 1, 2});
    Tensor y = spline_eval(act, x);
    EXPECT_NEAR(y.data()[0], 1.0, 1e-12);
    EXPECT_NEAR(y.data()[1], -1.0, 1e-12);
}

TEST(SplineEval, RejectsChannelMismatch) {
    SplineActivation act = identity_act(2, 2, 3);
    Tensor x = Tensor::zeros({1, 2, 4, 4});
    EXPECT_THROW(spline_eval(act, x), ShapeError);
    EXPECT_THROW(spline_eval(act, Tensor::zeros({3, 4})), ShapeError);
}

TEST(SplineEval, CoefficientGradientEqualsBasisValues) {
    KnotVector kv = make_clamped_uniform_knots(2, 3);
    SplineActivation act(kv, greville_identity_init(kv, 1));
    act.coeff.set_requires_grad(true);
    Tensor x = Tensor::from_data({0.3, -0.6}, {1, 1, 1, 2});
    Tensor loss = sum(spline_eval(act, x));
    backward(loss);

    std::vector<double> expect = basis_all(2, 0.3, kv);
    std::vector<double> b2 = basis_all(2, -0.6, kv);
    for (std::size_t i = 0; i < expect.size(); ++i) expect[i] += b2[i];
    ASSERT_EQ(act.coeff.grad().size(), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i)
        EXPECT_NEAR(act.coeff.grad()[i], expect[i], 1e-14);
}

TEST(SplineEval, GradientsMatchFiniteDifferences) {
    KnotVector kv = make_clamped_uniform_knots(3, 4);
    Tensor coeff = greville_identity_init(kv, 2);
    Rng rng(31);
    fill_uniform(coeff, rng, -0.8, 0.8);
    coeff.set_requires_grad(true);
    // Interior points away from knots so the spline is smooth at every probe.
    Tensor x = Tensor::from_data({0.31, -0.22, 0.63, -0.87, 0.11, 0.42, -0.55, 0.77},
                                 {1, 2, 2, 2});
    x.set_requires_grad(true);
    SplineActivation act(kv, coeff);
    check_grads_match_fd([&] { return sum(mul(spline_eval(act, x), spline_eval(act, x))); },
                         {x, coeff});
}

TEST(SplineEval, ClampedInputGetsZeroGradient) {
    SplineActivation act = identity_act(2, 2, 1);
    Tensor x = Tensor::from_data({3.0, 0.25}, {1, 1, 1, 2});
    x.set_requires_grad(true);
    backward(sum(spline_eval(act, x)));
    EXPECT_EQ(x.grad()[0], 0.0);
    EXPECT_NEAR(x.grad()[1], 1.0, 1e-12);
}

TEST(SplineEval, DegreeZeroIsPiecewiseConstant) {
    KnotVector kv = make_clamped_uniform_knots(0, 2, -1.0, 1.0);
    SplineActivation act(kv, Tensor::from_data({2.0, 5.0}, {1, 2}));
    Tensor x = Tensor::from_data({-0.7, -0.1, 0.4, 1.0}, {1, 1, 1, 4});
    x.set_requires_grad(true);
    Tensor y = spline_eval(act, x);
    EXPECT_EQ(y.data()[0], 2.0);
    EXPECT_EQ(y.data()[1], 2.0);
    EXPECT_EQ(y.data()[2], 5.0);
    EXPECT_EQ(y.data()[3], 5.0);  // right endpoint belongs to the last span
    backward(sum(y));
    for (int i = 0; i < 4; ++i) EXPECT_EQ(x.grad()[i], 0.0);
}
