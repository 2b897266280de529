#pragma once

// Dynamic snake convolution: axis-aligned 1-D kernels whose sampling path
// bends by learned fractional offsets. Per-step deltas come from a small
// convolution over the input, are bounded by tanh, and are accumulated
// outward from the center tap so the sampled path stays connected.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "loasp/common.hpp"
#include "loasp/ops.hpp"
#include "loasp/tensor.hpp"

namespace loasp {

enum class SnakeAxis { x, y };

// One axis kernel: weights [C_out, C_in, k] applied along the axis, plus the
// offset predictor (3x3 convolution C_in -> k with bias). Predictor weights
// and biases start at zero so the kernel begins as an exact axis-aligned
// convolution; the snake shape emerges only through training.
struct SnakeKernel {
    SnakeAxis axis = SnakeAxis::x;
    int k = 9;
    Tensor weights;  // [C_out, C_in, k]
    Tensor pred_w;   // [k, C_in, 3, 3]
    Tensor pred_b;   // [k]

    SnakeKernel() = default;

    SnakeKernel(SnakeAxis ax, long c_in, long c_out, int length, Rng& rng)
        : axis(ax), k(length) {
        if (k <= 0 || k % 2 == 0) {
            throw ContractError("SnakeKernel: tap count must be odd and positive, got " +
                                std::to_string(k));
        }
        if (c_in <= 0 || c_out <= 0) {
            throw ContractError("SnakeKernel: channel counts must be positive, got " +
                                std::to_string(c_in) + " -> " + std::to_string(c_out));
        }
        weights = Tensor::zeros({c_out, c_in, k});
        double* wd = weights.data();
        for (long i = 0; i < weights.size(); ++i) wd[i] = rng.gaussian();
        weights.set_requires_grad(true);
        pred_w = Tensor::zeros({k, c_in, 3, 3});
        pred_w.set_requires_grad(true);
        pred_b = Tensor::zeros({k});
        pred_b.set_requires_grad(true);
    }

    long c_out() const { return weights.dim(0); }
    long c_in() const { return weights.dim(1); }
};

namespace detail {

// tanh with a strictly open range. std::tanh rounds to exactly +-1.0 once
// |x| exceeds ~19, which would let adjacent path offsets differ by a full
// pixel; nudging saturated values to the nearest representable inside
// (-1, 1) keeps the connectivity bound strict (and is closer to the true
// tanh value than 1.0 is).
inline Tensor tanh_open(const Tensor& a) {
    std::vector<double> y(static_cast<std::size_t>(a.size()));
    const double* pa = a.data();
    const double top = std::nextafter(1.0, 0.0);
    for (long i = 0; i < a.size(); ++i) {
        double v = std::tanh(pa[i]);
        if (v >= 1.0) v = top;
        if (v <= -1.0) v = -top;
        y[static_cast<std::size_t>(i)] = v;
    }
    Tensor out = make_result(a.shape(), {a}, "tanh_open", [a, y](const std::vector<double>& g) {
        if (!a.requires_grad()) return;
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    });
    std::copy(y.begin(), y.end(), out.data());
    check_finite(out, "tanh_open");
    return out;
}

}  // namespace detail

// Per-step offset deltas [N, k, H, W], each strictly inside (-1, 1).
inline Tensor predict_offsets(const Tensor& input, const SnakeKernel& kernel) {
    if (input.rank() != 4) {
        throw ShapeError("predict_offsets: input must be NCHW, got " + shape_str(input.shape()));
    }
    if (input.dim(1) != kernel.pred_w.dim(1)) {
        throw ShapeError("predict_offsets: input has " + std::to_string(input.dim(1)) +
                         " channels but the predictor expects " +
                         std::to_string(kernel.pred_w.dim(1)));
    }
    Tensor pre = bias_add(conv2d(input, kernel.pred_w, ConvOpts{1, 1, 1}), kernel.pred_b);
    return detail::tanh_open(pre);
}

// Outward cumulative sums of one position's deltas. The center tap is pinned
// at 0 (its delta is unused); tap i > c accumulates deltas c+1..i and tap
// i < c accumulates deltas i..c-1, so adjacent taps differ by one bounded
// delta and the sampling path is connected.
inline std::vector<double> accumulate_offsets(const std::vector<double>& deltas) {
    const int k = static_cast<int>(deltas.size());
    if (k <= 0 || k % 2 == 0) {
        throw ContractError("accumulate_offsets: tap count must be odd, got " +
                            std::to_string(k));
    }
    const int c = (k - 1) / 2;
    std::vector<double> xi(static_cast<std::size_t>(k), 0.0);
    double acc = 0.0;
    for (int i = c + 1; i < k; ++i) {
        acc += deltas[static_cast<std::size_t>(i)];
        xi[static_cast<std::size_t>(i)] = acc;
    }
    acc = 0.0;
    for (int i = c - 1; i >= 0; --i) {
        acc += deltas[static_cast<std::size_t>(i)];
        xi[static_cast<std::size_t>(i)] = acc;
    }
    return xi;
}

// accumulate_offsets applied at every position of a delta field [N,k,H,W].
inline Tensor accumulate_offsets_field(const Tensor& deltas) {
    if (deltas.rank() != 4) {
        throw ShapeError("accumulate_offsets_field: deltas must be [N,k,H,W], got " +
                         shape_str(deltas.shape()));
    }
    const long N = deltas.dim(0), k = deltas.dim(1), H = deltas.dim(2), W = deltas.dim(3);
    if (k % 2 == 0) {
        throw ContractError("accumulate_offsets_field: tap count must be odd, got " +
                            std::to_string(k));
    }
    const long c = (k - 1) / 2;
    const long HW = H * W;

    Tensor out = make_result(deltas.shape(), {deltas}, "accumulate_offsets_field",
                             [deltas, N, k, c, HW](const std::vector<double>& g) {
        if (!deltas.requires_grad()) return;
        double* dd = deltas.grad().data();
        std::vector<double> run(static_cast<std::size_t>(HW));
        for (long n = 0; n < N; ++n) {
            const double* gn = g.data() + n * k * HW;
            double* dn = dd + n * k * HW;
            std::fill(run.begin(), run.end(), 0.0);
            for (long j = k - 1; j > c; --j) {
                const double* gj = gn + j * HW;
                double* dj = dn + j * HW;
                for (long s = 0; s < HW; ++s) {
                    run[s] += gj[s];
                    dj[s] += run[s];
                }
            }
            std::fill(run.begin(), run.end(), 0.0);
            for (long j = 0; j < c; ++j) {
                const double* gj = gn + j * HW;
                double* dj = dn + j * HW;
                for (long s = 0; s < HW; ++s) {
                    run[s] += gj[s];
                    dj[s] += run[s];
                }
            }
        }
    });

    const double* dd = deltas.data();
    double* od = out.data();
    for (long n = 0; n < N; ++n) {
        const double* dn = dd + n * k * HW;
        double* on = od + n * k * HW;
        for (long i = c + 1; i < k; ++i) {
            const double* prev = on + (i - 1) * HW;
            const double* di = dn + i * HW;
            double* oi = on + i * HW;
            if (i == c + 1) {
                for (long s = 0; s < HW; ++s) oi[s] = di[s];
            } else {
                for (long s = 0; s < HW; ++s) oi[s] = prev[s] + di[s];
            }
        }
        for (long i = c - 1; i >= 0; --i) {
            const double* prev = on + (i + 1) * HW;
            const double* di = dn + i * HW;
            double* oi = on + i * HW;
            if (i == c - 1) {
                for (long s = 0; s < HW; ++s) oi[s] = di[s];
            } else {
                for (long s = 0; s < HW; ++s) oi[s] = prev[s] + di[s];
            }
        }
    }
    check_finite(out, "accumulate_offsets_field");
    return out;
}

// Deltas predicted from the input, accumulated into sampling offsets.
inline Tensor snake_offsets(const Tensor& input, const SnakeKernel& kernel) {
    return accumulate_offsets_field(predict_offsets(input, kernel));
}

namespace detail {

struct SnakeSample {
    long p0;      // plane offset of the lower interpolation neighbor
    long p1;      // plane offset of the upper neighbor
    double f;     // interpolation weight toward p1
    bool live;    // false when the fractional coordinate was clamped
};

// Sampling geometry for output position s and tap shift i-c. The tap walks
// the kernel axis on integer coordinates (border-clamped) while the offset
// bends the orthogonal coordinate fractionally, interpolated between two
// neighbors with the same clamp conventions as bilinear_sample.
inline SnakeSample snake_sample(bool along_x, long tap_shift, long s, long H, long W,
                                double offset) {
    const long y = s / W;
    const long x = s - y * W;
    SnakeSample r;
    if (along_x) {
        const long col = std::min(std::max(x + tap_shift, 0l), W - 1);
        AxisSample a = axis_sample(static_cast<double>(y) + offset, H);
        r.p0 = a.i0 * W + col;
        r.p1 = std::min(a.i0 + 1, H - 1) * W + col;
        r.f = a.f;
        r.live = a.slope_live;
    } else {
        const long row = std::min(std::max(y + tap_shift, 0l), H - 1);
        AxisSample a = axis_sample(static_cast<double>(x) + offset, W);
        r.p0 = row * W + a.i0;
        r.p1 = row * W + std::min(a.i0 + 1, W - 1);
        r.f = a.f;
        r.live = a.slope_live;
    }
    return r;
}

}  // namespace detail

// One bent-axis convolution pass. For the x-axis kernel,
//   out(n,o,y,x) = sum_c sum_i W[o,c,i] * input[n,c](y + xi_i(y,x), x + i - c)
// with border-clamped sampling; the y-axis kernel swaps the roles of the two
// coordinates. Differentiable w.r.t. input, weights, and offsets.
inline Tensor snake_conv_axis(const Tensor& input, const SnakeKernel& kernel, const Tensor& xi) {
    if (input.rank() != 4) {
        throw ShapeError("snake_conv_axis: input must be NCHW, got " + shape_str(input.shape()));
    }
    const Tensor weights = kernel.weights;
    if (weights.rank() != 3 || weights.dim(2) != kernel.k) {
        throw ShapeError("snake_conv_axis: weights must be [C_out, C_in, k], got " +
                         shape_str(weights.shape()));
    }
    if (weights.dim(1) != input.dim(1)) {
        throw ShapeError("snake_conv_axis: input has " + std::to_string(input.dim(1)) +
                         " channels but weights expect " + std::to_string(weights.dim(1)));
    }
    const long N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const long Cout = weights.dim(0);
    const long k = kernel.k;
    if (xi.rank() != 4 || xi.dim(0) != N || xi.dim(1) != k || xi.dim(2) != H || xi.dim(3) != W) {
        throw ShapeError("snake_conv_axis: offsets must be [" + std::to_string(N) + "," +
                         std::to_string(k) + "," + std::to_string(H) + "," + std::to_string(W) +
                         "], got " + shape_str(xi.shape()));
    }
    const long c = (k - 1) / 2;
    const long HW = H * W;
    const bool along_x = kernel.axis == SnakeAxis::x;

    Tensor out = make_result({N, Cout, H, W}, {input, weights, xi}, "snake_conv_axis",
                             [input, weights, xi, N, Cin, Cout, H, W, HW, k, c,
                              along_x](const std::vector<double>& g) {
        const bool want_dx = input.requires_grad();
        const bool want_dw = weights.requires_grad();
        const bool want_dxi = xi.requires_grad();
        const double* xd = input.data();
        const double* wd = weights.data();
        const double* xid = xi.data();
        std::vector<double> wpack(static_cast<std::size_t>(Cout * Cin));
        std::vector<double> sbuf(static_cast<std::size_t>(Cin * HW));
        std::vector<double> dwi(static_cast<std::size_t>(Cout * Cin));
        std::vector<double> ds(static_cast<std::size_t>(Cin * HW));
        std::vector<double> dacc(static_cast<std::size_t>(HW));
        std::vector<detail::SnakeSample> smp(static_cast<std::size_t>(HW));
        for (long i = 0; i < k; ++i) {
            for (long o = 0; o < Cout; ++o)
                for (long ch = 0; ch < Cin; ++ch)
                    wpack[o * Cin + ch] = wd[(o * Cin + ch) * k + i];
            if (want_dw) std::fill(dwi.begin(), dwi.end(), 0.0);
            for (long n = 0; n < N; ++n) {
                const double* xin = xd + n * Cin * HW;
                const double* xip = xid + (n * k + i) * HW;
                const double* gn = g.data() + n * Cout * HW;
                for (long s = 0; s < HW; ++s)
                    smp[s] = detail::snake_sample(along_x, i - c, s, H, W, xip[s]);
                if (want_dw) {
                    for (long ch = 0; ch < Cin; ++ch) {
                        const double* f = xin + ch * HW;
                        double* row = sbuf.data() + ch * HW;
                        for (long s = 0; s < HW; ++s) {
                            const detail::SnakeSample& m = smp[s];
                            row[s] = (1.0 - m.f) * f[m.p0] + m.f * f[m.p1];
                        }
                    }
                    detail::gemm_nt(Cout, HW, Cin, gn, sbuf.data(), dwi.data());
                }
                if (want_dx || want_dxi) {
                    std::fill(ds.begin(), ds.end(), 0.0);
                    detail::gemm_tn(Cin, Cout, HW, wpack.data(), gn, ds.data());
                    std::fill(dacc.begin(), dacc.end(), 0.0);
                    for (long ch = 0; ch < Cin; ++ch) {
                        const double* f = xin + ch * HW;
                        const double* dsr = ds.data() + ch * HW;
                        double* gx = want_dx ? input.grad().data() + (n * Cin + ch) * HW : nullptr;
                        for (long s = 0; s < HW; ++s) {
                            const double v = dsr[s];
                            if (v == 0.0) continue;
                            const detail::SnakeSample& m = smp[s];
                            if (gx) {
                                gx[m.p0] += v * (1.0 - m.f);
                                gx[m.p1] += v * m.f;
                            }
                            dacc[s] += v * (f[m.p1] - f[m.p0]);
                        }
                    }
                    if (want_dxi) {
                        double* gxi = xi.grad().data() + (n * k + i) * HW;
                        for (long s = 0; s < HW; ++s)
                            if (smp[s].live) gxi[s] += dacc[s];
                    }
                }
            }
            if (want_dw) {
                double* gw = weights.grad().data();
                for (long o = 0; o < Cout; ++o)
                    for (long ch = 0; ch < Cin; ++ch)
                        gw[(o * Cin + ch) * k + i] += dwi[o * Cin + ch];
            }
        }
    });

    const double* xd = input.data();
    const double* wd = weights.data();
    const double* xid = xi.data();
    double* od = out.data();
    std::vector<double> wpack(static_cast<std::size_t>(Cout * Cin));
    std::vector<double> sbuf(static_cast<std::size_t>(Cin * HW));
    std::vector<detail::SnakeSample> smp(static_cast<std::size_t>(HW));
    for (long i = 0; i < k; ++i) {
        for (long o = 0; o < Cout; ++o)
            for (long ch = 0; ch < Cin; ++ch)
                wpack[o * Cin + ch] = wd[(o * Cin + ch) * k + i];
        for (long n = 0; n < N; ++n) {
            const double* xin = xd + n * Cin * HW;
            const double* xip = xid + (n * k + i) * HW;
            for (long s = 0; s < HW; ++s)
                smp[s] = detail::snake_sample(along_x, i - c, s, H, W, xip[s]);
            for (long ch = 0; ch < Cin; ++ch) {
                const double* f = xin + ch * HW;
                double* row = sbuf.data() + ch * HW;
                for (long s = 0; s < HW; ++s) {
                    const detail::SnakeSample& m = smp[s];
                    row[s] = (1.0 - m.f) * f[m.p0] + m.f * f[m.p1];
                }
            }
            detail::gemm_nn(Cout, Cin, HW, wpack.data(), sbuf.data(), od + n * Cout * HW);
        }
    }
    check_finite(out, "snake_conv_axis");
    return out;
}

// Two snake kernels, one per axis, merged by arithmetic mean so the output
// scale stays comparable to a single convolution.
struct DSConvModule {
    SnakeKernel kernel_x;
    SnakeKernel kernel_y;

    DSConvModule() = default;

    DSConvModule(long c_in, long c_out, int k, Rng& rng)
        : kernel_x(SnakeAxis::x, c_in, c_out, k, rng),
          kernel_y(SnakeAxis::y, c_in, c_out, k, rng) {}
};

inline Tensor dsconv_forward(const Tensor& input, const DSConvModule& m) {
    if (m.kernel_x.weights.shape() != m.kernel_y.weights.shape()) {
        throw ContractError("dsconv_forward: axis kernels disagree, " +
                            shape_str(m.kernel_x.weights.shape()) + " vs " +
                            shape_str(m.kernel_y.weights.shape()));
    }
    Tensor along_x = snake_conv_axis(input, m.kernel_x, snake_offsets(input, m.kernel_x));
    Tensor along_y = snake_conv_axis(input, m.kernel_y, snake_offsets(input, m.kernel_y));
    return scale(add(along_x, along_y), 0.5);
}

}  // namespace loasp
