#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "loasp/tensor.hpp"

namespace loasp {

// -------------------- small dense gemm kernels --------------------
//
// Row-major, accumulate into C.  Tiled so the compiler can keep the hot
// accumulators in vector registers; shapes here are per-image convolution
// matrices (M,K,N up to ~1200) so a full BLAS is not worth the dependency.

namespace detail {

// C[M x N] += A[M x K] * B[K x N]
inline void gemm_nn(long M, long K, long N, const double* A, const double* B, double* C) {
    constexpr long MR = 4;
    constexpr long NR = 16;
    for (long n0 = 0; n0 < N; n0 += NR) {
        long nb = std::min(NR, N - n0);
        for (long m0 = 0; m0 < M; m0 += MR) {
            long mb = std::min(MR, M - m0);
            if (mb == MR && nb == NR) {
                double acc[MR][NR] = {};
                const double* a0 = A + (m0 + 0) * K;
                const double* a1 = A + (m0 + 1) * K;
                const double* a2 = A + (m0 + 2) * K;
                const double* a3 = A + (m0 + 3) * K;
                for (long k = 0; k < K; ++k) {
                    const double* b = B + k * N + n0;
                    double v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
                    for (long j = 0; j < NR; ++j) {
                        double bj = b[j];
                        acc[0][j] += v0 * bj;
                        acc[1][j] += v1 * bj;
                        acc[2][j] += v2 * bj;
                        acc[3][j] += v3 * bj;
                    }
                }
                for (long r = 0; r < MR; ++r) {
                    double* c = C + (m0 + r) * N + n0;
                    for (long j = 0; j < NR; ++j) c[j] += acc[r][j];
                }
            } else {
                for (long r = 0; r < mb; ++r) {
                    const double* a = A + (m0 + r) * K;
                    double* c = C + (m0 + r) * N + n0;
                    for (long k = 0; k < K; ++k) {
                        double av = a[k];
                        const double* b = B + k * N + n0;
                        for (long j = 0; j < nb; ++j) c[j] += av * b[j];
                    }
                }
            }
        }
    }
}

// C[M x N] += A[M x K] * B[N x K]^T   (rows of A dotted with rows of B)
inline void gemm_nt(long M, long K, long N, const double* A, const double* B, double* C) {
    for (long m = 0; m < M; ++m) {
        const double* a = A + m * K;
        for (long n = 0; n < N; ++n) {
            const double* b = B + n * K;
            double s = 0.0;
            for (long k = 0; k < K; ++k) s += a[k] * b[k];
            C[m * N + n] += s;
        }
    }
}

// C[M x N] += A[K x M]^T * B[K x N]
inline void gemm_tn(long M, long K, long N, const double* A, const double* B, double* C) {
    constexpr long MR = 4;
    for (long m0 = 0; m0 < M; m0 += MR) {
        long mb = std::min(MR, M - m0);
        for (long k = 0; k < K; ++k) {
            const double* b = B + k * N;
            const double* a = A + k * M + m0;
            for (long r = 0; r < mb; ++r) {
                double av = a[r];
                double* c = C + (m0 + r) * N;
                for (long j = 0; j < N; ++j) c[j] += av * b[j];
            }
        }
    }
}

}  // namespace detail

// -------------------- elementwise and reductions --------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = make_result(a.shape(), {a, b}, "add", [a, b](const std::vector<double>& g) {
        long n = static_cast<long>(g.size());
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (long i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            for (long i = 0; i < n; ++i) gb[i] += g[i];
        }
    });
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (long i = 0; i < a.size(); ++i) po[i] = pa[i] + pb[i];
    check_finite(out, "add");
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = make_result(a.shape(), {a, b}, "sub", [a, b](const std::vector<double>& g) {
        long n = static_cast<long>(g.size());
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (long i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            for (long i = 0; i < n; ++i) gb[i] -= g[i];
        }
    });
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (long i = 0; i < a.size(); ++i) po[i] = pa[i] - pb[i];
    check_finite(out, "sub");
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = make_result(a.shape(), {a, b}, "mul", [a, b](const std::vector<double>& g) {
        long n = static_cast<long>(g.size());
        const double* pa = a.data();
        const double* pb = b.data();
        if (a.requires_grad()) {
            auto& ga = a.grad();
            for (long i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            for (long i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
        }
    });
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (long i = 0; i < a.size(); ++i) po[i] = pa[i] * pb[i];
    check_finite(out, "mul");
    return out;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor out = make_result(a.shape(), {a}, "scale", [a, s](const std::vector<double>& g) {
        if (!a.requires_grad()) return;
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
    const double* pa = a.data();
    double* po = out.data();
    for (long i = 0; i < a.size(); ++i) po[i] = s * pa[i];
    check_finite(out, "scale");
    return out;
}

inline Tensor sum(const Tensor& a) {
    Tensor out = make_result({1}, {a}, "sum", [a](const std::vector<double>& g) {
        if (!a.requires_grad()) return;
        auto& ga = a.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
    });
    double s = 0.0;
    const double* pa = a.data();
    for (long i = 0; i < a.size(); ++i) s += pa[i];
    out.data()[0] = s;
    check_finite(out, "sum");
    return out;
}

inline Tensor relu(const Tensor& a) {
    Tensor out = make_result(a.shape(), {a}, "relu", [a](const std::vector<double>& g) {
        if (!a.requires_grad()) return;
        const double* pa = a.data();
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (pa[i] > 0.0) ga[i] += g[i];
    });
    const double* pa = a.data();
    double* po = out.data();
    for (long i = 0; i < a.size(); ++i) po[i] = pa[i] > 0.0 ? pa[i] : 0.0;
    check_finite(out, "relu");
    return out;
}

inline Tensor tanh_op(const Tensor& a) {
    std::vector<double> y(static_cast<std::size_t>(a.size()));
    const double* pa = a.data();
    for (long i = 0; i < a.size(); ++i) y[static_cast<std::size_t>(i)] = std::tanh(pa[i]);
    Tensor out = make_result(a.shape(), {a}, "tanh", [a, y](const std::vector<double>& g) {
        if (!a.requires_grad()) return;
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    });
    std::copy(y.begin(), y.end(), out.data());
    check_finite(out, "tanh");
    return out;
}

// -------------------- conv2d --------------------

struct ConvOpts {
    long stride = 1;
    long pad = 0;
    long groups = 1;
};

inline long conv_out_extent(long in, long k, long stride, long pad) {
    return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

// col[(Cg*kh*kw) x (Ho*Wo)] for one image and channel group
inline void im2col(const double* in, long H, long W, long Cg, long kh, long kw, long stride, long pad,
                   long Ho, long Wo, double* col) {
    for (long c = 0; c < Cg; ++c) {
        const double* src = in + c * H * W;
        for (long ky = 0; ky < kh; ++ky) {
            for (long kx = 0; kx < kw; ++kx) {
                double* dst = col + ((c * kh + ky) * kw + kx) * Ho * Wo;
                for (long y = 0; y < Ho; ++y) {
                    long sy = y * stride - pad + ky;
                    if (sy < 0 || sy >= H) {
                        std::fill(dst + y * Wo, dst + (y + 1) * Wo, 0.0);
                        continue;
                    }
                    const double* row = src + sy * W;
                    for (long x = 0; x < Wo; ++x) {
                        long sx = x * stride - pad + kx;
                        dst[y * Wo + x] = (sx >= 0 && sx < W) ? row[sx] : 0.0;
                    }
                }
            }
        }
    }
}

inline void col2im_add(const double* col, long H, long W, long Cg, long kh, long kw, long stride,
                       long pad, long Ho, long Wo, double* din) {
    for (long c = 0; c < Cg; ++c) {
        double* dst = din + c * H * W;
        for (long ky = 0; ky < kh; ++ky) {
            for (long kx = 0; kx < kw; ++kx) {
                const double* src = col + ((c * kh + ky) * kw + kx) * Ho * Wo;
                for (long y = 0; y < Ho; ++y) {
                    long sy = y * stride - pad + ky;
                    if (sy < 0 || sy >= H) continue;
                    double* row = dst + sy * W;
                    for (long x = 0; x < Wo; ++x) {
                        long sx = x * stride - pad + kx;
                        if (sx >= 0 && sx < W) row[sx] += src[y * Wo + x];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// input [N,Cin,H,W], kernel [Cout,Cin/groups,kh,kw] -> [N,Cout,Ho,Wo].
// Convolutions carry no bias term; use bias_add where a bias is wanted.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const ConvOpts& opts = {}) {
    if (input.rank() != 4) throw ShapeError("conv2d: input must be NCHW, got " + shape_str(input.shape()));
    if (kernel.rank() != 4)
        throw ShapeError("conv2d: kernel must be [Cout,Cin/groups,kh,kw], got " + shape_str(kernel.shape()));
    long N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    long Cout = kernel.dim(0), Ck = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    long g = opts.groups;
    if (opts.stride < 1) throw ContractError("conv2d: stride must be >= 1");
    if (opts.pad < 0) throw ContractError("conv2d: pad must be >= 0");
    if (g < 1 || Cin % g != 0 || Cout % g != 0)
        throw ShapeError("conv2d: groups must divide both channel counts (Cin=" + std::to_string(Cin) +
                         ", Cout=" + std::to_string(Cout) + ", groups=" + std::to_string(g) + ")");
    if (Ck != Cin / g)
        throw ShapeError("conv2d: kernel channel extent " + shape_str(kernel.shape()) +
                         " does not match input " + shape_str(input.shape()) + " with groups " +
                         std::to_string(g));
    long Ho = conv_out_extent(H, kh, opts.stride, opts.pad);
    long Wo = conv_out_extent(W, kw, opts.stride, opts.pad);
    if (Ho < 1 || Wo < 1)
        throw ShapeError("conv2d: kernel [" + std::to_string(kh) + "," + std::to_string(kw) +
                         "] with stride " + std::to_string(opts.stride) + ", pad " + std::to_string(opts.pad) +
                         " does not fit input " + shape_str(input.shape()));

    long Cg_in = Cin / g, Cg_out = Cout / g;
    long K = Cg_in * kh * kw;
    long P = Ho * Wo;

    Tensor out = make_result(
        {N, Cout, Ho, Wo}, {input, kernel}, "conv2d",
        [input, kernel, opts, N, Cin, H, W, Cout, kh, kw, g, Cg_in, Cg_out, K, P, Ho,
         Wo](const std::vector<double>& gout) {
            std::vector<double> col(static_cast<std::size_t>(K * P));
            std::vector<double> dcol;
            const double* in = input.data();
            const double* w = kernel.data();
            double* gin = input.requires_grad() ? input.grad().data() : nullptr;
            double* gw = kernel.requires_grad() ? kernel.grad().data() : nullptr;
            if (gin) dcol.assign(static_cast<std::size_t>(K * P), 0.0);
            for (long n = 0; n < N; ++n) {
                for (long gi = 0; gi < g; ++gi) {
                    const double* in_g = in + (n * Cin + gi * Cg_in) * H * W;
                    const double* go = gout.data() + (n * Cout + gi * Cg_out) * P;
                    if (gw || gin)
                        detail::im2col(in_g, H, W, Cg_in, kh, kw, opts.stride, opts.pad, Ho, Wo, col.data());
                    if (gw) {
                        // dW[o,k] += sum_p go[o,p] * col[k,p]
                        detail::gemm_nt(Cg_out, P, K, go, col.data(), gw + gi * Cg_out * K);
                    }
                    if (gin) {
                        std::fill(dcol.begin(), dcol.end(), 0.0);
                        // dcol[k,p] += sum_o W[o,k] * go[o,p]
                        detail::gemm_tn(K, Cg_out, P, w + gi * Cg_out * K, go, dcol.data());
                        detail::col2im_add(dcol.data(), H, W, Cg_in, kh, kw, opts.stride, opts.pad, Ho, Wo,
                                           gin + (n * Cin + gi * Cg_in) * H * W);
                    }
                }
            }
        });

    {
        std::vector<double> col(static_cast<std::size_t>(K * P));
        const double* in = input.data();
        const double* w = kernel.data();
        double* po = out.data();
        for (long n = 0; n < N; ++n) {
            for (long gi = 0; gi < g; ++gi) {
                const double* in_g = in + (n * Cin + gi * Cg_in) * H * W;
                detail::im2col(in_g, H, W, Cg_in, kh, kw, opts.stride, opts.pad, Ho, Wo, col.data());
                detail::gemm_nn(Cg_out, K, P, w + gi * Cg_out * K, col.data(),
                                po + (n * Cout + gi * Cg_out) * P);
            }
        }
    }
    check_finite(out, "conv2d");
    return out;
}

// out[n,c,h,w] = x[n,c,h,w] + b[c]
inline Tensor bias_add(const Tensor& x, const Tensor& b) {
    if (x.rank() != 4 || b.rank() != 1 || b.dim(0) != x.dim(1))
        throw ShapeError("bias_add: want NCHW input and per-channel bias, got " + shape_str(x.shape()) +
                         " and " + shape_str(b.shape()));
    long N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor out = make_result(x.shape(), {x, b}, "bias_add", [x, b, N, C, HW](const std::vector<double>& g) {
        if (x.requires_grad()) {
            auto& gx = x.grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (b.requires_grad()) {
            auto& gb = b.grad();
            for (long n = 0; n < N; ++n)
                for (long c = 0; c < C; ++c) {
                    const double* gp = g.data() + (n * C + c) * HW;
                    double s = 0.0;
                    for (long i = 0; i < HW; ++i) s += gp[i];
                    gb[static_cast<std::size_t>(c)] += s;
                }
        }
    });
    const double* px = x.data();
    const double* pb = b.data();
    double* po = out.data();
    for (long n = 0; n < N; ++n)
        for (long c = 0; c < C; ++c) {
            double bv = pb[c];
            const double* src = px + (n * C + c) * HW;
            double* dst = po + (n * C + c) * HW;
            for (long i = 0; i < HW; ++i) dst[i] = src[i] + bv;
        }
    check_finite(out, "bias_add");
    return out;
}

// x [N,K], w [M,K], b [M] (optional, pass undefined Tensor to skip) -> [N,M]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {}) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
        throw ShapeError("linear: want x [N,K] and w [M,K], got " + shape_str(x.shape()) + " and " +
                         shape_str(w.shape()));
    long N = x.dim(0), K = x.dim(1), M = w.dim(0);
    if (b.defined() && (b.rank() != 1 || b.dim(0) != M))
        throw ShapeError("linear: bias shape " + shape_str(b.shape()) + " does not match output width " +
                         std::to_string(M));
    std::vector<Tensor> parents = {x, w};
    if (b.defined()) parents.push_back(b);
    Tensor out = make_result({N, M}, parents, "linear", [x, w, b, N, K, M](const std::vector<double>& g) {
        if (x.requires_grad()) {
            // dx[n,k] += sum_m g[n,m] * w[m,k]
            detail::gemm_nn(N, M, K, g.data(), w.data(), x.grad().data());
        }
        if (w.requires_grad()) {
            // dw[m,k] += sum_n g[n,m] * x[n,k]
            detail::gemm_tn(M, N, K, g.data(), x.data(), w.grad().data());
        }
        if (b.defined() && b.requires_grad()) {
            auto& gb = b.grad();
            for (long n = 0; n < N; ++n)
                for (long m = 0; m < M; ++m) gb[static_cast<std::size_t>(m)] += g[n * M + m];
        }
    });
    double* po = out.data();
    detail::gemm_nt(N, K, M, x.data(), w.data(), po);
    if (b.defined()) {
        const double* pb = b.data();
        for (long n = 0; n < N; ++n)
            for (long m = 0; m < M; ++m) po[n * M + m] += pb[m];
    }
    check_finite(out, "linear");
    return out;
}

// -------------------- batch norm --------------------

struct BatchNorm {
    Tensor gamma;
    Tensor beta;
    // Plain tensors without grad so checkpoint restore can write into them.
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double eps = 1e-5;
    // FD-style probing re-runs forward passes; freezing the statistics keeps
    // those probes side-effect free without changing the normalization math.
    bool update_running = true;

    explicit BatchNorm(long channels = 0) {
        if (channels > 0) init(channels);
    }

    void init(long channels) {
        gamma = Tensor::full({channels}, 1.0);
        gamma.set_requires_grad(true);
        beta = Tensor::zeros({channels});
        beta.set_requires_grad(true);
        running_mean = Tensor::zeros({channels});
        running_var = Tensor::full({channels}, 1.0);
    }

    long channels() const { return gamma.defined() ? gamma.dim(0) : 0; }
};

inline Tensor batch_norm(const Tensor& x, const BatchNorm& bn, bool training) {
    if (x.rank() != 4) throw ShapeError("batch_norm: input must be NCHW, got " + shape_str(x.shape()));
    long N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (C != bn.channels())
        throw ShapeError("batch_norm: input " + shape_str(x.shape()) + " does not match state with " +
                         std::to_string(bn.channels()) + " channels");
    long m = N * HW;
    if (training && m < 2)
        throw ContractError("batch_norm: training mode needs at least 2 values per channel, got " +
                            std::to_string(m));

    Tensor gamma = bn.gamma;
    Tensor beta = bn.beta;
    const double eps = bn.eps;

    std::vector<double> mean(static_cast<std::size_t>(C)), istd(static_cast<std::size_t>(C));
    const double* px = x.data();
    if (training) {
        for (long c = 0; c < C; ++c) {
            double s = 0.0;
            for (long n = 0; n < N; ++n) {
                const double* p = px + (n * C + c) * HW;
                for (long i = 0; i < HW; ++i) s += p[i];
            }
            double mu = s / static_cast<double>(m);
            double v = 0.0;
            for (long n = 0; n < N; ++n) {
                const double* p = px + (n * C + c) * HW;
                for (long i = 0; i < HW; ++i) {
                    double d = p[i] - mu;
                    v += d * d;
                }
            }
            double var = v / static_cast<double>(m);
            mean[static_cast<std::size_t>(c)] = mu;
            istd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var + eps);
            if (bn.update_running) {
                double unbiased = m > 1 ? v / static_cast<double>(m - 1) : var;
                double* rm = bn.running_mean.data();
                double* rv = bn.running_var.data();
                rm[c] = (1.0 - bn.momentum) * rm[c] + bn.momentum * mu;
                rv[c] = (1.0 - bn.momentum) * rv[c] + bn.momentum * unbiased;
            }
        }
    } else {
        const double* rm = bn.running_mean.data();
        const double* rv = bn.running_var.data();
        for (long c = 0; c < C; ++c) {
            mean[static_cast<std::size_t>(c)] = rm[c];
            istd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(rv[c] + eps);
        }
    }

    Tensor out = make_result(
        x.shape(), {x, gamma, beta}, "batch_norm",
        [x, gamma, beta, mean, istd, training, N, C, HW, m](const std::vector<double>& g) {
            const double* px = x.data();
            const double* pg = gamma.data();
            double* gx = x.requires_grad() ? x.grad().data() : nullptr;
            double* gg = gamma.requires_grad() ? gamma.grad().data() : nullptr;
            double* gb = beta.requires_grad() ? beta.grad().data() : nullptr;
            for (long c = 0; c < C; ++c) {
                double mu = mean[static_cast<std::size_t>(c)];
                double is = istd[static_cast<std::size_t>(c)];
                double sum_g = 0.0, sum_gx = 0.0;
                for (long n = 0; n < N; ++n) {
                    const double* xp = px + (n * C + c) * HW;
                    const double* gp = g.data() + (n * C + c) * HW;
                    for (long i = 0; i < HW; ++i) {
                        sum_g += gp[i];
                        sum_gx += gp[i] * (xp[i] - mu) * is;
                    }
                }
                if (gg) gg[c] += sum_gx;
                if (gb) gb[c] += sum_g;
                if (!gx) continue;
                double gam = pg[c];
                if (training) {
                    double inv_m = 1.0 / static_cast<double>(m);
                    for (long n = 0; n < N; ++n) {
                        const double* xp = px + (n * C + c) * HW;
                        const double* gp = g.data() + (n * C + c) * HW;
                        double* dp = gx + (n * C + c) * HW;
                        for (long i = 0; i < HW; ++i) {
                            double xhat = (xp[i] - mu) * is;
                            dp[i] += gam * is * (gp[i] - inv_m * sum_g - xhat * inv_m * sum_gx);
                        }
                    }
                } else {
                    for (long n = 0; n < N; ++n) {
                        const double* gp = g.data() + (n * C + c) * HW;
                        double* dp = gx + (n * C + c) * HW;
                        for (long i = 0; i < HW; ++i) dp[i] += gam * is * gp[i];
                    }
                }
            }
        });

    const double* pg = gamma.data();
    const double* pb = beta.data();
    double* po = out.data();
    for (long n = 0; n < N; ++n)
        for (long c = 0; c < C; ++c) {
            double mu = mean[static_cast<std::size_t>(c)];
            double is = istd[static_cast<std::size_t>(c)];
            double gam = pg[c], bet = pb[c];
            const double* xp = px + (n * C + c) * HW;
            double* op = po + (n * C + c) * HW;
            for (long i = 0; i < HW; ++i) op[i] = (xp[i] - mu) * is * gam + bet;
        }
    check_finite(out, "batch_norm");
    return out;
}

// -------------------- pooling, resampling --------------------

inline Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("global_avg_pool: input must be NCHW, got " + shape_str(x.shape()));
    long N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor out = make_result({N, C}, {x}, "global_avg_pool", [x, N, C, HW](const std::vector<double>& g) {
        if (!x.requires_grad()) return;
        auto& gx = x.grad();
        double inv = 1.0 / static_cast<double>(HW);
        for (long n = 0; n < N; ++n)
            for (long c = 0; c < C; ++c) {
                double gv = g[n * C + c] * inv;
                double* dst = gx.data() + (n * C + c) * HW;
                for (long i = 0; i < HW; ++i) dst[i] += gv;
            }
    });
    const double* px = x.data();
    double* po = out.data();
    for (long n = 0; n < N; ++n)
        for (long c = 0; c < C; ++c) {
            const double* p = px + (n * C + c) * HW;
            double s = 0.0;
            for (long i = 0; i < HW; ++i) s += p[i];
            po[n * C + c] = s / static_cast<double>(HW);
        }
    check_finite(out, "global_avg_pool");
    return out;
}

inline Tensor avg_pool2(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("avg_pool2: input must be NCHW, got " + shape_str(x.shape()));
    long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw ShapeError("avg_pool2: spatial extents must be even, got " + shape_str(x.shape()));
    long Ho = H / 2, Wo = W / 2;
    Tensor out = make_result({N, C, Ho, Wo}, {x}, "avg_pool2",
                             [x, N, C, H, W, Ho, Wo](const std::vector<double>& g) {
                                 if (!x.requires_grad()) return;
                                 auto& gx = x.grad();
                                 for (long nc = 0; nc < N * C; ++nc) {
                                     const double* gp = g.data() + nc * Ho * Wo;
                                     double* dp = gx.data() + nc * H * W;
                                     for (long y = 0; y < Ho; ++y)
                                         for (long xx = 0; xx < Wo; ++xx) {
                                             double gv = gp[y * Wo + xx] * 0.25;
                                             dp[(2 * y) * W + 2 * xx] += gv;
                                             dp[(2 * y) * W + 2 * xx + 1] += gv;
                                             dp[(2 * y + 1) * W + 2 * xx] += gv;
                                             dp[(2 * y + 1) * W + 2 * xx + 1] += gv;
                                         }
                                 }
                             });
    const double* px = x.data();
    double* po = out.data();
    for (long nc = 0; nc < N * C; ++nc) {
        const double* p = px + nc * H * W;
        double* op = po + nc * Ho * Wo;
        for (long y = 0; y < Ho; ++y)
            for (long xx = 0; xx < Wo; ++xx)
                op[y * Wo + xx] = 0.25 * (p[(2 * y) * W + 2 * xx] + p[(2 * y) * W + 2 * xx + 1] +
                                          p[(2 * y + 1) * W + 2 * xx] + p[(2 * y + 1) * W + 2 * xx + 1]);
    }
    check_finite(out, "avg_pool2");
    return out;
}

inline Tensor nearest_upsample(const Tensor& x, long factor) {
    if (x.rank() != 4) throw ShapeError("nearest_upsample: input must be NCHW, got " + shape_str(x.shape()));
    if (factor < 1) throw ContractError("nearest_upsample: factor must be a positive integer");
    long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    long Ho = H * factor, Wo = W * factor;
    Tensor out = make_result({N, C, Ho, Wo}, {x}, "nearest_upsample",
                             [x, factor, N, C, H, W, Ho, Wo](const std::vector<double>& g) {
                                 if (!x.requires_grad()) return;
                                 auto& gx = x.grad();
                                 for (long nc = 0; nc < N * C; ++nc) {
                                     const double* gp = g.data() + nc * Ho * Wo;
                                     double* dp = gx.data() + nc * H * W;
                                     for (long y = 0; y < Ho; ++y) {
                                         double* drow = dp + (y / factor) * W;
                                         const double* grow = gp + y * Wo;
                                         for (long xx = 0; xx < Wo; ++xx) drow[xx / factor] += grow[xx];
                                     }
                                 }
                             });
    const double* px = x.data();
    double* po = out.data();
    for (long nc = 0; nc < N * C; ++nc) {
        const double* p = px + nc * H * W;
        double* op = po + nc * Ho * Wo;
        for (long y = 0; y < Ho; ++y) {
            const double* srow = p + (y / factor) * W;
            double* orow = op + y * Wo;
            for (long xx = 0; xx < Wo; ++xx) orow[xx] = srow[xx / factor];
        }
    }
    check_finite(out, "nearest_upsample");
    return out;
}

// Nearest-neighbour resize to an arbitrary extent (used when a prior branch
// must land on a host output that is smaller than the branch resolution).
inline Tensor nearest_resize(const Tensor& x, long Ho, long Wo) {
    if (x.rank() != 4) throw ShapeError("nearest_resize: input must be NCHW, got " + shape_str(x.shape()));
    if (Ho < 1 || Wo < 1) throw ContractError("nearest_resize: target extents must be positive");
    long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H == Ho && W == Wo) return x;
    std::vector<long> ys(static_cast<std::size_t>(Ho)), xs(static_cast<std::size_t>(Wo));
    for (long y = 0; y < Ho; ++y) ys[static_cast<std::size_t>(y)] = std::min(H - 1, y * H / Ho);
    for (long xx = 0; xx < Wo; ++xx) xs[static_cast<std::size_t>(xx)] = std::min(W - 1, xx * W / Wo);
    Tensor out = make_result({N, C, Ho, Wo}, {x}, "nearest_resize",
                             [x, ys, xs, N, C, H, W, Ho, Wo](const std::vector<double>& g) {
                                 if (!x.requires_grad()) return;
                                 auto& gx = x.grad();
                                 for (long nc = 0; nc < N * C; ++nc) {
                                     const double* gp = g.data() + nc * Ho * Wo;
                                     double* dp = gx.data() + nc * H * W;
                                     for (long y = 0; y < Ho; ++y)
                                         for (long xx = 0; xx < Wo; ++xx)
                                             dp[ys[static_cast<std::size_t>(y)] * W +
                                                xs[static_cast<std::size_t>(xx)]] += gp[y * Wo + xx];
                                 }
                             });
    const double* px = x.data();
    double* po = out.data();
    for (long nc = 0; nc < N * C; ++nc) {
        const double* p = px + nc * H * W;
        double* op = po + nc * Ho * Wo;
        for (long y = 0; y < Ho; ++y)
            for (long xx = 0; xx < Wo; ++xx)
                op[y * Wo + xx] = p[ys[static_cast<std::size_t>(y)] * W + xs[static_cast<std::size_t>(xx)]];
    }
    check_finite(out, "nearest_resize");
    return out;
}

// Center crop (target smaller) or zero pad (target larger), per axis.
inline Tensor center_crop_or_pad(const Tensor& x, long Ho, long Wo) {
    if (x.rank() != 4) throw ShapeError("center_crop_or_pad: input must be NCHW, got " + shape_str(x.shape()));
    if (Ho < 1 || Wo < 1) throw ContractError("center_crop_or_pad: target extents must be positive");
    long N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H == Ho && W == Wo) return x;
    long oy = (H - Ho) / 2;  // source offset when cropping, negative shift when padding
    long ox = (W - Wo) / 2;
    Tensor out = make_result({N, C, Ho, Wo}, {x}, "center_crop_or_pad",
                             [x, oy, ox, N, C, H, W, Ho, Wo](const std::vector<double>& g) {
                                 if (!x.requires_grad()) return;
                                 auto& gx = x.grad();
                                 for (long nc = 0; nc < N * C; ++nc) {
                                     const double* gp = g.data() + nc * Ho * Wo;
                                     double* dp = gx.data() + nc * H * W;
                                     for (long y = 0; y < Ho; ++y) {
                                         long sy = y + oy;
                                         if (sy < 0 || sy >= H) continue;
                                         for (long xx = 0; xx < Wo; ++xx) {
                                             long sx = xx + ox;
                                             if (sx >= 0 && sx < W) dp[sy * W + sx] += gp[y * Wo + xx];
                                         }
                                     }
                                 }
                             });
    const double* px = x.data();
    double* po = out.data();
    for (long nc = 0; nc < N * C; ++nc) {
        const double* p = px + nc * H * W;
        double* op = po + nc * Ho * Wo;
        for (long y = 0; y < Ho; ++y) {
            long sy = y + oy;
            for (long xx = 0; xx < Wo; ++xx) {
                long sx = xx + ox;
                op[y * Wo + xx] = (sy >= 0 && sy < H && sx >= 0 && sx < W) ? p[sy * W + sx] : 0.0;
            }
        }
    }
    check_finite(out, "center_crop_or_pad");
    return out;
}

// -------------------- bilinear sampling --------------------

namespace detail {

// 1D interpolation setup along an axis of extent `len`: clamp, split into
// base index i0 and fraction f so that value = (1-f)*v[i0] + f*v[i0+1].
// `slope_live` is false when the raw coordinate fell outside [0, len-1];
// gradients w.r.t. a clamped coordinate are zero.
struct AxisSample {
    long i0;
    double f;
    bool slope_live;
};

inline AxisSample axis_sample(double coord, long len) {
    AxisSample s;
    s.slope_live = coord > 0.0 && coord < static_cast<double>(len - 1);
    double c = std::min(std::max(coord, 0.0), static_cast<double>(len - 1));
    long i0 = static_cast<long>(std::floor(c));
    if (i0 >= len - 1) i0 = len - 2;  // coordinate exactly at the top edge
    if (len == 1) {
        s.i0 = 0;
        s.f = 0.0;
        s.slope_live = false;
        return s;
    }
    s.i0 = i0;
    s.f = c - static_cast<double>(i0);
    return s;
}

}  // namespace detail

// feature [C,H,W], coords [P,2] as (row, col) -> [C,P].  Coordinates are
// clamped to the valid rectangle before interpolation.
inline Tensor bilinear_sample(const Tensor& feature, const Tensor& coords) {
    if (feature.rank() != 3)
        throw ShapeError("bilinear_sample: feature must be CHW, got " + shape_str(feature.shape()));
    if (coords.rank() != 2 || coords.dim(1) != 2)
        throw ShapeError("bilinear_sample: coords must be [P,2], got " + shape_str(coords.shape()));
    long C = feature.dim(0), H = feature.dim(1), W = feature.dim(2);
    long P = coords.dim(0);
    Tensor out = make_result(
        {C, P}, {feature, coords}, "bilinear_sample",
        [feature, coords, C, H, W, P](const std::vector<double>& g) {
            const double* pf = feature.data();
            const double* pc = coords.data();
            double* gf = feature.requires_grad() ? feature.grad().data() : nullptr;
            double* gc = coords.requires_grad() ? coords.grad().data() : nullptr;
            for (long p = 0; p < P; ++p) {
                auto ay = detail::axis_sample(pc[p * 2 + 0], H);
                auto ax = detail::axis_sample(pc[p * 2 + 1], W);
                long y0 = ay.i0, x0 = ax.i0;
                long y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
                double fy = ay.f, fx = ax.f;
                for (long c = 0; c < C; ++c) {
                    double gv = g[c * P + p];
                    if (gv == 0.0) continue;
                    const double* f = pf + c * H * W;
                    double v00 = f[y0 * W + x0], v01 = f[y0 * W + x1];
                    double v10 = f[y1 * W + x0], v11 = f[y1 * W + x1];
                    if (gf) {
                        double* d = gf + c * H * W;
                        d[y0 * W + x0] += gv * (1 - fy) * (1 - fx);
                        d[y0 * W + x1] += gv * (1 - fy) * fx;
                        d[y1 * W + x0] += gv * fy * (1 - fx);
                        d[y1 * W + x1] += gv * fy * fx;
                    }
                    if (gc) {
                        if (ay.slope_live)
                            gc[p * 2 + 0] += gv * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
                        if (ax.slope_live)
                            gc[p * 2 + 1] += gv * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
                    }
                }
            }
        });
    const double* pf = feature.data();
    const double* pc = coords.data();
    double* po = out.data();
    for (long p = 0; p < P; ++p) {
        auto ay = detail::axis_sample(pc[p * 2 + 0], H);
        auto ax = detail::axis_sample(pc[p * 2 + 1], W);
        long y0 = ay.i0, x0 = ax.i0;
        long y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
        double fy = ay.f, fx = ax.f;
        for (long c = 0; c < C; ++c) {
            const double* f = pf + c * H * W;
            po[c * P + p] = (1 - fy) * (1 - fx) * f[y0 * W + x0] + (1 - fy) * fx * f[y0 * W + x1] +
                            fy * (1 - fx) * f[y1 * W + x0] + fy * fx * f[y1 * W + x1];
        }
    }
    check_finite(out, "bilinear_sample");
    return out;
}

// -------------------- cross entropy --------------------

// logits [N,C], labels length N -> scalar mean negative log likelihood.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<long>& labels) {
    if (logits.rank() != 2)
        throw ShapeError("cross_entropy: logits must be [N,C], got " + shape_str(logits.shape()));
    long N = logits.dim(0), C = logits.dim(1);
    if (static_cast<long>(labels.size()) != N)
        throw ShapeError("cross_entropy: got " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(N) + " rows");
    for (long n = 0; n < N; ++n)
        if (labels[static_cast<std::size_t>(n)] < 0 || labels[static_cast<std::size_t>(n)] >= C)
            throw ContractError("cross_entropy: label at index " + std::to_string(n) + " is " +
                                std::to_string(labels[static_cast<std::size_t>(n)]) + ", outside [0," +
                                std::to_string(C) + ")");

    std::vector<double> probs(static_cast<std::size_t>(N * C));
    const double* pl = logits.data();
    double loss = 0.0;
    for (long n = 0; n < N; ++n) {
        const double* row = pl + n * C;
        double mx = row[0];
        for (long c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (long c = 0; c < C; ++c) z += std::exp(row[c] - mx);
        double logz = std::log(z);
        for (long c = 0; c < C; ++c) probs[static_cast<std::size_t>(n * C + c)] = std::exp(row[c] - mx) / z;
        loss -= row[labels[static_cast<std::size_t>(n)]] - mx - logz;
    }
    loss /= static_cast<double>(N);

    Tensor out = make_result({1}, {logits}, "cross_entropy",
                             [logits, labels, probs, N, C](const std::vector<double>& g) {
                                 if (!logits.requires_grad()) return;
                                 auto& gl = logits.grad();
                                 double gv = g[0] / static_cast<double>(N);
                                 for (long n = 0; n < N; ++n)
                                     for (long c = 0; c < C; ++c) {
                                         double p = probs[static_cast<std::size_t>(n * C + c)];
                                         double t = labels[static_cast<std::size_t>(n)] == c ? 1.0 : 0.0;
                                         gl[static_cast<std::size_t>(n * C + c)] += gv * (p - t);
                                     }
                             });
    out.data()[0] = loss;
    check_finite(out, "cross_entropy");
    return out;
}

// Forward-only softmax over rows of [N,C] (evaluation-side scores).
inline std::vector<double> softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2)
        throw ShapeError("softmax_rows: logits must be [N,C], got " + shape_str(logits.shape()));
    long N = logits.dim(0), C = logits.dim(1);
    std::vector<double> probs(static_cast<std::size_t>(N * C));
    const double* pl = logits.data();
    for (long n = 0; n < N; ++n) {
        const double* row = pl + n * C;
        double mx = row[0];
        for (long c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (long c = 0; c < C; ++c) z += std::exp(row[c] - mx);
        for (long c = 0; c < C; ++c) probs[static_cast<std::size_t>(n * C + c)] = std::exp(row[c] - mx) / z;
    }
    return probs;
}

// -------------------- finite difference oracle --------------------

// Central-difference gradient of a scalar objective w.r.t. every element of
// `x`, perturbing in place.  The objective must be a pure function of the
// current tensor values.
inline std::vector<double> finite_difference_grad(const std::function<double()>& objective, Tensor x,
                                                  double eps = 1e-6) {
    if (eps <= 0.0) throw ContractError("finite_difference_grad: eps must be positive");
    NoGradGuard guard;
    std::vector<double> g(static_cast<std::size_t>(x.size()));
    double* px = x.data();
    for (long i = 0; i < x.size(); ++i) {
        double saved = px[i];
        px[i] = saved + eps;
        double fp = objective();
        px[i] = saved - eps;
        double fm = objective();
        px[i] = saved;
        g[static_cast<std::size_t>(i)] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

}  // namespace loasp
