#pragma once

// B-spline knot vectors, Cox-de Boor basis evaluation, and the learnable
// per-channel spline activation.
//
// Conventions, fixed once here and relied on by every caller:
//   * any 0/0 in the recursion (repeated knots) is defined as 0;
//   * the last non-empty knot span is closed on the right, so the basis
//     partition of unity extends to the closed domain [lo, hi];
//   * activation inputs are clamped to the knot domain before evaluation,
//     and the gradient with respect to a clamped input is 0.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "loasp/common.hpp"
#include "loasp/tensor.hpp"

namespace loasp {

// Validated container of non-decreasing knot values plus the degree the
// vector was built for. Basis evaluation takes the degree as an explicit
// argument so a low-degree vector can be probed at other degrees; the
// stored degree defines the domain [u_p, u_{m-p}] used for clamping.
struct KnotVector {
    int degree = 0;
    std::vector<double> knots;

    KnotVector(int p, std::vector<double> u) : degree(p), knots(std::move(u)) {
        if (degree < 0) {
            throw ContractError("KnotVector: degree must be non-negative, got " +
                                std::to_string(degree));
        }
        const int m = static_cast<int>(knots.size()) - 1;
        if (m < 2 * degree + 1) {
            throw ContractError("KnotVector: need at least " +
                                std::to_string(2 * degree + 2) +
                                " knots for degree " + std::to_string(degree) +
                                ", got " + std::to_string(knots.size()));
        }
        for (std::size_t i = 1; i < knots.size(); ++i) {
            if (knots[i] < knots[i - 1]) {
                throw ContractError("KnotVector: knots must be non-decreasing (knot " +
                                    std::to_string(i) + " is " + std::to_string(knots[i]) +
                                    " after " + std::to_string(knots[i - 1]) + ")");
            }
        }
        if (!(lo() < hi())) {
            throw ContractError("KnotVector: degenerate domain [" + std::to_string(lo()) +
                                ", " + std::to_string(hi()) + "]");
        }
    }

    double lo() const { return knots[static_cast<std::size_t>(degree)]; }
    double hi() const { return knots[knots.size() - 1 - static_cast<std::size_t>(degree)]; }

    // Number of basis functions at the stored degree: n = m - p.
    int basis_count() const {
        return static_cast<int>(knots.size()) - 1 - degree;
    }

    double clamp(double x) const { return std::min(std::max(x, lo()), hi()); }
};

// p+1 copies of lo, G-1 uniform interior knots, p+1 copies of hi.
// Yields n = G + p basis functions over the domain [lo, hi].
inline KnotVector make_clamped_uniform_knots(int p, int G, double lo = -1.0, double hi = 1.0) {
    if (p < 0) {
        throw ContractError("make_clamped_uniform_knots: p must be non-negative, got " +
                            std::to_string(p));
    }
    if (G < 1) {
        throw ContractError("make_clamped_uniform_knots: G must be at least 1, got " +
                            std::to_string(G));
    }
    if (!(lo < hi)) {
        throw ContractError("make_clamped_uniform_knots: need lo < hi, got [" +
                            std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    std::vector<double> u;
    u.reserve(static_cast<std::size_t>(G + 2 * p + 1));
    for (int i = 0; i <= p; ++i) u.push_back(lo);
    for (int i = 1; i < G; ++i) u.push_back(lo + (hi - lo) * i / G);
    for (int i = 0; i <= p; ++i) u.push_back(hi);
    return KnotVector(p, std::move(u));
}

namespace detail {

// Forces `v` through a memory barrier so the compiler cannot fuse the
// surrounding multiply-add into an FMA. The naive recursion and the tabular
// evaluation must produce bitwise-identical results (a tested contract), so
// both perform the Cox-de Boor combine step with explicitly rounded halves.
inline double fp_round_barrier(double v) {
    volatile double x = v;
    return x;
}

// True for the unique non-empty span that owns the right domain endpoint.
inline bool is_last_nonempty_span(const std::vector<double>& u, std::size_t i) {
    if (!(u[i] < u[i + 1])) return false;
    for (std::size_t j = i + 1; j + 1 < u.size(); ++j) {
        if (u[j] < u[j + 1]) return false;
    }
    return true;
}

inline double basis_degree0(const std::vector<double>& u, std::size_t i, double x) {
    if (u[i] <= x && x < u[i + 1]) return 1.0;
    if (x == u[i + 1] && is_last_nonempty_span(u, i)) return 1.0;
    return 0.0;
}

inline void check_basis_args(const KnotVector& kv, int i, int p, const char* who) {
    if (p < 0) {
        throw ContractError(std::string(who) + ": degree must be non-negative, got " +
                            std::to_string(p));
    }
    const int n = static_cast<int>(kv.knots.size()) - 1 - p;
    if (n < 1) {
        throw ContractError(std::string(who) + ": degree " + std::to_string(p) +
                            " leaves no basis function over " +
                            std::to_string(kv.knots.size()) + " knots");
    }
    if (i < 0 || i >= n) {
        throw ContractError(std::string(who) + ": basis index " + std::to_string(i) +
                            " out of range [0, " + std::to_string(n) + ")");
    }
}

}  // namespace detail

// Literal Cox-de Boor recursion. Kept deliberately naive: this is the oracle
// the efficient evaluation is tested against, so it must stay transparent.
inline double bspline_basis(int i, int p, double x, const KnotVector& kv) {
    detail::check_basis_args(kv, i, p, "bspline_basis");
    const std::vector<double>& u = kv.knots;
    const std::size_t ui = static_cast<std::size_t>(i);
    if (p == 0) return detail::basis_degree0(u, ui, x);

    double left = 0.0;
    const double dl = u[ui + p] - u[ui];
    if (dl > 0.0) {
        left = (x - u[ui]) / dl * bspline_basis(i, p - 1, x, kv);
    }
    double right = 0.0;
    const double dr = u[ui + p + 1] - u[ui + 1];
    if (dr > 0.0) {
        right = (u[ui + p + 1] - x) / dr * bspline_basis(i + 1, p - 1, x, kv);
    }
    return detail::fp_round_barrier(left) + detail::fp_round_barrier(right);
}

namespace detail {

// Bottom-up table of all basis values at degree p. The arithmetic per entry
// is statement-for-statement the same as bspline_basis, so the results agree
// bit for bit with the recursion (that equivalence is a tested property).
inline void basis_table(const KnotVector& kv, int p, double x,
                        std::vector<double>& level, std::vector<double>& next) {
    const std::vector<double>& u = kv.knots;
    const std::size_t spans = u.size() - 1;
    level.resize(spans);
    for (std::size_t i = 0; i < spans; ++i) level[i] = basis_degree0(u, i, x);
    for (int q = 1; q <= p; ++q) {
        const std::size_t nq = u.size() - 1 - static_cast<std::size_t>(q);
        next.resize(nq);
        for (std::size_t i = 0; i < nq; ++i) {
            double left = 0.0;
            const double dl = u[i + q] - u[i];
            if (dl > 0.0) {
                left = (x - u[i]) / dl * level[i];
            }
            double right = 0.0;
            const double dr = u[i + q + 1] - u[i + 1];
            if (dr > 0.0) {
                right = (u[i + q + 1] - x) / dr * level[i + 1];
            }
            next[i] = fp_round_barrier(left) + fp_round_barrier(right);
        }
        level.swap(next);
    }
}

}  // namespace detail

// All n basis values at degree p. The input is clamped to [u_p, u_{m-p}]
// first, so any real-valued x is accepted.
inline void basis_all_into(int p, double x, const KnotVector& kv, std::vector<double>& out) {
    detail::check_basis_args(kv, 0, p, "basis_all");
    const std::vector<double>& u = kv.knots;
    const std::size_t m = u.size() - 1;
    const double lo = u[static_cast<std::size_t>(p)];
    const double hi = u[m - static_cast<std::size_t>(p)];
    const double t = std::min(std::max(x, lo), hi);
    std::vector<double> scratch;
    detail::basis_table(kv, p, t, out, scratch);
}

inline std::vector<double> basis_all(int p, double x, const KnotVector& kv) {
    std::vector<double> out;
    basis_all_into(p, x, kv, out);
    return out;
}

// Derivatives of all n degree-p basis functions at the clamped input,
// via B'_{i,p} = p * (B_{i,p-1}/(u_{i+p}-u_i) - B_{i+1,p-1}/(u_{i+p+1}-u_{i+1}))
// with the usual 0/0 -> 0 convention. Degree 0 is piecewise constant, so its
// derivative is identically 0.
inline void basis_all_derivative_into(int p, double x, const KnotVector& kv,
                                      std::vector<double>& out) {
    detail::check_basis_args(kv, 0, p, "basis_all_derivative");
    const std::vector<double>& u = kv.knots;
    const std::size_t m = u.size() - 1;
    const std::size_t n = m - static_cast<std::size_t>(p);
    if (p == 0) {
        out.assign(n, 0.0);
        return;
    }
    const double lo = u[static_cast<std::size_t>(p)];
    const double hi = u[m - static_cast<std::size_t>(p)];
    const double t = std::min(std::max(x, lo), hi);
    std::vector<double> lower, scratch;
    detail::basis_table(kv, p - 1, t, lower, scratch);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double left = 0.0;
        const double dl = u[i + p] - u[i];
        if (dl > 0.0) left = lower[i] / dl;
        double right = 0.0;
        const double dr = u[i + p + 1] - u[i + 1];
        if (dr > 0.0) right = lower[i + 1] / dr;
        out[i] = p * (left - right);
    }
}

inline std::vector<double> basis_all_derivative(int p, double x, const KnotVector& kv) {
    std::vector<double> out;
    basis_all_derivative_into(p, x, kv, out);
    return out;
}

// Greville abscissae g_i = (u_{i+1} + ... + u_{i+p}) / p. Setting the
// coefficients to these values makes the spline reproduce f(x) = x on the
// whole domain (linear precision). Undefined at degree 0, which has no
// linear reproduction.
inline std::vector<double> greville_abscissae(const KnotVector& kv) {
    if (kv.degree < 1) {
        throw ContractError("greville_abscissae: identity initialization needs degree >= 1, "
                            "got degree 0 (piecewise-constant splines cannot reproduce x)");
    }
    const int p = kv.degree;
    const int n = kv.basis_count();
    std::vector<double> g(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 1; j <= p; ++j) acc += kv.knots[static_cast<std::size_t>(i + j)];
        g[static_cast<std::size_t>(i)] = acc / p;
    }
    return g;
}

// Coefficient matrix [channels, n] with every row set to the Greville
// abscissae, so each channel starts as the identity map on the domain.
inline Tensor greville_identity_init(const KnotVector& kv, int channels) {
    if (channels < 1) {
        throw ContractError("greville_identity_init: channels must be positive, got " +
                            std::to_string(channels));
    }
    const std::vector<double> g = greville_abscissae(kv);
    const int n = static_cast<int>(g.size());
    Tensor c = Tensor::zeros({channels, n});
    double* cd = c.data();
    for (int ch = 0; ch < channels; ++ch) {
        for (int i = 0; i < n; ++i) cd[ch * n + i] = g[static_cast<std::size_t>(i)];
    }
    return c;
}

// Learnable activation y = sum_i c[ch,i] * B_{i,p}(clamp(x)), evaluated
// independently at every position of an NCHW tensor. Coefficients are shared
// across positions and distinct per channel.
struct SplineActivation {
    KnotVector knots;
    Tensor coeff;  // [channels, n]

    SplineActivation(KnotVector kv, Tensor c) : knots(std::move(kv)), coeff(std::move(c)) {
        if (coeff.rank() != 2) {
            throw ShapeError("SplineActivation: coefficients must be [channels, n], got " +
                             shape_str(coeff.shape()));
        }
        if (coeff.shape()[1] != knots.basis_count()) {
            throw ShapeError("SplineActivation: coefficient width " +
                             std::to_string(coeff.shape()[1]) + " does not match basis count " +
                             std::to_string(knots.basis_count()));
        }
    }

    int channels() const { return coeff.shape()[0]; }
};

inline Tensor spline_eval(const SplineActivation& act, const Tensor& x) {
    if (x.rank() != 4) {
        throw ShapeError("spline_eval: input must be NCHW, got " + shape_str(x.shape()));
    }
    if (x.shape()[1] != act.channels()) {
        throw ShapeError("spline_eval: input has " + std::to_string(x.shape()[1]) +
                         " channels but the activation has " + std::to_string(act.channels()));
    }
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int hw = H * W;
    const int p = act.knots.degree;
    const int n = act.knots.basis_count();
    const KnotVector& kv = act.knots;
    const Tensor coeff = act.coeff;

    Tensor out = make_result(x.shape(), {x, coeff}, "spline_eval",
                             [x, coeff, kv, p, n, N, C, hw](const std::vector<double>& g) {
        const double* xd = x.data();
        const double lo = kv.lo();
        const double hi = kv.hi();
        const double* cd = coeff.data();
        const bool want_dx = x.requires_grad();
        const bool want_dc = coeff.requires_grad();
        std::vector<double> basis, deriv;
        for (int img = 0; img < N; ++img) {
            for (int ch = 0; ch < C; ++ch) {
                const double* crow = cd + ch * n;
                const std::size_t base = (static_cast<std::size_t>(img) * C + ch) * hw;
                for (int s = 0; s < hw; ++s) {
                    const double gv = g[base + s];
                    if (gv == 0.0) continue;
                    const double xv = xd[base + s];
                    if (want_dc) {
                        basis_all_into(p, xv, kv, basis);
                        double* grow = coeff.grad().data() + ch * n;
                        for (int i = 0; i < n; ++i)
                            grow[i] += gv * basis[static_cast<std::size_t>(i)];
                    }
                    if (want_dx && xv >= lo && xv <= hi) {
                        basis_all_derivative_into(p, xv, kv, deriv);
                        double slope = 0.0;
                        for (int i = 0; i < n; ++i)
                            slope += crow[i] * deriv[static_cast<std::size_t>(i)];
                        x.grad()[base + s] += gv * slope;
                    }
                }
            }
        }
    });

    const double* xd = x.data();
    const double* cd = coeff.data();
    double* od = out.data();
    std::vector<double> basis;
    for (int img = 0; img < N; ++img) {
        for (int ch = 0; ch < C; ++ch) {
            const double* crow = cd + ch * n;
            const std::size_t base = (static_cast<std::size_t>(img) * C + ch) * hw;
            for (int s = 0; s < hw; ++s) {
                basis_all_into(p, xd[base + s], kv, basis);
                double acc = 0.0;
                for (int i = 0; i < n; ++i) acc += crow[i] * basis[static_cast<std::size_t>(i)];
                od[base + s] = acc;
            }
        }
    }
    check_finite(out, "spline_eval");
    return out;
}

}  // namespace loasp
