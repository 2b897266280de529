#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "loasp/bspline.hpp"
#include "loasp/common.hpp"
#include "loasp/ops.hpp"
#include "loasp/optim.hpp"
#include "loasp/snake.hpp"
#include "loasp/tensor.hpp"

namespace loasp {

// -------------------- hidden width rule --------------------
//
// C_h = max(8, 4 * round(C / 48)). The rule is deliberately coarse: it keeps
// tiny hosts at a workable floor of 8 while scaling roughly linearly for wide
// hosts (256 -> 20, 2048 -> 172).

inline long hidden_width(long channels) {
    if (channels < 1)
        throw ContractError("hidden_width: channel count must be positive, got " +
                            std::to_string(channels));
    return std::max<long>(8, 4 * std::lround(static_cast<double>(channels) / 48.0));
}

namespace detail {

inline Tensor gaussian_kernel(std::vector<long> shape, double scale, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    double* d = t.data();
    for (long i = 0; i < t.size(); ++i) d[i] = scale * rng.gaussian();
    t.set_requires_grad(true);
    return t;
}

inline Tensor zero_kernel(std::vector<long> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    t.set_requires_grad(true);
    return t;
}

// Fixed (non-trainable) 1x1 map: copy channel i to output channel i, zero-pad
// or truncate when the counts differ.
inline Tensor identity_channel_map(long c_out, long c_in) {
    Tensor t = Tensor::zeros({c_out, c_in, 1, 1});
    double* d = t.data();
    for (long o = 0; o < std::min(c_out, c_in); ++o) d[o * c_in + o] = 1.0;
    return t;
}

}  // namespace detail

// Identity-like spline of a given degree: Greville coefficients reproduce x
// exactly for degree >= 1. Degree 0 cannot reproduce x (and the Greville rule
// divides by p), so it falls back to knot-span midpoints, the staircase
// closest to the identity map.
inline SplineActivation make_identity_spline(long channels, int p, int grid, double lo, double hi) {
    KnotVector kv = make_clamped_uniform_knots(p, grid, lo, hi);
    Tensor coeff;
    if (p >= 1) {
        coeff = greville_identity_init(kv, static_cast<int>(channels));
    } else {
        const long n = kv.basis_count();
        coeff = Tensor::zeros({channels, n});
        double* cd = coeff.data();
        for (long ch = 0; ch < channels; ++ch)
            for (long i = 0; i < n; ++i)
                cd[ch * n + i] = 0.5 * (kv.knots[static_cast<std::size_t>(i)] +
                                        kv.knots[static_cast<std::size_t>(i + 1)]);
    }
    coeff.set_requires_grad(true);
    return SplineActivation(std::move(kv), std::move(coeff));
}

// -------------------- LoSP: low-rank structural prior --------------------
//
// s_t = BN(B_s * dsconv(BN(A_s * x_t))). A_s carries the spatial
// down-scaling as its stride; every convolution here is bias-free.

struct LoSPModule {
    long stride;     // spatial down-scaling applied by A_s
    Tensor a_s;      // [C_h, C, 1, 1]
    BatchNorm bn1;   // C_h
    DSConvModule dsconv;  // C_h -> C_h
    Tensor b_s;      // [C_h, C_h, 1, 1]
    BatchNorm bn2;   // C_h

    LoSPModule(long c_in, long c_h, long stride_, int k, Rng& rng)
        : stride(stride_),
          a_s(detail::gaussian_kernel({c_h, c_in, 1, 1}, 1.0 / std::sqrt(static_cast<double>(c_in)), rng)),
          bn1(c_h),
          dsconv(c_h, c_h, k, rng),
          b_s(detail::gaussian_kernel({c_h, c_h, 1, 1}, 1.0 / std::sqrt(static_cast<double>(c_h)), rng)),
          bn2(c_h) {
        if (stride_ < 1)
            throw ContractError("LoSPModule: stride must be positive, got " + std::to_string(stride_));
    }
};

inline Tensor losp_forward(const Tensor& x, const LoSPModule& m, bool training) {
    if (x.rank() != 4)
        throw ShapeError("losp_forward: input must be NCHW, got " + shape_str(x.shape()));
    if (x.dim(2) < m.stride || x.dim(3) < m.stride)
        throw ShapeError("losp_forward: input " + shape_str(x.shape()) +
                         " is smaller than the down-scaling stride " + std::to_string(m.stride));
    Tensor t = conv2d(x, m.a_s, ConvOpts{m.stride, 0, 1});
    t = batch_norm(t, m.bn1, training);
    t = dsconv_forward(t, m.dsconv);
    t = conv2d(t, m.b_s, ConvOpts{1, 0, 1});
    return batch_norm(t, m.bn2, training);
}

// -------------------- LoAP: low-rank adaptive projector --------------------
//
// s_t' = B_f * nearest_upsample(spline(A_f * s_t), r). B_f starts at zero,
// so a fresh module contributes nothing to the host stream.

struct LoAPModule {
    Tensor a_f;               // [C_h, C_h, 1, 1]
    SplineActivation spline;  // per-channel learnable activation on C_h
    Tensor b_f;               // [C, C_h, 1, 1], zero at construction

    LoAPModule(long c_h, long c_out, int p, int grid, double lo, double hi, Rng& rng)
        : a_f(detail::gaussian_kernel({c_h, c_h, 1, 1}, 1.0 / std::sqrt(static_cast<double>(c_h)), rng)),
          spline(make_identity_spline(c_h, p, grid, lo, hi)),
          b_f(detail::zero_kernel({c_out, c_h, 1, 1})) {}
};

// When target extents are given, an upsample overshoot of at most r-1 per
// axis (from host sizes not divisible by r) is reconciled with a center
// crop/pad; anything larger is a wiring mistake and is rejected. The crop
// runs before B_f: a 1x1 projection commutes with spatial cropping, and this
// order projects fewer pixels.
inline Tensor loap_forward(const Tensor& s, const LoAPModule& m, long r, long target_h = -1,
                           long target_w = -1) {
    if (s.rank() != 4)
        throw ShapeError("loap_forward: input must be NCHW, got " + shape_str(s.shape()));
    if (r < 1) throw ContractError("loap_forward: upsample factor must be positive, got " + std::to_string(r));
    Tensor t = conv2d(s, m.a_f, ConvOpts{1, 0, 1});
    t = spline_eval(m.spline, t);
    if (r > 1) t = nearest_upsample(t, r);
    if (target_h > 0 && target_w > 0 && (t.dim(2) != target_h || t.dim(3) != target_w)) {
        long dh = std::labs(t.dim(2) - target_h);
        long dw = std::labs(t.dim(3) - target_w);
        if (dh >= r || dw >= r)
            throw ShapeError("loap_forward: upsampled extent " + shape_str(t.shape()) +
                             " cannot be reconciled with target " + std::to_string(target_h) + "x" +
                             std::to_string(target_w) + " (mismatch exceeds r-1 = " +
                             std::to_string(r - 1) + ")");
        t = center_crop_or_pad(t, target_h, target_w);
    }
    return conv2d(t, m.b_f, ConvOpts{1, 0, 1});
}

// -------------------- fusion --------------------
//
// h_t' = (A_c * h_t) + h_t + s_t' with a depthwise refine kernel A_c.

inline Tensor loasp_fuse(const Tensor& h, const Tensor& s_prime, const Tensor& a_c) {
    check_same_shape(h, s_prime, "loasp_fuse");
    if (a_c.rank() != 4 || a_c.dim(1) != 1 || a_c.dim(0) != h.dim(1))
        throw ShapeError("loasp_fuse: refine kernel must be depthwise [C,1,kh,kw] with C=" +
                         std::to_string(h.dim(1)) + ", got " + shape_str(a_c.shape()));
    if (a_c.dim(2) != a_c.dim(3) || a_c.dim(2) % 2 == 0)
        throw ShapeError("loasp_fuse: refine kernel must be square with odd extent, got " +
                         shape_str(a_c.shape()));
    Tensor refined = conv2d(h, a_c, ConvOpts{1, a_c.dim(2) / 2, h.dim(1)});
    return add(add(refined, h), s_prime);
}

// -------------------- LoRA baseline --------------------

struct LoRAModule {
    Tensor w0;  // host weight, [C_out, C_in, 1, 1]
    Tensor a;   // [C_h, C_in, 1, 1], Gaussian
    Tensor b;   // [C_out, C_h, 1, 1], zero so construction preserves the host map
    long stride;

    LoRAModule(long c_in, long c_out, long c_h, long stride_, bool train_host, Rng& rng)
        : w0(detail::gaussian_kernel({c_out, c_in, 1, 1}, 1.0 / std::sqrt(static_cast<double>(c_in)), rng)),
          a(detail::gaussian_kernel({c_h, c_in, 1, 1}, 1.0 / std::sqrt(static_cast<double>(c_in)), rng)),
          b(detail::zero_kernel({c_out, c_h, 1, 1})),
          stride(stride_) {
        if (stride_ < 1)
            throw ContractError("LoRAModule: stride must be positive, got " + std::to_string(stride_));
        if (!train_host) w0.set_requires_grad(false);
    }
};

// W_0 * x + B * (A * x). For 1x1 projections this equals (W_0 + BA) * x
// exactly, and B = 0 reduces it to the bare host map.
inline Tensor lora_forward(const Tensor& x, const LoRAModule& m) {
    Tensor host = conv2d(x, m.w0, ConvOpts{m.stride, 0, 1});
    Tensor delta = conv2d(conv2d(x, m.a, ConvOpts{m.stride, 0, 1}), m.b, ConvOpts{1, 0, 1});
    return add(host, delta);
}

// -------------------- Adapter baseline --------------------

struct AdapterModule {
    Tensor a;  // [C_ad, C_in, 1, 1]
    Tensor b;  // [C_out, C_ad, 1, 1]

    // Near-zero init keeps a fresh adapter close to (not exactly) a no-op.
    AdapterModule(long c_in, long c_ad, long c_out, Rng& rng)
        : a(detail::gaussian_kernel({c_ad, c_in, 1, 1}, 1e-3, rng)),
          b(detail::gaussian_kernel({c_out, c_ad, 1, 1}, 1e-3, rng)) {}
};

// h + B * relu(A * h), the residual bottleneck form.
inline Tensor adapter_forward(const Tensor& h, const AdapterModule& m) {
    Tensor t = conv2d(relu(conv2d(h, m.a, ConvOpts{1, 0, 1})), m.b, ConvOpts{1, 0, 1});
    return add(h, t);
}

// -------------------- ablation grid --------------------

enum class PriorKind { lora, dsconv, loasp };
enum class FusionKind { add, adapter, loap };

inline const char* to_string(PriorKind p) {
    switch (p) {
        case PriorKind::lora: return "lora";
        case PriorKind::dsconv: return "dsconv";
        case PriorKind::loasp: return "loasp";
    }
    return "?";
}

inline const char* to_string(FusionKind f) {
    switch (f) {
        case FusionKind::add: return "add";
        case FusionKind::adapter: return "adapter";
        case FusionKind::loap: return "loap";
    }
    return "?";
}

inline std::string valid_cells_listing() {
    std::string out;
    for (PriorKind p : {PriorKind::lora, PriorKind::dsconv, PriorKind::loasp}) {
        for (FusionKind f : {FusionKind::add, FusionKind::adapter, FusionKind::loap}) {
            if (!out.empty()) out += ", ";
            out += std::string(to_string(p)) + "/" + to_string(f);
        }
    }
    return out;
}

struct BlockConfig {
    long r = 4;         // spatial down/up-scaling rank
    long c_hidden = 0;  // 0 = derive from the width rule
    int dsconv_k = 9;
    int spline_p = 3;
    int spline_u = 6;   // knot intervals
    double spline_lo = -1.0;
    double spline_hi = 1.0;
};

// The host side of a wrapped block: an opaque forward plus the geometry the
// wrapper needs to route its own branches.
struct HostBlock {
    std::function<Tensor(const Tensor&, bool)> forward;  // (x, training) -> h_t
    long c_in = 0;
    long c_out = 0;
    long stride = 1;
};

struct WrappedBlock {
    HostBlock host;
    PriorKind prior = PriorKind::loasp;
    FusionKind fusion = FusionKind::loap;
    BlockConfig cfg;

    // prior branch (exactly one is active)
    std::optional<LoSPModule> losp;
    std::optional<DSConvModule> ds;
    Tensor lora_a, lora_b;

    // fusion branch
    Tensor add_proj;  // fixed channel map for ADD, set only when counts differ
    std::optional<AdapterModule> adapter;
    std::optional<LoAPModule> loap;
    long loap_r = 1;
    Tensor a_c;       // depthwise refine kernel, LoAP fusion only

    // Prior branch output before any fusion-side reconciliation.
    Tensor prior_signal(const Tensor& x, bool training) const {
        switch (prior) {
            case PriorKind::lora:
                return conv2d(conv2d(x, lora_a, ConvOpts{host.stride, 0, 1}), lora_b,
                              ConvOpts{1, 0, 1});
            case PriorKind::dsconv:
                return dsconv_forward(x, *ds);
            case PriorKind::loasp:
                return losp_forward(x, *losp, training);
        }
        throw ContractError("WrappedBlock::prior_signal: unhandled prior kind");
    }

    // The projected signal the LoAP fusion adds to the host output, captured
    // at the host's spatial extent just before the final fuse. The prior-map
    // visualizer reads this, which is why it is split out of forward().
    Tensor fusion_signal(const Tensor& x, const Tensor& h, bool training) const {
        if (fusion != FusionKind::loap)
            throw ConfigError(std::string("WrappedBlock::fusion_signal: block fuses via '") +
                              to_string(fusion) + "', prior-map capture needs 'loap'");
        Tensor sin = prior_signal(x, training);
        // A full-resolution prior on a strided host lands above the host
        // output extent; an upsample-only pipeline cannot reach back down, so
        // resize first. The canonical loasp prior never takes this branch
        // (its extents land within r-1 by design).
        if (loap_r == 1 && (sin.dim(2) != h.dim(2) || sin.dim(3) != h.dim(3)))
            sin = nearest_resize(sin, h.dim(2), h.dim(3));
        return loap_forward(sin, *loap, loap_r, h.dim(2), h.dim(3));
    }

    Tensor forward(const Tensor& x, bool training) const {
        Tensor h = host.forward(x, training);
        switch (fusion) {
            case FusionKind::add: {
                Tensor s = prior_signal(x, training);
                if (s.dim(2) != h.dim(2) || s.dim(3) != h.dim(3))
                    s = nearest_resize(s, h.dim(2), h.dim(3));
                if (add_proj.defined()) s = conv2d(s, add_proj, ConvOpts{1, 0, 1});
                return add(h, s);
            }
            case FusionKind::adapter: {
                Tensor s = prior_signal(x, training);
                Tensor t = conv2d(relu(conv2d(s, adapter->a, ConvOpts{1, 0, 1})), adapter->b,
                                  ConvOpts{1, 0, 1});
                if (t.dim(2) != h.dim(2) || t.dim(3) != h.dim(3))
                    t = nearest_resize(t, h.dim(2), h.dim(3));
                return add(h, t);
            }
            case FusionKind::loap:
                return loasp_fuse(h, fusion_signal(x, h, training), a_c);
        }
        throw ContractError("WrappedBlock::forward: unhandled fusion kind");
    }

    // Trainable tensors added by the wrapper, prefixed for checkpoints.
    // Host parameters are owned elsewhere and never appear here.
    void collect_params(const std::string& prefix, ParamList& out) const {
        auto put = [&out](std::string name, const Tensor& t) {
            out.push_back({std::move(name), t});
        };
        auto put_snake = [&](const std::string& base, const SnakeKernel& k) {
            put(base + ".weights", k.weights);
            put(base + ".pred_w", k.pred_w);
            put(base + ".pred_b", k.pred_b);
        };
        auto put_ds = [&](const std::string& base, const DSConvModule& d) {
            put_snake(base + ".axis_x", d.kernel_x);
            put_snake(base + ".axis_y", d.kernel_y);
        };
        auto put_bn = [&](const std::string& base, const BatchNorm& bn) {
            put(base + ".gamma", bn.gamma);
            put(base + ".beta", bn.beta);
        };
        switch (prior) {
            case PriorKind::lora:
                put(prefix + "lora.a", lora_a);
                put(prefix + "lora.b", lora_b);
                break;
            case PriorKind::dsconv:
                put_ds(prefix + "dsconv", *ds);
                break;
            case PriorKind::loasp:
                put(prefix + "losp.a_s", losp->a_s);
                put_bn(prefix + "losp.bn1", losp->bn1);
                put_ds(prefix + "losp.dsconv", losp->dsconv);
                put(prefix + "losp.b_s", losp->b_s);
                put_bn(prefix + "losp.bn2", losp->bn2);
                break;
        }
        switch (fusion) {
            case FusionKind::add:
                break;  // the fixed channel map carries no trainable state
            case FusionKind::adapter:
                put(prefix + "adapter.a", adapter->a);
                put(prefix + "adapter.b", adapter->b);
                break;
            case FusionKind::loap:
                put(prefix + "loap.a_f", loap->a_f);
                put(prefix + "loap.spline_c", loap->spline.coeff);
                put(prefix + "loap.b_f", loap->b_f);
                put(prefix + "a_c", a_c);
                break;
        }
    }

    // Non-trainable state that still belongs in checkpoints (BN statistics).
    void collect_buffers(const std::string& prefix, ParamList& out) const {
        if (prior != PriorKind::loasp) return;
        out.push_back({prefix + "losp.bn1.running_mean", losp->bn1.running_mean});
        out.push_back({prefix + "losp.bn1.running_var", losp->bn1.running_var});
        out.push_back({prefix + "losp.bn2.running_mean", losp->bn2.running_mean});
        out.push_back({prefix + "losp.bn2.running_var", losp->bn2.running_var});
    }
};

inline WrappedBlock wrap_block(HostBlock host, PriorKind prior, FusionKind fusion,
                               const BlockConfig& cfg, Rng& rng) {
    if (!host.forward) throw ContractError("wrap_block: host block has no forward function");
    if (host.c_in < 1 || host.c_out < 1)
        throw ContractError("wrap_block: host channel counts must be positive, got in=" +
                            std::to_string(host.c_in) + " out=" + std::to_string(host.c_out));
    if (host.stride < 1)
        throw ContractError("wrap_block: host stride must be positive, got " +
                            std::to_string(host.stride));
    if (cfg.r < 1)
        throw ConfigError("wrap_block: loasp.r must be a positive integer, got " +
                          std::to_string(cfg.r));

    WrappedBlock w;
    w.host = std::move(host);
    w.prior = prior;
    w.fusion = fusion;
    w.cfg = cfg;

    long c_st = 0;  // channel count of the prior signal s_t
    switch (prior) {
        case PriorKind::lora: {
            long c_h = cfg.c_hidden > 0 ? cfg.c_hidden : hidden_width(w.host.c_in);
            w.lora_a = detail::gaussian_kernel({c_h, w.host.c_in, 1, 1},
                                               1.0 / std::sqrt(static_cast<double>(w.host.c_in)), rng);
            w.lora_b = detail::zero_kernel({w.host.c_out, c_h, 1, 1});
            c_st = w.host.c_out;
            break;
        }
        case PriorKind::dsconv:
            w.ds.emplace(w.host.c_in, w.host.c_out, cfg.dsconv_k, rng);
            c_st = w.host.c_out;
            break;
        case PriorKind::loasp: {
            long c_h = cfg.c_hidden > 0 ? cfg.c_hidden : hidden_width(w.host.c_in);
            w.losp.emplace(w.host.c_in, c_h, cfg.r * w.host.stride, cfg.dsconv_k, rng);
            c_st = c_h;
            break;
        }
    }
    switch (fusion) {
        case FusionKind::add:
            if (c_st != w.host.c_out)
                w.add_proj = detail::identity_channel_map(w.host.c_out, c_st);
            break;
        case FusionKind::adapter: {
            long c_ad = cfg.c_hidden > 0 ? cfg.c_hidden : hidden_width(c_st);
            w.adapter.emplace(c_st, c_ad, w.host.c_out, rng);
            break;
        }
        case FusionKind::loap:
            w.loap_r = prior == PriorKind::loasp ? cfg.r : 1;
            w.loap.emplace(c_st, w.host.c_out, cfg.spline_p, cfg.spline_u, cfg.spline_lo,
                           cfg.spline_hi, rng);
            w.a_c = detail::zero_kernel({w.host.c_out, 1, 3, 3});
            break;
    }
    return w;
}

// Name parsing shared by config files, the CLI, and the harness. The paired
// check reports the whole cell so a typo in either half names every option.
inline std::pair<PriorKind, FusionKind> parse_cell(const std::string& prior,
                                                   const std::string& fusion) {
    std::optional<PriorKind> p;
    if (prior == "lora") p = PriorKind::lora;
    else if (prior == "dsconv") p = PriorKind::dsconv;
    else if (prior == "loasp") p = PriorKind::loasp;
    std::optional<FusionKind> f;
    if (fusion == "add") f = FusionKind::add;
    else if (fusion == "adapter") f = FusionKind::adapter;
    else if (fusion == "loap") f = FusionKind::loap;
    if (!p || !f)
        throw ConfigError("parse_cell: unknown ablation cell '" + prior + "/" + fusion +
                          "'; valid cells are " + valid_cells_listing());
    return {*p, *f};
}

// Name-based entry point used by config files and the CLI.
inline WrappedBlock wrap_block(HostBlock host, const std::string& prior, const std::string& fusion,
                               const BlockConfig& cfg, Rng& rng) {
    auto cell = parse_cell(prior, fusion);
    return wrap_block(std::move(host), cell.first, cell.second, cfg, rng);
}

// Parameters the wrapper adds on top of the host (trainable tensors only).
inline long added_param_count(const WrappedBlock& w) {
    ParamList ps;
    w.collect_params("", ps);
    long total = 0;
    for (const auto& p : ps)
        if (p.tensor.requires_grad()) total += p.tensor.size();
    return total;
}

}  // namespace loasp
