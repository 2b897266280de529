#pragma once

// A small residual classifier for the 3x64x64 synthetic images: a strided
// stem, four stages of two residual blocks at widths 16/32/64/128, global
// average pooling, and a 5-way linear head. Any of the eight blocks can host
// a plug-in wrapper; training code talks to block_forward so wrapped and
// plain blocks are interchangeable.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "loasp/blocks.hpp"
#include "loasp/ops.hpp"
#include "loasp/optim.hpp"
#include "loasp/synthetic.hpp"

namespace loasp {

struct BasicBlock {
    long c_in = 0, c_out = 0, stride = 1;
    Tensor w1;
    BatchNorm bn1;
    Tensor w2;
    BatchNorm bn2;
    Tensor w_proj;  // engaged with bn_proj only when extent or width changes
    BatchNorm bn_proj;

    BasicBlock(long c_in_, long c_out_, long stride_, Rng& rng)
        : c_in(c_in_), c_out(c_out_), stride(stride_) {
        if (c_in < 1 || c_out < 1 || stride < 1)
            throw ContractError("BasicBlock: channel counts and stride must be positive");
        w1 = detail::gaussian_kernel({c_out, c_in, 3, 3},
                                     std::sqrt(2.0 / static_cast<double>(9 * c_in)), rng);
        bn1.init(c_out);
        w2 = detail::gaussian_kernel({c_out, c_out, 3, 3},
                                     std::sqrt(2.0 / static_cast<double>(9 * c_out)), rng);
        bn2.init(c_out);
        if (stride != 1 || c_in != c_out) {
            w_proj = detail::gaussian_kernel({c_out, c_in, 1, 1},
                                             std::sqrt(2.0 / static_cast<double>(c_in)), rng);
            bn_proj.init(c_out);
        }
    }

    Tensor forward(const Tensor& x, bool training) const {
        Tensor t = relu(batch_norm(conv2d(x, w1, ConvOpts{stride, 1, 1}), bn1, training));
        t = batch_norm(conv2d(t, w2, ConvOpts{1, 1, 1}), bn2, training);
        Tensor skip = w_proj.defined()
                          ? batch_norm(conv2d(x, w_proj, ConvOpts{stride, 0, 1}), bn_proj, training)
                          : x;
        return relu(add(t, skip));
    }

    void collect_params(const std::string& prefix, ParamList& out) const {
        out.push_back({prefix + "w1", w1});
        out.push_back({prefix + "bn1.gamma", bn1.gamma});
        out.push_back({prefix + "bn1.beta", bn1.beta});
        out.push_back({prefix + "w2", w2});
        out.push_back({prefix + "bn2.gamma", bn2.gamma});
        out.push_back({prefix + "bn2.beta", bn2.beta});
        if (w_proj.defined()) {
            out.push_back({prefix + "proj.w", w_proj});
            out.push_back({prefix + "bn_proj.gamma", bn_proj.gamma});
            out.push_back({prefix + "bn_proj.beta", bn_proj.beta});
        }
    }

    void collect_buffers(const std::string& prefix, ParamList& out) const {
        out.push_back({prefix + "bn1.running_mean", bn1.running_mean});
        out.push_back({prefix + "bn1.running_var", bn1.running_var});
        out.push_back({prefix + "bn2.running_mean", bn2.running_mean});
        out.push_back({prefix + "bn2.running_var", bn2.running_var});
        if (w_proj.defined()) {
            out.push_back({prefix + "bn_proj.running_mean", bn_proj.running_mean});
            out.push_back({prefix + "bn_proj.running_var", bn_proj.running_var});
        }
    }
};

struct ToyBackbone {
    static constexpr long kBlockCount = 8;
    static constexpr long kNumClasses = 5;

    Tensor stem_w;
    BatchNorm stem_bn;
    // Blocks sit behind shared_ptr so a wrapper's host closure stays valid
    // when the backbone is copied or moved; copies share parameters anyway
    // because tensors are shared handles.
    std::vector<std::shared_ptr<BasicBlock>> blocks;
    std::vector<std::optional<WrappedBlock>> wrapped;
    Tensor head_w, head_b;

    explicit ToyBackbone(Rng& rng) {
        stem_w = detail::gaussian_kernel({16, 3, 3, 3}, std::sqrt(2.0 / 27.0), rng);
        stem_bn.init(16);
        const long widths[4] = {16, 32, 64, 128};
        long c_prev = 16;
        for (int stage = 0; stage < 4; ++stage) {
            long c = widths[stage];
            long first_stride = stage == 0 ? 1 : 2;
            blocks.push_back(std::make_shared<BasicBlock>(c_prev, c, first_stride, rng));
            blocks.push_back(std::make_shared<BasicBlock>(c, c, 1, rng));
            c_prev = c;
        }
        wrapped.resize(blocks.size());
        head_w = detail::gaussian_kernel({kNumClasses, 128}, std::sqrt(1.0 / 128.0), rng);
        head_b = Tensor::zeros({kNumClasses});
        head_b.set_requires_grad(true);
    }

    // 64x64 input -> conv stride 2 -> 32x32 -> 2x2 average pool -> 16x16,
    // which puts the four stages at extents 16/8/4/2.
    Tensor stem(const Tensor& x, bool training) const {
        if (x.rank() != 4 || x.dim(1) != 3)
            throw ShapeError("ToyBackbone: input must be [N,3,H,W], got " + shape_str(x.shape()));
        return avg_pool2(relu(batch_norm(conv2d(x, stem_w, ConvOpts{2, 1, 1}), stem_bn, training)));
    }

    void check_index(long t, const char* who) const {
        if (t < 0 || t >= kBlockCount)
            throw ContractError(std::string(who) + ": block index " + std::to_string(t) +
                                " outside [0, " + std::to_string(kBlockCount) + ")");
    }

    Tensor block_forward(long t, const Tensor& x, bool training) const {
        check_index(t, "block_forward");
        const std::size_t i = static_cast<std::size_t>(t);
        return wrapped[i] ? wrapped[i]->forward(x, training) : blocks[i]->forward(x, training);
    }

    // Activations entering block t: the stem followed by blocks [0, t).
    Tensor features_before_block(const Tensor& x, long t, bool training) const {
        if (t != kBlockCount) check_index(t, "features_before_block");
        Tensor h = stem(x, training);
        for (long b = 0; b < t; ++b) h = block_forward(b, h, training);
        return h;
    }

    Tensor forward(const Tensor& x, bool training) const {
        Tensor h = features_before_block(x, kBlockCount, training);
        return linear(global_avg_pool(h), head_w, head_b);
    }

    // Spatial extent entering each block for 64x64 input.
    static constexpr long kBlockInputExtent[kBlockCount] = {16, 16, 16, 8, 8, 4, 4, 2};

    void attach_at(long t, PriorKind prior, FusionKind fusion, const BlockConfig& cfg, Rng& rng) {
        check_index(t, "attach_at");
        const std::size_t i = static_cast<std::size_t>(t);
        std::shared_ptr<BasicBlock> bp = blocks[i];
        HostBlock host;
        host.forward = [bp](const Tensor& x, bool training) { return bp->forward(x, training); };
        host.c_in = bp->c_in;
        host.c_out = bp->c_out;
        host.stride = bp->stride;
        // The prior's down-scaling stride is r * host stride and cannot exceed
        // the incoming extent. Deep blocks of this toy net run at 4x4 and 2x2,
        // so ranks that are routine at full-image scale get clamped per site.
        BlockConfig local = cfg;
        if (local.r >= 1)
            local.r = std::max(1L, std::min(local.r, kBlockInputExtent[t] / bp->stride));
        wrapped[i] = wrap_block(std::move(host), prior, fusion, local, rng);
    }

    // Wraps every block; this is the configuration the experiments run.
    void attach_all(PriorKind prior, FusionKind fusion, const BlockConfig& cfg, Rng& rng) {
        for (long t = 0; t < kBlockCount; ++t) attach_at(t, prior, fusion, cfg, rng);
    }

    void attach_all_named(const std::string& prior, const std::string& fusion,
                          const BlockConfig& cfg, Rng& rng) {
        auto cell = parse_cell(prior, fusion);
        attach_all(cell.first, cell.second, cfg, rng);
    }

    bool attached(long t) const {
        check_index(t, "attached");
        return wrapped[static_cast<std::size_t>(t)].has_value();
    }

    const WrappedBlock& wrapped_at(long t) const {
        check_index(t, "wrapped_at");
        if (!wrapped[static_cast<std::size_t>(t)])
            throw ConfigError("wrapped_at: block " + std::to_string(t) + " has no plug-in attached");
        return *wrapped[static_cast<std::size_t>(t)];
    }

    void collect_params(ParamList& out) const {
        out.push_back({"stem.w", stem_w});
        out.push_back({"stem.bn.gamma", stem_bn.gamma});
        out.push_back({"stem.bn.beta", stem_bn.beta});
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            std::string prefix = "block" + std::to_string(i) + ".";
            blocks[i]->collect_params(prefix, out);
            if (wrapped[i]) wrapped[i]->collect_params(prefix + "plug.", out);
        }
        out.push_back({"head.w", head_w});
        out.push_back({"head.b", head_b});
    }

    void collect_buffers(ParamList& out) const {
        out.push_back({"stem.bn.running_mean", stem_bn.running_mean});
        out.push_back({"stem.bn.running_var", stem_bn.running_var});
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            std::string prefix = "block" + std::to_string(i) + ".";
            blocks[i]->collect_buffers(prefix, out);
            if (wrapped[i]) wrapped[i]->collect_buffers(prefix + "plug.", out);
        }
    }

    // Everything a checkpoint needs: trainable tensors plus BN statistics.
    ParamList state() const {
        ParamList out;
        collect_params(out);
        collect_buffers(out);
        return out;
    }
};

// Stacks sample images into one [N,3,H,W] batch input tensor.
inline Tensor batch_images(const std::vector<SyntheticSample>& samples,
                           const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw ContractError("batch_images: empty index list");
    long n = static_cast<long>(indices.size());
    const Tensor& first = samples.at(indices[0]).image;
    long c = first.dim(0), h = first.dim(1), w = first.dim(2);
    Tensor out = Tensor::zeros({n, c, h, w});
    double* po = out.data();
    long per = c * h * w;
    for (long i = 0; i < n; ++i) {
        const Tensor& img = samples.at(indices[static_cast<std::size_t>(i)]).image;
        if (img.size() != per)
            throw ShapeError("batch_images: sample image shapes disagree");
        const double* pi = img.data();
        for (long t = 0; t < per; ++t) po[i * per + t] = pi[t];
    }
    return out;
}

}  // namespace loasp
