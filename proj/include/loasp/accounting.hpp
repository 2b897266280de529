#pragma once

#include <algorithm>
#include <ostream>
#include <string>
#include <vector>

#include "loasp/blocks.hpp"
#include "loasp/common.hpp"

namespace loasp {

// -------------------- analytic cost model --------------------
//
// All FLOP figures are multiply-accumulate counts. Elementwise residual adds,
// bias adds, and nearest-neighbor copies are excluded; they are at least an
// order of magnitude below the convolution terms everywhere in the catalog.

// Cost of the down-scaled projection pair: a K x K convolution evaluated on
// the reduced grid. Extents below r still produce one output position.
inline long proj_flops(long k, long c_in, long c_out, long h, long w, long r) {
    if (r < 1) throw ContractError("proj_flops: rank must be >= 1, got " + std::to_string(r));
    if (k < 1 || c_in < 1 || c_out < 1 || h < 1 || w < 1)
        throw ContractError("proj_flops: all shape arguments must be positive");
    long hr = std::max<long>(1, h / r);
    long wr = std::max<long>(1, w / r);
    return k * k * c_in * c_out * hr * wr;
}

// Aggregate spline evaluation cost over one feature plane.
inline long spline_flops(long h, long w, long p, long u) {
    return h * w * (p + 1) * u;
}

// The aggregate five-projection bound for one wrapped block.
inline long loasp_flops(long k, long c_in, long c_out, long h, long w, long r) {
    return 5 * proj_flops(k, c_in, c_out, h, w, r);
}

// -------------------- parameter inventory --------------------

struct BlockShape {
    long k = 3;      // baseline kernel size of the host convolution
    long c_in = 0;
    long c_out = 0;
    long h = 0;
    long w = 0;
    long count = 1;  // multiplicity of identical blocks
};

struct ComponentCost {
    std::string name;
    long params = 0;
    long flops = 0;
};

struct BlockCost {
    BlockShape shape;
    long c_hidden = 0;
    std::vector<ComponentCost> components;
    long params = 0;          // one block, sum over components
    long flops = 0;           // one block, fine-grained sum
    long flops_bound = 0;     // one block, aggregate 5x bound
    long baseline_flops = 0;  // one full-resolution K x K convolution
};

struct CostReport {
    std::vector<BlockCost> blocks;       // one entry per catalog row
    long params_total = 0;               // multiplicities applied
    long flops_total = 0;
    long flops_bound_total = 0;
    long baseline_total = 0;
};

// Exact per-component inventory of one wrapped block. The offset predictor
// contributes k weights plus one bias per tap and axis (2k biases per block);
// the classic eight-entry inventory omits those biases, so the dsconv row
// here is 2k larger than that reading. The analytic count must match the
// instantiated module exactly, and the module carries the biases.
inline BlockCost block_cost(const BlockShape& s, const BlockConfig& cfg) {
    if (s.k < 1 || s.c_in < 1 || s.c_out < 1 || s.h < 1 || s.w < 1 || s.count < 1)
        throw ContractError("block_cost: every BlockShape field must be positive");
    BlockCost out;
    out.shape = s;
    long ch = cfg.c_hidden > 0 ? cfg.c_hidden : hidden_width(s.c_in);
    out.c_hidden = ch;

    long k = cfg.dsconv_k;
    long p = cfg.spline_p;
    long u = cfg.spline_u;
    long hr = std::max<long>(1, s.h / cfg.r);
    long wr = std::max<long>(1, s.w / cfg.r);
    long red = hr * wr;       // reduced grid
    long full = s.h * s.w;    // host grid

    out.components = {
        {"a_s", s.c_in * ch, s.c_in * ch * red},
        {"dsconv", 2 * (k * ch * ch + 9 * ch * k + k),
         2 * (k * ch * ch * red + 9 * ch * k * red)},
        {"b_s", ch * ch, ch * ch * red},
        {"bn", 4 * ch, 4 * ch * red},
        {"a_f", ch * ch, ch * ch * red},
        {"spline", (u + p) * ch, ch * spline_flops(hr, wr, p, u)},
        {"b_f", ch * s.c_out, ch * s.c_out * full},
        {"a_c", 9 * s.c_out, 9 * s.c_out * full},
    };
    for (const ComponentCost& c : out.components) {
        out.params += c.params;
        out.flops += c.flops;
    }
    out.flops_bound = loasp_flops(s.k, s.c_in, s.c_out, s.h, s.w, cfg.r);
    out.baseline_flops = s.k * s.k * s.c_in * s.c_out * s.h * s.w;
    return out;
}

inline CostReport count_added_params(const std::vector<BlockShape>& catalog,
                                     const BlockConfig& cfg) {
    if (catalog.empty()) throw ContractError("count_added_params: catalog is empty");
    CostReport report;
    for (const BlockShape& s : catalog) {
        BlockCost bc = block_cost(s, cfg);
        report.params_total += bc.params * s.count;
        report.flops_total += bc.flops * s.count;
        report.flops_bound_total += bc.flops_bound * s.count;
        report.baseline_total += bc.baseline_flops * s.count;
        report.blocks.push_back(std::move(bc));
    }
    return report;
}

// The standard 16-block layout at a 224 x 224 input, grouped by stage.
inline std::vector<BlockShape> resnet50_catalog() {
    return {
        {3, 256, 256, 56, 56, 3},
        {3, 512, 512, 28, 28, 4},
        {3, 1024, 1024, 14, 14, 6},
        {3, 2048, 2048, 7, 7, 3},
    };
}

// One row per physical block and component:
//   block_id,channels,component,params,flops
// Multiplicities are expanded so block_id enumerates every attachment point.
inline void write_cost_csv(const CostReport& report, std::ostream& os) {
    os << "block_id,channels,component,params,flops\n";
    long block_id = 0;
    for (const BlockCost& bc : report.blocks) {
        for (long rep = 0; rep < bc.shape.count; ++rep) {
            for (const ComponentCost& c : bc.components) {
                os << block_id << ',' << bc.shape.c_in << ',' << c.name << ',' << c.params << ','
                   << c.flops << '\n';
            }
            ++block_id;
        }
    }
}

}  // namespace loasp
