#include <gtest/gtest.h>

#include <sstream>
#include <string>
#include <vector>

#include "loasp/accounting.hpp"
#include "loasp/blocks.hpp"
#include "loasp/common.hpp"
#include "test_util.hpp"

using loasp::added_param_count;
using loasp::BlockConfig;
using loasp::BlockCost;
using loasp::BlockShape;
using loasp::block_cost;
using loasp::ContractError;
using loasp::CostReport;
using loasp::count_added_params;
using loasp::HostBlock;
using loasp::loasp_flops;
using loasp::proj_flops;
using loasp::resnet50_catalog;
using loasp::Rng;
using loasp::spline_flops;
using loasp::Tensor;
using loasp::wrap_block;
using loasp::write_cost_csv;

TEST(ProjFlops, MatchesHandEvaluations) {
    EXPECT_EQ(proj_flops(3, 8, 8, 16, 16, 4), 9216);  // 9 * 64 * 4 * 4
    EXPECT_EQ(proj_flops(1, 256, 20, 56, 56, 4), 256 * 20 * 14 * 14);
    // r = 1 is the full-resolution convolution cost
    EXPECT_EQ(proj_flops(3, 8, 8, 16, 16, 1), 9 * 64 * 256);
    // doubling r divides by 4 when both extents stay divisible
    EXPECT_EQ(proj_flops(3, 8, 8, 16, 16, 2), 4 * proj_flops(3, 8, 8, 16, 16, 4));
    // extents below r still deliver one output position
    EXPECT_EQ(proj_flops(3, 4, 4, 2, 3, 4), 9 * 16);
    EXPECT_THROW(proj_flops(3, 8, 8, 16, 16, 0), ContractError);
    EXPECT_THROW(proj_flops(0, 8, 8, 16, 16, 1), ContractError);
}

TEST(SplineFlops, MatchesHandEvaluations) {
    EXPECT_EQ(spline_flops(8, 8, 2, 6), 1152);  // 64 * 3 * 6
    EXPECT_EQ(spline_flops(8, 8, 0, 1), 64);
    EXPECT_EQ(spline_flops(1, 1, 3, 6), 24);
}

TEST(SplineFlops, NegligibleNextToProjectionWheneverHypothesisHolds) {
    struct Case {
        long k, c, h, w, p, u;
    };
    const Case cases[] = {{3, 256, 56, 56, 3, 6}, {3, 64, 16, 16, 4, 7}, {1, 8, 4, 4, 0, 3}};
    for (const Case& t : cases) {
        ASSERT_LT((t.p + 1) * t.u, t.k * t.k * t.c * t.c);
        EXPECT_LT(spline_flops(t.h, t.w, t.p, t.u), proj_flops(t.k, t.c, t.c, t.h, t.w, 1));
    }
}

TEST(LoaspFlops, FiveTimesProjection) {
    EXPECT_EQ(loasp_flops(3, 8, 8, 16, 16, 4), 46080);  // 5 * 9216
    for (long r : {1L, 2L, 3L, 4L, 8L})
        EXPECT_EQ(loasp_flops(3, 64, 64, 32, 32, r), 5 * proj_flops(3, 64, 64, 32, 32, r));
    // r = 1 lands at five full-resolution convolutions, above the baseline
    EXPECT_EQ(loasp_flops(3, 8, 8, 16, 16, 1), 5 * 9 * 64 * 256);
}

TEST(LoaspFlops, CheaperThanFullConvolutionFromRankThree) {
    for (const BlockShape& s : resnet50_catalog()) {
        long baseline = s.k * s.k * s.c_in * s.c_out * s.h * s.w;
        for (long r : {3L, 4L, 8L})
            EXPECT_LT(loasp_flops(s.k, s.c_in, s.c_out, s.h, s.w, r), baseline)
                << "C=" << s.c_in << " r=" << r;
        // Below rank 3 the bound may exceed the baseline; record one concrete
        // case without asserting a universal direction.
        long r2 = loasp_flops(s.k, s.c_in, s.c_out, s.h, s.w, 2);
        EXPECT_GT(r2, 0);
    }
    // a shape where rank 2 is genuinely more expensive than the baseline
    EXPECT_GT(loasp_flops(3, 8, 8, 16, 16, 2), 9L * 64 * 256);
}

TEST(Resnet50Catalog, MatchesPublishedLayout) {
    std::vector<BlockShape> cat = resnet50_catalog();
    ASSERT_EQ(cat.size(), 4u);
    long total = 0;
    for (const BlockShape& s : cat) total += s.count;
    EXPECT_EQ(total, 16);
    EXPECT_EQ(cat[0].count, 3);
    EXPECT_EQ(cat[1].count, 4);
    EXPECT_EQ(cat[2].count, 6);
    EXPECT_EQ(cat[3].count, 3);
    EXPECT_EQ(cat[0].c_in, 256);
    EXPECT_EQ(cat[0].h, 56);
    EXPECT_EQ(cat[1].c_in, 512);
    EXPECT_EQ(cat[1].h, 28);
    EXPECT_EQ(cat[2].c_in, 1024);
    EXPECT_EQ(cat[2].h, 14);
    EXPECT_EQ(cat[3].c_in, 2048);
    EXPECT_EQ(cat[3].h, 7);
    for (const BlockShape& s : cat) {
        EXPECT_EQ(s.k, 3);
        EXPECT_EQ(s.c_in, s.c_out);
        EXPECT_EQ(s.h, s.w);
    }
}

TEST(CountAddedParams, SingleWideBlockMatchesHandTotal) {
    BlockCost bc = block_cost({3, 256, 256, 56, 56, 1}, BlockConfig{});
    EXPECT_EQ(bc.c_hidden, 20);
    // a_s 5120 + dsconv 10458 + b_s 400 + bn 80 + a_f 400 + spline 180
    // + b_f 5120 + a_c 2304
    EXPECT_EQ(bc.params, 24062);
    // The eight-entry inventory without the 2k offset-predictor biases is the
    // other defensible reading; keep the bias share visible so both totals
    // stay auditable.
    long bias_share = 2 * BlockConfig{}.dsconv_k;
    EXPECT_EQ(bc.params - bias_share, 24044);
}

TEST(CountAddedParams, CatalogTotalLandsInsideBudgetBand) {
    CostReport report = count_added_params(resnet50_catalog(), BlockConfig{});
    EXPECT_EQ(report.params_total, 6513336);
    EXPECT_GE(report.params_total, 4720000);
    EXPECT_LE(report.params_total, 7080000);
}

TEST(CountAddedParams, ParameterTotalIgnoresRank) {
    std::vector<BlockShape> cat = resnet50_catalog();
    BlockConfig a, b, c;
    a.r = 1;
    b.r = 4;
    c.r = 8;
    EXPECT_EQ(count_added_params(cat, a).params_total, count_added_params(cat, b).params_total);
    EXPECT_EQ(count_added_params(cat, b).params_total, count_added_params(cat, c).params_total);
    // FLOPs do move with rank
    EXPECT_GT(count_added_params(cat, a).flops_total, count_added_params(cat, c).flops_total);
}

TEST(CountAddedParams, TotalsAreComponentSums) {
    CostReport report = count_added_params(resnet50_catalog(), BlockConfig{});
    long params = 0, flops = 0;
    for (const BlockCost& bc : report.blocks) {
        long bp = 0, bf = 0;
        for (const auto& comp : bc.components) {
            bp += comp.params;
            bf += comp.flops;
        }
        EXPECT_EQ(bp, bc.params);
        EXPECT_EQ(bf, bc.flops);
        params += bp * bc.shape.count;
        flops += bf * bc.shape.count;
    }
    EXPECT_EQ(params, report.params_total);
    EXPECT_EQ(flops, report.flops_total);
}

TEST(CountAddedParams, RejectsBadInput) {
    EXPECT_THROW(count_added_params({}, BlockConfig{}), ContractError);
    EXPECT_THROW(block_cost({3, 0, 8, 16, 16, 1}, BlockConfig{}), ContractError);
    EXPECT_THROW(block_cost({3, 8, 8, 16, 16, 0}, BlockConfig{}), ContractError);
}

TEST(CountAddedParams, AnalyticCountEqualsInstantiatedModules) {
    Rng rng(521);
    BlockConfig cfg;
    for (const BlockShape& s : resnet50_catalog()) {
        BlockCost analytic = block_cost(s, cfg);
        HostBlock host;
        host.c_in = s.c_in;
        host.c_out = s.c_out;
        host.stride = 1;
        host.forward = [](const Tensor& x, bool) { return x; };
        long actual = added_param_count(wrap_block(host, "loasp", "loap", cfg, rng));
        EXPECT_EQ(analytic.params, actual) << "C=" << s.c_in;
    }
}

TEST(CostCsv, RowPerBlockAndComponentDeterministically) {
    CostReport report = count_added_params(resnet50_catalog(), BlockConfig{});
    std::ostringstream first, second;
    write_cost_csv(report, first);
    write_cost_csv(report, second);
    EXPECT_EQ(first.str(), second.str());

    std::istringstream in(first.str());
    std::string line;
    ASSERT_TRUE(std::getline(in, line));
    EXPECT_EQ(line, "block_id,channels,component,params,flops");
    long rows = 0;
    long param_sum = 0;
    while (std::getline(in, line)) {
        ++rows;
        // block_id,channels,component,params,flops
        std::size_t p3 = line.rfind(',');
        std::size_t p2 = line.rfind(',', p3 - 1);
        param_sum += std::stol(line.substr(p2 + 1, p3 - p2 - 1));
    }
    EXPECT_EQ(rows, 16 * 8);
    EXPECT_EQ(param_sum, report.params_total);
}
