#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "loasp/backbone.hpp"
#include "loasp/checkpoint.hpp"
#include "loasp/metrics.hpp"
#include "test_util.hpp"

using namespace loasp;

namespace {

Tensor random_batch(long n, Rng& rng) {
    Tensor x = Tensor::zeros({n, 3, 64, 64});
    double* p = x.data();
    for (long i = 0; i < x.size(); ++i) p[i] = rng.uniform(0.0, 1.0);
    return x;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        ADD_FAILURE() << "shape mismatch: " << shape_str(a.shape()) << " vs " << shape_str(b.shape());
        return std::numeric_limits<double>::infinity();
    }
    double worst = 0.0;
    for (long i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

}  // namespace

TEST(Backbone, OutputShapeIsFiveLogits) {
    Rng rng(1);
    ToyBackbone net(rng);
    Tensor x = random_batch(2, rng);
    Tensor logits = net.forward(x, false);
    ASSERT_EQ(logits.rank(), 2);
    EXPECT_EQ(logits.dim(0), 2);
    EXPECT_EQ(logits.dim(1), ToyBackbone::kNumClasses);
    for (long i = 0; i < logits.size(); ++i) EXPECT_TRUE(std::isfinite(logits.data()[i]));
}

TEST(Backbone, StageExtentsFollowTheStridePlan) {
    Rng rng(2);
    ToyBackbone net(rng);
    Tensor x = random_batch(1, rng);
    struct Want {
        long t, c, hw;
    };
    // blocks 0..1 run at 16x16 width 16, 2..3 at 8x8 width 32,
    // 4..5 at 4x4 width 64, 6..7 at 2x2 width 128
    const Want wants[] = {{0, 16, 16}, {2, 16, 16}, {3, 32, 8}, {5, 64, 4}, {7, 128, 2}, {8, 128, 2}};
    for (const Want& w : wants) {
        Tensor h = net.features_before_block(x, w.t, false);
        EXPECT_EQ(h.dim(1), w.c) << "before block " << w.t;
        EXPECT_EQ(h.dim(2), w.hw) << "before block " << w.t;
        EXPECT_EQ(h.dim(3), w.hw) << "before block " << w.t;
    }
}

TEST(Backbone, ConstructionIsDeterministicGivenSeed) {
    Rng ra(5), rb(5), rx(6);
    ToyBackbone a(ra), b(rb);
    Tensor x = random_batch(2, rx);
    EXPECT_EQ(max_abs_diff(a.forward(x, false), b.forward(x, false)), 0.0);
}

TEST(Backbone, AttachAllPreservesFunctionAtInit) {
    Rng rng(7);
    ToyBackbone plain(rng);
    Tensor x = random_batch(2, rng);
    Tensor base = plain.forward(x, false);

    for (auto cell : {std::pair<PriorKind, FusionKind>{PriorKind::loasp, FusionKind::loap},
                      {PriorKind::lora, FusionKind::add}}) {
        Rng twin(7);
        ToyBackbone net(twin);
        Rng attach_rng(101);
        net.attach_all(cell.first, cell.second, BlockConfig{}, attach_rng);
        for (long t = 0; t < ToyBackbone::kBlockCount; ++t) EXPECT_TRUE(net.attached(t));
        EXPECT_EQ(max_abs_diff(net.forward(x, false), base), 0.0)
            << to_string(cell.first) << "/" << to_string(cell.second);
    }
}

TEST(Backbone, AttachedBlocksTrainEndToEnd) {
    Rng rng(9);
    ToyBackbone net(rng);
    Rng attach_rng(10);
    net.attach_all(PriorKind::loasp, FusionKind::loap, BlockConfig{}, attach_rng);

    Tensor x = random_batch(4, rng);
    std::vector<long> labels = {0, 1, 2, 3};
    Tensor loss = cross_entropy(net.forward(x, true), labels);
    backward(loss);

    ParamList params;
    net.collect_params(params);
    bool host_touched = false, plug_touched = false;
    for (const auto& p : params) {
        double g = 0.0;
        for (long i = 0; i < p.tensor.size(); ++i) g = std::max(g, std::abs(p.tensor.grad()[i]));
        EXPECT_TRUE(std::isfinite(g)) << p.name;
        if (p.name == "block3.w1" && g > 0.0) host_touched = true;
        if (p.name.find("plug.loap.b_f") != std::string::npos && g > 0.0) plug_touched = true;
    }
    EXPECT_TRUE(host_touched);
    EXPECT_TRUE(plug_touched);
}

TEST(Backbone, ParamsAndBuffersAreUniquelyNamed) {
    Rng rng(11);
    ToyBackbone net(rng);
    ParamList params, buffers;
    net.collect_params(params);
    net.collect_buffers(buffers);
    // stem 3 + three projection blocks of 9 + five plain blocks of 6 + head 2
    EXPECT_EQ(params.size(), 62u);
    // stem 2 + three projection blocks of 6 + five plain blocks of 4
    EXPECT_EQ(buffers.size(), 40u);

    Rng attach_rng(12);
    net.attach_all(PriorKind::loasp, FusionKind::loap, BlockConfig{}, attach_rng);
    ParamList all = net.state();
    EXPECT_EQ(all.size(), 62u + 40u + 8u * (16u + 4u));
    std::set<std::string> names;
    for (const auto& p : all) EXPECT_TRUE(names.insert(p.name).second) << "duplicate " << p.name;
}

TEST(Backbone, CheckpointRoundTripIsBitExact) {
    Rng rng(13);
    ToyBackbone net(rng);
    Rng attach_rng(14);
    net.attach_all(PriorKind::loasp, FusionKind::loap, BlockConfig{}, attach_rng);

    // move every tensor off its initialization, including BN statistics
    Tensor x = random_batch(4, rng);
    std::vector<long> labels = {4, 3, 2, 1};
    ParamList params;
    net.collect_params(params);
    AdamW opt(params);
    Tensor loss = cross_entropy(net.forward(x, true), labels);
    backward(loss);
    opt.step();

    std::string path = testing::TempDir() + "backbone.ckpt";
    save_checkpoint(path, net.state());

    Rng other(4242);
    ToyBackbone restored(other);
    Rng attach_other(4343);
    restored.attach_all(PriorKind::loasp, FusionKind::loap, BlockConfig{}, attach_other);
    restore_into(restored.state(), load_checkpoint(path));

    ParamList a = net.state(), b = restored.state();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        EXPECT_EQ(max_abs_diff(a[i].tensor, b[i].tensor), 0.0) << a[i].name;
    EXPECT_EQ(max_abs_diff(net.forward(x, false), restored.forward(x, false)), 0.0);
}

TEST(Backbone, RejectsBadInputAndIndices) {
    Rng rng(15);
    ToyBackbone net(rng);
    Tensor bad = Tensor::zeros({1, 4, 64, 64});
    EXPECT_THROW(net.forward(bad, false), ShapeError);
    Tensor x = random_batch(1, rng);
    EXPECT_THROW(net.features_before_block(x, -1, false), ContractError);
    EXPECT_THROW(net.features_before_block(x, 9, false), ContractError);
    EXPECT_THROW(net.wrapped_at(0), ConfigError);
    Rng attach_rng(16);
    EXPECT_THROW(net.attach_at(8, PriorKind::lora, FusionKind::add, BlockConfig{}, attach_rng),
                 ContractError);
}

TEST(BatchImages, StacksSamplesInOrder) {
    std::vector<SyntheticSample> samples = generate_dataset(3, builtin_domain("A"), 3, 0);
    Tensor batch = batch_images(samples, {2, 0});
    ASSERT_EQ(batch.rank(), 4);
    EXPECT_EQ(batch.dim(0), 2);
    EXPECT_EQ(batch.dim(1), 3);
    EXPECT_EQ(batch.dim(2), 64);
    EXPECT_EQ(batch.dim(3), 64);
    EXPECT_EQ(batch.data()[0], samples[2].image.data()[0]);
    EXPECT_EQ(batch.data()[batch.size() - 1], samples[0].image.data()[samples[0].image.size() - 1]);
    EXPECT_THROW(batch_images(samples, {}), ContractError);
}
