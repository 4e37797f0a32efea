#include <doctest.h>

#include <cmath>
#include <random>

#include "bdg/network.hpp"
#include "gating.hpp"
#include "support.hpp"

using namespace bdg;
using testing::random_tensor;

namespace {

NetworkConfig config_at(int size) {
    NetworkConfig cfg;
    cfg.input_size = size;
    return cfg;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(static_cast<double>(t[i]))) return false;
    }
    return true;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("config validation") {
    NetworkConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.input_size = 100;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = NetworkConfig{};
    cfg.skip_levels.clear();
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.skip_levels = {5};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = NetworkConfig{};
    cfg.decoder_channels = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("toy encoder stage sizes") {
    std::mt19937_64 rng(1);
    for (auto [size, expect] : std::vector<std::pair<int, std::array<int, 4>>>{{352, {88, 44, 22, 11}}, {32, {8, 4, 2, 1}}}) {
        BDGNet<float> net(config_at(size), 1);
        const EncoderOutput<float> enc =
            net.encode(Var<float>(random_tensor<float>(Shape{2, 3, size, size}, rng)), ForwardContext{});
        const std::array<int, 4> ch{16, 32, 64, 128};
        CHECK(enc.stem.shape() == Shape{2, 16, size / 2, size / 2});
        for (int s = 0; s < 4; ++s) CHECK(enc.stages[s].shape() == Shape{2, ch[s], expect[s], expect[s]});
    }
}

TEST_CASE("receptive field block reduces channels only") {
    std::mt19937_64 rng(2);
    InitRng init(2);
    ReceptiveFieldBlock<float> a(64, 32, init), b(128, 32, init);
    ForwardContext ctx;
    CHECK(a.forward(Var<float>(random_tensor<float>(Shape{1, 64, 22, 22}, rng)), ctx).shape() == Shape{1, 32, 22, 22});
    const Var<float> out = b.forward(Var<float>(Tensor<float>(Shape{1, 128, 11, 11})), ctx);
    CHECK(out.shape() == Shape{1, 32, 11, 11});
    CHECK(all_finite(out.value()));
}

TEST_CASE("aggregation keeps the high-resolution shape") {
    std::mt19937_64 rng(3);
    InitRng init(3);
    Aggregation<float> agg(32, init);
    ForwardContext ctx;
    auto run = [&](int hi) {
        return agg.forward(Var<float>(random_tensor<float>(Shape{1, 32, hi, hi}, rng)),
                           Var<float>(random_tensor<float>(Shape{1, 32, hi / 2, hi / 2}, rng)), ctx)
            .shape();
    };
    CHECK(run(44) == Shape{1, 32, 44, 44});
    CHECK(run(2) == Shape{1, 32, 2, 2});
    CHECK_THROWS_AS(agg.forward(Var<float>(Tensor<float>(Shape{1, 32, 4, 4})), Var<float>(Tensor<float>(Shape{1, 32, 3, 3})), ctx),
                    std::invalid_argument);
}

TEST_CASE("boundary branch resolution ladder and range") {
    std::mt19937_64 rng(4);
    InitRng init(4);
    BoundaryGenerator<float> gen({16, 32, 64, 128}, 32, init);
    ForwardTrace trace;
    ForwardContext ctx{false, &trace};
    const Var<float> out = gen.forward(Var<float>(random_tensor<float>(Shape{2, 32, 44, 44}, rng, -3, 3)),
                                       Var<float>(random_tensor<float>(Shape{2, 64, 22, 22}, rng, -3, 3)),
                                       Var<float>(random_tensor<float>(Shape{2, 128, 11, 11}, rng, -3, 3)), ctx);
    CHECK(out.shape() == Shape{2, 1, 352, 352});
    CHECK(trace.aggregation_low == Shape{2, 32, 22, 22});
    CHECK(trace.aggregation_high == Shape{2, 32, 44, 44});
    for (std::size_t i = 0; i < out.value().numel(); ++i) {
        REQUIRE(out.value()[i] >= 0.0f);
        REQUIRE(out.value()[i] <= 1.0f);
    }
}

TEST_CASE("decoder stage shapes and parameter counts") {
    std::mt19937_64 rng(5);
    InitRng init(5);
    GuidedDecoderA<float> a(16, 32, 32, init);
    GuidedDecoderB<float> b(32, 32, init);
    ForwardContext ctx;
    const Var<float> bdm(random_tensor<float>(Shape{1, 1, 352, 352}, rng, 0, 1));
    CHECK(a.forward(Var<float>(random_tensor<float>(Shape{1, 16, 88, 88}, rng)),
                    Var<float>(random_tensor<float>(Shape{1, 32, 44, 44}, rng)), bdm, ctx)
              .shape() == Shape{1, 32, 88, 88});
    CHECK(b.forward(Var<float>(random_tensor<float>(Shape{1, 32, 88, 88}, rng)), bdm, ctx).shape() ==
          Shape{1, 32, 176, 176});
    GuidedDecoderA<float> a_same(32, 32, 32, init);
    CHECK(b.parameter_count() < a_same.parameter_count());
}

TEST_CASE("full network output shapes at several resolutions") {
    std::mt19937_64 rng(6);
    for (int size : {352, 128, 256}) {
        BDGNet<float> net(config_at(size), 6);
        ForwardTrace trace;
        const SegmentationOutput<float> out =
            net.forward(Var<float>(random_tensor<float>(Shape{1, 3, size, size}, rng)), ForwardContext{false, &trace});
        CHECK(out.logits.shape() == Shape{1, 1, size, size});
        CHECK(out.bdm.shape() == Shape{1, 1, size, size});
        CHECK(trace.aggregation_low.h == size / 16);
        CHECK(trace.aggregation_high.h == size / 8);
        REQUIRE(trace.decoder_stages.size() == 4);
        for (int i = 0; i < 4; ++i) CHECK(trace.decoder_stages[i].h == size >> (4 - i));
    }
    BDGNet<float> net(config_at(128), 6);
    CHECK(net.forward(Var<float>(random_tensor<float>(Shape{2, 3, 128, 128}, rng)), ForwardContext{}).logits.shape() ==
          Shape{2, 1, 128, 128});
    CHECK_THROWS_AS(net.forward(Var<float>(Tensor<float>(Shape{1, 3, 100, 100})), ForwardContext{}), std::invalid_argument);
}

TEST_CASE("evaluation-mode forward is deterministic") {
    std::mt19937_64 rng(7);
    BDGNet<float> net(config_at(64), 7);
    const Var<float> x(random_tensor<float>(Shape{2, 3, 64, 64}, rng));
    const auto a = net.forward(x, ForwardContext{});
    const auto b = net.forward(x, ForwardContext{});
    CHECK(a.logits.value() == b.logits.value());
    CHECK(a.bdm.value() == b.bdm.value());
}

TEST_CASE("same seed builds the same weights") {
    BDGNet<float> a(config_at(64), 9), b(config_at(64), 9), c(config_at(64), 10);
    auto sa = a.state(), sb = b.state(), sc = c.state();
    REQUIRE(sa.size() == sb.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < sa.size(); ++i) {
        CHECK(sa[i].name == sb[i].name);
        CHECK(*sa[i].tensor == *sb[i].tensor);
        any_diff |= !(*sa[i].tensor == *sc[i].tensor);
    }
    CHECK(any_diff);
}

TEST_CASE("ablation switches") {
    std::mt19937_64 rng(8);
    const Var<float> x(random_tensor<float>(Shape{1, 3, 64, 64}, rng));
    NetworkConfig cfg = config_at(64);
    cfg.use_bdgm = false;
    BDGNet<float> no_gen(cfg, 1);
    const auto o1 = no_gen.forward(x, ForwardContext{});
    CHECK_FALSE(o1.has_bdm);
    CHECK(o1.logits.shape() == Shape{1, 1, 64, 64});
    for (const auto& e : no_gen.state()) CHECK(e.name.rfind("boundary.", 0) != 0);

    cfg = config_at(64);
    cfg.use_bdgd = false;
    BDGNet<float> plain(cfg, 1);
    for (auto& stage : plain.decoder()) CHECK(std::holds_alternative<PlainDecoder<float>>(stage));
    CHECK(plain.forward(x, ForwardContext{}).logits.shape() == Shape{1, 1, 64, 64});

    cfg = config_at(64);
    cfg.skip_levels = {1, 2, 3, 4};
    BDGNet<float> all_skips(cfg, 1);
    for (auto& stage : all_skips.decoder()) CHECK(std::holds_alternative<GuidedDecoderA<float>>(stage));
    CHECK(cfg.bdgd_a_stages() == 4);
    CHECK(all_skips.forward(x, ForwardContext{}).logits.shape() == Shape{1, 1, 64, 64});

    BDGNet<float> standard(config_at(64), 1);
    int a_count = 0;
    for (auto& stage : standard.decoder()) a_count += std::holds_alternative<GuidedDecoderA<float>>(stage);
    CHECK(a_count == 2);
    CHECK(std::holds_alternative<GuidedDecoderA<float>>(standard.decoder()[0]));
    CHECK(std::holds_alternative<GuidedDecoderA<float>>(standard.decoder()[1]));
}

TEST_CASE("detached gates stop decoder gradients reaching the boundary branch") {
    std::mt19937_64 rng(9);
    const Var<double> x(random_tensor<double>(Shape{1, 3, 32, 32}, rng));
    auto head_grad_norm = [&](bool gate_gradients) {
        NetworkConfig cfg = config_at(32);
        cfg.gate_gradients = gate_gradients;
        BDGNet<double> net(cfg, 3);
        const auto out = net.forward(x, ForwardContext{true, nullptr});
        backward(ops::sum(out.logits));
        double norm = 0.0;
        const auto& g = net.boundary().head.weight.grad();
        for (std::size_t i = 0; i < g.numel(); ++i) norm += std::fabs(g[i]);
        return norm;
    };
    CHECK(head_grad_norm(true) > 0.0);
    CHECK(head_grad_norm(false) == 0.0);
}

TEST_CASE("gating laws: a zero map removes the gated branches, a unit map is the identity") {
    std::mt19937_64 rng(10);
    InitRng init(10);
    ForwardContext ctx;
    GuidedDecoderA<double> a(6, 5, 4, init);
    GuidedDecoderB<double> b(5, 4, init);
    const Var<double> skip(random_tensor<double>(Shape{2, 6, 16, 16}, rng));
    const Var<double> prev(random_tensor<double>(Shape{2, 5, 8, 8}, rng));
    const Var<double> zeros(Tensor<double>(Shape{2, 1, 32, 32}, 0.0));
    const Var<double> ones(Tensor<double>(Shape{2, 1, 32, 32}, 1.0));

    auto stage_a = [&](bool gated) { return testing::assembled_stage_a(a, skip, prev, gated, ctx); };
    auto stage_b = [&](bool gated) { return testing::assembled_stage_b(b, prev, gated, ctx); };
    CHECK(max_abs_diff(a.forward(skip, prev, zeros, ctx).value(), stage_a(false).value()) <= 1e-6);
    CHECK(max_abs_diff(a.forward(skip, prev, ones, ctx).value(), stage_a(true).value()) <= 1e-6);
    CHECK(max_abs_diff(b.forward(prev, zeros, ctx).value(), stage_b(false).value()) <= 1e-6);
    CHECK(max_abs_diff(b.forward(prev, ones, ctx).value(), stage_b(true).value()) <= 1e-6);
}

TEST_CASE("flop counts: single layers") {
    InitRng init(11);
    Conv2d<float> conv(3, 16, ConvGeometry::square(3), false, init);
    CHECK(conv.flops(Shape{1, 3, 32, 32}) == 884736);
    Conv2d<float> biased(3, 16, ConvGeometry::square(3), true, init);
    CHECK(biased.flops(Shape{1, 3, 32, 32}) == 884736 + 16 * 32 * 32);
    for (int c : {1, 4, 32}) {
        Conv2d<float> one(c, 2 * c, ConvGeometry::square(1), false, init);
        CHECK(one.flops(Shape{1, c, 10, 12}) == 2LL * c * 2 * c * 10 * 12);
    }
}

TEST_CASE("flop counts are additive and match what a forward pass executes") {
    std::mt19937_64 rng(12);
    for (int size : {64, 128}) {
        for (bool bdgm : {true, false}) {
            NetworkConfig cfg = config_at(size);
            cfg.use_bdgm = bdgm;
            BDGNet<float> net(cfg, 12);
            const Shape in{2, 3, size, size};
            const FlopBreakdown fb = net.flops(in);
            std::int64_t parts = fb.encoder + fb.boundary + fb.head;
            for (auto d : fb.decoder) parts += d;
            CHECK(fb.total() == parts);
            CHECK(fb.decoder.size() == 4);
            CHECK((fb.boundary == 0) == !bdgm);

            FlopTally tally;
            net.forward(Var<float>(random_tensor<float>(in, rng)), ForwardContext{});
            CHECK(tally.total() == fb.total());
        }
    }
    // Batch scales linearly.
    BDGNet<float> net(config_at(64), 1);
    CHECK(net.flops(Shape{4, 3, 64, 64}).total() == 4 * net.flops(Shape{1, 3, 64, 64}).total());
    CHECK(count_flops(config_at(64)).total() == net.flops(Shape{1, 3, 64, 64}).total());
}
