#include <doctest.h>

#include <cmath>
#include <random>

#include "bdg/bdm.hpp"
#include "bdg/losses.hpp"
#include "gradcheck.hpp"

using namespace bdg;
using testing::gradient_error;
using testing::random_tensor;

namespace {

Tensor<double> binary_tensor(Shape s, std::mt19937_64& rng, double density = 0.4) {
    std::bernoulli_distribution on(density);
    Tensor<double> t(s);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = on(rng) ? 1.0 : 0.0;
    return t;
}

/// Box mean with edge-including mirror padding, by enumeration.
double weight_oracle(const std::vector<std::vector<double>>& g, int y, int x, int k, double gain) {
    const int h = static_cast<int>(g.size()), w = static_cast<int>(g[0].size()), r = k / 2;
    auto refl = [](int i, int n) {
        while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
        return i;
    };
    double acc = 0.0;
    for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) acc += g[refl(y + dy, h)][refl(x + dx, w)];
    }
    return 1.0 + gain * std::fabs(acc / (k * k) - g[y][x]);
}

/// The map loss switches residuals off at r^2 = lambda; finite differences
/// straddling that switch measure the jump, so keep residuals clear of it.
Tensor<double> clear_of_threshold(Tensor<double> pred, const Tensor<double>& ideal, double lambda) {
    const double edge = std::sqrt(lambda);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double r = pred[i] - ideal[i];
        if (std::fabs(std::fabs(r) - edge) < 0.02) pred[i] = ideal[i] + (r < 0 ? -1.0 : 1.0) * (edge + 0.05);
    }
    return pred;
}

}  // namespace

TEST_CASE("weight map of constant masks is one") {
    for (double fill : {0.0, 1.0}) {
        const Tensor<double> gt(Shape{2, 1, 9, 7}, fill);
        const Tensor<double> w = weight_map(gt, LossConfig{});
        for (double v : w.vec()) CHECK(v == 1.0);
    }
}

TEST_CASE("weight map on a one-row edge strip matches enumeration") {
    const std::vector<std::vector<double>> strip{{0, 0, 0, 0, 1, 1, 1, 1}};
    Tensor<double> gt(Shape{1, 1, 1, 8}, std::vector<double>(strip[0]));
    for (int k : {3, 5, 31}) {
        LossConfig cfg;
        cfg.weight_kernel = k;
        const Tensor<double> w = weight_map(gt, cfg);
        for (int x = 0; x < 8; ++x) CHECK(w[x] == doctest::Approx(weight_oracle(strip, 0, x, k, 5.0)).epsilon(1e-13));
    }
    LossConfig cfg;
    cfg.weight_kernel = 3;
    const Tensor<double> w = weight_map(gt, cfg);
    CHECK(w[0] == 1.0);
    CHECK(w[3] == doctest::Approx(1.0 + 5.0 / 3.0));
    CHECK(w[4] == doctest::Approx(1.0 + 5.0 / 3.0));
}

TEST_CASE("weight map matches enumeration on random masks and is one far from edges") {
    std::mt19937_64 rng(2);
    LossConfig cfg;
    cfg.weight_kernel = 7;
    cfg.weight_gain = 3.0;
    const Tensor<double> gt = binary_tensor(Shape{2, 1, 11, 13}, rng);
    const Tensor<double> w = weight_map(gt, cfg);
    for (int n = 0; n < 2; ++n) {
        std::vector<std::vector<double>> g(11, std::vector<double>(13));
        for (int y = 0; y < 11; ++y) {
            for (int x = 0; x < 13; ++x) g[y][x] = gt.at(n, 0, y, x);
        }
        for (int y = 0; y < 11; ++y) {
            for (int x = 0; x < 13; ++x) {
                REQUIRE(w.at(n, 0, y, x) == doctest::Approx(weight_oracle(g, y, x, 7, 3.0)).epsilon(1e-12));
            }
        }
    }
    // A large square: its centre is more than k/2 from any transition.
    Tensor<double> square(Shape{1, 1, 40, 40});
    for (int y = 5; y < 35; ++y) {
        for (int x = 5; x < 35; ++x) square.at(0, 0, y, x) = 1.0;
    }
    LossConfig small;
    small.weight_kernel = 9;
    CHECK(weight_map(square, small).at(0, 0, 20, 20) == 1.0);
    LossConfig even;
    even.weight_kernel = 4;
    CHECK_THROWS_AS(weight_map(square, even), std::invalid_argument);
}

TEST_CASE("boundary-map loss closed forms") {
    const Tensor<double> ideal(Shape{1, 1, 10, 10}, 0.3);
    LossConfig cfg;
    CHECK(l_bdm(Var<double>(ideal), ideal, cfg).value()[0] == 0.0);

    const Tensor<double> shifted(Shape{1, 1, 10, 10}, 0.4);
    cfg.lambda = 0.0;
    cfg.bdm_sum = true;
    CHECK(l_bdm(Var<double>(shifted), ideal, cfg).value()[0] == doctest::Approx(1.0).epsilon(1e-12));
    cfg.bdm_sum = false;
    CHECK(l_bdm(Var<double>(shifted), ideal, cfg).value()[0] == doctest::Approx(0.01).epsilon(1e-12));
    cfg.lambda = 0.02;
    Var<double> pred(shifted, true);
    const Var<double> loss = l_bdm(pred, ideal, cfg);
    CHECK(loss.value()[0] == 0.0);
    backward(loss);
    for (std::size_t i = 0; i < pred.value().numel(); ++i) CHECK((pred.grad().empty() || pred.grad()[i] == 0.0));
}

TEST_CASE("weighted cross-entropy closed forms") {
    std::mt19937_64 rng(3);
    const Tensor<double> gt = binary_tensor(Shape{2, 1, 6, 6}, rng);
    const Tensor<double> ones(gt.shape(), 1.0), twos(gt.shape(), 2.0);
    const Tensor<double> half(gt.shape(), 0.5), zero(gt.shape(), 0.0);
    CHECK(l_wbce(Var<double>(half), gt, ones).value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(l_wbce_logits(Var<double>(zero), gt, ones).value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(l_wbce_logits(Var<double>(zero), gt, ones, true).value()[0] == doctest::Approx(36 * std::log(2.0)).epsilon(1e-12));

    const Tensor<double> w = weight_map(gt, LossConfig{});
    Tensor<double> w2 = w;
    for (auto& v : w2.vec()) v *= 2.0;
    const Tensor<double> logits = random_tensor<double>(gt.shape(), rng, -3, 3);
    CHECK(l_wbce_logits(Var<double>(logits), gt, w).value()[0] ==
          doctest::Approx(l_wbce_logits(Var<double>(logits), gt, w2).value()[0]).epsilon(1e-14));

    // Perfect prediction: probabilities clamp at 1e-7 from the ends.
    CHECK(l_wbce(Var<double>(gt), gt, w).value()[0] == doctest::Approx(-std::log1p(-kProbClamp)).epsilon(1e-6));
    CHECK(l_wbce(Var<double>(gt), gt, w).value()[0] < 1e-6);

    // Fused logits form agrees with the probability form away from the clamp.
    Tensor<double> prob(gt.shape());
    for (std::size_t i = 0; i < prob.numel(); ++i) prob[i] = 1.0 / (1.0 + std::exp(-logits[i]));
    CHECK(l_wbce_logits(Var<double>(logits), gt, w).value()[0] ==
          doctest::Approx(l_wbce(Var<double>(prob), gt, w).value()[0]).epsilon(1e-12));
    // Extreme logits stay finite.
    Tensor<double> extreme(gt.shape());
    for (std::size_t i = 0; i < extreme.numel(); ++i) extreme[i] = gt[i] > 0.5 ? -800.0 : 800.0;
    CHECK(std::isfinite(l_wbce_logits(Var<double>(extreme), gt, w).value()[0]));
}

TEST_CASE("weighted IoU closed forms") {
    const Tensor<double> all(Shape{1, 1, 5, 5}, 1.0), none(Shape{1, 1, 5, 5}, 0.0), half(Shape{1, 1, 5, 5}, 0.5);
    CHECK(l_wiou(Var<double>(all), all, all).value()[0] == 0.0);
    CHECK(l_wiou(Var<double>(half), all, all).value()[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(l_wiou(Var<double>(none), none, all).value()[0] == 0.0);
}

TEST_CASE("total loss: components add up and a perfect prediction costs nothing") {
    std::mt19937_64 rng(4);
    const Tensor<double> gt = binary_tensor(Shape{2, 1, 12, 12}, rng);
    Tensor<double> ideal(gt.shape());
    for (int n = 0; n < 2; ++n) {
        BinaryMask m(12, 12);
        for (std::size_t i = 0; i < m.size(); ++i) m.set(i, gt.sample(n)[i] > 0.5);
        const BoundaryDistributionMap b = ideal_bdm(m, 5.0);
        std::copy(b.values.values().begin(), b.values.values().end(), ideal.sample(n));
    }
    Tensor<double> logits(gt.shape());
    for (std::size_t i = 0; i < gt.numel(); ++i) logits[i] = gt[i] > 0.5 ? 30.0 : -30.0;
    SegmentationOutput<double> perfect{Var<double>(logits), Var<double>(ideal), true};
    const LossTerms<double> p = l_total(perfect, gt, ideal, LossConfig{});
    CHECK(p.total.value()[0] < 1e-6);

    for (int t = 0; t < 5; ++t) {
        SegmentationOutput<double> out{Var<double>(random_tensor<double>(gt.shape(), rng, -4, 4)),
                                       Var<double>(random_tensor<double>(gt.shape(), rng, 0, 1)), true};
        const LossTerms<double> terms = l_total(out, gt, ideal, LossConfig{});
        CHECK(terms.total.value()[0] == (terms.bdm.value()[0] + terms.wbce.value()[0]) + terms.wiou.value()[0]);
        CHECK(terms.bdm.value()[0] > 0.0);
    }

    SegmentationOutput<double> no_map{Var<double>(logits), Var<double>(), false};
    CHECK(l_total(no_map, gt, ideal, LossConfig{}).bdm.value()[0] == 0.0);
}

TEST_CASE("loss gradients match finite differences on 6x6 instances") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 5; ++t) {
        const Shape s{2, 1, 6, 6};
        const Tensor<double> gt = binary_tensor(s, rng);
        const Tensor<double> ideal = random_tensor<double>(s, rng, 0, 1);
        const Tensor<double> w = weight_map(gt, LossConfig{});
        LossConfig cfg;
        Var<double> bdm(clear_of_threshold(random_tensor<double>(s, rng, 0, 1), ideal, cfg.lambda), true);
        Var<double> prob(random_tensor<double>(s, rng, 0.05, 0.95), true);
        Var<double> logits(random_tensor<double>(s, rng, -3, 3), true);

        CHECK(gradient_error({&bdm}, [&] { return l_bdm(bdm, ideal, cfg); }, rng) < 1e-3);
        cfg.bdm_sum = true;
        CHECK(gradient_error({&bdm}, [&] { return l_bdm(bdm, ideal, cfg); }, rng) < 1e-3);
        CHECK(gradient_error({&prob}, [&] { return l_wbce(prob, gt, w); }, rng) < 1e-3);
        CHECK(gradient_error({&logits}, [&] { return l_wbce_logits(logits, gt, w); }, rng) < 1e-3);
        CHECK(gradient_error({&logits}, [&] { return l_wbce_logits(logits, gt, w, true); }, rng) < 1e-3);
        CHECK(gradient_error({&prob}, [&] { return l_wiou(prob, gt, w); }, rng) < 1e-3);
        CHECK(gradient_error({&logits, &bdm},
                             [&] {
                                 return l_total(SegmentationOutput<double>{logits, bdm, true}, gt, ideal, LossConfig{}).total;
                             },
                             rng) < 1e-3);
    }
}

TEST_CASE("loss inputs are validated") {
    const Tensor<double> a(Shape{1, 1, 4, 4}), b(Shape{1, 1, 4, 5});
    CHECK_THROWS_AS(l_bdm(Var<double>(a), b, LossConfig{}), std::invalid_argument);
    LossConfig bad;
    bad.lambda = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
