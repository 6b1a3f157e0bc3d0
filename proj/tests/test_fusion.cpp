#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "larc/fusion.hpp"
#include "test_util.hpp"

using larc::Fusion;
using larc::RngStream;
using larc::Tape;
using larc::Tensor;
namespace ops = larc::ops;

namespace {

std::vector<Tensor> random_stack(RngStream& rng, int entries, int n, int d) {
    std::vector<Tensor> stack;
    for (int l = 0; l < entries; ++l)
        stack.push_back(testutil::rand_uniform<float>({n, d}, rng, -2, 2));
    return stack;
}

} // namespace

TEST_CASE("zero scores give exactly uniform attention") {
    Fusion f5(5, 4);
    auto a5 = f5.attention_weights(nullptr);
    for (int i = 0; i < 5; ++i) CHECK(a5.at(i) == doctest::Approx(0.2));

    Fusion f25(25, 4);
    auto a25 = f25.attention_weights(nullptr);
    for (int i = 0; i < 25; ++i) CHECK(a25.at(i) == doctest::Approx(1.0 / 25.0));
}

TEST_CASE("a dominant score takes nearly all the attention") {
    Fusion f(5, 4);
    f.w.data()[0] = 10.0f;
    auto a = f.attention_weights(nullptr);
    CHECK(a.at(0) == doctest::Approx(0.99981).epsilon(1e-4));
    for (int i = 1; i < 5; ++i) CHECK(a.at(i) == doctest::Approx(4.5e-5).epsilon(3e-2));
    double sum = 0;
    for (int i = 0; i < 5; ++i) sum += a.at(i);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("attention is shift invariant in the scores") {
    RngStream rng(71, 0);
    for (int it = 0; it < 50; ++it) {
        Fusion f(6, 2);
        for (int i = 0; i < 6; ++i) f.w.data()[i] = static_cast<float>(-3 + 6 * rng.u01());
        auto base = f.attention_weights(nullptr);
        const float c = static_cast<float>(-5 + 10 * rng.u01());
        Fusion g(6, 2);
        for (int i = 0; i < 6; ++i) g.w.data()[i] = f.w.data()[i] + c;
        auto moved = g.attention_weights(nullptr);
        for (int i = 0; i < 6; ++i) CHECK(moved.at(i) == doctest::Approx(base.at(i)).epsilon(1e-6));
    }
}

TEST_CASE("fuse selects exactly under a one-hot weighting and is convex") {
    RngStream rng(72, 0);
    auto stack = random_stack(rng, 4, 3, 5);

    auto onehot = Tensor::from({4}, {0, 0, 1, 0});
    auto picked = ops::weighted_layer_sum(stack, onehot, nullptr);
    for (std::size_t i = 0; i < picked.size(); ++i) CHECK(picked.data()[i] == stack[2].data()[i]);

    // identical entries collapse to themselves under any simplex weighting
    std::vector<Tensor> same(4, stack[0]);
    auto alpha = ops::softmax_rows(testutil::rand_uniform<float>({4}, rng, -2, 2), nullptr);
    auto collapsed = ops::weighted_layer_sum(same, alpha, nullptr);
    for (std::size_t i = 0; i < collapsed.size(); ++i)
        CHECK(collapsed.data()[i] == doctest::Approx(stack[0].data()[i]).epsilon(1e-6));

    // convexity: every fused coordinate stays inside the per-coordinate envelope
    auto fused = ops::weighted_layer_sum(stack, alpha, nullptr);
    for (std::size_t i = 0; i < fused.size(); ++i) {
        float lo = stack[0].data()[i], hi = stack[0].data()[i];
        for (int l = 1; l < 4; ++l) {
            lo = std::min(lo, stack[l].data()[i]);
            hi = std::max(hi, stack[l].data()[i]);
        }
        CHECK(fused.data()[i] >= lo - 1e-6f);
        CHECK(fused.data()[i] <= hi + 1e-6f);
    }
}

TEST_CASE("hand-computed fusion of three two-dimensional layers") {
    std::vector<Tensor> stack = {Tensor::from({1, 2}, {1, 0}), Tensor::from({1, 2}, {0, 1}),
                                 Tensor::from({1, 2}, {1, 1})};
    auto alpha = Tensor::from({3}, {0.5f, 0.25f, 0.25f});
    auto fused = ops::weighted_layer_sum(stack, alpha, nullptr);
    CHECK(fused.at(0, 0) == doctest::Approx(0.75));
    CHECK(fused.at(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("fuse is linear in the layer entries") {
    RngStream rng(73, 0);
    auto stack = random_stack(rng, 3, 2, 4);
    auto alpha = ops::softmax_rows(testutil::rand_uniform<float>({3}, rng), nullptr);
    const float s = 2.75f;
    std::vector<Tensor> scaled;
    for (const auto& h : stack) {
        auto t = Tensor::zeros(h.shape());
        for (std::size_t i = 0; i < h.size(); ++i) t.data()[i] = s * h.data()[i];
        scaled.push_back(t);
    }
    auto base = ops::weighted_layer_sum(stack, alpha, nullptr);
    auto big = ops::weighted_layer_sum(scaled, alpha, nullptr);
    for (std::size_t i = 0; i < base.size(); ++i)
        CHECK(big.data()[i] == doctest::Approx(s * base.data()[i]).epsilon(1e-5));
}

TEST_CASE("residual branch: nulled gain, and the layer-norm oracle") {
    // gain = 0, bias = 0 leaves only the fused branch
    Fusion f(2, 2);
    std::fill(f.ln_gain.data(), f.ln_gain.data() + f.ln_gain.size(), 0.0f);
    std::vector<Tensor> stack = {Tensor::from({1, 2}, {0.3f, -0.7f}),
                                 Tensor::from({1, 2}, {2.0f, 5.0f})};
    auto z = f.forward(stack, nullptr);
    // w = 0 so alpha = [0.5, 0.5]
    CHECK(z.at(0, 0) == doctest::Approx(0.5 * 0.3 + 0.5 * 2.0).epsilon(1e-6));
    CHECK(z.at(0, 1) == doctest::Approx(0.5 * -0.7 + 0.5 * 5.0).epsilon(1e-6));

    // saturating the scores isolates the first entry, then the residual adds
    // layer_norm([1, 3]) to it
    Fusion g(2, 2);
    g.w.data()[0] = 1000.0f;
    g.w.data()[1] = -1000.0f;
    std::vector<Tensor> pair = {Tensor::from({1, 2}, {1, 1}), Tensor::from({1, 2}, {1, 3})};
    auto out = g.forward(pair, nullptr);
    CHECK(std::fabs(out.at(0, 0) - 0.00001) < 1e-4);
    CHECK(std::fabs(out.at(0, 1) - 2.0) < 1e-4);
}

TEST_CASE("constant final entry contributes nothing through the residual") {
    Fusion f(3, 4);
    f.w.data()[2] = -1000.0f; // alpha ~ [0.5, 0.5, 0] over the first two
    std::vector<Tensor> stack = {Tensor::zeros({2, 4}), Tensor::zeros({2, 4}),
                                 Tensor::full({2, 4}, 7.5f)};
    auto z = f.forward(stack, nullptr);
    for (std::size_t i = 0; i < z.size(); ++i)
        CHECK(z.data()[i] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("stack size mismatch is a shape error") {
    Fusion f(5, 4);
    std::vector<Tensor> three(3, Tensor::zeros({1, 4}));
    CHECK_THROWS_AS(f.forward(three, nullptr), larc::ShapeError);
    CHECK_THROWS_AS(Fusion(0, 4), larc::ConfigError);
}

TEST_CASE("gradients reach the scores and both norm parameters") {
    RngStream rng(74, 0);
    Fusion f(4, 6);
    f.w.set_requires_grad(true);
    f.ln_gain.set_requires_grad(true);
    f.ln_bias.set_requires_grad(true);
    auto stack = random_stack(rng, 4, 3, 6);
    auto coeffs = testutil::rand_coeffs<float>(18, rng);

    Tape tape;
    auto loss = ops::weighted_sum(f.forward(stack, &tape), coeffs, &tape);
    tape.backward(loss);

    for (auto* t : {&f.w, &f.ln_gain, &f.ln_bias}) {
        float peak = 0;
        for (float g : t->grad()) peak = std::max(peak, std::fabs(g));
        CHECK(peak > 0.0f);
    }
}

TEST_CASE("fusion graph passes a double-precision gradient audit") {
    RngStream rng(75, 0);
    larc::FusionT<double> f(3, 4);
    for (int i = 0; i < 3; ++i) f.w.data()[i] = -0.5 + rng.u01();
    std::vector<larc::TensorT<double>> stack;
    for (int l = 0; l < 3; ++l) stack.push_back(testutil::rand_uniform<double>({2, 4}, rng, -2, 2));
    auto coeffs = testutil::rand_coeffs<double>(8, rng);

    auto loss_fn = [&](larc::TapeT<double>* tape) {
        return ops::weighted_sum(f.forward(stack, tape), coeffs, tape);
    };
    std::vector<larc::TensorT<double>> params = {f.w, f.ln_gain, f.ln_bias, stack[0], stack[1],
                                                 stack[2]};
    CHECK(testutil::fd_max_rel_err<double>(loss_fn, params, 1e-5) < 1e-4);
}
