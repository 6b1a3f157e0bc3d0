#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "larc/gradcheck.hpp"
#include "larc/ops.hpp"
#include "test_util.hpp"

using larc::RngStream;
using larc::Tape;
using larc::Tensor;
using TapeD = larc::TapeT<double>;
using TensorD = larc::TensorT<double>;
namespace ops = larc::ops;

namespace {

// Both halves of a per-op gradient audit must hold: double analytic vs double
// central differences (bounded by difference noise against the absolute
// floor on near-zero coordinates, far below any formula bug), and float
// analytic vs double analytic, which pins the float kernels.
void check_dual(const testutil::DualAuditResult& res) {
    CHECK(res.fd_rel_err < 1e-4);
    CHECK(res.f32_rel_err < 1e-3);
}

} // namespace

TEST_CASE("matmul forward basics") {
    auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    auto m = Tensor::from({2, 2}, {1, 2, 3, 4});
    auto out = ops::matmul(eye, m, nullptr);
    for (int i = 0; i < 4; ++i) CHECK(out.data()[i] == m.data()[i]);

    auto a = Tensor::from({1, 2}, {1, 2});
    auto b = Tensor::from({2, 1}, {3, 4});
    CHECK(ops::matmul(a, b, nullptr).item() == doctest::Approx(11.0));

    CHECK_THROWS_AS(ops::matmul(a, a, nullptr), larc::ShapeError);
}

TEST_CASE("matmul backward vs finite differences") {
    RngStream rng(11, 0);
    auto a = testutil::rand_uniform<double>({3, 4}, rng);
    auto b = testutil::rand_uniform<double>({4, 2}, rng);
    auto coeffs = testutil::rand_coeffs<double>(6, rng);
    auto af = testutil::to_f32(a), bf = testutil::to_f32(b);
    auto cf = testutil::to_f32(coeffs);
    check_dual(testutil::dual_audit(
        [&](TapeD* tape) { return ops::weighted_sum(ops::matmul(a, b, tape), coeffs, tape); },
        {a, b},
        [&](Tape* tape) { return ops::weighted_sum(ops::matmul(af, bf, tape), cf, tape); },
        {af, bf}, 1e-5));
}

TEST_CASE("linear matches matmul-plus-bias and differentiates") {
    RngStream rng(12, 0);
    auto xd = testutil::rand_uniform<double>({3, 5}, rng);
    auto wd = testutil::rand_uniform<double>({4, 5}, rng);
    auto bd = testutil::rand_uniform<double>({4}, rng);
    auto x = testutil::to_f32(xd), w = testutil::to_f32(wd), b = testutil::to_f32(bd);
    auto out = ops::linear(x, w, b, nullptr);
    for (int i = 0; i < 3; ++i)
        for (int o = 0; o < 4; ++o) {
            double acc = b.at(o);
            for (int j = 0; j < 5; ++j) acc += static_cast<double>(x.at(i, j)) * w.at(o, j);
            CHECK(out.at(i, o) == doctest::Approx(acc).epsilon(1e-5));
        }

    auto coeffs = testutil::rand_coeffs<double>(12, rng);
    auto cf = testutil::to_f32(coeffs);
    check_dual(testutil::dual_audit(
        [&](TapeD* tape) {
            return ops::weighted_sum(ops::linear(xd, wd, bd, tape), coeffs, tape);
        },
        {xd, wd, bd},
        [&](Tape* tape) { return ops::weighted_sum(ops::linear(x, w, b, tape), cf, tape); },
        {x, w, b}, 1e-5));
}

TEST_CASE("softmax examples and simplex property") {
    auto flat = ops::softmax_rows(Tensor::from({5}, {0, 0, 0, 0, 0}), nullptr);
    for (int i = 0; i < 5; ++i) CHECK(flat.at(i) == doctest::Approx(0.2));

    auto p = ops::softmax_rows(Tensor::from({3}, {1, 2, 3}), nullptr);
    CHECK(p.at(0) == doctest::Approx(0.09003057317038046).epsilon(1e-5));
    CHECK(p.at(1) == doctest::Approx(0.24472847105479764).epsilon(1e-5));
    CHECK(p.at(2) == doctest::Approx(0.6652409557748219).epsilon(1e-5));

    RngStream rng(13, 0);
    for (int it = 0; it < 200; ++it) {
        const int n = rng.range_int(1, 8);
        auto x = testutil::rand_uniform<float>({n}, rng, -50.0, 50.0);
        auto sm = ops::softmax_rows(x, nullptr);
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            CHECK(sm.at(i) >= 0.0f);
            sum += sm.at(i);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

        // shift invariance
        const float c = static_cast<float>(-10.0 + 20.0 * rng.u01());
        auto shifted = ops::softmax_rows(ops::affine_const(x, 1.0f, c, nullptr), nullptr);
        for (int i = 0; i < n; ++i)
            CHECK(shifted.at(i) == doctest::Approx(sm.at(i)).epsilon(1e-6));
    }
}

TEST_CASE("softmax backward vs finite differences") {
    RngStream rng(14, 0);
    for (int it = 0; it < 10; ++it) {
        auto x = testutil::rand_uniform<double>({rng.range_int(1, 8), rng.range_int(1, 8)}, rng,
                                                -3, 3);
        auto coeffs = testutil::rand_coeffs<double>(x.size(), rng);
        auto xf = testutil::to_f32(x);
        auto cf = testutil::to_f32(coeffs);
        check_dual(testutil::dual_audit(
            [&](TapeD* tape) {
                return ops::weighted_sum(ops::softmax_rows(x, tape), coeffs, tape);
            },
            {x},
            [&](Tape* tape) { return ops::weighted_sum(ops::softmax_rows(xf, tape), cf, tape); },
            {xf}, 1e-5));
    }
}

TEST_CASE("gelu values and gradient") {
    CHECK(ops::gelu(Tensor::scalar(0.0f), nullptr).item() == 0.0f);
    CHECK(ops::gelu(Tensor::scalar(10.0f), nullptr).item() == doctest::Approx(10.0).epsilon(1e-7));
    CHECK(ops::gelu(Tensor::scalar(1.0f), nullptr).item() ==
          doctest::Approx(0.841344746068543).epsilon(1e-6));

    RngStream rng(15, 0);
    auto x = testutil::rand_uniform<double>({6}, rng, -3, 3);
    auto coeffs = testutil::rand_coeffs<double>(6, rng);
    auto xf = testutil::to_f32(x);
    auto cf = testutil::to_f32(coeffs);
    check_dual(testutil::dual_audit(
        [&](TapeD* tape) { return ops::weighted_sum(ops::gelu(x, tape), coeffs, tape); }, {x},
        [&](Tape* tape) { return ops::weighted_sum(ops::gelu(xf, tape), cf, tape); }, {xf}, 1e-5));
}

TEST_CASE("tanh and sigmoid gradients") {
    RngStream rng(16, 0);
    auto x = testutil::rand_uniform<double>({7}, rng, -2, 2);
    auto coeffs = testutil::rand_coeffs<double>(7, rng);
    auto xf = testutil::to_f32(x);
    auto cf = testutil::to_f32(coeffs);
    check_dual(testutil::dual_audit(
        [&](TapeD* tape) { return ops::weighted_sum(ops::tanh_act(x, tape), coeffs, tape); }, {x},
        [&](Tape* tape) { return ops::weighted_sum(ops::tanh_act(xf, tape), cf, tape); }, {xf},
        1e-5));
    check_dual(testutil::dual_audit(
        [&](TapeD* tape) { return ops::weighted_sum(ops::sigmoid(x, tape), coeffs, tape); }, {x},
        [&](Tape* tape) { return ops::weighted_sum(ops::sigmoid(xf, tape), cf, tape); }, {xf},
        1e-5));
}

TEST_CASE("layer_norm examples") {
    auto gain = Tensor::full({4}, 1.0f);
    auto bias = Tensor::zeros({4});
    auto out = ops::layer_norm(Tensor::full({4}, 3.25f), gain, bias, nullptr);
    for (int i = 0; i < 4; ++i) CHECK(out.at(i) == doctest::Approx(0.0).epsilon(1e-6));

    auto g2 = Tensor::full({2}, 1.0f);
    auto b2 = Tensor::zeros({2});
    auto two = ops::layer_norm(Tensor::from({2}, {1, 3}), g2, b2, nullptr);
    CHECK(two.at(0) == doctest::Approx(-0.9999950000374997).epsilon(1e-6));
    CHECK(two.at(1) == doctest::Approx(0.9999950000374997).epsilon(1e-6));

    // pre-affine output is standardized
    RngStream rng(17, 0);
    auto g8 = Tensor::full({8}, 1.0f);
    auto b8 = Tensor::zeros({8});
    for (int it = 0; it < 20; ++it) {
        auto x = testutil::rand_uniform<float>({8}, rng, -5, 5);
        auto y = ops::layer_norm(x, g8, b8, nullptr);
        double mean = 0, var = 0;
        for (int i = 0; i < 8; ++i) mean += y.at(i);
        mean /= 8;
        for (int i = 0; i < 8; ++i) var += (y.at(i) - mean) * (y.at(i) - mean);
        var /= 8;
        CHECK(std::fabs(mean) < 1e-4);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("layer_norm backward vs finite differences") {
    RngStream rng(18, 0);
    for (int it = 0; it < 10; ++it) {
        const int n = rng.range_int(1, 6), d = rng.range_int(2, 8);
        auto x = testutil::rand_uniform<double>({n, d}, rng, -2, 2);
        auto gain = testutil::rand_uniform<double>({d}, rng, 0.5, 1.5);
        auto bias = testutil::rand_uniform<double>({d}, rng, -0.5, 0.5);
        auto coeffs = testutil::rand_coeffs<double>(x.size(), rng);
        auto xf = testutil::to_f32(x), gf = testutil::to_f32(gain), bf = testutil::to_f32(bias);
        auto cf = testutil::to_f32(coeffs);
        check_dual(testutil::dual_audit(
            [&](TapeD* tape) {
                return ops::weighted_sum(ops::layer_norm(x, gain, bias, tape), coeffs, tape);
            },
            {x, gain, bias},
            [&](Tape* tape) {
                return ops::weighted_sum(ops::layer_norm(xf, gf, bf, tape), cf, tape);
            },
            {xf, gf, bf}, 1e-5));
    }
}

TEST_CASE("dropout contract") {
    RngStream rng(19, 0);
    auto x = testutil::rand_uniform<float>({10}, rng);

    auto eval_out = ops::dropout(x, 0.4, /*training=*/false, rng, nullptr);
    CHECK(eval_out.same_storage(x)); // exact identity, not a copy

    auto zero_rate = ops::dropout(x, 0.0, /*training=*/true, rng, nullptr);
    CHECK(zero_rate.same_storage(x));

    CHECK_THROWS_AS(ops::dropout(x, 1.0, true, rng, nullptr), larc::ConfigError);
    CHECK_THROWS_AS(ops::dropout(x, -0.1, true, rng, nullptr), larc::ConfigError);

    // inverted scaling preserves the mean
    auto ones = Tensor::full({100000}, 1.0f);
    auto dropped = ops::dropout(ones, 0.4, true, rng, nullptr);
    double mean = 0.0;
    for (std::size_t i = 0; i < dropped.size(); ++i) mean += dropped.data()[i];
    mean /= static_cast<double>(dropped.size());
    CHECK(mean > 0.98);
    CHECK(mean < 1.02);

    // identical stream state implies identical mask
    RngStream s1(7, 2), s2(7, 2);
    auto m1 = ops::dropout(x, 0.4, true, s1, nullptr);
    auto m2 = ops::dropout(x, 0.4, true, s2, nullptr);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(m1.data()[i] == m2.data()[i]);
}

TEST_CASE("dropout backward vs finite differences") {
    RngStream rng(20, 0);
    auto x = testutil::rand_uniform<double>({4, 5}, rng);
    auto coeffs = testutil::rand_coeffs<double>(x.size(), rng);
    auto xf = testutil::to_f32(x);
    auto cf = testutil::to_f32(coeffs);
    const auto mask_state = rng.state(); // same mask on every evaluation
    check_dual(testutil::dual_audit(
        [&](TapeD* tape) {
            RngStream local(0, 0);
            local.set_state(mask_state);
            return ops::weighted_sum(ops::dropout(x, 0.4, true, local, tape), coeffs, tape);
        },
        {x},
        [&](Tape* tape) {
            RngStream local(0, 0);
            local.set_state(mask_state);
            return ops::weighted_sum(ops::dropout(xf, 0.4, true, local, tape), cf, tape);
        },
        {xf}, 1e-5));
}

TEST_CASE("embedding and gather_rows gradients") {
    RngStream rng(21, 0);
    auto table = testutil::rand_uniform<double>({6, 4}, rng);
    auto tablef = testutil::to_f32(table);
    std::vector<int> ids = {1, 3, 3, 0, 5};
    auto looked = ops::embedding(tablef, ids, nullptr);
    CHECK(looked.shape() == larc::Shape{5, 4});
    for (int j = 0; j < 4; ++j) CHECK(looked.at(1, j) == tablef.at(3, j));
    CHECK_THROWS_AS(ops::embedding(tablef, {6}, nullptr), larc::DataError);

    auto coeffs = testutil::rand_coeffs<double>(looked.size(), rng);
    auto cf = testutil::to_f32(coeffs);
    check_dual(testutil::dual_audit(
        [&](TapeD* tape) {
            return ops::weighted_sum(ops::embedding(table, ids, tape), coeffs, tape);
        },
        {table},
        [&](Tape* tape) {
            return ops::weighted_sum(ops::embedding(tablef, ids, tape), cf, tape);
        },
        {tablef}, 1e-5));

    auto x = testutil::rand_uniform<double>({5, 3}, rng);
    auto xf = testutil::to_f32(x);
    std::vector<int> rows = {4, 0, 2};
    auto gathered = ops::gather_rows(xf, rows, nullptr);
    for (int j = 0; j < 3; ++j) CHECK(gathered.at(0, j) == xf.at(4, j));
    auto gcoeffs = testutil::rand_coeffs<double>(gathered.size(), rng);
    auto gcf = testutil::to_f32(gcoeffs);
    check_dual(testutil::dual_audit(
        [&](TapeD* tape) {
            return ops::weighted_sum(ops::gather_rows(x, rows, tape), gcoeffs, tape);
        },
        {x},
        [&](Tape* tape) {
            return ops::weighted_sum(ops::gather_rows(xf, rows, tape), gcf, tape);
        },
        {xf}, 1e-5));
}

TEST_CASE("attention probabilities form a simplex over unmasked keys") {
    RngStream rng(22, 0);
    const int batch = 2, seq = 5, heads = 2, dim = 8;
    auto q = testutil::rand_uniform<float>({batch * seq, dim}, rng);
    auto k = testutil::rand_uniform<float>({batch * seq, dim}, rng);
    auto v = testutil::rand_uniform<float>({batch * seq, dim}, rng);
    std::vector<std::uint8_t> mask(batch * seq, 1);
    mask[3] = mask[4] = 0; // item 0 has two padded keys

    std::vector<float> probs;
    ops::attention(q, k, v, mask, batch, seq, heads, nullptr, &probs);
    for (int b = 0; b < batch; ++b)
        for (int h = 0; h < heads; ++h)
            for (int t1 = 0; t1 < seq; ++t1) {
                double sum = 0.0;
                for (int t2 = 0; t2 < seq; ++t2) {
                    const float p =
                        probs[((static_cast<std::size_t>(b) * heads + h) * seq + t1) * seq + t2];
                    CHECK(p >= 0.0f);
                    if (!mask[b * seq + t2]) CHECK(p == 0.0f);
                    sum += p;
                }
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
            }
}

TEST_CASE("attention backward vs finite differences") {
    RngStream rng(23, 0);
    const int batch = 2, seq = 4, heads = 2, dim = 6;
    auto q = testutil::rand_uniform<double>({batch * seq, dim}, rng);
    auto k = testutil::rand_uniform<double>({batch * seq, dim}, rng);
    auto v = testutil::rand_uniform<double>({batch * seq, dim}, rng);
    auto qf = testutil::to_f32(q), kf = testutil::to_f32(k), vf = testutil::to_f32(v);
    std::vector<std::uint8_t> mask(batch * seq, 1);
    mask[7] = 0;
    auto coeffs = testutil::rand_coeffs<double>(q.size(), rng);
    auto cf = testutil::to_f32(coeffs);
    check_dual(testutil::dual_audit(
        [&](TapeD* tape) {
            return ops::weighted_sum(ops::attention(q, k, v, mask, batch, seq, heads, tape),
                                     coeffs, tape);
        },
        {q, k, v},
        [&](Tape* tape) {
            return ops::weighted_sum(ops::attention(qf, kf, vf, mask, batch, seq, heads, tape),
                                     cf, tape);
        },
        {qf, kf, vf}, 1e-5));
}

TEST_CASE("weighted_layer_sum forward and backward") {
    RngStream rng(24, 0);
    std::vector<TensorD> layers;
    std::vector<Tensor> layersf;
    for (int l = 0; l < 3; ++l) {
        layers.push_back(testutil::rand_uniform<double>({2, 4}, rng));
        layersf.push_back(testutil::to_f32(layers.back()));
    }
    auto alpha = TensorD::from({3}, {0.5, 0.25, 0.25});
    auto alphaf = testutil::to_f32(alpha);
    auto out = ops::weighted_layer_sum(layersf, alphaf, nullptr);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double want = 0.5 * layersf[0].data()[i] + 0.25 * layersf[1].data()[i] +
                            0.25 * layersf[2].data()[i];
        CHECK(out.data()[i] == doctest::Approx(want).epsilon(1e-6));
    }

    auto coeffs = testutil::rand_coeffs<double>(out.size(), rng);
    auto cf = testutil::to_f32(coeffs);
    check_dual(testutil::dual_audit(
        [&](TapeD* tape) {
            return ops::weighted_sum(ops::weighted_layer_sum(layers, alpha, tape), coeffs, tape);
        },
        {layers[0], layers[1], layers[2], alpha},
        [&](Tape* tape) {
            return ops::weighted_sum(ops::weighted_layer_sum(layersf, alphaf, tape), cf, tape);
        },
        {layersf[0], layersf[1], layersf[2], alphaf}, 1e-5));
}

TEST_CASE("cross entropy values, shift invariance, gradient") {
    auto uniform = Tensor::zeros({1, 5});
    CHECK(ops::cross_entropy(uniform, {3}, nullptr).item() ==
          doctest::Approx(1.6094379124341003).epsilon(1e-6));

    auto saturated = Tensor::from({1, 4}, {50, 0, 0, 0});
    CHECK(ops::cross_entropy(saturated, {0}, nullptr).item() < 1e-9);

    auto three = Tensor::from({1, 3}, {1, 2, 3});
    CHECK(ops::cross_entropy(three, {2}, nullptr).item() ==
          doctest::Approx(0.4076059644443806).epsilon(1e-5));

    CHECK_THROWS_AS(ops::cross_entropy(three, {3}, nullptr), larc::DataError);

    RngStream rng(25, 0);
    for (int it = 0; it < 200; ++it) {
        const int b = rng.range_int(1, 6), kk = rng.range_int(2, 7);
        auto logits = testutil::rand_uniform<float>({b, kk}, rng, -4, 4);
        std::vector<int> ys(b);
        for (auto& y : ys) y = rng.range_int(0, kk - 1);
        const double base = ops::cross_entropy(logits, ys, nullptr).item();
        CHECK(base >= 0.0);
        const float c = static_cast<float>(-5.0 + 10.0 * rng.u01());
        auto shifted = ops::affine_const(logits, 1.0f, c, nullptr);
        const double moved = ops::cross_entropy(shifted, ys, nullptr).item();
        CHECK(moved == doctest::Approx(base).epsilon(1e-6));
    }

    auto logits = testutil::rand_uniform<double>({4, 3}, rng, -2, 2);
    auto logitsf = testutil::to_f32(logits);
    std::vector<int> ys = {0, 2, 1, 2};
    check_dual(testutil::dual_audit(
        [&](TapeD* tape) { return ops::cross_entropy(logits, ys, tape); }, {logits},
        [&](Tape* tape) { return ops::cross_entropy(logitsf, ys, tape); }, {logitsf}, 1e-5));
}

TEST_CASE("finite difference audit sanity: quadratic") {
    auto theta = Tensor::from({1, 1}, {3.0f});
    auto loss_fn = [&](Tape* tape) { return ops::matmul(theta, theta, tape); };
    Tape tape;
    theta.set_requires_grad(true);
    auto loss = loss_fn(&tape);
    tape.backward(loss);
    CHECK(theta.grad()[0] == doctest::Approx(6.0));
    CHECK(testutil::fd_max_rel_err<float>(loss_fn, {theta}, 1e-3f) < 1e-4);
}

TEST_CASE("finite difference audit: linear layer plus cross entropy") {
    RngStream rng(26, 0);
    auto x = testutil::rand_uniform<float>({1, 6}, rng);
    auto w = testutil::rand_uniform<float>({3, 6}, rng);
    auto b = testutil::rand_uniform<float>({3}, rng);
    auto loss_fn = [&](Tape* tape) {
        return ops::cross_entropy(ops::linear(x, w, b, tape), {1}, tape);
    };
    CHECK(testutil::fd_max_rel_err<float>(loss_fn, {x, w, b}, 1e-2f, 1e-8, 1e-2) < 1e-3);
}

TEST_CASE("tape accumulates exactly once per use") {
    auto x = Tensor::scalar(1.5f, true);
    Tape tape;
    auto y = ops::add(x, x, &tape); // x used twice
    auto z = ops::weighted_sum(y, {1.0f}, &tape);
    tape.backward(z);
    CHECK(x.grad()[0] == 2.0f);

    auto bad = Tensor::from({2}, {1, 2});
    Tape t2;
    CHECK_THROWS_AS(t2.backward(bad), larc::ShapeError);
}

TEST_CASE("non-finite op outputs are an error state") {
    const float inf = std::numeric_limits<float>::infinity();
    auto a = Tensor::from({1, 1}, {inf});
    auto b = Tensor::from({1, 1}, {1.0f});
    CHECK_THROWS_AS(ops::matmul(a, b, nullptr), larc::NumericError);
}

TEST_CASE("seeded computation is bitwise reproducible") {
    auto run = [] {
        RngStream rng(99, 1);
        auto x = Tensor::randn({4, 4}, rng, 1.0);
        auto w = Tensor::randn({4, 4}, rng, 0.02);
        auto gain = Tensor::full({4}, 1.0f);
        auto bias = Tensor::zeros({4});
        auto h = ops::layer_norm(ops::matmul(x, w, nullptr), gain, bias, nullptr);
        RngStream drop(99, 2);
        return ops::dropout(ops::gelu(h, nullptr), 0.3, true, drop, nullptr);
    };
    auto r1 = run(), r2 = run();
    REQUIRE(r1.size() == r2.size());
    for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1.data()[i] == r2.data()[i]);
}
