#include <doctest.h>

#include <cmath>
#include <limits>

#include "aetlab/autodiff.hpp"
#include "aetlab/error.hpp"
#include "aetlab/optim.hpp"
#include "gradcheck.hpp"

using namespace aetlab;
using testing::random_tensor;

TEST_CASE("every primitive matches central differences on 100 seeds") {
    for (const auto& c : testing::primitive_cases()) {
        double worst = 0.0;
        for (std::uint64_t s = 0; s < 100; ++s) worst = std::max(worst, testing::check_primitive(c, 1000 + s));
        INFO(c.name << " worst relative error " << worst);
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("composed models match central differences") {
    double mlp = 0.0, cnn = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        mlp = std::max(mlp, testing::check_mlp(s));
        cnn = std::max(cnn, testing::check_small_cnn(s));
    }
    CHECK(mlp <= 1e-4);
    CHECK(cnn <= 1e-4);
}

TEST_CASE("identity tape replays its input") {
    ad::Tape t;
    t.input(Tensor::vector({1.0, 2.0}));
    const Tensor in = Tensor::vector({1.0, 2.0});
    const Tensor& out = t.forward_eval(std::span<const Tensor>(&in, 1));
    CHECK(out == Tensor::vector({1.0, 2.0}));
}

TEST_CASE("cross-entropy of zero logits is log k") {
    for (int k : {2, 3, 10}) {
        ad::Tape t;
        const auto z = t.input(Tensor({1, static_cast<std::size_t>(k)}, 0.0));
        const auto l = ad::softmax_cross_entropy(t, z, {k - 1});
        CHECK(t.value(l).item() == doctest::Approx(std::log(static_cast<double>(k))).epsilon(1e-15));
    }
}

TEST_CASE("matmul agrees with a triple-loop oracle") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = random_tensor({5, 7}, rng), b = random_tensor({7, 3}, rng);
        ad::Tape t;
        const auto av = t.input(a);
        const auto out = ad::matmul(t, av, t.input(b));
        const auto ref = testing::matmul_oracle(a, b);
        for (std::size_t i = 0; i < ref.numel(); ++i) CHECK(t.value(out).data[i] == doctest::Approx(ref.data[i]).epsilon(1e-14));
    }
    ad::Tape t;
    const auto out = ad::matmul(t, t.input(Tensor({2, 2}, {1, 2, 3, 4})), t.input(Tensor({2, 2}, {5, 6, 7, 8})));
    CHECK(t.value(out) == Tensor({2, 2}, {19, 22, 43, 50}));
}

TEST_CASE("relu gradient is zero in the dead region") {
    ad::Tape t;
    const auto x = t.input(Tensor::vector({-1.0}), true);
    const auto g = t.backward(ad::sum(t, ad::relu(t, x)));
    CHECK(g[x].data[0] == 0.0);
}

TEST_CASE("sum(W·x) gradient has the outer-product structure") {
    std::mt19937_64 rng(5);
    const auto w = random_tensor({3, 4}, rng), x = random_tensor({4, 1}, rng);
    ad::Tape t;
    const auto W = t.input(w, true);
    const auto X = t.input(x, true);
    const auto g = t.backward(ad::sum(t, ad::matmul(t, W, X)));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) CHECK(g[W].data[i * 4 + j] == x.data[j]);
}

TEST_CASE("unused leaves get zero gradients and non-scalar losses are rejected") {
    ad::Tape t;
    const auto a = t.input(Tensor::vector({1.0, 2.0}), true);
    const auto unused = t.input(Tensor::vector({3.0}), true);
    const auto g = t.backward(ad::sum(t, a));
    CHECK(g[unused].data[0] == 0.0);
    CHECK_THROWS_AS(t.backward(a), ShapeError);
}

TEST_CASE("forward_eval shape mismatch names the primitive") {
    ad::Tape t;
    const auto a = t.input(Tensor({2, 3}, 1.0));
    const auto b = t.input(Tensor({3, 2}, 1.0));
    ad::matmul(t, a, b);
    const std::vector<Tensor> bad{Tensor({2, 3}, 1.0), Tensor({4, 2}, 1.0)};
    try {
        t.forward_eval(bad);
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("input") != std::string::npos);
    }
}

TEST_CASE("replay is bit-identical and follows new inputs") {
    std::mt19937_64 rng(9);
    const auto x = random_tensor({4, 3}, rng), w = random_tensor({3, 2}, rng);
    ad::Tape t;
    const auto xv = t.input(x);
    const auto wv = t.input(w);
    ad::relu(t, ad::matmul(t, xv, wv));
    const Tensor first = t.value(ad::Var{static_cast<int>(t.size()) - 1});
    const std::vector<Tensor> same{x, w};
    CHECK(t.forward_eval(same) == first);
    const std::vector<Tensor> other{random_tensor({4, 3}, rng), w};
    CHECK_FALSE(t.forward_eval(other) == first);
}

TEST_CASE("KL divergence of a distribution with itself is zero") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 20; ++i) {
        const auto p = random_tensor({3, 5}, rng, -4, 4);
        ad::Tape t;
        const auto v = t.input(p);
        CHECK(std::abs(t.value(ad::kl_divergence(t, v, t.input(p))).item()) <= 1e-15);
    }
}

TEST_CASE("adam: zero gradient with zero decay leaves parameters unchanged") {
    ParamList params{{"w", Tensor::vector({0.3, -1.2})}};
    optim::AdamHyper h;
    h.weight_decay = 0.0;
    optim::AdamState s(h, params);
    const auto before = params[0].value;
    for (int i = 0; i < 5; ++i) optim::adam_step(s, params, {Tensor::vector({0.0, 0.0})}, 1e-3);
    CHECK(params[0].value == before);
    CHECK(s.step == 5);
}

TEST_CASE("adam: constant gradient follows the scripted iteration") {
    const double g = 0.7, lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ParamList params{{"w", Tensor::vector({1.0})}};
    optim::AdamHyper h{lr, b1, b2, eps, 0.0};
    optim::AdamState s(h, params);
    double w = 1.0, m = 0.0, v = 0.0;
    for (int k = 1; k <= 25; ++k) {
        optim::adam_step(s, params, {Tensor::vector({g})}, lr);
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, k)), vh = v / (1 - std::pow(b2, k));
        w -= lr * mh / (std::sqrt(vh) + eps);
        CHECK(params[0].value.data[0] == doctest::Approx(w).epsilon(1e-13));
    }
}

TEST_CASE("adam: weight decay enters the gradient as an L2 term") {
    ParamList p1{{"w", Tensor::vector({2.0})}}, p2{{"w", Tensor::vector({2.0})}};
    optim::AdamHyper with{0.01, 0.9, 0.999, 1e-8, 0.1}, without{0.01, 0.9, 0.999, 1e-8, 0.0};
    optim::AdamState s1(with, p1), s2(without, p2);
    optim::adam_step(s1, p1, {Tensor::vector({0.5})}, 0.01);
    optim::adam_step(s2, p2, {Tensor::vector({0.5 + 0.1 * 2.0})}, 0.01);
    CHECK(p1[0].value == p2[0].value);
}

TEST_CASE("adam: defaults and NaN abort") {
    optim::AdamHyper h;
    CHECK(h.lr == 0.001);
    CHECK(h.beta1 == 0.9);
    CHECK(h.beta2 == 0.999);
    CHECK(h.weight_decay == 5e-4);
    ParamList params{{"layer.weight", Tensor::vector({1.0, 2.0})}};
    optim::AdamState s(h, params);
    const auto before = params[0].value;
    try {
        optim::adam_step(s, params, {Tensor::vector({0.1, std::numeric_limits<double>::quiet_NaN()})}, 1e-3);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("layer.weight") != std::string::npos);
    }
    CHECK(params[0].value == before);
    CHECK(s.step == 0);
}

TEST_CASE("cosine schedule endpoints, midpoint and monotonicity") {
    const optim::CosineSchedule s{0.001, 0.0, 100};
    CHECK(optim::cosine_lr(s, 0) == 0.001);
    CHECK(optim::cosine_lr(s, 100) == 0.0);
    CHECK(optim::cosine_lr(s, 50) == doctest::Approx(0.0005).epsilon(1e-15));
    for (int t = 0; t < 100; ++t) CHECK(optim::cosine_lr(s, t + 1) <= optim::cosine_lr(s, t));
    CHECK_THROWS_AS(optim::cosine_lr(s, 101), InvalidArgument);
    CHECK_THROWS_AS(optim::cosine_lr(s, -1), InvalidArgument);
}
