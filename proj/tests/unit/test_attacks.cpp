#include <doctest.h>

#include <cmath>

#include "aetlab/attacks.hpp"
#include "aetlab/error.hpp"
#include "support.hpp"

using namespace aetlab;
using namespace aetlab::attacks;
using testing::random_tensor;

namespace {

constexpr double px = 1.0 / 255.0;

double loss1(const models::CompositeModel& m, const Tensor& x, int y) {
    const int ys[1] = {y};
    Tensor row = x;
    if (row.rank() == 1) row.shape.insert(row.shape.begin(), 1);
    return models::cross_entropy_grads(m, row, ys).loss;
}

/// Margin z_other − z_y of a binary linear model at one point.
double margin(const Tensor& w, const Tensor& b, std::span<const double> x, int y) {
    const std::size_t D = w.dim(0);
    double zy = b.data[y], zo = b.data[1 - y];
    for (std::size_t j = 0; j < D; ++j) {
        zy += x[j] * w.data[j * 2 + y];
        zo += x[j] * w.data[j * 2 + 1 - y];
    }
    return zo - zy;
}

/// Closed-form ℓ∞ worst case of a binary linear model: move each coordinate by δ towards the other class, then clip.
Tensor linear_worst(const Tensor& w, const Tensor& x, int y, double delta) {
    Tensor out = x;
    for (std::size_t j = 0; j < x.numel(); ++j) {
        const double dir = w.data[j * 2 + 1 - y] - w.data[j * 2 + y];
        const double s = dir > 0 ? 1.0 : (dir < 0 ? -1.0 : 0.0);
        out.data[j] = std::clamp(x.data[j] + s * delta, 0.0, 1.0);
    }
    return out;
}

double linf_dist(const Tensor& a, const Tensor& b) { return distance(a.data, b.data, Norm::Linf); }

void check_feasible(const Tensor& adv, const Tensor& x, const ThreatModel& t) {
    const std::size_t n = x.dim(0), d = x.row_size();
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(distance(adv.row(i), x.row(i), t.p) <= t.delta + 1e-9);
        for (std::size_t j = 0; j < d; ++j) CHECK((adv.data[i * d + j] >= 0.0 && adv.data[i * d + j] <= 1.0));
    }
}

}  // namespace

TEST_CASE("projection: interior points, coordinate clamp and radial oracle") {
    const ThreatModel linf{Norm::Linf, 8 * px};
    const Tensor c({1, 3}, {0.5, 0.2, 0.9});
    CHECK(project_ball(c, c, linf) == c);
    const auto p = project_ball(Tensor({1, 3}, {1.0, 1.0, 1.0}), c, linf);
    CHECK(p.data[0] == 0.5 + 8 * px);

    std::mt19937_64 rng(1);
    const ThreatModel l2{Norm::L2, 0.1};
    for (int trial = 0; trial < 200; ++trial) {
        const auto center = random_tensor({1, 5}, rng, 0.0, 1.0);
        auto dir = random_tensor({1, 5}, rng);
        const double n = norm_of(dir.data, Norm::L2);
        Tensor cand = center;
        for (std::size_t j = 0; j < 5; ++j) cand.data[j] += 2 * l2.delta * dir.data[j] / n;
        const auto got = project_ball(cand, center, l2);
        for (std::size_t j = 0; j < 5; ++j) {
            const double expect = std::clamp(center.data[j] + l2.delta * dir.data[j] / n, 0.0, 1.0);
            CHECK(got.data[j] == doctest::Approx(expect).epsilon(1e-14));
        }
        CHECK(project_ball(got, center, l2) == got);
        const auto gi = project_ball(cand, center, linf);
        CHECK(project_ball(gi, center, linf) == gi);
    }
    CHECK_THROWS_AS(project_ball(Tensor({1, 2}), Tensor({1, 3}), linf), ShapeError);
}

TEST_CASE("fgsm: zero radius, zero gradient and the linear margin shift") {
    std::mt19937_64 rng(2);
    const auto w = random_tensor({6, 2}, rng), b = random_tensor({2}, rng);
    const auto m = testing::linear_model(w, b);
    const auto x = random_tensor({4, 6}, rng, 0.2, 0.8);
    const std::vector<int> y{0, 1, 1, 0};
    CHECK(fgsm(m, x, y, {Norm::Linf, 0.0}) == x);
    CHECK_THROWS_AS(fgsm(m, x, y, {Norm::L2, 0.1}), InvalidArgument);

    // zero weights make every input gradient exactly zero
    CHECK(fgsm(testing::linear_model(Tensor({6, 2}, 0.0), b), x, y, {Norm::Linf, 0.1}) == x);

    const double eps = 0.1;
    const auto adv = fgsm(m, x, y, {Norm::Linf, eps});
    for (std::size_t i = 0; i < 4; ++i) {
        double l1 = 0.0;
        for (std::size_t j = 0; j < 6; ++j) l1 += std::abs(w.data[j * 2] - w.data[j * 2 + 1]);
        const double shift = margin(w, b, adv.row(i), y[i]) - margin(w, b, x.row(i), y[i]);
        CHECK(shift == doctest::Approx(eps * l1).epsilon(1e-12));
    }
}

TEST_CASE("pgd: one step without random start is fgsm; zero radius returns x") {
    std::mt19937_64 rng(3);
    const auto m = models::build_model(models::ArchSpec::mlp({5, 7, 3}, 4));
    const auto x = random_tensor({6, 5}, rng, 0.0, 1.0);
    const auto y = testing::random_labels(6, 3, rng);
    for (double alpha : {0.05, 0.2}) {
        PgdConfig cfg{{Norm::Linf, 0.05}, alpha, 1, false, 0};
        CHECK(pgd(m, x, y, cfg) == fgsm(m, x, y, cfg.threat));
    }
    PgdConfig zero{{Norm::Linf, 0.0}, 0.01, 10, true, 9};
    CHECK(pgd(m, x, y, zero) == x);
    zero.threat.p = Norm::L2;
    CHECK(pgd(m, x, y, zero) == x);
}

TEST_CASE("pgd: linear models reach the analytic worst case") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        const auto w = random_tensor({4, 2}, rng), b = random_tensor({2}, rng);
        const auto m = testing::linear_model(w, b);
        // half the points sit near the box edge, where clipping matters
        const auto x = random_tensor({1, 4}, rng, trial % 2 ? 0.0 : 0.1, trial % 2 ? 1.0 : 0.9);
        const int y = trial % 2;
        const double delta = 0.1;
        PgdConfig cfg{{Norm::Linf, delta}, 0.03, 10, trial % 3 == 0, static_cast<std::uint64_t>(trial)};
        const auto adv = pgd(m, x, std::vector<int>{y}, cfg);
        const auto worst = linear_worst(w, x, y, delta);
        CHECK(loss1(m, adv, y) == doctest::Approx(loss1(m, worst, y)).epsilon(1e-6));
        if (trial % 2 == 0) {
            // interior points: the clipped corner is a grid point
            const auto bf = brute_force_worst_case(m, Tensor({4}, x.data), y, cfg.threat, 2);
            CHECK(bf.loss == doctest::Approx(loss1(m, worst, y)).epsilon(1e-12));
        }
    }
}

TEST_CASE("pgd is deterministic under its seed and every iterate stays feasible") {
    std::mt19937_64 rng(5);
    const auto m = models::build_model(models::ArchSpec::mlp({8, 10, 4}, 1));
    const auto x = random_tensor({5, 8}, rng, 0.0, 1.0);
    const auto y = testing::random_labels(5, 4, rng);
    for (Norm p : {Norm::Linf, Norm::L2}) {
        PgdConfig cfg{{p, 0.2}, 0.05, 7, true, 42};
        const auto a = pgd(m, x, y, cfg), b = pgd(m, x, y, cfg);
        CHECK(a == b);
        cfg.seed = 43;
        CHECK_FALSE(pgd(m, x, y, cfg) == a);

        int calls = 0;
        std::mt19937_64 r(1);
        pgd_ascent(
            x,
            [&](const Tensor& cur) {
                ++calls;
                check_feasible(cur, x, cfg.threat);
                return models::input_gradient(m, cur, y);
            },
            cfg, r);
        CHECK(calls == cfg.steps);
    }
}

TEST_CASE("attack outputs stay in the threat set for random models and inputs") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t d = 2 + trial % 5;
        const auto m = models::build_model(models::ArchSpec::mlp({d, 6, 3}, 100 + trial));
        const auto x = random_tensor({4, d}, rng, 0.0, 1.0);
        const auto y = testing::random_labels(4, 3, rng);
        const double delta = 0.02 + 0.3 * (trial % 4) / 3.0;
        for (Norm p : {Norm::Linf, Norm::L2}) {
            const PgdConfig cfg{{p, delta}, delta / 3, 5, trial % 2 == 0, static_cast<std::uint64_t>(trial)};
            check_feasible(pgd(m, x, y, cfg), x, cfg.threat);
        }
        check_feasible(fgsm(m, x, y, {Norm::Linf, delta}), x, {Norm::Linf, delta});
        const auto cw = cw_l2(m, x, y, CwConfig{1.0, 0.0, 10, 0.05});
        for (double v : cw.x_adv.data) CHECK((v >= 0.0 && v <= 1.0));
    }
}

TEST_CASE("cw: misclassified inputs, vanishing c and distance to a hyperplane") {
    const Tensor w({2, 2}, {1.0, -1.0, 0.5, -0.5});  // margin z0 − z1 = 2x₀ + x₁ + (b0 − b1)
    const Tensor b = Tensor::vector({-1.2, 0.0});
    const auto m = testing::linear_model(w, b);
    const Tensor pt({1, 2}, {0.55, 0.35});  // 2·0.55 + 0.35 − 1.2 = 0.25 > 0: class 0
    REQUIRE(models::predict(m, pt)[0] == 0);

    const auto wrong = cw_l2(m, pt, std::vector<int>{1}, CwConfig{});
    CHECK(wrong.found[0]);
    CHECK(distance(wrong.x_adv.data, pt.data, Norm::L2) <= 1e-6);

    const auto tiny = cw_l2(m, pt, std::vector<int>{0}, CwConfig{1e-8, 0.0, 100, 0.01});
    CHECK_FALSE(tiny.found[0]);
    CHECK(tiny.x_adv == pt);

    const double analytic = 0.25 / std::sqrt(2.0 * 2.0 + 1.0);
    const auto r = cw_l2(m, pt, std::vector<int>{0}, CwConfig{5.0, 0.0, 1000, 0.01});
    REQUIRE(r.found[0]);
    const double got = distance(r.x_adv.data, pt.data, Norm::L2);
    CHECK(got == doctest::Approx(analytic).epsilon(0.05));
}

TEST_CASE("brute force: zero radius, corner enumeration and dominance over pgd and fgsm") {
    std::mt19937_64 rng(7);
    const auto m2 = models::build_model(models::ArchSpec::mlp({2, 5, 2}, 3));
    const Tensor x2({2}, {0.4, 0.6});
    const auto z = brute_force_worst_case(m2, x2, 1, {Norm::Linf, 0.0}, 5);
    CHECK(z.x == x2);
    CHECK(z.loss == loss1(m2, x2, 1));

    const double d = 0.1;
    const auto bf = brute_force_worst_case(m2, x2, 1, {Norm::Linf, d}, 2);
    double corners = -1e300;
    for (double a : {-d, d})
        for (double c : {-d, d}) corners = std::max(corners, loss1(m2, Tensor({2}, {0.4 + a, 0.6 + c}), 1));
    CHECK(bf.loss == corners);

    CHECK_THROWS_AS(brute_force_worst_case(m2, Tensor({7}, 0.5), 0, {Norm::Linf, d}, 2), InvalidArgument);
    CHECK_THROWS_AS(brute_force_worst_case(m2, Tensor({6}, 0.5), 0, {Norm::Linf, d}, 11), InvalidArgument);

    // sign steps of δ/2 from x without a random start stay on the 5-level grid when no clipping occurs,
    // so the exhaustive maximum dominates every such iterate
    const auto m4 = models::build_model(models::ArchSpec::mlp({4, 8, 3}, 5));
    const ThreatModel t{Norm::Linf, 0.08};
    for (int trial = 0; trial < 200; ++trial) {
        const auto x = random_tensor({1, 4}, rng, 0.1, 0.9);
        const int y = trial % 3;
        const auto worst = brute_force_worst_case(m4, Tensor({4}, x.data), y, t, 5);
        const auto adv = pgd(m4, x, std::vector<int>{y}, PgdConfig{t, t.delta / 2, 6, false, 0});
        CHECK(worst.loss >= loss1(m4, adv, y) - 1e-12);
        CHECK(worst.loss >= loss1(m4, fgsm(m4, x, std::vector<int>{y}, t), y) - 1e-12);
        CHECK(linf_dist(Tensor({1, 4}, worst.x.data), x) <= t.delta + 1e-12);
    }
}

TEST_CASE("attack presets carry the listed budgets") {
    CHECK(preset("mnist-fgsm").pgd.threat.delta == 16 * px);
    CHECK(preset("mnist-pgd20").pgd.threat.delta == 32 * px);
    CHECK(preset("mnist-pgd20").pgd.steps == 20);
    CHECK(preset("mnist-pgd100").pgd.threat.delta == 64 * px);
    CHECK(preset("mnist-cw").cw.c == 2.0);
    CHECK(preset("cifar-pgd20").pgd.alpha == 2 * px);
    CHECK(preset("cifar-pgd100").pgd.threat.delta == 10 * px);
    CHECK(preset("cifar-cw").cw.steps == 100);
    CHECK(preset("cifar-cw").cw.lr == 0.01);
    for (const auto& n : preset_names()) CHECK(preset(n).name == n);
    CHECK_THROWS_AS(preset("nope"), InvalidArgument);
    CHECK_THROWS_AS((PgdConfig{{Norm::Linf, 0.1}, 0.0, 1}.validate()), InvalidArgument);
    CHECK_THROWS_AS((PgdConfig{{Norm::Linf, 0.1}, 0.1, 0}.validate()), InvalidArgument);
    CHECK_THROWS_AS((ThreatModel{Norm::Linf, -0.1}.validate()), InvalidArgument);
    CHECK_THROWS_AS((CwConfig{0.0}.validate()), InvalidArgument);
}
