#include <doctest.h>

#include <cmath>

#include "aetlab/kernels.hpp"
#include "support.hpp"

using namespace aetlab;
namespace k = aetlab::kernels;
namespace ref = aetlab::kernels::reference;

namespace {

std::vector<double> rand_vec(std::size_t n, std::mt19937_64& rng) { return testing::random_tensor({n}, rng).data; }

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("gemm matches the serial reference across awkward shapes") {
    std::mt19937_64 rng(1);
    const std::size_t dims[][3] = {{1, 1, 1}, {3, 5, 7}, {8, 16, 9}, {13, 17, 33}, {64, 31, 20}, {9, 24, 1}, {130, 40, 70}};
    for (const auto& d : dims) {
        const std::size_t M = d[0], N = d[1], K = d[2];
        const auto A = rand_vec(M * K, rng), B = rand_vec(K * N, rng), C0 = rand_vec(M * N, rng);
        for (bool acc : {false, true}) {
            auto c1 = C0, c2 = C0, c3 = C0;
            k::gemm(M, N, K, A.data(), K, B.data(), N, c1.data(), N, acc);
            k::gemm_parallel(M, N, K, A.data(), K, B.data(), N, c2.data(), N, acc);
            ref::gemm(M, N, K, A.data(), K, B.data(), N, c3.data(), N, acc);
            CHECK(max_abs_diff(c1, c3) <= 1e-12);
            CHECK(c1 == c2);
        }
    }
}

TEST_CASE("convolution, pooling and dense kernels match the reference") {
    std::mt19937_64 rng(2);
    for (const auto& g : {k::ConvGeom{2, 1, 6, 6, 3, 3}, k::ConvGeom{3, 4, 7, 5, 2, 3}, k::ConvGeom{1, 2, 8, 8, 5, 5},
                          k::ConvGeom{4, 3, 4, 4, 16, 3}}) {
        const auto x = rand_vec(g.batch * g.in_size(), rng), w = rand_vec(g.out_channels * g.patch(), rng);
        const auto b = rand_vec(g.out_channels, rng), gy = rand_vec(g.batch * g.out_size(), rng);
        std::vector<double> y1(g.batch * g.out_size()), y2(y1.size());
        k::conv2d_forward(g, x.data(), w.data(), b.data(), y1.data());
        ref::conv2d_forward(g, x.data(), w.data(), b.data(), y2.data());
        CHECK(max_abs_diff(y1, y2) <= 1e-12);

        std::vector<double> gx1(x.size()), gx2(x.size());
        k::conv2d_backward_input(g, gy.data(), w.data(), gx1.data());
        ref::conv2d_backward_input(g, gy.data(), w.data(), gx2.data());
        CHECK(max_abs_diff(gx1, gx2) <= 1e-12);

        std::vector<double> gw1(w.size()), gw2(w.size()), gb1(b.size()), gb2(b.size());
        k::conv2d_backward_params(g, gy.data(), x.data(), gw1.data(), gb1.data());
        ref::conv2d_backward_params(g, gy.data(), x.data(), gw2.data(), gb2.data());
        CHECK(max_abs_diff(gw1, gw2) <= 1e-11);
        CHECK(max_abs_diff(gb1, gb2) <= 1e-12);
    }

    const std::size_t planes = 5, H = 6, W = 4;
    const auto x = rand_vec(planes * H * W, rng), gy = rand_vec(planes * H * W / 4, rng);
    std::vector<double> p1(planes * H * W / 4), p2(p1.size()), q1(x.size()), q2(x.size());
    k::avgpool2_forward(planes, H, W, x.data(), p1.data());
    ref::avgpool2_forward(planes, H, W, x.data(), p2.data());
    CHECK(p1 == p2);
    k::avgpool2_backward(planes, H, W, gy.data(), q1.data());
    ref::avgpool2_backward(planes, H, W, gy.data(), q2.data());
    CHECK(q1 == q2);

    const std::size_t n = 37, d = 19, f = 11;
    const auto dx = rand_vec(n * d, rng), dw = rand_vec(d * f, rng), db = rand_vec(f, rng), dgy = rand_vec(n * f, rng);
    std::vector<double> y1(n * f), y2(n * f), gx1(n * d), gx2(n * d), gw1(d * f), gw2(d * f), gb1(f), gb2(f);
    k::dense_forward(n, d, f, dx.data(), dw.data(), db.data(), y1.data());
    ref::dense_forward(n, d, f, dx.data(), dw.data(), db.data(), y2.data());
    CHECK(max_abs_diff(y1, y2) <= 1e-12);
    k::dense_backward_input(n, d, f, dgy.data(), dw.data(), gx1.data());
    ref::dense_backward_input(n, d, f, dgy.data(), dw.data(), gx2.data());
    CHECK(max_abs_diff(gx1, gx2) <= 1e-12);
    k::dense_backward_params(n, d, f, dgy.data(), dx.data(), gw1.data(), gb1.data());
    ref::dense_backward_params(n, d, f, dgy.data(), dx.data(), gw2.data(), gb2.data());
    CHECK(max_abs_diff(gw1, gw2) <= 1e-12);
    CHECK(max_abs_diff(gb1, gb2) <= 1e-12);
}

TEST_CASE("kernel results do not depend on the thread count") {
    std::mt19937_64 rng(3);
    const k::ConvGeom g{6, 3, 10, 10, 8, 3};
    const auto x = rand_vec(g.batch * g.in_size(), rng), w = rand_vec(g.out_channels * g.patch(), rng);
    const auto gy = rand_vec(g.batch * g.out_size(), rng);
    const int saved = k::num_threads();
    std::vector<std::vector<double>> outs;
    for (int t : {1, 2, 3, 4}) {
        k::set_num_threads(t);
        std::vector<double> gw(w.size()), gb(g.out_channels), y(g.batch * g.out_size());
        k::conv2d_backward_params(g, gy.data(), x.data(), gw.data(), gb.data());
        k::conv2d_forward(g, x.data(), w.data(), gb.data(), y.data());
        gw.insert(gw.end(), y.begin(), y.end());
        outs.push_back(gw);
    }
    k::set_num_threads(saved);
    for (const auto& o : outs) CHECK(o == outs.front());
}
