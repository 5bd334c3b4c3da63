// Serial reference kernels against the OpenMP kernels on small_cnn-sized shapes.
// Usage: aetlab_bench [repeats]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "aetlab/kernels.hpp"

namespace k = aetlab::kernels;

namespace {

std::vector<double> randv(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    std::vector<double> v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

double best_of(int repeats, const std::function<void()>& f) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void row(const std::string& name, double ref, double fast, double diff) {
    std::printf("%-28s %10.3f %10.3f %8.2fx %10.2e\n", name.c_str(), ref * 1e3, fast * 1e3, ref / fast, diff);
}

}  // namespace

int main(int argc, char** argv) {
    const int repeats = argc > 1 ? std::max(1, std::atoi(argv[1])) : 5;
    std::mt19937_64 rng(1);
    std::printf("threads %d, best of %d\n", k::num_threads(), repeats);
    std::printf("%-28s %10s %10s %9s %10s\n", "kernel", "ref ms", "omp ms", "speedup", "max diff");

    {
        const std::size_t M = 256, N = 256, K = 512;
        const auto A = randv(M * K, rng), B = randv(K * N, rng);
        std::vector<double> c1(M * N), c2(M * N), c3(M * N);
        const double r = best_of(repeats, [&] { k::reference::gemm(M, N, K, A.data(), K, B.data(), N, c1.data(), N); });
        const double f = best_of(repeats, [&] { k::gemm(M, N, K, A.data(), K, B.data(), N, c2.data(), N); });
        const double p = best_of(repeats, [&] { k::gemm_parallel(M, N, K, A.data(), K, B.data(), N, c3.data(), N); });
        row("gemm 256x256x512", r, f, max_abs_diff(c1, c2));
        row("gemm_parallel 256x256x512", r, p, max_abs_diff(c1, c3));
    }

    for (const auto& g : {k::ConvGeom{64, 1, 28, 28, 16, 3}, k::ConvGeom{64, 16, 14, 14, 32, 3}}) {
        const auto x = randv(g.batch * g.in_size(), rng), w = randv(g.out_channels * g.patch(), rng);
        const auto b = randv(g.out_channels, rng), gy = randv(g.batch * g.out_size(), rng);
        const std::string shape = std::to_string(g.in_channels) + "->" + std::to_string(g.out_channels) + " " +
                                  std::to_string(g.height) + "x" + std::to_string(g.width);
        std::vector<double> y1(g.batch * g.out_size()), y2(y1.size());
        row("conv fwd " + shape, best_of(repeats, [&] { k::reference::conv2d_forward(g, x.data(), w.data(), b.data(), y1.data()); }),
            best_of(repeats, [&] { k::conv2d_forward(g, x.data(), w.data(), b.data(), y2.data()); }), max_abs_diff(y1, y2));
        std::vector<double> gx1(x.size()), gx2(x.size());
        row("conv bwd-in " + shape, best_of(repeats, [&] { k::reference::conv2d_backward_input(g, gy.data(), w.data(), gx1.data()); }),
            best_of(repeats, [&] { k::conv2d_backward_input(g, gy.data(), w.data(), gx2.data()); }), max_abs_diff(gx1, gx2));
        std::vector<double> gw1(w.size()), gw2(w.size()), gb1(b.size()), gb2(b.size());
        row("conv bwd-par " + shape,
            best_of(repeats, [&] { k::reference::conv2d_backward_params(g, gy.data(), x.data(), gw1.data(), gb1.data()); }),
            best_of(repeats, [&] { k::conv2d_backward_params(g, gy.data(), x.data(), gw2.data(), gb2.data()); }),
            std::max(max_abs_diff(gw1, gw2), max_abs_diff(gb1, gb2)));
    }

    {
        const std::size_t n = 64, d = 1568, f = 10;
        const auto x = randv(n * d, rng), w = randv(d * f, rng), b = randv(f, rng);
        std::vector<double> y1(n * f), y2(n * f);
        row("dense fwd 64x1568x10", best_of(repeats, [&] { k::reference::dense_forward(n, d, f, x.data(), w.data(), b.data(), y1.data()); }),
            best_of(repeats, [&] { k::dense_forward(n, d, f, x.data(), w.data(), b.data(), y2.data()); }), max_abs_diff(y1, y2));
    }
    return 0;
}
