#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "aetlab/autodiff.hpp"
#include "aetlab/models.hpp"
#include "aetlab/tensor.hpp"

namespace testing {

using aetlab::Shape;
using aetlab::Tensor;

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(shape);
    for (double& v : t.data) v = u(rng);
    return t;
}

inline std::vector<int> random_labels(std::size_t n, int k, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> u(0, k - 1);
    std::vector<int> y(n);
    for (int& v : y) v = u(rng);
    return y;
}

/// ||a − n||₂ / max(||a||₂, ||n||₂): the usual gradient-check ratio, robust to near-zero entries.
inline double rel_error(const std::vector<double>& a, const std::vector<double>& n) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - n[i]) * (a[i] - n[i]);
        na += a[i] * a[i];
        nn += n[i] * n[i];
    }
    const double scale = std::sqrt(std::max(na, nn));
    return scale > 1e-12 ? std::sqrt(diff) / scale : std::sqrt(diff);
}

/// Central differences of a scalar function of `x`, step h.
inline std::vector<double> numeric_grad(const std::function<double(const Tensor&)>& f, Tensor x, double h = 1e-5) {
    std::vector<double> g(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double keep = x.data[i];
        x.data[i] = keep + h;
        const double fp = f(x);
        x.data[i] = keep - h;
        const double fm = f(x);
        x.data[i] = keep;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

/// Naive triple loop C = A·B.
inline Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c({m, n}, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a.data[i * k + p] * b.data[p * n + j];
            c.data[i * n + j] = s;
        }
    return c;
}

/// A model whose only layer is the head: logits = x·W + b.
inline aetlab::models::CompositeModel linear_model(const Tensor& w, const Tensor& b) {
    auto m = aetlab::models::build_model(aetlab::models::ArchSpec::mlp({w.dim(0), w.dim(1)}));
    m.params[0].value = w;
    m.params[1].value = b;
    return m;
}

}  // namespace testing
