#include "aetlab/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif
#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace aetlab::kernels {

namespace {

#if defined(__GLIBC__)
// Tape temporaries are large and short-lived; keeping them on the heap instead of
// fresh mmap regions avoids a page-fault storm on every forward/backward pass.
const bool kHeapTuned = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
}();
#endif

using v8d = double __attribute__((vector_size(64)));

// Register-blocked MR×(8·NV) tile held in vector accumulators. Every C element
// is summed over k in order, so results do not depend on the blocking.
template <int MR, int NV>
inline void tile(std::size_t K, const double* A, std::size_t lda, const double* B, std::size_t ldb, double* C,
                 std::size_t ldc, bool accumulate) {
    v8d acc[MR][NV];
    for (int r = 0; r < MR; ++r)
        for (int c = 0; c < NV; ++c) {
            if (accumulate)
                std::memcpy(&acc[r][c], C + r * ldc + 8 * c, sizeof(v8d));
            else
                acc[r][c] = v8d{};
        }
    for (std::size_t k = 0; k < K; ++k) {
        v8d b[NV];
        for (int c = 0; c < NV; ++c) std::memcpy(&b[c], B + k * ldb + 8 * c, sizeof(v8d));
        for (int r = 0; r < MR; ++r) {
            const double a = A[r * lda + k];
            for (int c = 0; c < NV; ++c) acc[r][c] += a * b[c];
        }
    }
    for (int r = 0; r < MR; ++r)
        for (int c = 0; c < NV; ++c) std::memcpy(C + r * ldc + 8 * c, &acc[r][c], sizeof(v8d));
}

template <int MR>
inline void tail(std::size_t K, const double* A, std::size_t lda, const double* B, std::size_t ldb, double* C,
                 std::size_t ldc, bool accumulate) {
    double acc[MR];
    for (int r = 0; r < MR; ++r) acc[r] = accumulate ? C[r * ldc] : 0.0;
    for (std::size_t k = 0; k < K; ++k)
        for (int r = 0; r < MR; ++r) acc[r] += A[r * lda + k] * B[k * ldb];
    for (int r = 0; r < MR; ++r) C[r * ldc] = acc[r];
}

template <int MR>
inline void row_block(std::size_t N, std::size_t K, const double* A, std::size_t lda, const double* B,
                      std::size_t ldb, double* C, std::size_t ldc, bool accumulate) {
    std::size_t j = 0;
    for (; j + 16 <= N; j += 16) tile<MR, 2>(K, A, lda, B + j, ldb, C + j, ldc, accumulate);
    for (; j + 8 <= N; j += 8) tile<MR, 1>(K, A, lda, B + j, ldb, C + j, ldc, accumulate);
    for (; j < N; ++j) tail<MR>(K, A, lda, B + j, ldb, C + j, ldc, accumulate);
}

// Valid output columns [x0, x1) for horizontal kernel offset kx under zero padding.
inline void valid_range(std::size_t W, std::size_t kx, std::size_t pad, std::size_t& x0, std::size_t& x1) {
    x0 = kx < pad ? pad - kx : 0;
    x1 = kx > pad ? W - (kx - pad) : W;
}

// cols[(c,ky,kx) × (y,x)] for one image.
void im2col(const ConvGeom& g, const double* img, double* cols) {
    const std::size_t H = g.height, W = g.width, k = g.kernel, pad = g.pad();
    const std::size_t HW = H * W;
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        const double* plane = img + c * HW;
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx, ++row) {
                double* out = cols + row * HW;
                std::size_t x0, x1;
                valid_range(W, kx, pad, x0, x1);
                for (std::size_t y = 0; y < H; ++y) {
                    double* o = out + y * W;
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) {
                        std::fill(o, o + W, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(sy) * W;
                    std::fill(o, o + x0, 0.0);
                    std::copy(src + (x0 + kx - pad), src + (x1 + kx - pad), o + x0);
                    std::fill(o + x1, o + W, 0.0);
                }
            }
        }
    }
}

void col2im_add(const ConvGeom& g, const double* cols, double* img) {
    const std::size_t H = g.height, W = g.width, k = g.kernel, pad = g.pad();
    const std::size_t HW = H * W;
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        double* plane = img + c * HW;
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx, ++row) {
                const double* in = cols + row * HW;
                std::size_t x0, x1;
                valid_range(W, kx, pad, x0, x1);
                for (std::size_t y = 0; y < H; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
                    double* dst = plane + static_cast<std::size_t>(sy) * W;
                    const double* src = in + y * W;
                    for (std::size_t x = x0; x < x1; ++x) dst[x + kx - pad] += src[x];
                }
            }
        }
    }
}

std::ptrdiff_t as_index(std::size_t n) { return static_cast<std::ptrdiff_t>(n); }

}  // namespace

void set_num_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

int num_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void gemm(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda, const double* B,
          std::size_t ldb, double* C, std::size_t ldc, bool accumulate) {
    std::size_t i = 0;
    for (; i + 8 <= M; i += 8) row_block<8>(N, K, A + i * lda, lda, B, ldb, C + i * ldc, ldc, accumulate);
    for (; i + 4 <= M; i += 4) row_block<4>(N, K, A + i * lda, lda, B, ldb, C + i * ldc, ldc, accumulate);
    for (; i < M; ++i) row_block<1>(N, K, A + i * lda, lda, B, ldb, C + i * ldc, ldc, accumulate);
}

void gemm_parallel(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda, const double* B,
                   std::size_t ldb, double* C, std::size_t ldc, bool accumulate) {
    const std::ptrdiff_t blocks = as_index((M + 7) / 8);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < blocks; ++b) {
        const std::size_t i0 = static_cast<std::size_t>(b) * 8;
        const std::size_t rows = std::min<std::size_t>(8, M - i0);
        gemm(rows, N, K, A + i0 * lda, lda, B, ldb, C + i0 * ldc, ldc, accumulate);
    }
}

void transpose(std::size_t rows, std::size_t cols, const double* in, double* out) {
    constexpr std::size_t block = 32;
    for (std::size_t i0 = 0; i0 < rows; i0 += block)
        for (std::size_t j0 = 0; j0 < cols; j0 += block)
            for (std::size_t i = i0; i < std::min(rows, i0 + block); ++i)
                for (std::size_t j = j0; j < std::min(cols, j0 + block); ++j) out[j * rows + i] = in[i * cols + j];
}

void conv2d_forward(const ConvGeom& g, const double* x, const double* w, const double* b, double* y) {
    const std::size_t K = g.patch(), HW = g.pixels(), O = g.out_channels;
#pragma omp parallel
    {
        std::vector<double> cols(K * HW);
#pragma omp for schedule(static)
        for (std::ptrdiff_t n = 0; n < as_index(g.batch); ++n) {
            const auto i = static_cast<std::size_t>(n);
            im2col(g, x + i * g.in_size(), cols.data());
            double* out = y + i * g.out_size();
            for (std::size_t o = 0; o < O; ++o) std::fill(out + o * HW, out + (o + 1) * HW, b[o]);
            gemm(O, HW, K, w, K, cols.data(), HW, out, HW, true);
        }
    }
}

void conv2d_backward_input(const ConvGeom& g, const double* gy, const double* w, double* gx) {
    const std::size_t K = g.patch(), HW = g.pixels(), O = g.out_channels;
    std::vector<double> wt(K * O);
    transpose(O, K, w, wt.data());
#pragma omp parallel
    {
        std::vector<double> gcols(K * HW);
#pragma omp for schedule(static)
        for (std::ptrdiff_t n = 0; n < as_index(g.batch); ++n) {
            const auto i = static_cast<std::size_t>(n);
            gemm(K, HW, O, wt.data(), O, gy + i * g.out_size(), HW, gcols.data(), HW, false);
            double* dst = gx + i * g.in_size();
            std::fill(dst, dst + g.in_size(), 0.0);
            col2im_add(g, gcols.data(), dst);
        }
    }
}

void conv2d_backward_params(const ConvGeom& g, const double* gy, const double* x, double* gw, double* gb) {
    const std::size_t K = g.patch(), HW = g.pixels(), O = g.out_channels;
    const std::size_t part = O * K + O;
    std::vector<double> partials(g.batch * part);
#pragma omp parallel
    {
        std::vector<double> cols(K * HW);
        std::vector<double> cols_t(HW * K);
#pragma omp for schedule(static)
        for (std::ptrdiff_t n = 0; n < as_index(g.batch); ++n) {
            const auto i = static_cast<std::size_t>(n);
            im2col(g, x + i * g.in_size(), cols.data());
            transpose(K, HW, cols.data(), cols_t.data());
            const double* gyi = gy + i * g.out_size();
            double* p = partials.data() + i * part;
            gemm(O, K, HW, gyi, HW, cols_t.data(), K, p, K, false);
            for (std::size_t o = 0; o < O; ++o) {
                double s = 0.0;
                for (std::size_t q = 0; q < HW; ++q) s += gyi[o * HW + q];
                p[O * K + o] = s;
            }
        }
    }
    std::fill(gw, gw + O * K, 0.0);
    std::fill(gb, gb + O, 0.0);
    for (std::size_t i = 0; i < g.batch; ++i) {
        const double* p = partials.data() + i * part;
        for (std::size_t j = 0; j < O * K; ++j) gw[j] += p[j];
        for (std::size_t o = 0; o < O; ++o) gb[o] += p[O * K + o];
    }
}

void avgpool2_forward(std::size_t planes, std::size_t height, std::size_t width, const double* x, double* y) {
    const std::size_t oh = height / 2, ow = width / 2;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t p = 0; p < as_index(planes); ++p) {
        const double* in = x + static_cast<std::size_t>(p) * height * width;
        double* out = y + static_cast<std::size_t>(p) * oh * ow;
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                const double* r0 = in + (2 * i) * width + 2 * j;
                const double* r1 = r0 + width;
                out[i * ow + j] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
            }
    }
}

void avgpool2_backward(std::size_t planes, std::size_t height, std::size_t width, const double* gy, double* gx) {
    const std::size_t oh = height / 2, ow = width / 2;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t p = 0; p < as_index(planes); ++p) {
        const double* in = gy + static_cast<std::size_t>(p) * oh * ow;
        double* out = gx + static_cast<std::size_t>(p) * height * width;
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                const double v = 0.25 * in[i * ow + j];
                double* r0 = out + (2 * i) * width + 2 * j;
                double* r1 = r0 + width;
                r0[0] = v;
                r0[1] = v;
                r1[0] = v;
                r1[1] = v;
            }
    }
}

void dense_forward(std::size_t n, std::size_t d, std::size_t f, const double* x, const double* w, const double* b,
                   double* y) {
    for (std::size_t i = 0; i < n; ++i) std::copy(b, b + f, y + i * f);
    gemm_parallel(n, f, d, x, d, w, f, y, f, true);
}

void dense_backward_input(std::size_t n, std::size_t d, std::size_t f, const double* gy, const double* w,
                          double* gx) {
    std::vector<double> wt(f * d);
    transpose(d, f, w, wt.data());
    gemm_parallel(n, d, f, gy, f, wt.data(), d, gx, d, false);
}

void dense_backward_params(std::size_t n, std::size_t d, std::size_t f, const double* gy, const double* x,
                           double* gw, double* gb) {
    std::vector<double> xt(d * n);
    transpose(n, d, x, xt.data());
    gemm_parallel(d, f, n, xt.data(), n, gy, f, gw, f, false);
    std::fill(gb, gb + f, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) gb[j] += gy[i * f + j];
}

namespace reference {

void gemm(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda, const double* B,
          std::size_t ldb, double* C, std::size_t ldc, bool accumulate) {
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            double s = accumulate ? C[i * ldc + j] : 0.0;
            for (std::size_t k = 0; k < K; ++k) s += A[i * lda + k] * B[k * ldb + j];
            C[i * ldc + j] = s;
        }
}

namespace {
double padded(const ConvGeom& g, const double* img, std::size_t c, std::ptrdiff_t y, std::ptrdiff_t x) {
    if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(g.height) || x >= static_cast<std::ptrdiff_t>(g.width))
        return 0.0;
    return img[(c * g.height + static_cast<std::size_t>(y)) * g.width + static_cast<std::size_t>(x)];
}
}  // namespace

void conv2d_forward(const ConvGeom& g, const double* x, const double* w, const double* b, double* y) {
    const auto pad = static_cast<std::ptrdiff_t>(g.pad());
    const std::size_t k = g.kernel;
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t o = 0; o < g.out_channels; ++o)
            for (std::size_t i = 0; i < g.height; ++i)
                for (std::size_t j = 0; j < g.width; ++j) {
                    double s = b[o];
                    for (std::size_t c = 0; c < g.in_channels; ++c)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx)
                                s += w[((o * g.in_channels + c) * k + ky) * k + kx] *
                                     padded(g, x + n * g.in_size(), c,
                                            static_cast<std::ptrdiff_t>(i + ky) - pad,
                                            static_cast<std::ptrdiff_t>(j + kx) - pad);
                    y[n * g.out_size() + (o * g.height + i) * g.width + j] = s;
                }
}

void conv2d_backward_input(const ConvGeom& g, const double* gy, const double* w, double* gx) {
    const auto pad = static_cast<std::ptrdiff_t>(g.pad());
    const std::size_t k = g.kernel;
    std::fill(gx, gx + g.batch * g.in_size(), 0.0);
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t o = 0; o < g.out_channels; ++o)
            for (std::size_t i = 0; i < g.height; ++i)
                for (std::size_t j = 0; j < g.width; ++j) {
                    const double go = gy[n * g.out_size() + (o * g.height + i) * g.width + j];
                    for (std::size_t c = 0; c < g.in_channels; ++c)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const auto sy = static_cast<std::ptrdiff_t>(i + ky) - pad;
                                const auto sx = static_cast<std::ptrdiff_t>(j + kx) - pad;
                                if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(g.height) ||
                                    sx >= static_cast<std::ptrdiff_t>(g.width))
                                    continue;
                                gx[n * g.in_size() + (c * g.height + static_cast<std::size_t>(sy)) * g.width +
                                   static_cast<std::size_t>(sx)] += go * w[((o * g.in_channels + c) * k + ky) * k + kx];
                            }
                }
}

void conv2d_backward_params(const ConvGeom& g, const double* gy, const double* x, double* gw, double* gb) {
    const auto pad = static_cast<std::ptrdiff_t>(g.pad());
    const std::size_t k = g.kernel;
    std::fill(gw, gw + g.out_channels * g.patch(), 0.0);
    std::fill(gb, gb + g.out_channels, 0.0);
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t o = 0; o < g.out_channels; ++o)
            for (std::size_t i = 0; i < g.height; ++i)
                for (std::size_t j = 0; j < g.width; ++j) {
                    const double go = gy[n * g.out_size() + (o * g.height + i) * g.width + j];
                    gb[o] += go;
                    for (std::size_t c = 0; c < g.in_channels; ++c)
                        for (std::size_t ky = 0; ky < k; ++ky)
                            for (std::size_t kx = 0; kx < k; ++kx)
                                gw[((o * g.in_channels + c) * k + ky) * k + kx] +=
                                    go * padded(g, x + n * g.in_size(), c, static_cast<std::ptrdiff_t>(i + ky) - pad,
                                                static_cast<std::ptrdiff_t>(j + kx) - pad);
                }
}

void avgpool2_forward(std::size_t planes, std::size_t height, std::size_t width, const double* x, double* y) {
    const std::size_t oh = height / 2, ow = width / 2;
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                double s = 0.0;
                for (std::size_t a = 0; a < 2; ++a)
                    for (std::size_t b = 0; b < 2; ++b) s += x[(p * height + 2 * i + a) * width + 2 * j + b];
                y[(p * oh + i) * ow + j] = s / 4.0;
            }
}

void avgpool2_backward(std::size_t planes, std::size_t height, std::size_t width, const double* gy, double* gx) {
    const std::size_t oh = height / 2, ow = width / 2;
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < height; ++i)
            for (std::size_t j = 0; j < width; ++j)
                gx[(p * height + i) * width + j] = gy[(p * oh + i / 2) * ow + j / 2] / 4.0;
}

void dense_forward(std::size_t n, std::size_t d, std::size_t f, const double* x, const double* w, const double* b,
                   double* y) {
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < f; ++j) {
            double s = b[j];
            for (std::size_t k = 0; k < d; ++k) s += x[i * d + k] * w[k * f + j];
            y[i * f + j] = s;
        }
}

void dense_backward_input(std::size_t n, std::size_t d, std::size_t f, const double* gy, const double* w,
                          double* gx) {
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < f; ++j) s += gy[i * f + j] * w[k * f + j];
            gx[i * d + k] = s;
        }
}

void dense_backward_params(std::size_t n, std::size_t d, std::size_t f, const double* gy, const double* x,
                           double* gw, double* gb) {
    for (std::size_t k = 0; k < d; ++k)
        for (std::size_t j = 0; j < f; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += x[i * d + k] * gy[i * f + j];
            gw[k * f + j] = s;
        }
    for (std::size_t j = 0; j < f; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += gy[i * f + j];
        gb[j] = s;
    }
}

}  // namespace reference

}  // namespace aetlab::kernels
