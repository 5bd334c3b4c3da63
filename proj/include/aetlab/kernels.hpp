#pragma once

// Compute kernels behind the autodiff primitives.
//
// Every kernel in `aetlab::kernels` partitions its *outputs* across OpenMP
// threads (batch items for convolutions, row blocks for dense products) and
// accumulates each output in a fixed order, so results are bit-identical for
// any thread count. Cross-item reductions (parameter gradients) go through
// per-item partial buffers summed in item order.
//
// `aetlab::kernels::reference` holds straightforward serial loops with the
// same signatures. They are kept for tests and for bench_kernels.

#include <cstddef>

namespace aetlab::kernels {

void set_num_threads(int n);
int num_threads();

/// C[M×N] (+)= A[M×K] · B[K×N], row-major with leading dimensions.
void gemm(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda, const double* B,
          std::size_t ldb, double* C, std::size_t ldc, bool accumulate = false);

/// Same as gemm, with the rows of C split across threads.
void gemm_parallel(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda,
                   const double* B, std::size_t ldb, double* C, std::size_t ldc, bool accumulate = false);

/// out[cols×rows] = in[rows×cols]ᵀ
void transpose(std::size_t rows, std::size_t cols, const double* in, double* out);

/// Stride-1, zero-padded ("same") 2-D convolution with an odd square kernel.
struct ConvGeom {
    std::size_t batch = 0;
    std::size_t in_channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 3;

    std::size_t pad() const noexcept { return kernel / 2; }
    std::size_t patch() const noexcept { return in_channels * kernel * kernel; }
    std::size_t pixels() const noexcept { return height * width; }
    std::size_t in_size() const noexcept { return in_channels * pixels(); }
    std::size_t out_size() const noexcept { return out_channels * pixels(); }
};

// x[N,C,H,W], w[O,C,k,k], b[O], y[N,O,H,W]
void conv2d_forward(const ConvGeom& g, const double* x, const double* w, const double* b, double* y);
void conv2d_backward_input(const ConvGeom& g, const double* gy, const double* w, double* gx);
void conv2d_backward_params(const ConvGeom& g, const double* gy, const double* x, double* gw, double* gb);

// 2×2 average pooling, stride 2, on `planes` planes of H×W (H, W even).
void avgpool2_forward(std::size_t planes, std::size_t height, std::size_t width, const double* x, double* y);
void avgpool2_backward(std::size_t planes, std::size_t height, std::size_t width, const double* gy, double* gx);

// y[N×F] = x[N×D] · W[D×F] + b[F]
void dense_forward(std::size_t n, std::size_t d, std::size_t f, const double* x, const double* w, const double* b,
                   double* y);
void dense_backward_input(std::size_t n, std::size_t d, std::size_t f, const double* gy, const double* w,
                          double* gx);
void dense_backward_params(std::size_t n, std::size_t d, std::size_t f, const double* gy, const double* x,
                           double* gw, double* gb);

namespace reference {

void gemm(std::size_t M, std::size_t N, std::size_t K, const double* A, std::size_t lda, const double* B,
          std::size_t ldb, double* C, std::size_t ldc, bool accumulate = false);
void conv2d_forward(const ConvGeom& g, const double* x, const double* w, const double* b, double* y);
void conv2d_backward_input(const ConvGeom& g, const double* gy, const double* w, double* gx);
void conv2d_backward_params(const ConvGeom& g, const double* gy, const double* x, double* gw, double* gb);
void avgpool2_forward(std::size_t planes, std::size_t height, std::size_t width, const double* x, double* y);
void avgpool2_backward(std::size_t planes, std::size_t height, std::size_t width, const double* gy, double* gx);
void dense_forward(std::size_t n, std::size_t d, std::size_t f, const double* x, const double* w, const double* b,
                   double* y);
void dense_backward_input(std::size_t n, std::size_t d, std::size_t f, const double* gy, const double* w,
                          double* gx);
void dense_backward_params(std::size_t n, std::size_t d, std::size_t f, const double* gy, const double* x,
                           double* gw, double* gb);

}  // namespace reference

}  // namespace aetlab::kernels
