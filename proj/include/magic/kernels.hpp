#pragma once

#include <cstdint>

namespace magic::kernels {

// OpenMP-parallel compute kernels. Every output element is written by exactly
// one thread and accumulated in a fixed order, so results are bit-identical
// for any thread count. A naive serial reference of each kernel lives in
// magic::kernels::serial and is used by the tests and the benchmark.

/// C[MxN] = A[MxK] * B[KxN] (+ C if accumulate). Row-major.
void gemm_nn(int M, int N, int K, const double* A, const double* B, double* C, bool accumulate);

/// C[MxN] = A[MxK] * B[NxK]^T (+ C if accumulate). Row-major.
void gemm_nt(int M, int N, int K, const double* A, const double* B, double* C, bool accumulate);

/// C[MxN] = A[KxM]^T * B[KxN] (+ C if accumulate). Row-major.
void gemm_tn(int M, int N, int K, const double* A, const double* B, double* C, bool accumulate);

/// Unfold conv patches of a batch chunk. im: [n, C, H, W] (n images,
/// contiguous). col: [C*kh*kw, n*OH*OW] with column index (i*OH+oh)*OW+ow.
/// Out-of-bounds taps (padding) are written as 0.
void im2col(const double* im, int n, int C, int H, int W, int kh, int kw, int stride, int pad,
            double* col);

/// Adjoint of im2col: accumulates col back into im (im must be pre-zeroed or
/// hold values to accumulate onto).
void col2im(const double* col, int n, int C, int H, int W, int kh, int kw, int stride, int pad,
            double* im);

/// Blocked deterministic sum: identical result for any thread count.
double sum(const double* x, int64_t n);
double dot(const double* a, const double* b, int64_t n);
double sum_sq(const double* x, int64_t n);

/// y += a*x
void axpy(int64_t n, double a, const double* x, double* y);

int conv_out_dim(int in, int k, int stride, int pad);

// ---------------------------------------------------------------------------
// Serial reference implementations (direct loops, no tiling, no OpenMP).
// ---------------------------------------------------------------------------
namespace serial {

void gemm_nn(int M, int N, int K, const double* A, const double* B, double* C, bool accumulate);
void gemm_nt(int M, int N, int K, const double* A, const double* B, double* C, bool accumulate);
void gemm_tn(int M, int N, int K, const double* A, const double* B, double* C, bool accumulate);

/// Direct convolution: x [N,Cin,H,W], w [Cout,Cin,kh,kw], b [Cout] (nullable),
/// y [N,Cout,OH,OW].
void conv2d_forward(const double* x, const double* w, const double* b, double* y, int N, int Cin,
                    int H, int W, int Cout, int kh, int kw, int stride, int pad);

/// gx [N,Cin,H,W] += adjoint of conv2d_forward applied to gy.
void conv2d_backward_input(const double* gy, const double* w, double* gx, int N, int Cin, int H,
                           int W, int Cout, int kh, int kw, int stride, int pad);

/// gw [Cout,Cin,kh,kw] and gb [Cout] (nullable) accumulate gradients.
void conv2d_backward_weight(const double* x, const double* gy, double* gw, double* gb, int N,
                            int Cin, int H, int W, int Cout, int kh, int kw, int stride, int pad);

double sum(const double* x, int64_t n);

}  // namespace serial

}  // namespace magic::kernels
