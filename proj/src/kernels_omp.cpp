#include "magic/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace magic::kernels {

namespace {
constexpr int64_t kSumBlock = 4096;  // fixed block size keeps reductions schedule-independent
}

int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// One packed, tiled GEMM core serves all three layout variants. A-panels are
// packed as 4-row micro-panels, B-panels as 8-column micro-panels; the 4x8
// micro-kernel keeps its accumulators in registers. Each C tile is owned by
// exactly one thread and the k blocks are accumulated in ascending order, so
// results are bit-identical for any thread count.
namespace {

constexpr int MR = 4, NR = 8;
constexpr int MC = 64, KC = 256, NC = 1024;

enum class LayoutA { RowMajor, Transposed };   // Transposed: A is [K x M]
enum class LayoutB { RowMajor, Transposed };   // Transposed: B is [N x K]

inline double load_a(const double* A, int64_t lda, LayoutA la, int i, int k) {
    return la == LayoutA::RowMajor ? A[static_cast<int64_t>(i) * lda + k]
                                   : A[static_cast<int64_t>(k) * lda + i];
}

inline double load_b(const double* B, int64_t ldb, LayoutB lb, int k, int j) {
    return lb == LayoutB::RowMajor ? B[static_cast<int64_t>(k) * ldb + j]
                                   : B[static_cast<int64_t>(j) * ldb + k];
}

// Ap: [ceil(mb/MR)] micro-panels of [kb][MR]
void pack_a(const double* A, int64_t lda, LayoutA la, int m0, int k0, int mb, int kb,
            double* Ap) {
    for (int i0 = 0; i0 < mb; i0 += MR) {
        const int ib = std::min(MR, mb - i0);
        double* dst = Ap + static_cast<int64_t>(i0) * kb;
        for (int k = 0; k < kb; ++k) {
            for (int i = 0; i < ib; ++i)
                dst[static_cast<int64_t>(k) * MR + i] = load_a(A, lda, la, m0 + i0 + i, k0 + k);
            for (int i = ib; i < MR; ++i) dst[static_cast<int64_t>(k) * MR + i] = 0.0;
        }
    }
}

// Bp: [ceil(nb/NR)] micro-panels of [kb][NR]
void pack_b(const double* B, int64_t ldb, LayoutB lb, int k0, int n0, int kb, int nb,
            double* Bp) {
    for (int j0 = 0; j0 < nb; j0 += NR) {
        const int jb = std::min(NR, nb - j0);
        double* dst = Bp + static_cast<int64_t>(j0) * kb;
        for (int k = 0; k < kb; ++k) {
            for (int j = 0; j < jb; ++j)
                dst[static_cast<int64_t>(k) * NR + j] = load_b(B, ldb, lb, k0 + k, n0 + j0 + j);
            for (int j = jb; j < NR; ++j) dst[static_cast<int64_t>(k) * NR + j] = 0.0;
        }
    }
}

// C[ib x jb] += Ap-panel * Bp-panel
inline void micro_kernel(int kb, const double* ap, const double* bp, double* C, int64_t ldc,
                         int ib, int jb) {
    double acc[MR][NR];
    for (auto& row : acc)
        for (double& v : row) v = 0.0;
    for (int k = 0; k < kb; ++k) {
        const double* a = ap + static_cast<int64_t>(k) * MR;
        const double* b = bp + static_cast<int64_t>(k) * NR;
        for (int i = 0; i < MR; ++i) {
            const double ai = a[i];
            for (int j = 0; j < NR; ++j) acc[i][j] += ai * b[j];
        }
    }
    for (int i = 0; i < ib; ++i)
        for (int j = 0; j < jb; ++j) C[static_cast<int64_t>(i) * ldc + j] += acc[i][j];
}

void gemm_tiled(int M, int N, int K, const double* A, int64_t lda, LayoutA la, const double* B,
                int64_t ldb, LayoutB lb, double* C, bool accumulate) {
    if (M <= 0 || N <= 0) return;
    if (!accumulate) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < M; ++i)
            std::memset(C + static_cast<int64_t>(i) * N, 0, sizeof(double) * static_cast<size_t>(N));
    }
    if (K <= 0) return;

    const int n_mblocks = (M + MC - 1) / MC;
    const int n_nblocks = (N + NC - 1) / NC;

#pragma omp parallel
    {
        std::vector<double> Ap(static_cast<size_t>(MC + MR) * KC);
        std::vector<double> Bp(static_cast<size_t>(NC + NR) * KC);
#pragma omp for schedule(static) collapse(2)
        for (int mb_i = 0; mb_i < n_mblocks; ++mb_i) {
            for (int nb_i = 0; nb_i < n_nblocks; ++nb_i) {
                const int m0 = mb_i * MC, n0 = nb_i * NC;
                const int mb = std::min(MC, M - m0), nb = std::min(NC, N - n0);
                for (int k0 = 0; k0 < K; k0 += KC) {
                    const int kb = std::min(KC, K - k0);
                    pack_a(A, lda, la, m0, k0, mb, kb, Ap.data());
                    pack_b(B, ldb, lb, k0, n0, kb, nb, Bp.data());
                    for (int i0 = 0; i0 < mb; i0 += MR) {
                        const int ib = std::min(MR, mb - i0);
                        for (int j0 = 0; j0 < nb; j0 += NR) {
                            const int jb = std::min(NR, nb - j0);
                            micro_kernel(kb, Ap.data() + static_cast<int64_t>(i0) * kb,
                                         Bp.data() + static_cast<int64_t>(j0) * kb,
                                         C + static_cast<int64_t>(m0 + i0) * N + n0 + j0, N, ib,
                                         jb);
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

void gemm_nn(int M, int N, int K, const double* A, const double* B, double* C, bool accumulate) {
    gemm_tiled(M, N, K, A, K, LayoutA::RowMajor, B, N, LayoutB::RowMajor, C, accumulate);
}

void gemm_nt(int M, int N, int K, const double* A, const double* B, double* C, bool accumulate) {
    gemm_tiled(M, N, K, A, K, LayoutA::RowMajor, B, K, LayoutB::Transposed, C, accumulate);
}

void gemm_tn(int M, int N, int K, const double* A, const double* B, double* C, bool accumulate) {
    gemm_tiled(M, N, K, A, M, LayoutA::Transposed, B, N, LayoutB::RowMajor, C, accumulate);
}

void im2col(const double* im, int n, int C, int H, int W, int kh, int kw, int stride, int pad,
            double* col) {
    const int OH = conv_out_dim(H, kh, stride, pad);
    const int OW = conv_out_dim(W, kw, stride, pad);
    const int64_t ncols = static_cast<int64_t>(n) * OH * OW;
#pragma omp parallel for schedule(static)
    for (int r = 0; r < C * kh * kw; ++r) {
        const int c = r / (kh * kw);
        const int ki = (r / kw) % kh;
        const int kj = r % kw;
        double* out = col + static_cast<int64_t>(r) * ncols;
        for (int i = 0; i < n; ++i) {
            const double* src = im + (static_cast<int64_t>(i) * C + c) * H * W;
            for (int oh = 0; oh < OH; ++oh) {
                const int ih = oh * stride - pad + ki;
                double* o = out + (static_cast<int64_t>(i) * OH + oh) * OW;
                if (ih < 0 || ih >= H) {
                    std::memset(o, 0, sizeof(double) * OW);
                    continue;
                }
                const double* s = src + static_cast<int64_t>(ih) * W;
                for (int ow = 0; ow < OW; ++ow) {
                    const int iw = ow * stride - pad + kj;
                    o[ow] = (iw >= 0 && iw < W) ? s[iw] : 0.0;
                }
            }
        }
    }
}

void col2im(const double* col, int n, int C, int H, int W, int kh, int kw, int stride, int pad,
            double* im) {
    const int OH = conv_out_dim(H, kh, stride, pad);
    const int OW = conv_out_dim(W, kw, stride, pad);
    const int64_t ncols = static_cast<int64_t>(n) * OH * OW;
    // Parallel over channels: every (i,c) image plane is touched by the single
    // thread owning channel c, accumulation order fixed by the r loop.
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const int r = (c * kh + ki) * kw + kj;
                const double* in = col + static_cast<int64_t>(r) * ncols;
                for (int i = 0; i < n; ++i) {
                    double* dst = im + (static_cast<int64_t>(i) * C + c) * H * W;
                    for (int oh = 0; oh < OH; ++oh) {
                        const int ih = oh * stride - pad + ki;
                        if (ih < 0 || ih >= H) continue;
                        const double* src = in + (static_cast<int64_t>(i) * OH + oh) * OW;
                        double* d = dst + static_cast<int64_t>(ih) * W;
                        for (int ow = 0; ow < OW; ++ow) {
                            const int iw = ow * stride - pad + kj;
                            if (iw >= 0 && iw < W) d[iw] += src[ow];
                        }
                    }
                }
            }
        }
    }
}

double sum(const double* x, int64_t n) {
    const int64_t nblocks = (n + kSumBlock - 1) / kSumBlock;
    if (nblocks <= 1) return serial::sum(x, n);
    std::vector<double> partial(static_cast<size_t>(nblocks));
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < nblocks; ++b) {
        const int64_t lo = b * kSumBlock;
        const int64_t hi = std::min(n, lo + kSumBlock);
        double s = 0.0;
        for (int64_t i = lo; i < hi; ++i) s += x[i];
        partial[static_cast<size_t>(b)] = s;
    }
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

double dot(const double* a, const double* b, int64_t n) {
    const int64_t nblocks = (n + kSumBlock - 1) / kSumBlock;
    std::vector<double> partial(static_cast<size_t>(nblocks));
#pragma omp parallel for schedule(static)
    for (int64_t blk = 0; blk < nblocks; ++blk) {
        const int64_t lo = blk * kSumBlock;
        const int64_t hi = std::min(n, lo + kSumBlock);
        double s = 0.0;
        for (int64_t i = lo; i < hi; ++i) s += a[i] * b[i];
        partial[static_cast<size_t>(blk)] = s;
    }
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

double sum_sq(const double* x, int64_t n) { return dot(x, x, n); }

void axpy(int64_t n, double a, const double* x, double* y) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace magic::kernels
