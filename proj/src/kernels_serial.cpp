#include "magic/kernels.hpp"

namespace magic::kernels::serial {

void gemm_nn(int M, int N, int K, const double* A, const double* B, double* C, bool accumulate) {
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < N; ++j) {
            double s = accumulate ? C[static_cast<int64_t>(i) * N + j] : 0.0;
            for (int k = 0; k < K; ++k)
                s += A[static_cast<int64_t>(i) * K + k] * B[static_cast<int64_t>(k) * N + j];
            C[static_cast<int64_t>(i) * N + j] = s;
        }
    }
}

void gemm_nt(int M, int N, int K, const double* A, const double* B, double* C, bool accumulate) {
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < N; ++j) {
            double s = accumulate ? C[static_cast<int64_t>(i) * N + j] : 0.0;
            for (int k = 0; k < K; ++k)
                s += A[static_cast<int64_t>(i) * K + k] * B[static_cast<int64_t>(j) * K + k];
            C[static_cast<int64_t>(i) * N + j] = s;
        }
    }
}

void gemm_tn(int M, int N, int K, const double* A, const double* B, double* C, bool accumulate) {
    for (int i = 0; i < M; ++i) {
        for (int j = 0; j < N; ++j) {
            double s = accumulate ? C[static_cast<int64_t>(i) * N + j] : 0.0;
            for (int k = 0; k < K; ++k)
                s += A[static_cast<int64_t>(k) * M + i] * B[static_cast<int64_t>(k) * N + j];
            C[static_cast<int64_t>(i) * N + j] = s;
        }
    }
}

void conv2d_forward(const double* x, const double* w, const double* b, double* y, int N, int Cin,
                    int H, int W, int Cout, int kh, int kw, int stride, int pad) {
    const int OH = conv_out_dim(H, kh, stride, pad);
    const int OW = conv_out_dim(W, kw, stride, pad);
    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Cout; ++co) {
            for (int oh = 0; oh < OH; ++oh) {
                for (int ow = 0; ow < OW; ++ow) {
                    double s = b ? b[co] : 0.0;
                    for (int ci = 0; ci < Cin; ++ci) {
                        for (int ki = 0; ki < kh; ++ki) {
                            const int ih = oh * stride - pad + ki;
                            if (ih < 0 || ih >= H) continue;
                            for (int kj = 0; kj < kw; ++kj) {
                                const int iw = ow * stride - pad + kj;
                                if (iw < 0 || iw >= W) continue;
                                s += x[((static_cast<int64_t>(n) * Cin + ci) * H + ih) * W + iw] *
                                     w[((static_cast<int64_t>(co) * Cin + ci) * kh + ki) * kw + kj];
                            }
                        }
                    }
                    y[((static_cast<int64_t>(n) * Cout + co) * OH + oh) * OW + ow] = s;
                }
            }
        }
    }
}

void conv2d_backward_input(const double* gy, const double* w, double* gx, int N, int Cin, int H,
                           int W, int Cout, int kh, int kw, int stride, int pad) {
    const int OH = conv_out_dim(H, kh, stride, pad);
    const int OW = conv_out_dim(W, kw, stride, pad);
    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Cout; ++co) {
            for (int oh = 0; oh < OH; ++oh) {
                for (int ow = 0; ow < OW; ++ow) {
                    const double g = gy[((static_cast<int64_t>(n) * Cout + co) * OH + oh) * OW + ow];
                    for (int ci = 0; ci < Cin; ++ci) {
                        for (int ki = 0; ki < kh; ++ki) {
                            const int ih = oh * stride - pad + ki;
                            if (ih < 0 || ih >= H) continue;
                            for (int kj = 0; kj < kw; ++kj) {
                                const int iw = ow * stride - pad + kj;
                                if (iw < 0 || iw >= W) continue;
                                gx[((static_cast<int64_t>(n) * Cin + ci) * H + ih) * W + iw] +=
                                    g * w[((static_cast<int64_t>(co) * Cin + ci) * kh + ki) * kw + kj];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_weight(const double* x, const double* gy, double* gw, double* gb, int N,
                            int Cin, int H, int W, int Cout, int kh, int kw, int stride, int pad) {
    const int OH = conv_out_dim(H, kh, stride, pad);
    const int OW = conv_out_dim(W, kw, stride, pad);
    for (int n = 0; n < N; ++n) {
        for (int co = 0; co < Cout; ++co) {
            for (int oh = 0; oh < OH; ++oh) {
                for (int ow = 0; ow < OW; ++ow) {
                    const double g = gy[((static_cast<int64_t>(n) * Cout + co) * OH + oh) * OW + ow];
                    if (gb) gb[co] += g;
                    for (int ci = 0; ci < Cin; ++ci) {
                        for (int ki = 0; ki < kh; ++ki) {
                            const int ih = oh * stride - pad + ki;
                            if (ih < 0 || ih >= H) continue;
                            for (int kj = 0; kj < kw; ++kj) {
                                const int iw = ow * stride - pad + kj;
                                if (iw < 0 || iw >= W) continue;
                                gw[((static_cast<int64_t>(co) * Cin + ci) * kh + ki) * kw + kj] +=
                                    g * x[((static_cast<int64_t>(n) * Cin + ci) * H + ih) * W + iw];
                            }
                        }
                    }
                }
            }
        }
    }
}

double sum(const double* x, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += x[i];
    return s;
}

}  // namespace magic::kernels::serial
