// Timings: OpenMP kernels vs the serial reference, on shapes representative
// of the desk-scale fixtures (classifier stage, encoder-decoder layer at
// 64x64, critic layer). Build target `magic_bench`; not part of ctest.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "magic/kernels.hpp"
#include "magic/rng.hpp"
#include "magic/tensor.hpp"

using namespace magic;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void bench_gemm(int M, int N, int K, int reps) {
    Rng rng(42);
    std::vector<double> a(static_cast<size_t>(M) * K), b(static_cast<size_t>(K) * N),
        c(static_cast<size_t>(M) * N);
    for (auto& v : a) v = rng.gaussian();
    for (auto& v : b) v = rng.gaussian();
    const double flops = 2.0 * M * N * K;
    const double t_omp =
        time_ms([&] { kernels::gemm_nn(M, N, K, a.data(), b.data(), c.data(), false); }, reps);
    const double t_ser = time_ms(
        [&] { kernels::serial::gemm_nn(M, N, K, a.data(), b.data(), c.data(), false); },
        std::max(1, reps / 4));
    std::printf("gemm_nn %4dx%4dx%4d  omp %8.2f ms (%6.2f GFLOP/s)  serial %8.2f ms (%6.2f "
                "GFLOP/s)  speedup %.2fx\n",
                M, N, K, t_omp, flops / t_omp / 1e6, t_ser, flops / t_ser / 1e6, t_ser / t_omp);
}

void bench_conv(int N, int Cin, int H, int Cout, int k, int stride, int pad, int reps,
                const char* tag) {
    Rng rng(7);
    Tensor x({N, Cin, H, H});
    Tensor w({Cout, Cin, k, k});
    Tensor bias({Cout});
    for (auto& v : x.data) v = rng.gaussian();
    for (auto& v : w.data) v = rng.gaussian();
    const int OH = kernels::conv_out_dim(H, k, stride, pad);
    Tensor y({N, Cout, OH, OH});

    // the production path is im2col + gemm
    const int K = Cin * k * k;
    std::vector<double> col(static_cast<size_t>(K) * N * OH * OH);
    std::vector<double> ybuf(static_cast<size_t>(Cout) * N * OH * OH);
    const double flops = 2.0 * N * Cout * OH * OH * K;
    const double t_omp = time_ms(
        [&] {
            kernels::im2col(x.ptr(), N, Cin, H, H, k, k, stride, pad, col.data());
            kernels::gemm_nn(Cout, N * OH * OH, K, w.ptr(), col.data(), ybuf.data(), false);
        },
        reps);
    const double t_ser = time_ms(
        [&] {
            kernels::serial::conv2d_forward(x.ptr(), w.ptr(), bias.ptr(), y.ptr(), N, Cin, H, H,
                                            Cout, k, k, stride, pad);
        },
        std::max(1, reps / 4));
    std::printf("conv %-22s omp %8.2f ms (%6.2f GFLOP/s)  serial %8.2f ms (%6.2f GFLOP/s)  "
                "speedup %.2fx\n",
                tag, t_omp, flops / t_omp / 1e6, t_ser, flops / t_ser / 1e6, t_ser / t_omp);
}

}  // namespace

int main() {
    std::printf("== gemm ==\n");
    bench_gemm(64, 4096, 576, 10);
    bench_gemm(128, 1024, 576, 10);
    bench_gemm(16, 1024, 144, 50);
    std::printf("== conv (im2col+gemm vs direct serial) ==\n");
    bench_conv(1, 64, 64, 64, 3, 1, 1, 10, "ed_layer_64x64");
    bench_conv(8, 16, 32, 16, 3, 1, 1, 10, "classifier_stage1_b8");
    bench_conv(1, 64, 61, 128, 4, 2, 0, 10, "critic_layer2");
    std::printf("== reductions ==\n");
    {
        Rng rng(3);
        std::vector<double> v(1 << 22);
        for (auto& x : v) x = rng.gaussian();
        const double t_omp = time_ms([&] { volatile double s = kernels::sum(v.data(), static_cast<int64_t>(v.size())); (void)s; }, 20);
        const double t_ser = time_ms([&] { volatile double s = kernels::serial::sum(v.data(), static_cast<int64_t>(v.size())); (void)s; }, 20);
        std::printf("sum 4M doubles: omp %6.2f ms  serial %6.2f ms  speedup %.2fx\n", t_omp, t_ser,
                    t_ser / t_omp);
    }
    return 0;
}
