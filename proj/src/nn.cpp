#include "magic/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "magic/kernels.hpp"
#include "magic/util.hpp"

namespace magic::nn {

namespace {

constexpr int64_t kMaxColBytes = 16ll << 20;

int chunk_for(int64_t K, int64_t ohw, int N) {
    int64_t per_image = K * ohw * static_cast<int64_t>(sizeof(double));
    int c = static_cast<int>(std::max<int64_t>(1, kMaxColBytes / std::max<int64_t>(1, per_image)));
    return std::min(c, N);
}

void check4(const Tensor& x, int channels, const char* who) {
    if (x.rank() != 4 || x.dim(1) != channels)
        throw InputError(std::string(who) + ": expected [N," + std::to_string(channels) +
                         ",H,W], got " + x.shape_str());
}

}  // namespace

// ----------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int cin, int cout, int k, int stride, int pad, bool bias)
    : cin(cin),
      cout(cout),
      k(k),
      stride(stride),
      pad(pad),
      has_bias(bias),
      W({cout, cin, k, k}),
      b(bias ? Tensor({cout}) : Tensor({0})),
      gW({cout, cin, k, k}),
      gb(bias ? Tensor({cout}) : Tensor({0})) {
    if (k < 1 || stride < 1 || pad < 0 || cin < 1 || cout < 1)
        throw ConfigError("conv2d: invalid layer spec");
}

void Conv2d::init_params(Rng& rng) {
    const double std = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    for (double& w : W.data) w = rng.gaussian() * std;
    if (has_bias) b.zero();
}

Tensor Conv2d::forward(const Tensor& x, Mode) {
    check4(x, cin, "conv2d");
    x_ = x;
    const int N = x.dim(0), H = x.dim(2), Wd = x.dim(3);
    const int OH = kernels::conv_out_dim(H, k, stride, pad);
    const int OW = kernels::conv_out_dim(Wd, k, stride, pad);
    if (OH < 1 || OW < 1)
        throw InputError("conv2d: input " + x.shape_str() + " too small for kernel");
    const int K = cin * k * k;
    const int64_t ohw = static_cast<int64_t>(OH) * OW;
    const int chunk = chunk_for(K, ohw, N);
    col_.resize(static_cast<size_t>(K) * chunk * ohw);
    buf_.resize(static_cast<size_t>(cout) * chunk * ohw);
    Tensor y({N, cout, OH, OW});
    col_cached_ = (N <= chunk);  // single-chunk forward leaves col_ valid for backward
    for (int n0 = 0; n0 < N; n0 += chunk) {
        const int nb = std::min(chunk, N - n0);
        kernels::im2col(x.ptr() + static_cast<int64_t>(n0) * cin * H * Wd, nb, cin, H, Wd, k, k,
                        stride, pad, col_.data());
        kernels::gemm_nn(cout, static_cast<int>(nb * ohw), K, W.ptr(), col_.data(), buf_.data(),
                         false);
        for (int co = 0; co < cout; ++co) {
            const double bias = has_bias ? b[co] : 0.0;
            for (int i = 0; i < nb; ++i) {
                const double* src = buf_.data() + (static_cast<int64_t>(co) * nb + i) * ohw;
                double* dst = y.ptr() + ((static_cast<int64_t>(n0 + i) * cout + co)) * ohw;
                for (int64_t j = 0; j < ohw; ++j) dst[j] = src[j] + bias;
            }
        }
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& gy, bool accumulate_param_grads) {
    const int N = x_.dim(0), H = x_.dim(2), Wd = x_.dim(3);
    const int OH = gy.dim(2), OW = gy.dim(3);
    const int K = cin * k * k;
    const int64_t ohw = static_cast<int64_t>(OH) * OW;
    const int chunk = chunk_for(K, ohw, N);
    Tensor gx({N, cin, H, Wd});
    std::vector<double> gybuf(static_cast<size_t>(cout) * chunk * ohw);
    for (int n0 = 0; n0 < N; n0 += chunk) {
        const int nb = std::min(chunk, N - n0);
        for (int co = 0; co < cout; ++co) {
            for (int i = 0; i < nb; ++i) {
                const double* src = gy.ptr() + (static_cast<int64_t>(n0 + i) * cout + co) * ohw;
                std::memcpy(gybuf.data() + (static_cast<int64_t>(co) * nb + i) * ohw, src,
                            sizeof(double) * ohw);
            }
        }
        if (accumulate_param_grads) {
            if (!col_cached_)
                kernels::im2col(x_.ptr() + static_cast<int64_t>(n0) * cin * H * Wd, nb, cin, H,
                                Wd, k, k, stride, pad, col_.data());
            kernels::gemm_nt(cout, K, static_cast<int>(nb * ohw), gybuf.data(), col_.data(),
                             gW.ptr(), true);
            if (has_bias)
                for (int co = 0; co < cout; ++co)
                    gb[co] += kernels::sum(gybuf.data() + static_cast<int64_t>(co) * nb * ohw,
                                           nb * ohw);
        }
        kernels::gemm_tn(K, static_cast<int>(nb * ohw), cout, W.ptr(), gybuf.data(), col_.data(),
                         false);
        col_cached_ = false;  // col_ now holds input gradients in column form
        kernels::col2im(col_.data(), nb, cin, H, Wd, k, k, stride, pad,
                        gx.ptr() + static_cast<int64_t>(n0) * cin * H * Wd);
    }
    return gx;
}

void Conv2d::collect_params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) {
    ps.push_back(&W);
    gs.push_back(&gW);
    if (has_bias) {
        ps.push_back(&b);
        gs.push_back(&gb);
    }
}

// ------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(int cin, int cout, int k, int pad, bool bias)
    : cin(cin),
      cout(cout),
      k(k),
      pad(pad),
      has_bias(bias),
      W({cin, cout, k, k}),
      b(bias ? Tensor({cout}) : Tensor({0})),
      gW({cin, cout, k, k}),
      gb(bias ? Tensor({cout}) : Tensor({0})) {
    if (pad > k - 1) throw ConfigError("conv_transpose2d: pad must be <= k-1 for stride 1");
    inner_ = std::make_unique<Conv2d>(cin, cout, k, 1, k - 1 - pad, bias);
}

void ConvTranspose2d::init_params(Rng& rng) {
    const double std = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    for (double& w : W.data) w = rng.gaussian() * std;
    if (has_bias) b.zero();
}

Tensor ConvTranspose2d::flipped() const {
    Tensor Wf({cout, cin, k, k});
    for (int ci = 0; ci < cin; ++ci)
        for (int co = 0; co < cout; ++co)
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j)
                    Wf.at4(co, ci, k - 1 - i, k - 1 - j) = W.at4(ci, co, i, j);
    return Wf;
}

void ConvTranspose2d::scatter_grad(const Tensor& gWf) {
    for (int ci = 0; ci < cin; ++ci)
        for (int co = 0; co < cout; ++co)
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j)
                    gW.at4(ci, co, i, j) += gWf.at4(co, ci, k - 1 - i, k - 1 - j);
}

Tensor ConvTranspose2d::forward(const Tensor& x, Mode mode) {
    inner_->W = flipped();
    if (has_bias) inner_->b = b;
    return inner_->forward(x, mode);
}

Tensor ConvTranspose2d::backward(const Tensor& gy, bool accumulate_param_grads) {
    inner_->gW.zero();
    if (has_bias) inner_->gb.zero();
    Tensor gx = inner_->backward(gy, accumulate_param_grads);
    if (accumulate_param_grads) {
        scatter_grad(inner_->gW);
        if (has_bias) add_inplace(gb, inner_->gb);
    }
    return gx;
}

void ConvTranspose2d::collect_params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) {
    ps.push_back(&W);
    gs.push_back(&gW);
    if (has_bias) {
        ps.push_back(&b);
        gs.push_back(&gb);
    }
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, bool track_running, double eps, double momentum)
    : channels(channels),
      track_running(track_running),
      eps(eps),
      momentum(momentum),
      gamma({channels}, 1.0),
      beta({channels}),
      ggamma({channels}),
      gbeta({channels}),
      running_mean({channels}),
      running_var({channels}, 1.0) {}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
    check4(x, channels, "batchnorm2d");
    const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
    n_ = N;
    hw_ = H * W;
    const int64_t plane = static_cast<int64_t>(hw_);
    const double count = static_cast<double>(N) * hw_;
    xhat_ = Tensor({N, channels, H, W});
    invstd_.assign(static_cast<size_t>(channels), 0.0);
    Tensor y({N, channels, H, W});
    used_batch_stats_ = (mode != Mode::Eval);

#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
        double mean, var;
        if (used_batch_stats_) {
            double s = 0.0;
            for (int n = 0; n < N; ++n)
                s += kernels::serial::sum(x.ptr() + (static_cast<int64_t>(n) * channels + c) * plane,
                                          plane);
            mean = s / count;
            double sq = 0.0;
            for (int n = 0; n < N; ++n) {
                const double* p = x.ptr() + (static_cast<int64_t>(n) * channels + c) * plane;
                double acc = 0.0;
                for (int64_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mean;
                    acc += d * d;
                }
                sq += acc;
            }
            var = sq / count;
            if (mode == Mode::Train && track_running) {
                running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean;
                running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var;
            }
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const double istd = 1.0 / std::sqrt(var + eps);
        invstd_[static_cast<size_t>(c)] = istd;
        const double g = gamma[c], bb = beta[c];
        for (int n = 0; n < N; ++n) {
            const double* p = x.ptr() + (static_cast<int64_t>(n) * channels + c) * plane;
            double* xh = xhat_.ptr() + (static_cast<int64_t>(n) * channels + c) * plane;
            double* yo = y.ptr() + (static_cast<int64_t>(n) * channels + c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
                const double v = (p[i] - mean) * istd;
                xh[i] = v;
                yo[i] = g * v + bb;
            }
        }
    }
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& gy, bool accumulate_param_grads) {
    const int N = n_;
    const int64_t plane = static_cast<int64_t>(hw_);
    const double count = static_cast<double>(N) * hw_;
    Tensor gx(gy.shape);

#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
        double sg = 0.0, sb = 0.0;
        for (int n = 0; n < N; ++n) {
            const double* g = gy.ptr() + (static_cast<int64_t>(n) * channels + c) * plane;
            const double* xh = xhat_.ptr() + (static_cast<int64_t>(n) * channels + c) * plane;
            double a0 = 0.0, a1 = 0.0;
            for (int64_t i = 0; i < plane; ++i) {
                a0 += g[i] * xh[i];
                a1 += g[i];
            }
            sg += a0;
            sb += a1;
        }
        const double istd = invstd_[static_cast<size_t>(c)];
        const double gam = gamma[c];
        if (used_batch_stats_) {
            const double k1 = gam * istd / count;
            for (int n = 0; n < N; ++n) {
                const double* g = gy.ptr() + (static_cast<int64_t>(n) * channels + c) * plane;
                const double* xh = xhat_.ptr() + (static_cast<int64_t>(n) * channels + c) * plane;
                double* o = gx.ptr() + (static_cast<int64_t>(n) * channels + c) * plane;
                for (int64_t i = 0; i < plane; ++i)
                    o[i] = k1 * (count * g[i] - sb - xh[i] * sg);
            }
        } else {
            const double k1 = gam * istd;
            for (int n = 0; n < N; ++n) {
                const double* g = gy.ptr() + (static_cast<int64_t>(n) * channels + c) * plane;
                double* o = gx.ptr() + (static_cast<int64_t>(n) * channels + c) * plane;
                for (int64_t i = 0; i < plane; ++i) o[i] = k1 * g[i];
            }
        }
        if (accumulate_param_grads) {
            ggamma[c] += sg;
            gbeta[c] += sb;
        }
    }
    return gx;
}

void BatchNorm2d::collect_params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) {
    ps.push_back(&gamma);
    gs.push_back(&ggamma);
    ps.push_back(&beta);
    gs.push_back(&gbeta);
}

void BatchNorm2d::collect_buffers(std::vector<Tensor*>& bs) {
    bs.push_back(&running_mean);
    bs.push_back(&running_var);
}

// ------------------------------------------------------------- LeakyReLU

Tensor LeakyReLU::forward(const Tensor& x, Mode) {
    x_ = x;
    Tensor y(x.shape);
    const int64_t n = x.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] >= 0.0 ? x[i] : slope * x[i];
    return y;
}

Tensor LeakyReLU::backward(const Tensor& gy, bool) {
    Tensor gx(gy.shape);
    const int64_t n = gy.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) gx[i] = x_[i] >= 0.0 ? gy[i] : slope * gy[i];
    return gx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(int in, int out, bool bias)
    : in(in),
      out(out),
      has_bias(bias),
      W({out, in}),
      b(bias ? Tensor({out}) : Tensor({0})),
      gW({out, in}),
      gb(bias ? Tensor({out}) : Tensor({0})) {}

void Linear::init_params(Rng& rng) {
    const double std = std::sqrt(2.0 / in);
    for (double& w : W.data) w = rng.gaussian() * std;
    if (has_bias) b.zero();
}

Tensor Linear::forward(const Tensor& x, Mode) {
    if (x.rank() != 2 || x.dim(1) != in) throw InputError("linear: bad input " + x.shape_str());
    x_ = x;
    const int N = x.dim(0);
    Tensor y({N, out});
    kernels::gemm_nt(N, out, in, x.ptr(), W.ptr(), y.ptr(), false);
    if (has_bias) {
#pragma omp parallel for schedule(static)
        for (int n = 0; n < N; ++n)
            for (int o = 0; o < out; ++o) y.ptr()[static_cast<int64_t>(n) * out + o] += b[o];
    }
    return y;
}

Tensor Linear::backward(const Tensor& gy, bool accumulate_param_grads) {
    const int N = x_.dim(0);
    Tensor gx({N, in});
    kernels::gemm_nn(N, in, out, gy.ptr(), W.ptr(), gx.ptr(), false);
    if (accumulate_param_grads) {
        kernels::gemm_tn(out, in, N, gy.ptr(), x_.ptr(), gW.ptr(), true);
        if (has_bias)
            for (int o = 0; o < out; ++o) {
                double s = 0.0;
                for (int n = 0; n < N; ++n) s += gy[static_cast<int64_t>(n) * out + o];
                gb[o] += s;
            }
    }
    return gx;
}

void Linear::collect_params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) {
    ps.push_back(&W);
    gs.push_back(&gW);
    if (has_bias) {
        ps.push_back(&b);
        gs.push_back(&gb);
    }
}

// --------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, Mode) {
    if (x.rank() != 4) throw InputError("global_avg_pool: bad input " + x.shape_str());
    n_ = x.dim(0);
    c_ = x.dim(1);
    h_ = x.dim(2);
    w_ = x.dim(3);
    const int64_t plane = static_cast<int64_t>(h_) * w_;
    Tensor y({n_, c_});
#pragma omp parallel for schedule(static)
    for (int n = 0; n < n_; ++n)
        for (int c = 0; c < c_; ++c)
            y.ptr()[static_cast<int64_t>(n) * c_ + c] =
                kernels::serial::sum(x.ptr() + (static_cast<int64_t>(n) * c_ + c) * plane, plane) /
                static_cast<double>(plane);
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& gy, bool) {
    const int64_t plane = static_cast<int64_t>(h_) * w_;
    Tensor gx({n_, c_, h_, w_});
#pragma omp parallel for schedule(static)
    for (int n = 0; n < n_; ++n)
        for (int c = 0; c < c_; ++c) {
            const double g = gy[static_cast<int64_t>(n) * c_ + c] / static_cast<double>(plane);
            double* o = gx.ptr() + (static_cast<int64_t>(n) * c_ + c) * plane;
            for (int64_t i = 0; i < plane; ++i) o[i] = g;
        }
    return gx;
}

// ------------------------------------------------------------ Sequential

Tensor Sequential::forward(const Tensor& x, Mode mode) {
    Tensor h = x;
    for (auto& l : layers) h = l->forward(h, mode);
    return h;
}

Tensor Sequential::backward(const Tensor& gy, bool accumulate_param_grads) {
    Tensor g = gy;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it)
        g = (*it)->backward(g, accumulate_param_grads);
    return g;
}

void Sequential::collect_params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) {
    for (auto& l : layers) l->collect_params(ps, gs);
}

void Sequential::collect_buffers(std::vector<Tensor*>& bs) {
    for (auto& l : layers) l->collect_buffers(bs);
}

// --------------------------------------------------------- ResidualBlock

ResidualBlock::ResidualBlock(int cin, int cout, int stride)
    : conv1(cin, cout, 3, stride, 1, false),
      conv2(cout, cout, 3, 1, 1, false),
      bn1(cout),
      bn2(cout),
      has_proj_(stride != 1 || cin != cout) {
    if (has_proj_) {
        proj = std::make_unique<Conv2d>(cin, cout, 1, stride, 0, false);
        proj_bn = std::make_unique<BatchNorm2d>(cout);
    }
}

void ResidualBlock::init_params(Rng& rng) {
    conv1.init_params(rng);
    conv2.init_params(rng);
    if (proj) proj->init_params(rng);
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) {
    pre1_ = bn1.forward(conv1.forward(x, mode), mode);
    Tensor h(pre1_.shape);
    const int64_t n = pre1_.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) h[i] = pre1_[i] >= 0.0 ? pre1_[i] : 0.0;
    Tensor main = bn2.forward(conv2.forward(h, mode), mode);
    Tensor skip = has_proj_ ? proj_bn->forward(proj->forward(x, mode), mode) : x;
    sum_ = main;
    add_inplace(sum_, skip);
    Tensor y(sum_.shape);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = sum_[i] >= 0.0 ? sum_[i] : 0.0;
    return y;
}

Tensor ResidualBlock::backward(const Tensor& gy, bool acc) {
    Tensor g(gy.shape);
    const int64_t n = gy.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) g[i] = sum_[i] >= 0.0 ? gy[i] : 0.0;

    Tensor gh = conv2.backward(bn2.backward(g, acc), acc);
    const int64_t nh = gh.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < nh; ++i) gh[i] = pre1_[i] >= 0.0 ? gh[i] : 0.0;
    Tensor gx = conv1.backward(bn1.backward(gh, acc), acc);

    Tensor gskip = has_proj_ ? proj->backward(proj_bn->backward(g, acc), acc) : g;
    add_inplace(gx, gskip);
    return gx;
}

void ResidualBlock::collect_params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) {
    conv1.collect_params(ps, gs);
    bn1.collect_params(ps, gs);
    conv2.collect_params(ps, gs);
    bn2.collect_params(ps, gs);
    if (proj) {
        proj->collect_params(ps, gs);
        proj_bn->collect_params(ps, gs);
    }
}

void ResidualBlock::collect_buffers(std::vector<Tensor*>& bs) {
    bn1.collect_buffers(bs);
    bn2.collect_buffers(bs);
    if (proj_bn) proj_bn->collect_buffers(bs);
}

// ------------------------------------------------------------------ Adam

void Adam::init(const std::vector<Tensor*>& params) {
    m.clear();
    v.clear();
    t = 0;
    for (const Tensor* p : params) {
        m.emplace_back(p->shape);
        v.emplace_back(p->shape);
    }
}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads) {
    if (m.size() != params.size()) throw ContractError("adam: not initialized for these params");
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = *grads[i];
        Tensor& mi = m[i];
        Tensor& vi = v[i];
        const int64_t n = p.numel();
#pragma omp parallel for schedule(static)
        for (int64_t j = 0; j < n; ++j) {
            mi[j] = beta1 * mi[j] + (1.0 - beta1) * g[j];
            vi[j] = beta2 * vi[j] + (1.0 - beta2) * g[j] * g[j];
            const double mhat = mi[j] / bc1;
            const double vhat = vi[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

// ------------------------------------------------------------- utilities

void zero_grads(const std::vector<Tensor*>& grads) {
    for (Tensor* g : grads) g->zero();
}

uint64_t params_checksum(const std::vector<const Tensor*>& params) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const Tensor* p : params) {
        h = fnv1a64(p->shape.data(), p->shape.size() * sizeof(int), h);
        h = fnv1a64(p->data.data(), p->data.size() * sizeof(double), h);
    }
    return h;
}

uint64_t params_checksum(const std::vector<Tensor*>& params) {
    std::vector<const Tensor*> c(params.begin(), params.end());
    return params_checksum(c);
}

int64_t params_count(const std::vector<const Tensor*>& params) {
    int64_t n = 0;
    for (const Tensor* p : params) n += p->numel();
    return n;
}

void write_tensor(std::ostream& os, const Tensor& t) {
    const int32_t rank = t.rank();
    os.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
    for (int d : t.shape) {
        const int32_t v = d;
        os.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& is) {
    int32_t rank = 0;
    is.read(reinterpret_cast<char*>(&rank), sizeof(rank));
    if (!is || rank < 0 || rank > 8) throw IoError("tensor stream: bad rank");
    std::vector<int> shape(static_cast<size_t>(rank));
    for (auto& d : shape) {
        int32_t v = 0;
        is.read(reinterpret_cast<char*>(&v), sizeof(v));
        d = v;
    }
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!is) throw IoError("tensor stream: truncated payload");
    return t;
}

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tensor* dlogits) {
    if (logits.rank() != 2) throw InputError("cross_entropy: logits must be [N,C]");
    const int N = logits.dim(0), C = logits.dim(1);
    if (static_cast<int>(labels.size()) != N) throw InputError("cross_entropy: label count");
    if (dlogits) *dlogits = Tensor({N, C});
    double loss = 0.0;
    for (int n = 0; n < N; ++n) {
        const double* z = logits.ptr() + static_cast<int64_t>(n) * C;
        const int y = labels[static_cast<size_t>(n)];
        if (y < 0 || y >= C) throw InputError("cross_entropy: label out of range");
        double zmax = z[0];
        for (int c = 1; c < C; ++c) zmax = std::max(zmax, z[c]);
        double zsum = 0.0;
        for (int c = 0; c < C; ++c) zsum += std::exp(z[c] - zmax);
        const double logz = std::log(zsum) + zmax;
        loss += logz - z[y];
        if (dlogits) {
            double* d = dlogits->ptr() + static_cast<int64_t>(n) * C;
            for (int c = 0; c < C; ++c) d[c] = std::exp(z[c] - logz) / N;
            d[y] -= 1.0 / N;
        }
    }
    return loss / N;
}

Tensor softmax(const Tensor& logits) {
    Tensor p = logits;
    const int C = logits.dim(logits.rank() - 1);
    const int N = static_cast<int>(logits.numel() / C);
    for (int n = 0; n < N; ++n) {
        double* z = p.ptr() + static_cast<int64_t>(n) * C;
        double zmax = z[0];
        for (int c = 1; c < C; ++c) zmax = std::max(zmax, z[c]);
        double s = 0.0;
        for (int c = 0; c < C; ++c) {
            z[c] = std::exp(z[c] - zmax);
            s += z[c];
        }
        for (int c = 0; c < C; ++c) z[c] /= s;
    }
    return p;
}

double bce_with_logits(const Tensor& logits, const Tensor& targets, Tensor* dlogits) {
    if (!logits.same_shape(targets)) throw InputError("bce: shape mismatch");
    const int64_t n = logits.numel();
    if (dlogits) *dlogits = Tensor(logits.shape);
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double z = logits[i], y = targets[i];
        loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        if (dlogits) {
            const double sig = 1.0 / (1.0 + std::exp(-z));
            (*dlogits)[i] = (sig - y) / static_cast<double>(n);
        }
    }
    return loss / static_cast<double>(n);
}

}  // namespace magic::nn
