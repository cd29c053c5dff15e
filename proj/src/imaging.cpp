#include "magic/imaging.hpp"

#include <algorithm>
#include <cmath>

#include "magic/kernels.hpp"
#include "magic/util.hpp"

namespace magic::imaging {

void Image::validate() const {
    if (pixels.rank() != 3 || pixels.dim(0) != 3)
        throw InputError("image: expected [3,H,W], got " + pixels.shape_str());
    if (height() < 8 || width() < 8) throw InputError("image: H and W must be >= 8");
    if (!pixels.all_finite()) throw InputError("image: non-finite pixel values");
    if (range == ValueRange::Raw255) {
        if (pixels.min() < 0.0 || pixels.max() > 255.0)
            throw InputError("image: raw-domain values must lie in [0,255]");
    }
}

void BinaryMask::validate() const {
    if (H <= 0 || W <= 0 || values.size() != static_cast<size_t>(H) * W)
        throw InputError("mask: inconsistent shape");
    for (uint8_t v : values)
        if (v != 0 && v != 1) throw InputError("mask: values must be exactly 0 or 1");
}

Tensor BinaryMask::to_tensor() const {
    Tensor t({1, 1, H, W});
    for (size_t i = 0; i < values.size(); ++i) t[static_cast<int64_t>(i)] = values[i];
    return t;
}

BinaryMask BinaryMask::shifted(int dy, int dx) const {
    BinaryMask out(H, W, role);
    for (int y = 0; y < H; ++y) {
        const int sy = y - dy;
        if (sy < 0 || sy >= H) continue;
        for (int x = 0; x < W; ++x) {
            const int sx = x - dx;
            if (sx < 0 || sx >= W) continue;
            out.at(y, x) = at(sy, sx);
        }
    }
    return out;
}

int64_t BinaryMask::popcount() const {
    int64_t n = 0;
    for (uint8_t v : values) n += v;
    return n;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
    if (a.H != b.H || a.W != b.W) throw InputError("iou: mask shape mismatch");
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        inter += a.values[i] & b.values[i];
        uni += a.values[i] | b.values[i];
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// --------------------------------------------------------------- operators

namespace {
void check_grid(const Tensor& x, const char* who, int min_hw) {
    if (x.rank() != 3) throw InputError(std::string(who) + ": expected [C,H,W]");
    if (x.dim(1) < min_hw || x.dim(2) < min_hw)
        throw InputError(std::string(who) + ": spatial dims too small");
    if (!x.all_finite()) throw InputError(std::string(who) + ": non-finite input values");
}

double sgn0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }
}  // namespace

double tv_loss(const Tensor& x) {
    check_grid(x, "tv_loss", 2);
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    double total = 0.0;
    for (int c = 0; c < C; ++c) {
        for (int h = 0; h < H; ++h) {
            for (int w = 0; w < W; ++w) {
                if (w + 1 < W) total += std::abs(x.at3(c, h, w + 1) - x.at3(c, h, w));
                if (h + 1 < H) total += std::abs(x.at3(c, h + 1, w) - x.at3(c, h, w));
            }
        }
    }
    return total;
}

Tensor tv_loss_grad(const Tensor& x) {
    check_grid(x, "tv_loss", 2);
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    Tensor g(x.shape);
    for (int c = 0; c < C; ++c) {
        for (int h = 0; h < H; ++h) {
            for (int w = 0; w < W; ++w) {
                if (w + 1 < W) {
                    const double s = sgn0(x.at3(c, h, w + 1) - x.at3(c, h, w));
                    g.at3(c, h, w + 1) += s;
                    g.at3(c, h, w) -= s;
                }
                if (h + 1 < H) {
                    const double s = sgn0(x.at3(c, h + 1, w) - x.at3(c, h, w));
                    g.at3(c, h + 1, w) += s;
                    g.at3(c, h, w) -= s;
                }
            }
        }
    }
    return g;
}

double norm_reg(const Tensor& x) {
    if (!x.all_finite()) throw InputError("norm_reg: non-finite input values");
    return kernels::sum_sq(x.ptr(), x.numel());
}

Tensor norm_reg_grad(const Tensor& x) {
    Tensor g = x;
    scale_inplace(g, 2.0);
    return g;
}

double basic_reg(const Tensor& x, double alpha, double beta) {
    if (alpha < 0.0 || beta < 0.0) throw ConfigError("basic_reg: weights must be nonnegative");
    return alpha * tv_loss(x) + beta * norm_reg(x);
}

Tensor basic_reg_grad(const Tensor& x, double alpha, double beta) {
    if (alpha < 0.0 || beta < 0.0) throw ConfigError("basic_reg: weights must be nonnegative");
    Tensor g = tv_loss_grad(x);
    scale_inplace(g, alpha);
    axpy_inplace(g, 2.0 * beta, x);
    return g;
}

namespace {
void check_stats_pair(const FeatureStats& a, const FeatureStats& b) {
    if (a.layers.size() != b.layers.size())
        throw InputError("feature_stat_loss: layer count mismatch");
    for (size_t j = 0; j < a.layers.size(); ++j) {
        const auto& la = a.layers[j];
        const auto& lb = b.layers[j];
        if (la.layer_id != lb.layer_id)
            throw InputError("feature_stat_loss: layer id mismatch at index " + std::to_string(j));
        if (la.mean.size() != lb.mean.size() || la.stddev.size() != lb.stddev.size() ||
            la.mean.size() != la.stddev.size())
            throw InputError("feature_stat_loss: channel count mismatch in layer " + la.layer_id);
    }
}

double l2_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}
}  // namespace

double feature_stat_loss(const FeatureStats& a, const FeatureStats& b) {
    check_stats_pair(a, b);
    double total = 0.0;
    for (size_t j = 0; j < a.layers.size(); ++j) {
        total += l2_diff(a.layers[j].mean, b.layers[j].mean);
        total += l2_diff(a.layers[j].stddev, b.layers[j].stddev);
    }
    return total;
}

FeatureStats feature_stat_loss_grad(const FeatureStats& a, const FeatureStats& b) {
    check_stats_pair(a, b);
    FeatureStats g;
    g.layers.resize(a.layers.size());
    for (size_t j = 0; j < a.layers.size(); ++j) {
        const auto& la = a.layers[j];
        const auto& lb = b.layers[j];
        auto& lg = g.layers[j];
        lg.layer_id = la.layer_id;
        lg.mean.assign(la.mean.size(), 0.0);
        lg.stddev.assign(la.stddev.size(), 0.0);
        const double nm = l2_diff(la.mean, lb.mean);
        const double ns = l2_diff(la.stddev, lb.stddev);
        for (size_t c = 0; c < la.mean.size(); ++c) {
            if (nm > 1e-300) lg.mean[c] = (la.mean[c] - lb.mean[c]) / nm;
            if (ns > 1e-300) lg.stddev[c] = (la.stddev[c] - lb.stddev[c]) / ns;
        }
    }
    return g;
}

Image visualize_gradient(const Tensor& g) {
    if (g.rank() != 3 || g.dim(0) != 3)
        throw InputError("visualize_gradient: expected [3,H,W]");
    if (!g.all_finite()) throw InputError("visualize_gradient: non-finite input");
    const int64_t n = g.numel();
    const double mean = kernels::sum(g.ptr(), n) / static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = g[i] - mean;
        var += d * d;
    }
    const double std = std::sqrt(var / static_cast<double>(n));
    Image out(g.dim(1), g.dim(2), ValueRange::Unit);
    if (std < 1e-300) {
        out.pixels.fill(0.5);
        return out;
    }
    const double lo = mean - 3.0 * std, hi = mean + 3.0 * std;
    double cmin = hi, cmax = lo;
    Tensor clipped = g;
    for (int64_t i = 0; i < n; ++i) {
        const double v = std::clamp(g[i], lo, hi);
        clipped[i] = v;
        cmin = std::min(cmin, v);
        cmax = std::max(cmax, v);
    }
    const double span = cmax - cmin;
    if (span < 1e-300) {
        out.pixels.fill(0.5);
        return out;
    }
    for (int64_t i = 0; i < n; ++i) out.pixels[i] = (clipped[i] - cmin) / span;
    return out;
}

}  // namespace magic::imaging
