#include "magic/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "magic/util.hpp"

namespace magic::data {

namespace {

const char* kClassNames[kNumClasses] = {"disc",  "ring",  "square", "square_outline",
                                        "triangle", "plus", "x_cross", "hbars",
                                        "vbars", "diamond"};

struct ShapeParams {
    double cx, cy;     // center in pixels
    double r;          // characteristic radius in pixels
    double thickness;  // band half-width for outline/bar shapes
};

bool inside_shape(int cls, double px, double py, const ShapeParams& s) {
    const double dx = px - s.cx, dy = py - s.cy;
    switch (cls) {
        case 0:  // disc
            return dx * dx + dy * dy <= s.r * s.r;
        case 1: {  // ring
            const double d = std::sqrt(dx * dx + dy * dy);
            return std::abs(d - s.r) <= s.thickness;
        }
        case 2:  // square
            return std::max(std::abs(dx), std::abs(dy)) <= s.r;
        case 3: {  // square outline
            const double d = std::max(std::abs(dx), std::abs(dy));
            return std::abs(d - s.r) <= s.thickness;
        }
        case 4: {  // triangle, apex up
            const double top = -s.r, bottom = 0.85 * s.r;
            if (dy < top || dy > bottom) return false;
            const double half = (dy - top) / (bottom - top) * s.r;
            return std::abs(dx) <= half;
        }
        case 5:  // plus
            return (std::abs(dx) <= s.thickness && std::abs(dy) <= s.r) ||
                   (std::abs(dy) <= s.thickness && std::abs(dx) <= s.r);
        case 6: {  // diagonal cross
            const double u = (dx + dy) * 0.7071067811865476;
            const double v = (dx - dy) * 0.7071067811865476;
            return (std::abs(u) <= s.thickness && std::abs(v) <= s.r) ||
                   (std::abs(v) <= s.thickness && std::abs(u) <= s.r);
        }
        case 7:  // horizontal bars
            return std::abs(dx) <= s.r && (std::abs(dy - 0.55 * s.r) <= s.thickness ||
                                           std::abs(dy + 0.55 * s.r) <= s.thickness);
        case 8:  // vertical bars
            return std::abs(dy) <= s.r && (std::abs(dx - 0.55 * s.r) <= s.thickness ||
                                           std::abs(dx + 0.55 * s.r) <= s.thickness);
        case 9:  // diamond
            return std::abs(dx) + std::abs(dy) <= s.r;
        default:
            throw ConfigError("unknown shape class " + std::to_string(cls));
    }
}

double luminance(const double* rgb) { return 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]; }

// 3x3 supersampled foreground coverage in [0,1].
double coverage(int cls, int x, int y, const ShapeParams& s) {
    int hit = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (inside_shape(cls, x + (j + 0.5) / 3.0, y + (i + 0.5) / 3.0, s)) ++hit;
    return hit / 9.0;
}

}  // namespace

const char* class_name(int cls) {
    if (cls < 0 || cls >= kNumClasses) throw ConfigError("class index out of range");
    return kClassNames[cls];
}

imaging::Image render_sample(int cls, int size, double noise, Rng& rng,
                             imaging::BinaryMask* mask_out) {
    imaging::Image img(size, size, imaging::ValueRange::Unit);

    double bg_top[3], bg_bot[3], fg[3];
    for (double& v : bg_top) v = rng.uniform(0.08, 0.92);
    for (double& v : bg_bot) v = rng.uniform(0.08, 0.92);
    const double bg_lum = 0.5 * (luminance(bg_top) + luminance(bg_bot));
    do {
        for (double& v : fg) v = rng.uniform(0.05, 0.95);
    } while (std::abs(luminance(fg) - bg_lum) < 0.25);

    ShapeParams s;
    const double sz = static_cast<double>(size);
    s.r = rng.uniform(0.22, 0.32) * sz;
    s.cx = sz / 2.0 + rng.uniform(-0.12, 0.12) * sz;
    s.cy = sz / 2.0 + rng.uniform(-0.12, 0.12) * sz;
    s.thickness = std::max(1.0, 0.09 * sz);

    if (mask_out) *mask_out = imaging::BinaryMask(size, size);
    for (int y = 0; y < size; ++y) {
        const double t = size > 1 ? static_cast<double>(y) / (size - 1) : 0.0;
        for (int x = 0; x < size; ++x) {
            const double a = coverage(cls, x, y, s);
            for (int c = 0; c < 3; ++c) {
                const double bg = bg_top[c] * (1.0 - t) + bg_bot[c] * t;
                double v = bg * (1.0 - a) + fg[c] * a;
                if (noise > 0.0) v += noise * rng.gaussian();
                img.pixels.at3(c, y, x) = std::clamp(v, 0.0, 1.0);
            }
            if (mask_out && a > 0.5) mask_out->at(y, x) = 1;
        }
    }
    return img;
}

ShapesData make_shapes_dataset(const ShapesConfig& cfg) {
    if (cfg.size < 8) throw ConfigError("shapes dataset: size must be >= 8");
    if (cfg.per_class_train < 1 || cfg.per_class_test < 1)
        throw ConfigError("shapes dataset: per-class counts must be positive");
    ShapesData out;
    auto fill = [&](qr::LabeledImages& split, int per_class, uint64_t salt) {
        const int n = per_class * kNumClasses;
        split.images = Tensor({n, 3, cfg.size, cfg.size});
        split.labels.resize(static_cast<size_t>(n));
        Rng rng(cfg.seed ^ salt);
        const int64_t per = static_cast<int64_t>(3) * cfg.size * cfg.size;
        int idx = 0;
        for (int cls = 0; cls < kNumClasses; ++cls) {
            for (int i = 0; i < per_class; ++i, ++idx) {
                imaging::Image img = render_sample(cls, cfg.size, cfg.noise, rng);
                std::memcpy(split.images.ptr() + idx * per, img.pixels.ptr(),
                            sizeof(double) * static_cast<size_t>(per));
                split.labels[static_cast<size_t>(idx)] = cls;
            }
        }
    };
    fill(out.train, cfg.per_class_train, 0x7261696eull);
    fill(out.test, cfg.per_class_test, 0x74657374ull);

    out.channel_mean.assign(3, 0.0);
    out.channel_std.assign(3, 0.0);
    const int n = out.train.size();
    const int64_t plane = static_cast<int64_t>(cfg.size) * cfg.size;
    for (int c = 0; c < 3; ++c) {
        double s = 0.0, sq = 0.0;
        for (int i = 0; i < n; ++i) {
            const double* p = out.train.images.ptr() + (static_cast<int64_t>(i) * 3 + c) * plane;
            for (int64_t j = 0; j < plane; ++j) {
                s += p[j];
                sq += p[j] * p[j];
            }
        }
        const double count = static_cast<double>(n) * plane;
        const double mean = s / count;
        out.channel_mean[static_cast<size_t>(c)] = mean;
        out.channel_std[static_cast<size_t>(c)] =
            std::max(1e-3, std::sqrt(std::max(0.0, sq / count - mean * mean)));
    }
    return out;
}

SynthesisFixture make_synthesis_fixture(int size, uint64_t seed) {
    if (size < 16) throw ConfigError("synthesis fixture: size must be >= 16");
    SynthesisFixture fx;
    Rng rng(seed ^ 0x66697874ull);

    imaging::Image img(size, size, imaging::ValueRange::Unit);
    imaging::BinaryMask mask(size, size);
    double bg_top[3], bg_bot[3], fg[3];
    for (double& v : bg_top) v = rng.uniform(0.15, 0.45);
    for (double& v : bg_bot) v = rng.uniform(0.15, 0.45);
    do {
        for (double& v : fg) v = rng.uniform(0.55, 0.95);
    } while (std::abs(luminance(fg) - 0.5 * (luminance(bg_top) + luminance(bg_bot))) < 0.3);

    // Object scale matches the training distribution in pixels; placed left of
    // center so a 25%-width shift keeps the target inside the frame.
    ShapeParams s;
    s.r = 0.30 * 32.0;
    s.cx = size * 0.35;
    s.cy = size * 0.5;
    s.thickness = 2.0;
    for (int y = 0; y < size; ++y) {
        const double t = static_cast<double>(y) / (size - 1);
        for (int x = 0; x < size; ++x) {
            const double a = coverage(0, x, y, s);
            for (int c = 0; c < 3; ++c) {
                const double bg = bg_top[c] * (1.0 - t) + bg_bot[c] * t;
                double v = bg * (1.0 - a) + fg[c] * a;
                v += 0.015 * rng.gaussian();
                img.pixels.at3(c, y, x) = std::clamp(v, 0.0, 1.0);
            }
            if (a > 0.5) mask.at(y, x) = 1;
        }
    }
    fx.x_src = std::move(img);
    fx.y_src = std::move(mask);
    fx.y_src.role = imaging::BinaryMask::Role::Source;
    fx.rendered_class = 0;
    return fx;
}

}  // namespace magic::data
