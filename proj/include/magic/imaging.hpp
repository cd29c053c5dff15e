#pragma once

#include <string>
#include <vector>

#include "magic/tensor.hpp"

namespace magic::imaging {

enum class ValueRange { Raw255, Unit };  // raw [0,255] vs normalized reals

/// RGB image stored CHW. `range` declares the value domain; Unit images live
/// in [0,1] (the working domain of the pipeline), Raw255 in [0,255].
struct Image {
    Tensor pixels;  // [3,H,W]
    ValueRange range = ValueRange::Unit;

    Image() = default;
    Image(int h, int w, ValueRange r = ValueRange::Unit) : pixels({3, h, w}), range(r) {}

    int height() const { return pixels.rank() == 3 ? pixels.dim(1) : 0; }
    int width() const { return pixels.rank() == 3 ? pixels.dim(2) : 0; }

    /// Enforces the type invariants (shape, finiteness, domain bounds).
    void validate() const;
    /// [1,3,H,W] view used by the networks.
    Tensor batched() const { return pixels.reshaped({1, 3, height(), width()}); }
};

/// The differentiable synthesis variable. Pixels are free reals; `normalized`
/// states whether they live in classifier-normalized space (the default) or
/// directly in the unit domain.
struct PreImage {
    Tensor pixels;  // [3,H,W]
    bool normalized = true;

    PreImage() = default;
    PreImage(int h, int w) : pixels({3, h, w}) {}
    explicit PreImage(Tensor t) : pixels(std::move(t)) {}

    int height() const { return pixels.dim(1); }
    int width() const { return pixels.dim(2); }
    Tensor batched() const { return pixels.reshaped({1, 3, height(), width()}); }
};

/// Binary mask aligned with an image. Values are exactly 0 or 1.
struct BinaryMask {
    enum class Role { Source, Target };
    std::vector<uint8_t> values;  // H*W
    int H = 0, W = 0;
    Role role = Role::Source;

    BinaryMask() = default;
    BinaryMask(int h, int w, Role r = Role::Source) : values(static_cast<size_t>(h) * w, 0), H(h), W(w), role(r) {}

    uint8_t& at(int y, int x) { return values[static_cast<size_t>(y) * W + x]; }
    uint8_t at(int y, int x) const { return values[static_cast<size_t>(y) * W + x]; }

    void validate() const;
    Tensor to_tensor() const;  // [1,1,H,W] of {0.0, 1.0}
    /// Translates the mask by (dy,dx); pixels shifted outside are dropped,
    /// vacated pixels become 0.
    BinaryMask shifted(int dy, int dx) const;
    int64_t popcount() const;
};

double mask_iou(const BinaryMask& a, const BinaryMask& b);

/// Per-layer channel statistics of feature maps.
struct FeatureStats {
    struct LayerStats {
        std::string layer_id;
        std::vector<double> mean;
        std::vector<double> stddev;
    };
    std::vector<LayerStats> layers;
};

// --------------------------------------------------------------- operators

/// Anisotropic total variation: sum over channels of |forward differences|,
/// last row/column omitted. Input [C,H,W] with H,W >= 2.
double tv_loss(const Tensor& x);
/// d tv / dx (subgradient 0 at ties).
Tensor tv_loss_grad(const Tensor& x);

/// Squared Euclidean norm of all pixels.
double norm_reg(const Tensor& x);
Tensor norm_reg_grad(const Tensor& x);

/// alpha * tv + beta * ||x||^2. Weights must be nonnegative.
double basic_reg(const Tensor& x, double alpha, double beta);
Tensor basic_reg_grad(const Tensor& x, double alpha, double beta);

/// Sum over layers of the l2 norms of mean and stddev differences.
double feature_stat_loss(const FeatureStats& a, const FeatureStats& b);
/// Gradient with respect to the entries of `a`.
FeatureStats feature_stat_loss_grad(const FeatureStats& a, const FeatureStats& b);

/// Gradient-visualization protocol: clip to mean +- 3 std (joint over the
/// whole grid), then min-max rescale the clipped values to [0,1]. A zero-std
/// grid maps to all 0.5.
Image visualize_gradient(const Tensor& g);

}  // namespace magic::imaging
