#pragma once

#include <string>
#include <vector>

#include "magic/imaging.hpp"
#include "magic/quasi_robust.hpp"

namespace magic::metrics {

/// Dense symmetric matrix helpers used by the Frechet distance. Matrices are
/// row-major d x d.
using Mat = std::vector<double>;

/// Principal square root of a symmetric PSD matrix via a cyclic-Jacobi
/// eigendecomposition (negative rounding modes clamped to zero). Jitter is
/// added to the diagonal first.
Mat sym_sqrtm(const Mat& a, int d, double jitter = 0.0);

/// Frechet distance between Gaussian fits of two feature sets
/// (rows = samples). Uses unbiased covariance and 1e-6 diagonal jitter for
/// square-root conditioning.
double fid(const std::vector<std::vector<double>>& features_a,
           const std::vector<std::vector<double>>& features_b);

/// Single-image FID: Frechet distance between the per-spatial-location
/// feature vectors of exactly two images at one early extractor layer.
double sifid(const imaging::Image& a, const imaging::Image& b, qr::Classifier& extractor,
             const std::string& layer_id = "stage1");

/// Exact trainable parameter count of a parameter set.
int64_t count_params(const std::vector<const Tensor*>& params);

struct MetricReport {
    std::string metric;  // "fid" | "sifid" | "param_count"
    double value = 0.0;
    std::string feature_extractor;  // extractor id (checkpoint hash + layer)
    std::vector<std::string> sample_manifest;
};

}  // namespace magic::metrics
