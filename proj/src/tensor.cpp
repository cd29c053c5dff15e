#include "magic/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "magic/kernels.hpp"

namespace magic {

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

double Tensor::min() const {
    double m = std::numeric_limits<double>::infinity();
    for (double v : data) m = std::min(m, v);
    return m;
}

double Tensor::max() const {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : data) m = std::max(m, v);
    return m;
}

void add_inplace(Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    kernels::axpy(a.numel(), 1.0, b.ptr(), a.ptr());
}

void axpy_inplace(Tensor& a, double s, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("axpy: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    kernels::axpy(a.numel(), s, b.ptr(), a.ptr());
}

void scale_inplace(Tensor& a, double s) {
    for (double& v : a.data) v *= s;
}

}  // namespace magic
