#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace magic {

/// Dense row-major tensor of doubles. Rank is dynamic; layouts used in this
/// project are [N,C,H,W] for activations, [Cout,Cin,kh,kw] for conv weights,
/// and flat vectors for everything else.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(count(shape), 0.0) {}
    Tensor(std::vector<int> s, double fill) : shape(std::move(s)), data(count(shape), fill) {}

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("negative tensor dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, double v) { return Tensor(std::move(s), v); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // NCHW helpers
    double& at4(int n, int c, int h, int w) {
        return data[((static_cast<int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    double at4(int n, int c, int h, int w) const {
        return data[((static_cast<int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    double& at3(int c, int h, int w) {
        return data[(static_cast<int64_t>(c) * shape[1] + h) * shape[2] + w];
    }
    double at3(int c, int h, int w) const {
        return data[(static_cast<int64_t>(c) * shape[1] + h) * shape[2] + w];
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(0.0); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    Tensor reshaped(std::vector<int> s) const {
        if (count(s) != numel()) throw std::invalid_argument("reshape: element count mismatch");
        Tensor t = *this;
        t.shape = std::move(s);
        return t;
    }

    std::string shape_str() const {
        std::string r = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) r += ",";
            r += std::to_string(shape[i]);
        }
        return r + "]";
    }

    bool all_finite() const;
    double min() const;
    double max() const;
};

// Shape-checked elementwise helpers (implemented in tensor.cpp).
void add_inplace(Tensor& a, const Tensor& b);             // a += b
void axpy_inplace(Tensor& a, double s, const Tensor& b);  // a += s*b
void scale_inplace(Tensor& a, double s);                  // a *= s

}  // namespace magic
