#include "magic/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "magic/util.hpp"

namespace magic::metrics {

namespace {

void mat_mul(const Mat& a, const Mat& b, Mat& c, int d) {
    c.assign(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k) {
            const double av = a[static_cast<size_t>(i) * d + k];
            if (av == 0.0) continue;
            const double* brow = b.data() + static_cast<size_t>(k) * d;
            double* crow = c.data() + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) crow[j] += av * brow[j];
        }
}

// Symmetric eigendecomposition by cyclic Jacobi rotations. Eigenvalues land
// on the diagonal of `a`, eigenvectors in the columns of `v`. Absolute
// accuracy ~u*||A||, which keeps near-zero modes of rank-deficient
// covariances precise (the Frechet trace squares the condition number, so
// iterative square roots lose too much there).
void jacobi_eigh(Mat& a, Mat& v, int d) {
    v.assign(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) v[static_cast<size_t>(i) * d + i] = 1.0;
    auto A = [&](int i, int j) -> double& { return a[static_cast<size_t>(i) * d + j]; };
    auto V = [&](int i, int j) -> double& { return v[static_cast<size_t>(i) * d + j]; };
    double norm = 0.0;
    for (double x : a) norm += x * x;
    norm = std::sqrt(norm);
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < d; ++p)
            for (int q = p + 1; q < d; ++q) off += A(p, q) * A(p, q);
        if (std::sqrt(2.0 * off) <= 1e-15 * std::max(norm, 1e-300)) break;
        for (int p = 0; p < d; ++p) {
            for (int q = p + 1; q < d; ++q) {
                const double apq = A(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                const double app = A(p, p), aqq = A(q, q);
                A(p, p) = app - t * apq;
                A(q, q) = aqq + t * apq;
                A(p, q) = 0.0;
                A(q, p) = 0.0;
                for (int k = 0; k < d; ++k) {
                    if (k != p && k != q) {
                        const double akp = A(k, p), akq = A(k, q);
                        A(k, p) = c * akp - s * akq;
                        A(p, k) = A(k, p);
                        A(k, q) = s * akp + c * akq;
                        A(q, k) = A(k, q);
                    }
                    const double vkp = V(k, p), vkq = V(k, q);
                    V(k, p) = c * vkp - s * vkq;
                    V(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
}

}  // namespace

Mat sym_sqrtm(const Mat& a, int d, double jitter) {
    if (static_cast<int>(a.size()) != d * d) throw InputError("sym_sqrtm: bad matrix size");
    Mat work = a;
    for (int i = 0; i < d; ++i) work[static_cast<size_t>(i) * d + i] += jitter;
    // enforce exact symmetry before rotating
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
            const double m = 0.5 * (work[static_cast<size_t>(i) * d + j] +
                                    work[static_cast<size_t>(j) * d + i]);
            work[static_cast<size_t>(i) * d + j] = m;
            work[static_cast<size_t>(j) * d + i] = m;
        }
    Mat v;
    jacobi_eigh(work, v, d);
    std::vector<double> roots(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i)
        roots[static_cast<size_t>(i)] = std::sqrt(std::max(0.0, work[static_cast<size_t>(i) * d + i]));
    Mat out(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double s = 0.0;
            for (int k = 0; k < d; ++k)
                s += v[static_cast<size_t>(i) * d + k] * roots[static_cast<size_t>(k)] *
                     v[static_cast<size_t>(j) * d + k];
            out[static_cast<size_t>(i) * d + j] = s;
        }
    return out;
}

namespace {

struct Gaussian {
    std::vector<double> mean;
    Mat cov;
    int d = 0;
};

Gaussian fit_gaussian(const std::vector<std::vector<double>>& feats) {
    if (feats.size() < 2) throw InputError("fid: need at least 2 samples per side");
    Gaussian g;
    g.d = static_cast<int>(feats.front().size());
    if (g.d < 1) throw InputError("fid: empty feature vectors");
    for (const auto& f : feats)
        if (static_cast<int>(f.size()) != g.d) throw InputError("fid: feature dimension mismatch");
    const double n = static_cast<double>(feats.size());
    g.mean.assign(static_cast<size_t>(g.d), 0.0);
    for (const auto& f : feats)
        for (int i = 0; i < g.d; ++i) g.mean[static_cast<size_t>(i)] += f[static_cast<size_t>(i)];
    for (double& v : g.mean) v /= n;
    g.cov.assign(static_cast<size_t>(g.d) * g.d, 0.0);
    for (const auto& f : feats) {
        for (int i = 0; i < g.d; ++i) {
            const double di = f[static_cast<size_t>(i)] - g.mean[static_cast<size_t>(i)];
            for (int j = 0; j < g.d; ++j)
                g.cov[static_cast<size_t>(i) * g.d + j] +=
                    di * (f[static_cast<size_t>(j)] - g.mean[static_cast<size_t>(j)]);
        }
    }
    for (double& v : g.cov) v /= (n - 1.0);
    return g;
}

constexpr double kJitter = 1e-6;

}  // namespace

double fid(const std::vector<std::vector<double>>& features_a,
           const std::vector<std::vector<double>>& features_b) {
    Gaussian ga = fit_gaussian(features_a);
    Gaussian gb = fit_gaussian(features_b);
    if (ga.d != gb.d) throw InputError("fid: feature dimension mismatch between sides");
    const int d = ga.d;

    double mean_term = 0.0;
    for (int i = 0; i < d; ++i) {
        const double diff = ga.mean[static_cast<size_t>(i)] - gb.mean[static_cast<size_t>(i)];
        mean_term += diff * diff;
    }
    double tr_a = 0.0, tr_b = 0.0;
    for (int i = 0; i < d; ++i) {
        tr_a += ga.cov[static_cast<size_t>(i) * d + i];
        tr_b += gb.cov[static_cast<size_t>(i) * d + i];
    }
    // tr((Sa Sb)^1/2) = tr((Sa^1/2 Sb Sa^1/2)^1/2), computed on the symmetric form
    Mat ra = sym_sqrtm(ga.cov, d, kJitter);
    Mat tmp, inner;
    Mat covb = gb.cov;
    for (int i = 0; i < d; ++i) covb[static_cast<size_t>(i) * d + i] += kJitter;
    mat_mul(ra, covb, tmp, d);
    mat_mul(tmp, ra, inner, d);
    Mat rin = sym_sqrtm(inner, d, 0.0);
    double tr_cross = 0.0;
    for (int i = 0; i < d; ++i) tr_cross += rin[static_cast<size_t>(i) * d + i];
    // distance between the consistently jittered Gaussians: exactly zero for
    // identical inputs, within O(jitter*d) of the unjittered value otherwise
    return mean_term + (tr_a + kJitter * d) + (tr_b + kJitter * d) - 2.0 * tr_cross;
}

double sifid(const imaging::Image& a, const imaging::Image& b, qr::Classifier& extractor,
             const std::string& layer_id) {
    a.validate();
    b.validate();
    auto gather = [&](const imaging::Image& img) {
        Tensor fm = extractor.feature_map(img, layer_id);  // [1,C,h,w]
        const int C = fm.dim(1), h = fm.dim(2), w = fm.dim(3);
        if (static_cast<int64_t>(h) * w < 2)
            throw InputError("sifid: feature map has fewer than 2 spatial positions");
        std::vector<std::vector<double>> feats(static_cast<size_t>(h) * w,
                                               std::vector<double>(static_cast<size_t>(C)));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < C; ++c)
                    feats[static_cast<size_t>(y) * w + x][static_cast<size_t>(c)] =
                        fm.at4(0, c, y, x);
        return feats;
    };
    return fid(gather(a), gather(b));
}

int64_t count_params(const std::vector<const Tensor*>& params) {
    int64_t n = 0;
    for (const Tensor* p : params) n += p->numel();
    return n;
}

}  // namespace magic::metrics
