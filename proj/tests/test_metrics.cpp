#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "magic/dataset.hpp"
#include "magic/metrics.hpp"
#include "magic/nn.hpp"
#include "magic/util.hpp"

#include "test_helpers.hpp"

using namespace magic;
using test_helpers::rel_err;

namespace {

using Feats = std::vector<std::vector<double>>;

Feats random_feats(int n, int d, Rng& rng, double mean_shift = 0.0) {
    Feats f(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(d)));
    for (auto& row : f)
        for (auto& v : row) v = rng.gaussian() + mean_shift;
    return f;
}

// Brute-force oracle: same Frechet formula, matrix square roots via an
// eigendecomposition (independent of the Denman-Beavers route in the
// implementation). Mirrors the 1e-6 jitter convention.
double fid_oracle(const Feats& fa, const Feats& fb) {
    const int d = static_cast<int>(fa.front().size());
    auto fit = [&](const Feats& f) {
        Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
        for (const auto& row : f)
            for (int i = 0; i < d; ++i) mu(i) += row[static_cast<size_t>(i)];
        mu /= static_cast<double>(f.size());
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
        for (const auto& row : f) {
            Eigen::VectorXd x(d);
            for (int i = 0; i < d; ++i) x(i) = row[static_cast<size_t>(i)];
            cov += (x - mu) * (x - mu).transpose();
        }
        cov /= static_cast<double>(f.size()) - 1.0;
        cov += 1e-6 * Eigen::MatrixXd::Identity(d, d);
        return std::pair{mu, cov};
    };
    auto sqrtm = [&](const Eigen::MatrixXd& m) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
        Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        return Eigen::MatrixXd(es.eigenvectors() * lam.asDiagonal() *
                               es.eigenvectors().transpose());
    };
    auto [mu_a, cov_a] = fit(fa);
    auto [mu_b, cov_b] = fit(fb);
    Eigen::MatrixXd ra = sqrtm(cov_a);
    Eigen::MatrixXd inner = ra * cov_b * ra;
    inner = 0.5 * (inner + inner.transpose());
    const double tr_cross = sqrtm(inner).trace();
    return (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_cross;
}

}  // namespace

TEST_CASE("fid: identical feature sets give zero") {
    Rng rng(1);
    for (int d : {2, 16, 64}) {
        Feats f = random_feats(40, d, rng);
        CHECK(std::abs(metrics::fid(f, f)) < 1e-6);
    }
}

TEST_CASE("fid: symmetric and order-invariant") {
    Rng rng(2);
    Feats a = random_feats(30, 6, rng, 0.0);
    Feats b = random_feats(35, 6, rng, 0.5);
    CHECK(rel_err(metrics::fid(a, b), metrics::fid(b, a)) < 1e-9);

    Feats shuffled = a;
    std::reverse(shuffled.begin(), shuffled.end());
    CHECK(rel_err(metrics::fid(a, b), metrics::fid(shuffled, b)) < 1e-12);
}

TEST_CASE("fid matches the eigendecomposition oracle at dimension <= 8") {
    Rng rng(3);
    for (int d : {2, 4, 8}) {
        for (int rep = 0; rep < 3; ++rep) {
            Feats a = random_feats(60, d, rng, 0.0);
            Feats b = random_feats(50, d, rng, 0.8);
            const double got = metrics::fid(a, b);
            const double want = fid_oracle(a, b);
            CHECK(std::abs(got - want) < 1e-5 * std::max(1.0, std::abs(want)));
            CHECK(got >= -1e-9);
        }
    }
}

TEST_CASE("fid: 1-D Gaussians with mean gap m approach m^2") {
    Rng rng(4);
    const double m = 1.7;
    Feats a(20000, std::vector<double>(1));
    Feats b(20000, std::vector<double>(1));
    for (auto& r : a) r[0] = rng.gaussian();
    for (auto& r : b) r[0] = rng.gaussian() + m;
    const double v = metrics::fid(a, b);
    // closed form (mu_a-mu_b)^2 + (sigma_a-sigma_b)^2 -> m^2 for equal sigma
    CHECK(std::abs(v - m * m) < 0.05 * m * m);

    // sampling error shrinks with more samples
    Feats a_small(a.begin(), a.begin() + 100);
    Feats b_small(b.begin(), b.begin() + 100);
    const double v_small = metrics::fid(a_small, b_small);
    CHECK(std::abs(v - m * m) <= std::abs(v_small - m * m) + 0.01);
}

TEST_CASE("fid input validation") {
    Feats a(1, std::vector<double>(3, 0.0));
    Feats b(5, std::vector<double>(3, 0.0));
    CHECK_THROWS_AS(metrics::fid(a, b), InputError);  // < 2 samples
    Feats c(5, std::vector<double>(4, 0.0));
    CHECK_THROWS_AS(metrics::fid(b, c), InputError);  // dim mismatch
}

TEST_CASE("sym_sqrtm squares back to the input") {
    Rng rng(5);
    const int d = 6;
    metrics::Mat a(static_cast<size_t>(d) * d);
    // SPD: M = G G^T + I
    std::vector<double> g(static_cast<size_t>(d) * d);
    for (auto& v : g) v = rng.gaussian();
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double s = i == j ? 1.0 : 0.0;
            for (int k = 0; k < d; ++k)
                s += g[static_cast<size_t>(i) * d + k] * g[static_cast<size_t>(j) * d + k];
            a[static_cast<size_t>(i) * d + j] = s;
        }
    metrics::Mat r = metrics::sym_sqrtm(a, d);
    double worst = 0.0;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double s = 0.0;
            for (int k = 0; k < d; ++k)
                s += r[static_cast<size_t>(i) * d + k] * r[static_cast<size_t>(k) * d + j];
            worst = std::max(worst, std::abs(s - a[static_cast<size_t>(i) * d + j]));
        }
    CHECK(worst < 1e-9);
}

TEST_CASE("sifid: zero on identical images, symmetric") {
    data::ShapesConfig dcfg;
    dcfg.per_class_train = 4;
    dcfg.per_class_test = 2;
    data::ShapesData ds = data::make_shapes_dataset(dcfg);
    qr::ClassifierConfig ccfg;
    ccfg.num_classes = data::kNumClasses;
    ccfg.width = 8;
    ccfg.norm_mean = ds.channel_mean;
    ccfg.norm_std = ds.channel_std;
    qr::Classifier f(ccfg, 6);

    Rng rng(7);
    imaging::Image a = data::render_sample(0, 32, 0.04, rng);
    imaging::Image b = data::render_sample(5, 32, 0.04, rng);

    CHECK(std::abs(metrics::sifid(a, a, f)) < 1e-6);
    const double ab = metrics::sifid(a, b, f);
    const double ba = metrics::sifid(b, a, f);
    CHECK(std::abs(ab - ba) < 1e-8 * std::max(1.0, std::abs(ab)));
    CHECK(ab > 0.0);
}

TEST_CASE("count_params: closed forms on hand-built architectures") {
    // empty model
    CHECK(metrics::count_params({}) == 0);

    // single 3x3 conv, 3 -> 64 channels, with bias: 3*3*3*64 + 64 = 1792
    Rng rng(8);
    nn::Conv2d conv(3, 64, 3, 1, 1, true);
    std::vector<Tensor*> ps, gs;
    conv.collect_params(ps, gs);
    std::vector<const Tensor*> view(ps.begin(), ps.end());
    CHECK(metrics::count_params(view) == 1792);

    // linear 10 -> 4 with bias: 44
    nn::Linear lin(10, 4, true);
    ps.clear();
    gs.clear();
    lin.collect_params(ps, gs);
    view.assign(ps.begin(), ps.end());
    CHECK(metrics::count_params(view) == 44);

    // conv_transpose 5 -> 7, k=3, bias: 5*7*9 + 7 = 322
    nn::ConvTranspose2d tc(5, 7, 3, 1, true);
    ps.clear();
    gs.clear();
    tc.collect_params(ps, gs);
    view.assign(ps.begin(), ps.end());
    CHECK(metrics::count_params(view) == 322);
}
