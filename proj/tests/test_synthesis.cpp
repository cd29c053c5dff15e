#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "magic/dataset.hpp"
#include "magic/image_io.hpp"
#include "magic/synthesis.hpp"
#include "magic/util.hpp"

#include "test_helpers.hpp"

using namespace magic;
using test_helpers::rel_err;

namespace {

struct Rig {
    data::SynthesisFixture fx;
    std::unique_ptr<qr::Classifier> f;
    std::unique_ptr<ed::EncoderDecoder> e;

    explicit Rig(int size = 24) {
        fx = data::make_synthesis_fixture(size, 7);
        qr::ClassifierConfig cfg;
        cfg.num_classes = data::kNumClasses;
        cfg.width = 8;
        cfg.norm_mean = {0.4, 0.4, 0.4};
        cfg.norm_std = {0.25, 0.25, 0.25};
        f = std::make_unique<qr::Classifier>(cfg, 3);
        f->freeze();
        ed::EDConfig ecfg;
        ecfg.width = 8;
        e = std::make_unique<ed::EncoderDecoder>(ecfg, 4);
        e->freeze();
    }

    synth::SynthesisConfig config(int iters, int activation) const {
        synth::SynthesisConfig cfg;
        cfg.h.total_iters = iters;
        cfg.h.eta_activation_iter = activation;
        cfg.critic_cfg.layers = {{4, 2, 8}, {3, 1, 8}};
        cfg.seed = 5;
        cfg.snapshot_every = 0;
        return cfg;
    }

    synth::SynthesisProblem problem(const synth::SynthesisConfig& cfg) {
        return synth::make_problem(*f, *e, fx.x_src, fx.y_src, cfg.h.mode);
    }

    synth::SynthesisState state(const synth::SynthesisConfig& cfg) {
        synth::SynthesisState st;
        imaging::PreImage p0 = synth::init_preimage(fx.x_src.height(), fx.x_src.width(), cfg.seed);
        st.preimage = p0.pixels.reshaped({1, 3, fx.x_src.height(), fx.x_src.width()});
        st.rng = Rng(cfg.seed ^ 0x73796e74ull);
        st.critic = std::make_unique<critic::Critic>(cfg.critic_cfg, cfg.seed ^ 0x63726974ull);
        return st;
    }
};

}  // namespace

TEST_CASE("init_preimage: determinism, moments, seed separation") {
    imaging::PreImage a = synth::init_preimage(32, 32, 9);
    imaging::PreImage b = synth::init_preimage(32, 32, 9);
    CHECK(a.pixels.data == b.pixels.data);

    imaging::PreImage c = synth::init_preimage(32, 32, 10);
    CHECK(a.pixels.data != c.pixels.data);

    const int64_t n = a.pixels.numel();
    double mean = 0.0;
    for (double v : a.pixels.data) mean += v;
    mean /= static_cast<double>(n);
    CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
    double var = 0.0;
    for (double v : a.pixels.data) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    CHECK(sd > 0.95);
    CHECK(sd < 1.05);
}

TEST_CASE("total_loss: degenerate weights reduce to the semantic term; breakdown sums") {
    Rig rig;
    auto cfg = rig.config(10, 10);
    auto prob = rig.problem(cfg);
    auto st = rig.state(cfg);

    synth::HyperParams h0 = cfg.h;
    h0.eta = h0.gamma = h0.kappa = h0.nu = 0.0;
    synth::TermBreakdown b0 = synth::total_loss(st, prob, h0, nullptr);
    CHECK(b0.total == b0.semantic);
    CHECK(b0.critic_term == 0.0);
    CHECK(b0.ed_term == 0.0);
    CHECK(b0.reg_term == 0.0);
    CHECK(b0.feat_term == 0.0);

    synth::TermBreakdown b = synth::total_loss(st, prob, cfg.h, nullptr);
    CHECK(rel_err(b.total,
                  b.semantic + b.critic_term + b.ed_term + b.reg_term + b.feat_term) < 1e-6);
    CHECK(b.ed_term > 0.0);
    CHECK(b.feat_term > 0.0);
}

TEST_CASE("eta schedule: zero before the activation iteration, eta afterwards") {
    synth::HyperParams h;  // defaults: activation at 5000, eta 0.05
    CHECK(h.eta_at(0) == 0.0);
    CHECK(h.eta_at(4999) == 0.0);
    CHECK(h.eta_at(5000) == doctest::Approx(0.05));
    CHECK(h.eta_at(9999) == doctest::Approx(0.05));

    h.eta_activation_iter = 20000;
    CHECK_THROWS_AS(h.validate(), ConfigError);  // activation beyond total
}

TEST_CASE("critic term gradient is exactly zero before activation (probe)") {
    Rig rig;
    auto cfg = rig.config(10000, 5000);  // default-style schedule
    auto prob = rig.problem(cfg);
    auto st = rig.state(cfg);

    st.t = 4999;
    Tensor g_before = synth::term_gradient(st, prob, cfg.h, "critic");
    for (double v : g_before.data) CHECK(v == 0.0);

    st.t = 5000;
    Tensor g_after = synth::term_gradient(st, prob, cfg.h, "critic");
    double norm = 0.0;
    for (double v : g_after.data) norm += v * v;
    CHECK(norm > 0.0);
}

TEST_CASE("fused gradient equals the sum of per-term gradients") {
    Rig rig;
    auto cfg = rig.config(10, 0);  // critic active from t=0
    cfg.h.eta = 0.05;
    auto prob = rig.problem(cfg);
    auto st = rig.state(cfg);

    Tensor fused;
    synth::total_loss(st, prob, cfg.h, &fused);
    Tensor sum(fused.shape);
    for (const char* term : {"semantic", "critic", "ed", "reg", "feat"}) {
        Tensor g = synth::term_gradient(st, prob, cfg.h, term);
        add_inplace(sum, g);
    }
    double worst = 0.0;
    for (int64_t i = 0; i < fused.numel(); ++i)
        worst = std::max(worst, std::abs(fused[i] - sum[i]));
    CHECK(worst < 1e-10);
}

TEST_CASE("step: lambda=0 leaves the pre-image unchanged; history bookkeeping") {
    Rig rig;
    auto cfg = rig.config(5, 5);
    cfg.h.lambda = 0.0;
    auto prob = rig.problem(cfg);
    auto st = rig.state(cfg);
    const Tensor before = st.preimage;
    synth::step(st, prob, cfg);
    CHECK(st.preimage.data == before.data);
    CHECK(st.t == 1);
    CHECK(st.loss_history.size() == 1);
}

TEST_CASE("step: aborts with a per-term diagnostic on non-finite loss") {
    Rig rig;
    auto cfg = rig.config(5, 5);
    auto prob = rig.problem(cfg);
    auto st = rig.state(cfg);
    st.preimage[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(synth::step(st, prob, cfg), std::exception);
}

TEST_CASE("frozen-network purity across steps, including critic-active ones") {
    Rig rig;
    auto cfg = rig.config(4, 2);  // critic activates midway
    cfg.h.eta = 0.05;
    auto prob = rig.problem(cfg);
    auto st = rig.state(cfg);
    const uint64_t f_sum = rig.f->checksum();
    const uint64_t e_sum = rig.e->checksum();
    for (int i = 0; i < 4; ++i) synth::step(st, prob, cfg);
    CHECK(rig.f->checksum() == f_sum);
    CHECK(rig.e->checksum() == e_sum);
    // critic parameters did change once active
    CHECK(st.loss_history.back().critic_term != 0.0);
}

TEST_CASE("state save/load resume is bit-identical to an uninterrupted run") {
    namespace fs = std::filesystem;
    Rig rig;
    auto cfg = rig.config(6, 3);
    cfg.h.eta = 0.05;
    auto prob = rig.problem(cfg);

    // uninterrupted
    auto st_full = rig.state(cfg);
    for (int i = 0; i < 6; ++i) synth::step(st_full, prob, cfg);

    // interrupted at t=3
    auto st_half = rig.state(cfg);
    for (int i = 0; i < 3; ++i) synth::step(st_half, prob, cfg);
    const std::string path = (fs::temp_directory_path() / "magic_synth_state.bin").string();
    st_half.save(path);
    synth::SynthesisState resumed = synth::SynthesisState::load(path, cfg.critic_cfg);
    CHECK(resumed.t == 3);
    for (int i = 0; i < 3; ++i) synth::step(resumed, prob, cfg);

    CHECK(resumed.preimage.data == st_full.preimage.data);
    CHECK(resumed.critic->checksum() == st_full.critic->checksum());
    CHECK(resumed.loss_history.size() == st_full.loss_history.size());
    CHECK(resumed.loss_history.back().total == st_full.loss_history.back().total);
}

TEST_CASE("run_synthesis: outputs, manifest fields, determinism of reruns") {
    namespace fs = std::filesystem;
    Rig rig;
    auto cfg = rig.config(8, 4);
    cfg.h.eta = 0.05;
    cfg.snapshot_every = 4;
    const std::string out =
        (fs::temp_directory_path() / "magic_synth_run_test").string();
    cfg.out_dir = out;

    auto res1 = synth::run_synthesis(*rig.f, *rig.e, rig.fx.x_src, &rig.fx.y_src,
                                     rig.fx.y_src, cfg);
    CHECK(fs::exists(res1.output_png_path));
    CHECK(fs::exists(out + "/manifest.json"));
    CHECK(fs::exists(out + "/loss_curves.csv"));
    CHECK(fs::exists(out + "/state.bin"));
    CHECK(fs::exists(out + "/critic.ckpt"));
    CHECK(fs::exists(out + "/snapshot_000004.png"));

    const std::string manifest1 = read_text_file(out + "/manifest.json");
    CHECK(manifest1.find("\"computed\": 29") == std::string::npos);  // small critic in this rig
    CHECK(manifest1.find("receptive_field") != std::string::npos);
    CHECK(manifest1.find("pixel_fnv64") != std::string::npos);

    auto res2 = synth::run_synthesis(*rig.f, *rig.e, rig.fx.x_src, &rig.fx.y_src,
                                     rig.fx.y_src, cfg);
    const std::string manifest2 = read_text_file(out + "/manifest.json");
    CHECK(manifest1 == manifest2);
    CHECK(res1.x_dst.pixels.data == res2.x_dst.pixels.data);

    // default-preset receptive-field discrepancy is flagged in the manifest
    auto rf = critic::receptive_field_report(critic::CriticConfig::default_preset());
    CHECK(rf.computed == 29);
    CHECK(rf.published_reference == 21);
}

TEST_CASE("hyperparameter defaults match the documented configuration") {
    synth::HyperParams h;
    CHECK(h.eta == doctest::Approx(0.05));
    CHECK(h.gamma == doctest::Approx(30.0));
    CHECK(h.kappa == doctest::Approx(1.0));
    CHECK(h.nu == doctest::Approx(5.0));
    CHECK(h.lambda == doctest::Approx(5e-4));
    CHECK(h.alpha == doctest::Approx(1e-4));
    CHECK(h.beta == doctest::Approx(1e-5));
    CHECK(h.eta_activation_iter == 5000);
    CHECK(h.total_iters == 10000);
    CHECK(h.mode == synth::SemanticMode::CrossEntropy);
}

TEST_CASE("updates_per_gen_step is honored exactly in the loop schedule") {
    Rig rig;
    auto cfg = rig.config(4, 0);  // critic active from t=0
    cfg.critic_cfg.updates_per_gen_step = 3;
    auto prob = rig.problem(cfg);
    auto st = rig.state(cfg);
    CHECK(st.critic->opt().t == 0);
    synth::step(st, prob, cfg);
    CHECK(st.critic->opt().t == 3);  // one Adam step per critic update
    synth::step(st, prob, cfg);
    CHECK(st.critic->opt().t == 6);
}

TEST_CASE("gen-term evaluation leaves critic parameter gradients untouched") {
    Rig rig;
    auto cfg = rig.config(4, 0);
    auto prob = rig.problem(cfg);
    auto st = rig.state(cfg);
    std::vector<Tensor*> ps, gs;
    st.critic->collect_params(ps, gs);
    for (Tensor* g : gs)
        for (double v : g->data) CHECK(v == 0.0);
    Tensor grad;
    synth::total_loss(st, prob, cfg.h, &grad);  // includes the critic gen term
    for (Tensor* g : gs)
        for (double v : g->data) CHECK(v == 0.0);
}

TEST_CASE("identity-guided run collapses the ed inversion term") {
    // trained encoder-decoder, random frozen classifier: the gamma-weighted
    // term dominates and must fall well below its value at the noise init.
    // The full-scale 90%-drop bound runs on the real fixture in acceptance.
    auto fx = data::make_synthesis_fixture(32, 21);
    ed::EDConfig ecfg;
    ecfg.width = 16;
    auto e = std::make_unique<ed::EncoderDecoder>(ecfg, 22);
    ed::TrainEDOptions topts;
    topts.iters = 400;
    topts.lr = 2e-3;
    topts.stop_bce = 0.03;
    ed::train_ed(*e, fx.x_src, fx.y_src, topts);
    e->freeze();

    qr::ClassifierConfig ccfg;
    ccfg.num_classes = data::kNumClasses;
    ccfg.width = 8;
    ccfg.norm_mean = {0.4, 0.4, 0.4};
    ccfg.norm_std = {0.25, 0.25, 0.25};
    qr::Classifier f(ccfg, 23);
    f.freeze();

    synth::SynthesisConfig cfg;
    cfg.h.total_iters = 650;
    cfg.h.eta_activation_iter = 650;
    cfg.h.lambda = 6e-3;
    cfg.critic_cfg.layers = {{4, 2, 8}};
    cfg.seed = 24;
    auto prob = synth::make_problem(f, *e, fx.x_src, fx.y_src, cfg.h.mode);
    synth::SynthesisState st;
    imaging::PreImage p0 = synth::init_preimage(32, 32, cfg.seed);
    st.preimage = p0.pixels.reshaped({1, 3, 32, 32});
    st.rng = Rng(cfg.seed);
    st.critic = std::make_unique<critic::Critic>(cfg.critic_cfg, cfg.seed);
    for (int t = 0; t < cfg.h.total_iters; ++t) synth::step(st, prob, cfg);
    const double first_ed = st.loss_history.front().ed_term;
    const double last_ed = st.loss_history.back().ed_term;
    CHECK(last_ed <= 0.2 * first_ed);
}

TEST_CASE("kl semantic mode runs and reports a finite nonnegative divergence") {
    Rig rig;
    auto cfg = rig.config(2, 2);
    cfg.h.mode = synth::SemanticMode::KlToSource;
    auto prob = synth::make_problem(*rig.f, *rig.e, rig.fx.x_src, rig.fx.y_src, cfg.h.mode);
    auto st = rig.state(cfg);
    Tensor g;
    synth::TermBreakdown b = synth::total_loss(st, prob, cfg.h, &g);
    CHECK(std::isfinite(b.semantic));
    CHECK(b.semantic >= -1e-9);
    double gn = 0.0;
    for (double v : g.data) gn += v * v;
    CHECK(gn > 0.0);
}

TEST_CASE("export clamps to the unit domain and denormalizes") {
    Rig rig;
    auto cfg = rig.config(1, 1);
    auto st = rig.state(cfg);
    st.preimage.fill(100.0);  // far beyond the clamp
    imaging::Image img = synth::export_preimage(*rig.f, st.preimage);
    for (double v : img.pixels.data) CHECK(v == 1.0);
    st.preimage.fill(-100.0);
    img = synth::export_preimage(*rig.f, st.preimage);
    for (double v : img.pixels.data) CHECK(v == 0.0);
}
