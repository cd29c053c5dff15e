#include "magic/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "magic/image_io.hpp"
#include "magic/kernels.hpp"
#include "magic/util.hpp"

namespace magic::synth {

using nlohmann::json;

void HyperParams::validate() const {
    if (eta < 0 || gamma < 0 || kappa < 0 || nu < 0 || alpha < 0 || beta < 0)
        throw ConfigError("hyperparams: all weights must be nonnegative");
    if (lambda < 0) throw ConfigError("hyperparams: learning rate must be nonnegative");
    if (total_iters < 0) throw ConfigError("hyperparams: total_iters must be nonnegative");
    if (eta_activation_iter > total_iters)
        throw ConfigError("hyperparams: eta_activation_iter must be <= total_iters");
}

imaging::PreImage init_preimage(int h, int w, uint64_t seed) {
    if (h < 1 || w < 1) throw ConfigError("init_preimage: invalid shape");
    imaging::PreImage p(h, w);
    Rng rng(seed);
    for (double& v : p.pixels.data) v = rng.gaussian();
    return p;
}

Tensor preimage_raw_view(const qr::Classifier& f, const Tensor& preimage) {
    Tensor raw = preimage;
    const auto& mean = f.config().norm_mean;
    const auto& std = f.config().norm_std;
    const int64_t plane = static_cast<int64_t>(raw.dim(2)) * raw.dim(3);
    for (int c = 0; c < 3; ++c) {
        double* p = raw.ptr() + static_cast<int64_t>(c) * plane;
        for (int64_t i = 0; i < plane; ++i)
            p[i] = p[i] * std[static_cast<size_t>(c)] + mean[static_cast<size_t>(c)];
    }
    return raw;
}

imaging::Image export_preimage(const qr::Classifier& f, const Tensor& preimage) {
    Tensor raw = preimage_raw_view(f, preimage);
    imaging::Image img(raw.dim(2), raw.dim(3), imaging::ValueRange::Unit);
    for (int64_t i = 0; i < raw.numel(); ++i)
        img.pixels[i] = std::clamp(raw[i], 0.0, 1.0);
    return img;
}

SynthesisProblem make_problem(qr::Classifier& f, ed::EncoderDecoder& e,
                              const imaging::Image& x_src, const imaging::BinaryMask& y_dst,
                              SemanticMode mode) {
    x_src.validate();
    y_dst.validate();
    if (!f.frozen() || !e.frozen())
        throw ContractError("synthesis: classifier and encoder-decoder must be frozen");
    if (y_dst.H != x_src.height() || y_dst.W != x_src.width())
        throw InputError("synthesis: guide mask must match the source image shape");
    SynthesisProblem prob;
    prob.f = &f;
    prob.e = &e;
    prob.x_src_raw = x_src.batched();
    prob.y_dst = y_dst;
    qr::Prediction pred = f.predict(x_src);
    prob.target_class = pred.cls;
    if (prob.target_class < 0 || prob.target_class >= f.config().num_classes)
        throw ConfigError("synthesis: predicted class outside classifier range");
    if (mode == SemanticMode::KlToSource) {
        Tensor logits({1, static_cast<int>(pred.logits.size())});
        std::copy(pred.logits.begin(), pred.logits.end(), logits.ptr());
        Tensor sm = nn::softmax(logits);
        prob.source_softmax.assign(sm.ptr(), sm.ptr() + sm.numel());
    }
    prob.source_stats = f.extract_stats(x_src);
    return prob;
}

namespace {

// Chains feature-stat gradients from per-layer (mean, std) seeds back to the
// tap activations: dmu/da = 1/plane, dsigma/da = (a - mu)/(plane * sigma).
std::map<std::string, Tensor> tap_grads_from_stats(const qr::Classifier& f,
                                                   const imaging::FeatureStats& grad_stats,
                                                   const imaging::FeatureStats& stats,
                                                   const std::map<std::string, Tensor>& taps,
                                                   double weight) {
    std::map<std::string, Tensor> out;
    for (size_t j = 0; j < grad_stats.layers.size(); ++j) {
        const auto& gl = grad_stats.layers[j];
        const auto& sl = stats.layers[j];
        const Tensor& act = taps.at(gl.layer_id);
        Tensor g(act.shape);
        const int C = act.dim(1);
        const int64_t plane = static_cast<int64_t>(act.dim(2)) * act.dim(3);
        for (int c = 0; c < C; ++c) {
            const double gmu = weight * gl.mean[static_cast<size_t>(c)];
            const double gsig = weight * gl.stddev[static_cast<size_t>(c)];
            const double mu = sl.mean[static_cast<size_t>(c)];
            const double sigma = std::max(sl.stddev[static_cast<size_t>(c)], 1e-12);
            const double* a = act.ptr() + static_cast<int64_t>(c) * plane;
            double* gp = g.ptr() + static_cast<int64_t>(c) * plane;
            const double inv_plane = 1.0 / static_cast<double>(plane);
            for (int64_t i = 0; i < plane; ++i)
                gp[i] = gmu * inv_plane + gsig * (a[i] - mu) * inv_plane / sigma;
        }
        out.emplace(gl.layer_id, std::move(g));
    }
    return out;
}

void raw_grad_to_normalized(const qr::Classifier& f, Tensor& g) {
    const auto& std = f.config().norm_std;
    const int64_t plane = static_cast<int64_t>(g.dim(2)) * g.dim(3);
    for (int c = 0; c < 3; ++c) {
        double* p = g.ptr() + static_cast<int64_t>(c) * plane;
        for (int64_t i = 0; i < plane; ++i) p[i] *= std[static_cast<size_t>(c)];
    }
}

double semantic_loss(SynthesisProblem& prob, const Tensor& logits, const HyperParams& h,
                     Tensor* dlogits) {
    if (h.mode == SemanticMode::CrossEntropy)
        return nn::softmax_cross_entropy(logits, {prob.target_class}, dlogits);
    // KL(p_src || softmax(z)) up to the constant entropy of p_src has the
    // same gradient as soft-label cross-entropy; report the full KL value.
    const int C = logits.dim(1);
    Tensor sm = nn::softmax(logits);
    double kl = 0.0;
    for (int c = 0; c < C; ++c) {
        const double ps = prob.source_softmax[static_cast<size_t>(c)];
        if (ps > 0.0) kl += ps * (std::log(ps) - std::log(std::max(sm[c], 1e-300)));
    }
    if (dlogits) {
        *dlogits = Tensor({1, C});
        for (int c = 0; c < C; ++c)
            (*dlogits)[c] = sm[c] - prob.source_softmax[static_cast<size_t>(c)];
    }
    return kl;
}

}  // namespace

TermBreakdown total_loss(SynthesisState& state, SynthesisProblem& prob, const HyperParams& h,
                         Tensor* grad) {
    h.validate();
    qr::Classifier& f = *prob.f;
    TermBreakdown out;
    if (grad) *grad = Tensor(state.preimage.shape);

    // semantic + feature-stat terms share one classifier pass
    Tensor logits = f.forward_normalized(state.preimage, nn::Mode::Eval);
    Tensor dlogits;
    out.semantic = semantic_loss(prob, logits, h, grad ? &dlogits : nullptr);
    std::map<std::string, Tensor> tap_grads;
    if (h.nu > 0.0) {
        const auto& taps = f.taps();
        imaging::FeatureStats stats;
        for (const auto& id : f.config().stat_layers) {
            const Tensor& t = taps.at(id);
            const int C = t.dim(1);
            const int64_t plane = static_cast<int64_t>(t.dim(2)) * t.dim(3);
            imaging::FeatureStats::LayerStats ls;
            ls.layer_id = id;
            ls.mean.resize(static_cast<size_t>(C));
            ls.stddev.resize(static_cast<size_t>(C));
            for (int c = 0; c < C; ++c) {
                const double* p = t.ptr() + static_cast<int64_t>(c) * plane;
                const double m = kernels::serial::sum(p, plane) / static_cast<double>(plane);
                double var = 0.0;
                for (int64_t i = 0; i < plane; ++i) {
                    const double d = p[i] - m;
                    var += d * d;
                }
                ls.mean[static_cast<size_t>(c)] = m;
                ls.stddev[static_cast<size_t>(c)] = std::sqrt(var / static_cast<double>(plane));
            }
            stats.layers.push_back(std::move(ls));
        }
        out.feat_term = h.nu * imaging::feature_stat_loss(stats, prob.source_stats);
        if (grad) {
            imaging::FeatureStats gstats =
                imaging::feature_stat_loss_grad(stats, prob.source_stats);
            tap_grads = tap_grads_from_stats(f, gstats, stats, taps, h.nu);
        }
    }
    if (grad) {
        Tensor gsem = f.backward(dlogits, tap_grads.empty() ? nullptr : &tap_grads, false);
        add_inplace(*grad, gsem);
    }

    // mask-guided encoder-decoder inversion on the raw view
    Tensor raw = preimage_raw_view(f, state.preimage);
    if (h.gamma > 0.0) {
        Tensor g_ed;
        const double ed_bce =
            ed::ed_inversion_loss(*prob.e, raw, prob.y_dst, grad ? &g_ed : nullptr);
        out.ed_term = h.gamma * ed_bce;
        if (grad) {
            raw_grad_to_normalized(f, g_ed);
            axpy_inplace(*grad, h.gamma, g_ed);
        }
    }

    // image-space regularizer on the normalized pre-image
    if (h.kappa > 0.0) {
        const Tensor pre3 =
            state.preimage.reshaped({3, state.preimage.dim(2), state.preimage.dim(3)});
        out.reg_term = h.kappa * imaging::basic_reg(pre3, h.alpha, h.beta);
        if (grad) {
            Tensor greg = imaging::basic_reg_grad(pre3, h.alpha, h.beta);
            axpy_inplace(*grad, h.kappa, greg.reshaped(state.preimage.shape));
        }
    }

    // patch-critic generator term; contributes exactly zero before activation
    const double eta_t = h.eta_at(state.t);
    if (eta_t > 0.0 && state.critic) {
        Tensor score = state.critic->forward(raw, nn::Mode::TrainNoStats);
        const double gen =
            -kernels::sum(score.ptr(), score.numel()) / static_cast<double>(score.numel());
        out.critic_term = eta_t * gen;
        if (grad) {
            Tensor seed(score.shape);
            seed.fill(-1.0 / static_cast<double>(score.numel()));
            Tensor graw = state.critic->backward_input(seed);
            raw_grad_to_normalized(f, graw);
            axpy_inplace(*grad, eta_t, graw);
        }
    }

    out.total = out.semantic + out.critic_term + out.ed_term + out.reg_term + out.feat_term;
    return out;
}

Tensor term_gradient(SynthesisState& state, SynthesisProblem& prob, const HyperParams& h,
                     const std::string& term) {
    HyperParams iso = h;
    // zero every weight except the requested term; semantic keeps weight 1
    iso.gamma = term == "ed" ? h.gamma : 0.0;
    iso.kappa = term == "reg" ? h.kappa : 0.0;
    iso.nu = term == "feat" ? h.nu : 0.0;
    iso.eta = term == "critic" ? h.eta : 0.0;
    Tensor grad;
    if (term == "semantic") {
        total_loss(state, prob, iso, &grad);
        return grad;
    }
    if (term != "ed" && term != "reg" && term != "feat" && term != "critic")
        throw ConfigError("term_gradient: unknown term '" + term + "'");
    Tensor g_with;
    total_loss(state, prob, iso, &g_with);
    HyperParams none = iso;
    none.gamma = none.kappa = none.nu = none.eta = 0.0;
    Tensor g_sem;
    total_loss(state, prob, none, &g_sem);
    for (int64_t i = 0; i < g_with.numel(); ++i) g_with[i] -= g_sem[i];
    return g_with;
}

void step(SynthesisState& state, SynthesisProblem& prob, const SynthesisConfig& cfg) {
    const HyperParams& h = cfg.h;
    const double eta_t = h.eta_at(state.t);
    if (eta_t > 0.0 && state.critic) {
        Tensor raw = preimage_raw_view(*prob.f, state.preimage);
        for (int k = 0; k < state.critic->config().updates_per_gen_step; ++k)
            critic::critic_update(*state.critic, prob.x_src_raw, raw, cfg.critic_lr, state.rng);
    }
    Tensor grad;
    TermBreakdown terms = total_loss(state, prob, h, &grad);
    if (!std::isfinite(terms.total)) {
        std::ostringstream ss;
        ss << "synthesis aborted at t=" << state.t << ": non-finite loss; terms: semantic="
           << terms.semantic << " critic=" << terms.critic_term << " ed=" << terms.ed_term
           << " reg=" << terms.reg_term << " feat=" << terms.feat_term;
        throw ContractError(ss.str());
    }
    if (!state.pre_adam.initialized()) state.pre_adam.init({&state.preimage});
    state.pre_adam.lr = h.lambda;
    std::vector<Tensor*> ps{&state.preimage}, gs{&grad};
    state.pre_adam.step(ps, gs);
    state.loss_history.push_back(terms);
    state.t += 1;
}

// ------------------------------------------------------------ state io

namespace {
constexpr char kStateMagic[8] = {'M', 'A', 'G', 'S', 'Y', 'N', 'S', '1'};
}

void SynthesisState::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write synthesis state: " + path);
    os.write(kStateMagic, sizeof(kStateMagic));
    json header;
    header["t"] = t;
    header["rng_state"] = rng.state();
    header["rng_calls"] = rng.calls();
    header["adam_t"] = pre_adam.t;
    header["history_rows"] = loss_history.size();
    const std::string hs = header.dump();
    const uint64_t hlen = hs.size();
    os.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    nn::write_tensor(os, preimage);
    const uint8_t has_adam = pre_adam.initialized() ? 1 : 0;
    os.write(reinterpret_cast<const char*>(&has_adam), sizeof(has_adam));
    if (has_adam) {
        nn::write_tensor(os, pre_adam.m[0]);
        nn::write_tensor(os, pre_adam.v[0]);
    }
    const uint8_t has_critic = critic ? 1 : 0;
    os.write(reinterpret_cast<const char*>(&has_critic), sizeof(has_critic));
    if (critic) critic->serialize(os);
    for (const auto& row : loss_history) {
        const double vals[6] = {row.total,   row.semantic, row.critic_term,
                                row.ed_term, row.reg_term, row.feat_term};
        os.write(reinterpret_cast<const char*>(vals), sizeof(vals));
    }
    if (!os) throw IoError("synthesis state write failed: " + path);
}

SynthesisState SynthesisState::load(const std::string& path,
                                    const critic::CriticConfig& expected_cfg) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open synthesis state: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kStateMagic, sizeof(kStateMagic)) != 0)
        throw IoError("not a synthesis state file: " + path);
    uint64_t hlen = 0;
    is.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    json header = json::parse(hs);
    SynthesisState st;
    st.t = header.at("t");
    st.rng.restore(header.at("rng_state"), header.at("rng_calls"));
    st.preimage = nn::read_tensor(is);
    uint8_t has_adam = 0;
    is.read(reinterpret_cast<char*>(&has_adam), sizeof(has_adam));
    if (has_adam) {
        st.pre_adam.init({&st.preimage});
        st.pre_adam.t = header.at("adam_t");
        st.pre_adam.m[0] = nn::read_tensor(is);
        st.pre_adam.v[0] = nn::read_tensor(is);
    }
    uint8_t has_critic = 0;
    is.read(reinterpret_cast<char*>(&has_critic), sizeof(has_critic));
    if (has_critic) {
        st.critic = critic::Critic::deserialize(is);
        expected_cfg.validate();
        if (critic::receptive_field(st.critic->config()) != critic::receptive_field(expected_cfg))
            throw ConfigError("synthesis state: critic architecture mismatch with config");
    }
    const size_t rows = header.at("history_rows");
    st.loss_history.resize(rows);
    for (auto& row : st.loss_history) {
        double vals[6];
        is.read(reinterpret_cast<char*>(vals), sizeof(vals));
        row = {vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]};
    }
    if (!is) throw IoError("synthesis state: truncated file");
    return st;
}

// --------------------------------------------------------- run_synthesis

namespace {
json breakdown_json(const TermBreakdown& b) {
    return {{"total", b.total},       {"semantic", b.semantic}, {"critic", b.critic_term},
            {"ed", b.ed_term},        {"reg", b.reg_term},      {"feat", b.feat_term}};
}

json config_json(const SynthesisConfig& cfg) {
    json jc;
    jc["hyperparams"] = {{"eta", cfg.h.eta},
                         {"gamma", cfg.h.gamma},
                         {"kappa", cfg.h.kappa},
                         {"nu", cfg.h.nu},
                         {"lambda", cfg.h.lambda},
                         {"alpha", cfg.h.alpha},
                         {"beta", cfg.h.beta},
                         {"eta_activation_iter", cfg.h.eta_activation_iter},
                         {"total_iters", cfg.h.total_iters},
                         {"semantic_mode",
                          cfg.h.mode == SemanticMode::CrossEntropy ? "cross_entropy" : "kl"}};
    json layers = json::array();
    for (const auto& l : cfg.critic_cfg.layers)
        layers.push_back({{"kernel", l.kernel}, {"stride", l.stride}, {"filters", l.filters}});
    jc["critic"] = {{"layers", layers},
                    {"leaky_slope", cfg.critic_cfg.leaky_slope},
                    {"gp_weight", cfg.critic_cfg.gp_weight},
                    {"updates_per_gen_step", cfg.critic_cfg.updates_per_gen_step},
                    {"use_batchnorm", cfg.critic_cfg.use_batchnorm},
                    {"lr", cfg.critic_lr}};
    jc["seed"] = cfg.seed;
    jc["snapshot_every"] = cfg.snapshot_every;
    return jc;
}
}  // namespace

RunResult run_synthesis(qr::Classifier& f, ed::EncoderDecoder& e, const imaging::Image& x_src,
                        const imaging::BinaryMask* y_src, const imaging::BinaryMask& y_dst,
                        const SynthesisConfig& cfg, SynthesisState* resume_from) {
    cfg.h.validate();
    cfg.critic_cfg.validate();
    if (cfg.out_dir.empty()) throw ConfigError("run_synthesis: out_dir must be set");
    ensure_dir(cfg.out_dir);
    f.freeze();
    e.freeze();
    const uint64_t f_sum_before = f.checksum();
    const uint64_t e_sum_before = e.checksum();

    SynthesisProblem prob = make_problem(f, e, x_src, y_dst, cfg.h.mode);

    SynthesisState state;
    if (resume_from) {
        state = std::move(*resume_from);
    } else {
        imaging::PreImage p0 = init_preimage(x_src.height(), x_src.width(), cfg.seed);
        state.preimage = p0.pixels.reshaped({1, 3, x_src.height(), x_src.width()});
        state.rng = Rng(cfg.seed ^ 0x73796e74ull);
        state.critic = std::make_unique<critic::Critic>(cfg.critic_cfg, cfg.seed ^ 0x63726974ull);
    }

    std::vector<std::string> snapshots;
    while (state.t < cfg.h.total_iters) {
        step(state, prob, cfg);
        if (cfg.snapshot_every > 0 && state.t % cfg.snapshot_every == 0 &&
            state.t < cfg.h.total_iters) {
            char name[64];
            std::snprintf(name, sizeof(name), "snapshot_%06d.png", state.t);
            imaging::write_png(cfg.out_dir + "/" + name, export_preimage(f, state.preimage));
            snapshots.emplace_back(name);
        }
    }

    RunResult res;
    res.x_dst = export_preimage(f, state.preimage);
    res.source_class = prob.target_class;
    res.output_class = f.predict(res.x_dst).cls;
    res.final_losses = state.loss_history.empty() ? TermBreakdown{} : state.loss_history.back();

    if (f.checksum() != f_sum_before || e.checksum() != e_sum_before)
        throw ContractError("run_synthesis: frozen network parameters changed");

    const std::string png_name = "x_dst.png";
    res.output_png_path = cfg.out_dir + "/" + png_name;
    imaging::write_png(res.output_png_path, res.x_dst);

    std::vector<std::vector<double>> rows;
    rows.reserve(state.loss_history.size());
    for (size_t i = 0; i < state.loss_history.size(); ++i) {
        const auto& b = state.loss_history[i];
        rows.push_back({static_cast<double>(i), b.total, b.semantic, b.critic_term, b.ed_term,
                        b.reg_term, b.feat_term});
    }
    write_csv(cfg.out_dir + "/loss_curves.csv",
              {"iter", "total", "semantic", "critic", "ed", "reg", "feat"}, rows);

    state.critic->save_checkpoint(cfg.out_dir + "/critic.ckpt");
    state.save(cfg.out_dir + "/state.bin");

    auto rf = critic::receptive_field_report(cfg.critic_cfg);
    json manifest;
    manifest["config"] = config_json(cfg);
    manifest["seed"] = cfg.seed;
    manifest["checkpoints"] = {
        {"classifier",
         {{"path", cfg.classifier_ckpt_path},
          {"param_checksum", hex64(f.checksum())},
          {"file_fnv64", cfg.classifier_ckpt_path.empty()
                             ? ""
                             : hex64(fnv1a64_file(cfg.classifier_ckpt_path))}}},
        {"encoder_decoder",
         {{"path", cfg.ed_ckpt_path},
          {"param_checksum", hex64(e.checksum())},
          {"file_fnv64",
           cfg.ed_ckpt_path.empty() ? "" : hex64(fnv1a64_file(cfg.ed_ckpt_path))}}}};
    manifest["source"] = {
        {"x_src_fnv64", hex64(fnv1a64(x_src.pixels.data.data(),
                                      x_src.pixels.data.size() * sizeof(double)))},
        {"y_src_fnv64",
         y_src ? hex64(fnv1a64(y_src->values.data(), y_src->values.size())) : ""},
        {"y_dst_fnv64", hex64(fnv1a64(y_dst.values.data(), y_dst.values.size()))},
        {"predicted_class", prob.target_class}};
    json rfj = {{"computed", rf.computed}, {"note", rf.note}};
    if (rf.published_reference > 0) rfj["published_reference"] = rf.published_reference;
    manifest["receptive_field"] = rfj;
    manifest["losses_final"] = breakdown_json(res.final_losses);
    manifest["loss_csv"] = "loss_curves.csv";
    manifest["snapshots"] = snapshots;
    manifest["output"] = {
        {"png", png_name},
        {"png_fnv64", hex64(fnv1a64_file(res.output_png_path))},
        {"pixel_fnv64", hex64(fnv1a64(res.x_dst.pixels.data.data(),
                                      res.x_dst.pixels.data.size() * sizeof(double)))},
        {"predicted_class", res.output_class}};
    manifest["state_file"] = "state.bin";
    manifest["critic_checkpoint"] = "critic.ckpt";
    manifest["iterations_run"] = state.t;

    res.manifest_path = cfg.out_dir + "/manifest.json";
    write_text_file(res.manifest_path, manifest.dump(2) + "\n");
    return res;
}

}  // namespace magic::synth
