#include "magic/quasi_robust.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "magic/kernels.hpp"
#include "magic/util.hpp"

namespace magic::qr {

using nlohmann::json;

std::string norm_name(NormKind n) { return n == NormKind::L2 ? "l2" : "linf"; }

NormKind norm_from_name(const std::string& s) {
    if (s == "l2" || s == "L2") return NormKind::L2;
    if (s == "linf" || s == "Linf" || s == "LINF") return NormKind::Linf;
    throw ConfigError("unknown norm '" + s + "' (expected l2 or linf)");
}

void PerturbationBudget::validate() const {
    if (epsilon < 0.0) throw ConfigError("perturbation budget: epsilon must be >= 0");
    if (steps < 1) throw ConfigError("perturbation budget: steps must be >= 1");
    if (step_size < 0.0) throw ConfigError("perturbation budget: step_size must be > 0 or 0 for default");
}

double PerturbationBudget::effective_step() const {
    return step_size > 0.0 ? step_size : 2.5 * epsilon / static_cast<double>(steps);
}

PerturbationBudget PerturbationBudget::reference_full_scale() {
    PerturbationBudget b;
    b.norm = NormKind::L2;
    b.epsilon = 0.05;
    b.steps = 7;
    return b;
}

// ------------------------------------------------------------- Classifier

Classifier::Classifier(ClassifierConfig cfg, uint64_t init_seed)
    : cfg_(std::move(cfg)),
      seed_(init_seed),
      stem_conv_(3, cfg_.width, 3, 1, 1, false),
      stem_bn_(cfg_.width),
      stage1_(cfg_.width, cfg_.width, 1),
      stage2_(cfg_.width, 2 * cfg_.width, 2),
      stage3_(2 * cfg_.width, 4 * cfg_.width, 2),
      fc_(4 * cfg_.width, cfg_.num_classes) {
    if (cfg_.num_classes < 2) throw ConfigError("classifier: need at least 2 classes");
    if (cfg_.norm_mean.size() != 3 || cfg_.norm_std.size() != 3)
        throw ConfigError("classifier: normalization stats must have 3 channels");
    for (double s : cfg_.norm_std)
        if (s <= 0.0) throw ConfigError("classifier: normalization std must be positive");
    validate_stat_layers();
    Rng rng(init_seed);
    stem_conv_.init_params(rng);
    stage1_.init_params(rng);
    stage2_.init_params(rng);
    stage3_.init_params(rng);
    fc_.init_params(rng);
}

void Classifier::validate_stat_layers() const {
    if (cfg_.stat_layers.empty()) throw ConfigError("classifier: stat_layers must be non-empty");
    for (const auto& id : cfg_.stat_layers)
        if (id != "stage1" && id != "stage2" && id != "stage3")
            throw ConfigError("classifier: unknown stat layer id '" + id + "'");
}

Tensor Classifier::normalize(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != 3) throw InputError("classifier: expected [N,3,H,W] input");
    Tensor xn = x;
    const int N = x.dim(0);
    const int64_t plane = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < 3; ++c) {
            double* p = xn.ptr() + (static_cast<int64_t>(n) * 3 + c) * plane;
            const double m = cfg_.norm_mean[static_cast<size_t>(c)];
            const double inv = 1.0 / cfg_.norm_std[static_cast<size_t>(c)];
            for (int64_t i = 0; i < plane; ++i) p[i] = (p[i] - m) * inv;
        }
    return xn;
}

Tensor Classifier::forward_raw(const Tensor& x, nn::Mode mode) {
    return forward_normalized(normalize(x), mode);
}

Tensor Classifier::forward_normalized(const Tensor& xn, nn::Mode mode) {
    taps_.clear();
    stem_pre_ = stem_bn_.forward(stem_conv_.forward(xn, mode), mode);
    Tensor h(stem_pre_.shape);
    const int64_t n = stem_pre_.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) h[i] = stem_pre_[i] >= 0.0 ? stem_pre_[i] : 0.0;
    h = stage1_.forward(h, mode);
    taps_["stage1"] = h;
    h = stage2_.forward(h, mode);
    taps_["stage2"] = h;
    h = stage3_.forward(h, mode);
    taps_["stage3"] = h;
    return fc_.forward(gap_.forward(h, mode), mode);
}

Tensor Classifier::backward(const Tensor& dlogits, const std::map<std::string, Tensor>* tap_grads,
                            bool acc) {
    auto inject = [&](Tensor& g, const char* id) {
        if (!tap_grads) return;
        auto it = tap_grads->find(id);
        if (it != tap_grads->end()) add_inplace(g, it->second);
    };
    Tensor g = gap_.backward(fc_.backward(dlogits, acc), acc);
    inject(g, "stage3");
    g = stage3_.backward(g, acc);
    inject(g, "stage2");
    g = stage2_.backward(g, acc);
    inject(g, "stage1");
    g = stage1_.backward(g, acc);
    const int64_t n = g.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i)
        if (stem_pre_[i] < 0.0) g[i] = 0.0;
    return stem_conv_.backward(stem_bn_.backward(g, acc), acc);
}

Prediction Classifier::predict(const imaging::Image& img) {
    img.validate();
    return predict_batched(img.batched(), nn::Mode::Eval);
}

Prediction Classifier::predict_batched(const Tensor& x_raw1, nn::Mode mode) {
    Tensor logits = forward_raw(x_raw1, mode);
    Prediction p;
    p.logits.assign(logits.ptr(), logits.ptr() + logits.numel());
    for (double v : p.logits)
        if (!std::isfinite(v)) throw ContractError("predict: non-finite logits");
    p.cls = static_cast<int>(std::max_element(p.logits.begin(), p.logits.end()) -
                             p.logits.begin());
    return p;
}

namespace {
imaging::FeatureStats stats_from_taps(const std::map<std::string, Tensor>& taps,
                                      const std::vector<std::string>& layer_ids) {
    imaging::FeatureStats fs;
    for (const auto& id : layer_ids) {
        auto it = taps.find(id);
        if (it == taps.end()) throw ConfigError("extract_stats: unknown layer id '" + id + "'");
        const Tensor& t = it->second;  // [1,C,h,w]
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
        fs.layers.push_back(std::move(ls));
    }
    return fs;
}
}  // namespace

imaging::FeatureStats Classifier::extract_stats(const imaging::Image& img) {
    img.validate();
    forward_raw(img.batched(), nn::Mode::Eval);
    return stats_from_taps(taps_, cfg_.stat_layers);
}

imaging::FeatureStats Classifier::extract_stats_normalized(const Tensor& xn) {
    forward_normalized(xn, nn::Mode::Eval);
    return stats_from_taps(taps_, cfg_.stat_layers);
}

Tensor Classifier::input_gradient(const imaging::Image& img, int cls) {
    img.validate();
    if (cls < 0 || cls >= cfg_.num_classes) throw InputError("input_gradient: class out of range");
    Tensor logits = forward_raw(img.batched(), nn::Mode::Eval);
    Tensor dlogits;
    nn::softmax_cross_entropy(logits, {cls}, &dlogits);
    Tensor gn = backward(dlogits, nullptr, false);
    // chain through input normalization
    const int64_t plane = static_cast<int64_t>(gn.dim(2)) * gn.dim(3);
    for (int c = 0; c < 3; ++c) {
        double* p = gn.ptr() + static_cast<int64_t>(c) * plane;
        const double inv = 1.0 / cfg_.norm_std[static_cast<size_t>(c)];
        for (int64_t i = 0; i < plane; ++i) p[i] *= inv;
    }
    return gn.reshaped({3, gn.dim(2), gn.dim(3)});
}

double Classifier::loss_and_input_grad(const Tensor& x_raw, const std::vector<int>& labels,
                                       Tensor* gx) {
    Tensor logits = forward_raw(x_raw, nn::Mode::Eval);
    Tensor dlogits;
    const double loss = nn::softmax_cross_entropy(logits, labels, gx ? &dlogits : nullptr);
    if (gx) {
        Tensor g = backward(dlogits, nullptr, false);
        const int N = g.dim(0);
        const int64_t plane = static_cast<int64_t>(g.dim(2)) * g.dim(3);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < 3; ++c) {
                double* p = g.ptr() + (static_cast<int64_t>(n) * 3 + c) * plane;
                const double inv = 1.0 / cfg_.norm_std[static_cast<size_t>(c)];
                for (int64_t i = 0; i < plane; ++i) p[i] *= inv;
            }
        *gx = std::move(g);
    }
    return loss;
}

void Classifier::collect_params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) {
    stem_conv_.collect_params(ps, gs);
    stem_bn_.collect_params(ps, gs);
    stage1_.collect_params(ps, gs);
    stage2_.collect_params(ps, gs);
    stage3_.collect_params(ps, gs);
    fc_.collect_params(ps, gs);
}

std::vector<const Tensor*> Classifier::param_view() const {
    std::vector<Tensor*> ps, gs;
    const_cast<Classifier*>(this)->collect_params(ps, gs);
    return {ps.begin(), ps.end()};
}

uint64_t Classifier::checksum() const { return nn::params_checksum(param_view()); }

int64_t Classifier::param_count() const { return nn::params_count(param_view()); }

Tensor Classifier::feature_map(const imaging::Image& img, const std::string& layer_id) {
    img.validate();
    forward_raw(img.batched(), nn::Mode::Eval);
    auto it = taps_.find(layer_id);
    if (it == taps_.end()) throw ConfigError("feature_map: unknown layer id '" + layer_id + "'");
    return it->second;
}

std::vector<double> Classifier::pooled_features(const imaging::Image& img) {
    img.validate();
    forward_raw(img.batched(), nn::Mode::Eval);
    const Tensor& t = taps_.at("stage3");
    const int C = t.dim(1);
    const int64_t plane = static_cast<int64_t>(t.dim(2)) * t.dim(3);
    std::vector<double> out(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c)
        out[static_cast<size_t>(c)] =
            kernels::serial::sum(t.ptr() + static_cast<int64_t>(c) * plane, plane) /
            static_cast<double>(plane);
    return out;
}

// ------------------------------------------------------------ checkpoints

namespace {
constexpr char kMagic[8] = {'M', 'A', 'G', 'C', 'K', 'P', 'T', '1'};
}

void Classifier::save_checkpoint(const std::string& path) const {
    json header;
    header["type"] = "classifier";
    header["config"] = {{"num_classes", cfg_.num_classes},
                        {"input_hw", cfg_.input_hw},
                        {"width", cfg_.width},
                        {"norm_mean", cfg_.norm_mean},
                        {"norm_std", cfg_.norm_std},
                        {"stat_layers", cfg_.stat_layers}};
    header["seed"] = seed_;
    header["budget"] = {{"norm", norm_name(trained_budget_.norm)},
                        {"epsilon", trained_budget_.epsilon},
                        {"steps", trained_budget_.steps},
                        {"step_size", trained_budget_.step_size}};
    json log = json::array();
    for (const auto& e : log_)
        log.push_back({{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"clean_acc", e.clean_acc},
                       {"adv_acc", e.adv_acc}});
    header["training_log"] = log;

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint: " + path);
    os.write(kMagic, sizeof(kMagic));
    const std::string hs = header.dump();
    const uint64_t hlen = hs.size();
    os.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));

    std::vector<Tensor*> ps, gs;
    const_cast<Classifier*>(this)->collect_params(ps, gs);
    std::vector<Tensor*> bufs;
    const_cast<Classifier*>(this)->stem_bn_.collect_buffers(bufs);
    const_cast<Classifier*>(this)->stage1_.collect_buffers(bufs);
    const_cast<Classifier*>(this)->stage2_.collect_buffers(bufs);
    const_cast<Classifier*>(this)->stage3_.collect_buffers(bufs);
    const uint32_t np = static_cast<uint32_t>(ps.size()), nb = static_cast<uint32_t>(bufs.size());
    os.write(reinterpret_cast<const char*>(&np), sizeof(np));
    for (Tensor* t : ps) nn::write_tensor(os, *t);
    os.write(reinterpret_cast<const char*>(&nb), sizeof(nb));
    for (Tensor* t : bufs) nn::write_tensor(os, *t);
    if (!os) throw IoError("checkpoint write failed: " + path);
}

std::unique_ptr<Classifier> Classifier::load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("not a classifier checkpoint: " + path);
    uint64_t hlen = 0;
    is.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    json header = json::parse(hs);
    if (header.at("type") != "classifier") throw IoError("checkpoint type mismatch: " + path);

    ClassifierConfig cfg;
    const json& jc = header.at("config");
    cfg.num_classes = jc.at("num_classes");
    cfg.input_hw = jc.at("input_hw");
    cfg.width = jc.at("width");
    cfg.norm_mean = jc.at("norm_mean").get<std::vector<double>>();
    cfg.norm_std = jc.at("norm_std").get<std::vector<double>>();
    cfg.stat_layers = jc.at("stat_layers").get<std::vector<std::string>>();
    auto f = std::make_unique<Classifier>(cfg, header.value("seed", 0ull));

    const json& jb = header.at("budget");
    f->trained_budget_.norm = norm_from_name(jb.at("norm"));
    f->trained_budget_.epsilon = jb.at("epsilon");
    f->trained_budget_.steps = jb.at("steps");
    f->trained_budget_.step_size = jb.at("step_size");
    for (const auto& e : header.at("training_log")) {
        EpochLog l;
        l.epoch = e.at("epoch");
        l.train_loss = e.at("train_loss");
        l.clean_acc = e.at("clean_acc");
        l.adv_acc = e.at("adv_acc");
        f->log_.push_back(l);
    }

    uint32_t np = 0, nb = 0;
    is.read(reinterpret_cast<char*>(&np), sizeof(np));
    std::vector<Tensor*> ps, gs;
    f->collect_params(ps, gs);
    if (np != ps.size()) throw IoError("checkpoint parameter count mismatch: " + path);
    for (Tensor* t : ps) {
        Tensor loaded = nn::read_tensor(is);
        if (!loaded.same_shape(*t)) throw IoError("checkpoint parameter shape mismatch: " + path);
        *t = std::move(loaded);
    }
    is.read(reinterpret_cast<char*>(&nb), sizeof(nb));
    std::vector<Tensor*> bufs;
    f->stem_bn_.collect_buffers(bufs);
    f->stage1_.collect_buffers(bufs);
    f->stage2_.collect_buffers(bufs);
    f->stage3_.collect_buffers(bufs);
    if (nb != bufs.size()) throw IoError("checkpoint buffer count mismatch: " + path);
    for (Tensor* t : bufs) *t = nn::read_tensor(is);
    return f;
}

// ----------------------------------------------------------------- attacks

double perturbation_norm(const Tensor& delta, NormKind norm) {
    if (norm == NormKind::L2) return std::sqrt(kernels::sum_sq(delta.ptr(), delta.numel()));
    double m = 0.0;
    for (double v : delta.data) m = std::max(m, std::abs(v));
    return m;
}

namespace {

// Projects each sample's delta onto the budget ball, then pulls x+delta back
// into [0,1]. Both operations only shrink coordinates, so the norm bound
// holds exactly afterwards.
void project_and_clip(Tensor& delta, const Tensor& x, const PerturbationBudget& budget) {
    const int N = delta.dim(0);
    const int64_t per = delta.numel() / N;
    for (int n = 0; n < N; ++n) {
        double* d = delta.ptr() + static_cast<int64_t>(n) * per;
        if (budget.norm == NormKind::L2) {
            double sq = kernels::sum_sq(d, per);
            const double nrm = std::sqrt(sq);
            if (nrm > budget.epsilon && nrm > 0.0) {
                const double s = budget.epsilon / nrm;
                for (int64_t i = 0; i < per; ++i) d[i] *= s;
            }
        } else {
            for (int64_t i = 0; i < per; ++i) d[i] = std::clamp(d[i], -budget.epsilon, budget.epsilon);
        }
        const double* xp = x.ptr() + static_cast<int64_t>(n) * per;
        for (int64_t i = 0; i < per; ++i) {
            const double v = std::clamp(xp[i] + d[i], 0.0, 1.0);
            d[i] = v - xp[i];
        }
    }
}

}  // namespace

Tensor pgd_attack_batch(DifferentiableModel& f, const Tensor& x_raw,
                        const std::vector<int>& labels, const PerturbationBudget& budget,
                        Rng& rng) {
    budget.validate();
    if (x_raw.rank() != 4) throw InputError("pgd: expected [N,3,H,W] batch");
    Tensor delta(x_raw.shape);
    if (budget.epsilon == 0.0) return delta;

    const int N = x_raw.dim(0);
    const int64_t per = x_raw.numel() / N;
    if (budget.random_start) {
        for (int n = 0; n < N; ++n) {
            double* d = delta.ptr() + static_cast<int64_t>(n) * per;
            if (budget.norm == NormKind::L2) {
                double sq = 0.0;
                for (int64_t i = 0; i < per; ++i) {
                    d[i] = rng.gaussian();
                    sq += d[i] * d[i];
                }
                const double r =
                    budget.epsilon *
                    std::pow(rng.uniform(), 1.0 / static_cast<double>(per)) /
                    std::max(std::sqrt(sq), 1e-30);
                for (int64_t i = 0; i < per; ++i) d[i] *= r;
            } else {
                for (int64_t i = 0; i < per; ++i)
                    d[i] = rng.uniform(-budget.epsilon, budget.epsilon);
            }
        }
        project_and_clip(delta, x_raw, budget);
    }

    const double step = budget.effective_step();
    Tensor xp(x_raw.shape);
    for (int it = 0; it < budget.steps; ++it) {
        xp = x_raw;
        add_inplace(xp, delta);
        Tensor g;
        f.loss_and_input_grad(xp, labels, &g);
        for (int n = 0; n < N; ++n) {
            double* d = delta.ptr() + static_cast<int64_t>(n) * per;
            const double* gp = g.ptr() + static_cast<int64_t>(n) * per;
            if (budget.norm == NormKind::L2) {
                const double gn = std::sqrt(kernels::sum_sq(gp, per));
                if (gn > 1e-30) {
                    const double s = step / gn;
                    for (int64_t i = 0; i < per; ++i) d[i] += s * gp[i];
                }
            } else {
                for (int64_t i = 0; i < per; ++i)
                    d[i] += step * (gp[i] > 0.0 ? 1.0 : (gp[i] < 0.0 ? -1.0 : 0.0));
            }
        }
        project_and_clip(delta, x_raw, budget);
    }
    return delta;
}

Tensor pgd_attack(DifferentiableModel& f, const imaging::Image& img, int label,
                  const PerturbationBudget& budget, Rng& rng) {
    img.validate();
    Tensor d = pgd_attack_batch(f, img.batched(), {label}, budget, rng);
    return d.reshaped({3, img.height(), img.width()});
}

// ---------------------------------------------------------------- training

double accuracy(Classifier& f, const LabeledImages& data) {
    if (data.size() == 0) throw ConfigError("accuracy: empty dataset");
    const int N = data.size();
    const int64_t per = data.images.numel() / N;
    int correct = 0;
    const int chunk = 64;
    for (int n0 = 0; n0 < N; n0 += chunk) {
        const int nb = std::min(chunk, N - n0);
        Tensor xb({nb, 3, data.images.dim(2), data.images.dim(3)});
        std::memcpy(xb.ptr(), data.images.ptr() + static_cast<int64_t>(n0) * per,
                    sizeof(double) * static_cast<size_t>(nb) * per);
        Tensor logits = f.forward_raw(xb, nn::Mode::Eval);
        const int C = logits.dim(1);
        for (int i = 0; i < nb; ++i) {
            const double* z = logits.ptr() + static_cast<int64_t>(i) * C;
            const int pred = static_cast<int>(std::max_element(z, z + C) - z);
            if (pred == data.labels[static_cast<size_t>(n0 + i)]) ++correct;
        }
    }
    return static_cast<double>(correct) / N;
}

double adversarial_accuracy(Classifier& f, const LabeledImages& data,
                            const PerturbationBudget& budget, Rng& rng, int max_samples) {
    const int N = std::min(data.size(), max_samples);
    if (N == 0) throw ConfigError("adversarial_accuracy: empty dataset");
    const int64_t per = data.images.numel() / data.size();
    int correct = 0;
    const int chunk = 32;
    for (int n0 = 0; n0 < N; n0 += chunk) {
        const int nb = std::min(chunk, N - n0);
        Tensor xb({nb, 3, data.images.dim(2), data.images.dim(3)});
        std::memcpy(xb.ptr(), data.images.ptr() + static_cast<int64_t>(n0) * per,
                    sizeof(double) * static_cast<size_t>(nb) * per);
        std::vector<int> yb(data.labels.begin() + n0, data.labels.begin() + n0 + nb);
        Tensor delta = pgd_attack_batch(f, xb, yb, budget, rng);
        add_inplace(xb, delta);
        Tensor logits = f.forward_raw(xb, nn::Mode::Eval);
        const int C = logits.dim(1);
        for (int i = 0; i < nb; ++i) {
            const double* z = logits.ptr() + static_cast<int64_t>(i) * C;
            const int pred = static_cast<int>(std::max_element(z, z + C) - z);
            if (pred == yb[static_cast<size_t>(i)]) ++correct;
        }
    }
    return static_cast<double>(correct) / N;
}

std::vector<EpochLog> adversarial_train(Classifier& f, const LabeledImages& train,
                                        const LabeledImages& test,
                                        const PerturbationBudget& budget,
                                        const TrainOptions& opts) {
    budget.validate();
    if (f.frozen()) throw ContractError("adversarial_train: classifier is frozen");
    if (train.size() == 0) throw ConfigError("adversarial_train: empty dataset");
    if (static_cast<size_t>(train.size()) != train.labels.size())
        throw ConfigError("adversarial_train: image/label count mismatch");

    std::vector<Tensor*> ps, gs;
    f.collect_params(ps, gs);
    nn::Adam adam;
    adam.lr = opts.lr;
    adam.init(ps);

    Rng rng(opts.seed);
    const int N = train.size();
    const int64_t per = train.images.numel() / N;
    std::vector<int> order(static_cast<size_t>(N));
    std::iota(order.begin(), order.end(), 0);

    std::vector<EpochLog> log;
    for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
        // Fisher-Yates with the run RNG: batch order is part of the seed contract.
        for (int i = N - 1; i > 0; --i) {
            const int j = static_cast<int>(rng.below(static_cast<uint64_t>(i + 1)));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }
        double loss_sum = 0.0;
        int batches = 0;
        for (int n0 = 0; n0 < N; n0 += opts.batch_size) {
            const int nb = std::min(opts.batch_size, N - n0);
            Tensor xb({nb, 3, train.images.dim(2), train.images.dim(3)});
            std::vector<int> yb(static_cast<size_t>(nb));
            for (int i = 0; i < nb; ++i) {
                const int src = order[static_cast<size_t>(n0 + i)];
                std::memcpy(xb.ptr() + static_cast<int64_t>(i) * per,
                            train.images.ptr() + static_cast<int64_t>(src) * per,
                            sizeof(double) * static_cast<size_t>(per));
                yb[static_cast<size_t>(i)] = train.labels[static_cast<size_t>(src)];
            }
            if (budget.epsilon > 0.0) {
                Tensor delta = pgd_attack_batch(f, xb, yb, budget, rng);
                add_inplace(xb, delta);
            }
            Tensor logits = f.forward_raw(xb, nn::Mode::Train);
            Tensor dlogits;
            loss_sum += nn::softmax_cross_entropy(logits, yb, &dlogits);
            ++batches;
            nn::zero_grads(gs);
            f.backward(dlogits, nullptr, true);
            adam.step(ps, gs);
        }
        EpochLog e;
        e.epoch = epoch;
        e.train_loss = loss_sum / std::max(1, batches);
        e.clean_acc = accuracy(f, test);
        Rng eval_rng(opts.seed ^ 0xadccull ^ static_cast<uint64_t>(epoch));
        e.adv_acc = budget.epsilon > 0.0
                        ? adversarial_accuracy(f, test, budget, eval_rng, opts.adv_eval_samples)
                        : e.clean_acc;
        log.push_back(e);
        f.training_log().push_back(e);
    }
    f.trained_budget() = budget;
    return log;
}

// ------------------------------------------------------------ edge metric

double edge_alignment_score(Classifier& f, const imaging::Image& img, int label) {
    const Tensor g = f.input_gradient(img, label);
    const int H = img.height(), W = img.width();
    // per-pixel gradient magnitude across channels
    std::vector<double> gm(static_cast<size_t>(H) * W, 0.0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double v = g.at3(c, y, x);
                s += v * v;
            }
            gm[static_cast<size_t>(y) * W + x] = std::sqrt(s);
        }
    // Sobel magnitude of the grayscale image
    std::vector<double> gray(static_cast<size_t>(H) * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            gray[static_cast<size_t>(y) * W + x] =
                (img.pixels.at3(0, y, x) + img.pixels.at3(1, y, x) + img.pixels.at3(2, y, x)) / 3.0;
    std::vector<double> a, b;
    a.reserve(static_cast<size_t>(H - 2) * (W - 2));
    b.reserve(a.capacity());
    auto at = [&](int y, int x) { return gray[static_cast<size_t>(y) * W + x]; };
    for (int y = 1; y + 1 < H; ++y)
        for (int x = 1; x + 1 < W; ++x) {
            const double sx = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1)) -
                              (at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1));
            const double sy = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1)) -
                              (at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1));
            a.push_back(std::sqrt(sx * sx + sy * sy));
            b.push_back(gm[static_cast<size_t>(y) * W + x]);
        }
    const size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va < 1e-300 || vb < 1e-300) return 0.0;
    return cov / std::sqrt(va * vb);
}

}  // namespace magic::qr
