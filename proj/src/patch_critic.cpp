#include "magic/patch_critic.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "magic/kernels.hpp"
#include "magic/util.hpp"

namespace magic::critic {

using nlohmann::json;

void CriticConfig::validate() const {
    if (layers.empty()) throw ConfigError("critic: need at least one layer");
    for (const auto& l : layers) {
        if (l.kernel < 1) throw ConfigError("critic: kernel must be >= 1");
        if (l.stride < 1) throw ConfigError("critic: stride must be >= 1");
        if (l.filters < 1) throw ConfigError("critic: filters must be >= 1");
    }
    if (gp_weight < 0.0) throw ConfigError("critic: gp_weight must be >= 0");
    if (updates_per_gen_step < 1) throw ConfigError("critic: updates_per_gen_step must be >= 1");
}

CriticConfig CriticConfig::default_preset() {
    CriticConfig cfg;
    cfg.layers = {{4, 1, 64}, {4, 2, 128}, {4, 2, 128}, {3, 1, 128}, {3, 1, 128}};
    return cfg;
}

CriticConfig CriticConfig::baseline_preset() {
    CriticConfig cfg;
    cfg.layers = {{3, 1, 64}, {3, 1, 128}, {3, 1, 128}, {3, 1, 128}};
    return cfg;
}

int receptive_field(const CriticConfig& cfg) {
    cfg.validate();
    int64_t r = 1, j = 1;
    for (const auto& l : cfg.layers) {
        r += static_cast<int64_t>(l.kernel - 1) * j;
        j *= l.stride;
    }
    return static_cast<int>(r);
}

ReceptiveFieldReport receptive_field_report(const CriticConfig& cfg) {
    ReceptiveFieldReport rep;
    rep.computed = receptive_field(cfg);
    auto same_layers = [&](const CriticConfig& other) {
        if (cfg.layers.size() != other.layers.size()) return false;
        for (size_t i = 0; i < cfg.layers.size(); ++i)
            if (cfg.layers[i].kernel != other.layers[i].kernel ||
                cfg.layers[i].stride != other.layers[i].stride ||
                cfg.layers[i].filters != other.layers[i].filters)
                return false;
        return true;
    };
    if (same_layers(CriticConfig::default_preset())) {
        rep.published_reference = 21;
        rep.note =
            "layer recursion gives receptive field 29 (1->4->7->13->21->29); the original MAGIC "
            "write-up quotes 21x21 for this stack. Documented discrepancy: the computed value is "
            "authoritative here.";
    } else if (same_layers(CriticConfig::baseline_preset())) {
        rep.published_reference = 9;
        rep.note = "baseline comparison stack with a 9x9 receptive field.";
    } else {
        rep.note = "computed by the layer recursion r += (k-1)*j, j *= s.";
    }
    return rep;
}

// ------------------------------------------------------------------ Critic

Critic::Critic(CriticConfig cfg, uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
    cfg_.validate();
    build();
    Rng rng(seed);
    std::vector<Tensor*> ps, gs;
    collect_params(ps, gs);
    for (auto& layer : net_.layers)
        if (auto* c = dynamic_cast<nn::Conv2d*>(layer.get())) c->init_params(rng);
}

void Critic::build() {
    int cin = 3;
    for (const auto& l : cfg_.layers) {
        net_.emplace<nn::Conv2d>(cin, l.filters, l.kernel, l.stride, 0, true);
        if (cfg_.use_batchnorm) net_.emplace<nn::BatchNorm2d>(l.filters, /*track_running=*/false);
        net_.emplace<nn::LeakyReLU>(cfg_.leaky_slope);
        cin = l.filters;
    }
    net_.emplace<nn::Conv2d>(cin, 1, 1, 1, 0, true);  // per-patch score head
}

Tensor Critic::forward(const Tensor& x, nn::Mode mode) {
    if (x.rank() != 4 || x.dim(1) != 3) throw InputError("critic: expected [N,3,H,W]");
    Tensor s = net_.forward(x, mode);
    if (s.dim(2) < 1 || s.dim(3) < 1) throw InputError("critic: input too small for the stack");
    return s;
}

Tensor Critic::backward_input(const Tensor& gscore) { return net_.backward(gscore, false); }

void Critic::backward_params(const Tensor& gscore) { net_.backward(gscore, true); }

void Critic::collect_params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) {
    net_.collect_params(ps, gs);
}

std::vector<const Tensor*> Critic::param_view() const {
    std::vector<Tensor*> ps, gs;
    const_cast<Critic*>(this)->collect_params(ps, gs);
    return {ps.begin(), ps.end()};
}

uint64_t Critic::checksum() const { return nn::params_checksum(param_view()); }

int64_t Critic::param_count() const { return nn::params_count(param_view()); }

std::vector<int> Critic::score_map_shape(int H, int W) const {
    int h = H, w = W;
    for (const auto& l : cfg_.layers) {
        h = kernels::conv_out_dim(h, l.kernel, l.stride, 0);
        w = kernels::conv_out_dim(w, l.kernel, l.stride, 0);
    }
    return {h, w};
}

namespace {
json config_to_json(const CriticConfig& cfg) {
    json layers = json::array();
    for (const auto& l : cfg.layers)
        layers.push_back({{"kernel", l.kernel}, {"stride", l.stride}, {"filters", l.filters}});
    return {{"layers", layers},
            {"leaky_slope", cfg.leaky_slope},
            {"gp_weight", cfg.gp_weight},
            {"updates_per_gen_step", cfg.updates_per_gen_step},
            {"use_batchnorm", cfg.use_batchnorm}};
}

CriticConfig config_from_json(const json& j) {
    CriticConfig cfg;
    cfg.layers.clear();
    for (const auto& l : j.at("layers"))
        cfg.layers.push_back({l.at("kernel"), l.at("stride"), l.at("filters")});
    cfg.leaky_slope = j.at("leaky_slope");
    cfg.gp_weight = j.at("gp_weight");
    cfg.updates_per_gen_step = j.at("updates_per_gen_step");
    cfg.use_batchnorm = j.at("use_batchnorm");
    return cfg;
}
constexpr char kMagic[8] = {'M', 'A', 'G', 'C', 'R', 'I', 'T', '1'};
}  // namespace

void Critic::serialize(std::ostream& os) const {
    json header;
    header["type"] = "critic";
    header["config"] = config_to_json(cfg_);
    header["seed"] = seed_;
    const std::string hs = header.dump();
    const uint64_t hlen = hs.size();
    os.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    auto ps = param_view();
    const uint32_t np = static_cast<uint32_t>(ps.size());
    os.write(reinterpret_cast<const char*>(&np), sizeof(np));
    for (const Tensor* t : ps) nn::write_tensor(os, *t);
    // optimizer state travels with the critic so synthesis runs can resume
    const uint8_t has_adam = adam_.initialized() ? 1 : 0;
    os.write(reinterpret_cast<const char*>(&has_adam), sizeof(has_adam));
    if (has_adam) {
        os.write(reinterpret_cast<const char*>(&adam_.t), sizeof(adam_.t));
        for (const Tensor& t : adam_.m) nn::write_tensor(os, t);
        for (const Tensor& t : adam_.v) nn::write_tensor(os, t);
    }
}

std::unique_ptr<Critic> Critic::deserialize(std::istream& is) {
    uint64_t hlen = 0;
    is.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!is) throw IoError("critic stream: truncated header");
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    json header = json::parse(hs);
    if (header.at("type") != "critic") throw IoError("critic stream: type mismatch");
    auto d = std::make_unique<Critic>(config_from_json(header.at("config")),
                                      header.value("seed", 0ull));
    uint32_t np = 0;
    is.read(reinterpret_cast<char*>(&np), sizeof(np));
    std::vector<Tensor*> ps, gs;
    d->collect_params(ps, gs);
    if (np != ps.size()) throw IoError("critic stream: parameter count mismatch");
    for (Tensor* t : ps) {
        Tensor loaded = nn::read_tensor(is);
        if (!loaded.same_shape(*t)) throw IoError("critic stream: parameter shape mismatch");
        *t = std::move(loaded);
    }
    uint8_t has_adam = 0;
    is.read(reinterpret_cast<char*>(&has_adam), sizeof(has_adam));
    if (has_adam) {
        d->adam_.init(ps);
        is.read(reinterpret_cast<char*>(&d->adam_.t), sizeof(d->adam_.t));
        for (Tensor& t : d->adam_.m) t = nn::read_tensor(is);
        for (Tensor& t : d->adam_.v) t = nn::read_tensor(is);
    }
    return d;
}

void Critic::save_checkpoint(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write critic checkpoint: " + path);
    os.write(kMagic, sizeof(kMagic));
    serialize(os);
    if (!os) throw IoError("critic checkpoint write failed: " + path);
}

std::unique_ptr<Critic> Critic::load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open critic checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("not a critic checkpoint: " + path);
    return deserialize(is);
}

// ------------------------------------------------------------------ losses

namespace {

double map_mean_seed(const Tensor& score, Tensor& seed, double scale) {
    // fills seed with scale/(map elements per sample) and returns mean score
    seed = Tensor(score.shape);
    const int N = score.dim(0);
    const int64_t per = score.numel() / N;
    seed.fill(scale / static_cast<double>(per));
    return kernels::sum(score.ptr(), score.numel()) / static_cast<double>(score.numel());
}

struct GpProbe {
    Tensor interp;       // x~
    Tensor direction;    // dL/dg, already including gp_weight where needed
    double gp = 0.0;     // penalty value
    bool degenerate = false;
};

GpProbe gradient_penalty_probe(Critic& d, const Tensor& real, const Tensor& fake, Rng& rng,
                               double dir_scale) {
    GpProbe probe;
    const int N = real.dim(0);
    const int64_t per = real.numel() / N;
    probe.interp = Tensor(real.shape);
    for (int n = 0; n < N; ++n) {
        const double u = rng.uniform();
        const double* r = real.ptr() + static_cast<int64_t>(n) * per;
        const double* f = fake.ptr() + static_cast<int64_t>(n) * per;
        double* o = probe.interp.ptr() + static_cast<int64_t>(n) * per;
        for (int64_t i = 0; i < per; ++i) o[i] = u * r[i] + (1.0 - u) * f[i];
    }
    Tensor score = d.forward(probe.interp, nn::Mode::TrainNoStats);
    Tensor seed(score.shape);
    const int64_t map = score.numel() / N;
    seed.fill(1.0 / static_cast<double>(map));  // per-sample mean-score seed
    Tensor g = d.backward_input(seed);

    probe.direction = Tensor(real.shape);
    probe.degenerate = true;
    double gp = 0.0;
    for (int n = 0; n < N; ++n) {
        const double* gn = g.ptr() + static_cast<int64_t>(n) * per;
        const double norm = std::sqrt(kernels::sum_sq(gn, per));
        gp += (norm - 1.0) * (norm - 1.0);
        if (norm > 1e-12) {
            probe.degenerate = false;
            const double c = dir_scale * 2.0 * (norm - 1.0) / (static_cast<double>(N) * norm);
            double* v = probe.direction.ptr() + static_cast<int64_t>(n) * per;
            for (int64_t i = 0; i < per; ++i) v[i] = c * gn[i];
        }
    }
    probe.gp = gp / static_cast<double>(N);
    return probe;
}

}  // namespace

CriticLosses critic_losses(Critic& d, const Tensor& real, const Tensor& fake, Rng& rng) {
    if (!real.same_shape(fake)) throw InputError("critic_losses: real/fake shape mismatch");
    CriticLosses out;
    Tensor seed;
    Tensor s_fake = d.forward(fake, nn::Mode::TrainNoStats);
    const double mean_fake = map_mean_seed(s_fake, seed, 1.0);
    Tensor s_real = d.forward(real, nn::Mode::TrainNoStats);
    const double mean_real = kernels::sum(s_real.ptr(), s_real.numel()) /
                             static_cast<double>(s_real.numel());
    GpProbe probe = gradient_penalty_probe(d, real, fake, rng, 1.0);
    out.gen_loss = -mean_fake;
    out.gp = probe.gp;
    out.critic_loss = mean_fake - mean_real + d.config().gp_weight * probe.gp;
    return out;
}

CriticLosses critic_update(Critic& d, const Tensor& real, const Tensor& fake, double lr,
                           Rng& rng) {
    if (!real.same_shape(fake)) throw InputError("critic_update: real/fake shape mismatch");
    std::vector<Tensor*> ps, gs;
    d.collect_params(ps, gs);
    if (!d.opt().initialized()) d.opt().init(ps);
    nn::zero_grads(gs);

    CriticLosses out;
    const int N = real.dim(0);

    // mean-score terms: d critic_loss / d score = +-1/(N*map)
    Tensor s_fake = d.forward(fake, nn::Mode::TrainNoStats);
    const int64_t total = s_fake.numel();
    out.gen_loss = -kernels::sum(s_fake.ptr(), total) / static_cast<double>(total);
    Tensor seed(s_fake.shape);
    seed.fill(1.0 / static_cast<double>(total));
    d.backward_params(seed);

    Tensor s_real = d.forward(real, nn::Mode::TrainNoStats);
    const double mean_real = kernels::sum(s_real.ptr(), total) / static_cast<double>(total);
    seed.fill(-1.0 / static_cast<double>(total));
    d.backward_params(seed);

    out.critic_loss = -out.gen_loss - mean_real;

    // gradient penalty: parameter gradient via central differences of the
    // batch score sum along the penalty direction
    const double gpw = d.config().gp_weight;
    GpProbe probe = gradient_penalty_probe(d, real, fake, rng, gpw);
    out.gp = probe.gp;
    out.critic_loss += gpw * probe.gp;

    if (gpw > 0.0 && !probe.degenerate) {
        double vmax = 0.0;
        for (double v : probe.direction.data) vmax = std::max(vmax, std::abs(v));
        double xmax = 0.0;
        for (double v : probe.interp.data) xmax = std::max(xmax, std::abs(v));
        const double h = 1e-5 * (1.0 + xmax) / std::max(vmax, 1e-12);

        std::vector<Tensor> saved;
        saved.reserve(gs.size());
        for (Tensor* g : gs) saved.push_back(*g);

        // dT/dscore for T = sum over samples of per-sample map means
        Tensor sum_seed(s_fake.shape);
        sum_seed.fill(static_cast<double>(N) / static_cast<double>(total));

        Tensor shifted = probe.interp;
        axpy_inplace(shifted, h, probe.direction);
        nn::zero_grads(gs);
        d.forward(shifted, nn::Mode::TrainNoStats);
        d.backward_params(sum_seed);
        std::vector<Tensor> gplus;
        gplus.reserve(gs.size());
        for (Tensor* g : gs) gplus.push_back(*g);

        shifted = probe.interp;
        axpy_inplace(shifted, -h, probe.direction);
        nn::zero_grads(gs);
        d.forward(shifted, nn::Mode::TrainNoStats);
        d.backward_params(sum_seed);

        const double inv2h = 1.0 / (2.0 * h);
        for (size_t i = 0; i < gs.size(); ++i) {
            Tensor& g = *gs[i];
            for (int64_t j = 0; j < g.numel(); ++j)
                g[j] = saved[i][j] + (gplus[i][j] - g[j]) * inv2h;
        }
    }

    d.opt().lr = lr;
    d.opt().step(ps, gs);
    return out;
}

}  // namespace magic::critic
