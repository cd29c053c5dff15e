#include "magic/mask_ed.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "magic/kernels.hpp"
#include "magic/util.hpp"

namespace magic::ed {

using nlohmann::json;

EncoderDecoder::EncoderDecoder(EDConfig cfg, uint64_t seed) : cfg_(cfg), seed_(seed) {
    if (cfg_.width < 1 || cfg_.kernel < 1 || cfg_.kernel % 2 == 0)
        throw ConfigError("encoder-decoder: width must be positive and kernel odd");
    const int w = cfg_.width;
    const int k = cfg_.kernel;
    const int pad = k / 2;
    Rng rng(seed);
    int cin = 3;
    for (int i = 0; i < 3; ++i) {  // encoder
        auto* c = net_.emplace<nn::Conv2d>(cin, w, k, 1, pad, true);
        c->init_params(rng);
        net_.emplace<nn::BatchNorm2d>(w);
        net_.emplace<nn::LeakyReLU>(cfg_.leaky_slope);
        cin = w;
    }
    for (int i = 0; i < 3; ++i) {  // decoder
        auto* c = net_.emplace<nn::ConvTranspose2d>(w, w, k, pad, true);
        c->init_params(rng);
        net_.emplace<nn::BatchNorm2d>(w);
        net_.emplace<nn::LeakyReLU>(cfg_.leaky_slope);
    }
    auto* head = net_.emplace<nn::Conv2d>(w, 1, 1, 1, 0, true);
    head->init_params(rng);
}

Tensor EncoderDecoder::forward_logits(const Tensor& x, nn::Mode mode) {
    if (x.rank() != 4 || x.dim(1) != 3) throw InputError("encoder-decoder: expected [N,3,H,W]");
    if (x.dim(2) < 8 || x.dim(3) < 8) throw InputError("encoder-decoder: H,W must be >= 8");
    Tensor y = net_.forward(x, mode);
    if (y.dim(2) != x.dim(2) || y.dim(3) != x.dim(3))
        throw ContractError("encoder-decoder: spatial shape not preserved");
    return y;
}

Tensor EncoderDecoder::forward_probs(const Tensor& x, nn::Mode mode) {
    Tensor z = forward_logits(x, mode);
    for (double& v : z.data) v = 1.0 / (1.0 + std::exp(-v));
    return z;
}

Tensor EncoderDecoder::backward_input(const Tensor& glogits) {
    return net_.backward(glogits, false);
}

void EncoderDecoder::backward_params(const Tensor& glogits) { net_.backward(glogits, true); }

void EncoderDecoder::collect_params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) {
    net_.collect_params(ps, gs);
}

std::vector<const Tensor*> EncoderDecoder::param_view() const {
    std::vector<Tensor*> ps, gs;
    const_cast<EncoderDecoder*>(this)->collect_params(ps, gs);
    return {ps.begin(), ps.end()};
}

uint64_t EncoderDecoder::checksum() const {
    std::vector<Tensor*> bufs;
    const_cast<EncoderDecoder*>(this)->net_.collect_buffers(bufs);
    auto view = param_view();
    for (Tensor* b : bufs) view.push_back(b);
    return nn::params_checksum(view);
}

int64_t EncoderDecoder::param_count() const { return nn::params_count(param_view()); }

std::unique_ptr<EncoderDecoder> build_ed(uint64_t seed) {
    return std::make_unique<EncoderDecoder>(EDConfig{}, seed);
}

// ------------------------------------------------------------- checkpoint

namespace {
constexpr char kMagic[8] = {'M', 'A', 'G', 'E', 'D', 'C', 'K', '1'};
}

void EncoderDecoder::save_checkpoint(const std::string& path) const {
    json header;
    header["type"] = "encoder_decoder";
    header["config"] = {{"width", cfg_.width},
                        {"kernel", cfg_.kernel},
                        {"leaky_slope", cfg_.leaky_slope}};
    header["seed"] = seed_;
    header["meta"] = {{"src_image_hash", meta_.src_image_hash},
                      {"src_mask_hash", meta_.src_mask_hash},
                      {"iters", meta_.iters},
                      {"final_bce", meta_.final_bce}};
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write ED checkpoint: " + path);
    os.write(kMagic, sizeof(kMagic));
    const std::string hs = header.dump();
    const uint64_t hlen = hs.size();
    os.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    auto ps = param_view();
    std::vector<Tensor*> bufs;
    const_cast<EncoderDecoder*>(this)->net_.collect_buffers(bufs);
    const uint32_t np = static_cast<uint32_t>(ps.size());
    const uint32_t nb = static_cast<uint32_t>(bufs.size());
    os.write(reinterpret_cast<const char*>(&np), sizeof(np));
    for (const Tensor* t : ps) nn::write_tensor(os, *t);
    os.write(reinterpret_cast<const char*>(&nb), sizeof(nb));
    for (const Tensor* t : bufs) nn::write_tensor(os, *t);
    if (!os) throw IoError("ED checkpoint write failed: " + path);
}

std::unique_ptr<EncoderDecoder> EncoderDecoder::load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open ED checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("not an ED checkpoint: " + path);
    uint64_t hlen = 0;
    is.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    json header = json::parse(hs);
    if (header.at("type") != "encoder_decoder") throw IoError("checkpoint type mismatch: " + path);
    EDConfig cfg;
    cfg.width = header.at("config").at("width");
    cfg.kernel = header.at("config").at("kernel");
    cfg.leaky_slope = header.at("config").at("leaky_slope");
    auto e = std::make_unique<EncoderDecoder>(cfg, header.value("seed", 0ull));
    const json& m = header.at("meta");
    e->meta_.src_image_hash = m.at("src_image_hash");
    e->meta_.src_mask_hash = m.at("src_mask_hash");
    e->meta_.iters = m.at("iters");
    e->meta_.final_bce = m.at("final_bce");
    uint32_t np = 0, nb = 0;
    is.read(reinterpret_cast<char*>(&np), sizeof(np));
    std::vector<Tensor*> ps, gs;
    e->collect_params(ps, gs);
    if (np != ps.size()) throw IoError("ED checkpoint parameter count mismatch");
    for (Tensor* t : ps) {
        Tensor loaded = nn::read_tensor(is);
        if (!loaded.same_shape(*t)) throw IoError("ED checkpoint parameter shape mismatch");
        *t = std::move(loaded);
    }
    is.read(reinterpret_cast<char*>(&nb), sizeof(nb));
    std::vector<Tensor*> bufs;
    e->net_.collect_buffers(bufs);
    if (nb != bufs.size()) throw IoError("ED checkpoint buffer count mismatch");
    for (Tensor* t : bufs) *t = nn::read_tensor(is);
    return e;
}

// --------------------------------------------------------------- training

TrainEDResult train_ed(EncoderDecoder& e, const imaging::Image& x_src,
                       const imaging::BinaryMask& y_src, const TrainEDOptions& opts) {
    if (e.frozen()) throw ContractError("train_ed: encoder-decoder is frozen");
    x_src.validate();
    y_src.validate();
    if (y_src.H != x_src.height() || y_src.W != x_src.width())
        throw InputError("train_ed: mask shape does not match image");
    if (opts.iters < 1) throw ConfigError("train_ed: iters must be >= 1");

    const Tensor x = x_src.batched();
    const Tensor target = y_src.to_tensor();
    std::vector<Tensor*> ps, gs;
    e.collect_params(ps, gs);
    nn::Adam adam;
    adam.lr = opts.lr;
    adam.init(ps);

    TrainEDResult res;
    for (int it = 1; it <= opts.iters; ++it) {
        Tensor logits = e.forward_logits(x, nn::Mode::Train);
        Tensor dlogits;
        nn::bce_with_logits(logits, target, &dlogits);
        nn::zero_grads(gs);
        e.backward_params(dlogits);
        adam.step(ps, gs);
        res.iters_run = it;
        if (opts.stop_bce > 0.0 && it % opts.check_every == 0) {
            Tensor ev = e.forward_logits(x, nn::Mode::Eval);
            if (nn::bce_with_logits(ev, target, nullptr) < opts.stop_bce) break;
        }
    }
    Tensor ev = e.forward_logits(x, nn::Mode::Eval);
    res.final_bce = nn::bce_with_logits(ev, target, nullptr);
    int64_t correct = 0;
    for (int64_t i = 0; i < ev.numel(); ++i) {
        const int pred = ev[i] >= 0.0 ? 1 : 0;  // logit >= 0 <=> prob >= 0.5
        if (pred == static_cast<int>(target[i])) ++correct;
    }
    res.final_pixel_acc = static_cast<double>(correct) / static_cast<double>(ev.numel());

    e.meta().src_image_hash = fnv1a64(x.data.data(), x.data.size() * sizeof(double));
    e.meta().src_mask_hash = fnv1a64(y_src.values.data(), y_src.values.size());
    e.meta().iters = res.iters_run;
    e.meta().final_bce = res.final_bce;
    return res;
}

double ed_inversion_loss(EncoderDecoder& e, const Tensor& x_raw, const imaging::BinaryMask& y_dst,
                         Tensor* gx) {
    if (!e.frozen()) throw ContractError("ed_inversion_loss: encoder-decoder must be frozen");
    y_dst.validate();
    if (x_raw.rank() != 4 || x_raw.dim(2) != y_dst.H || x_raw.dim(3) != y_dst.W)
        throw InputError("ed_inversion_loss: pre-image/mask shape mismatch");
    Tensor logits = e.forward_logits(x_raw, nn::Mode::Eval);
    Tensor target = y_dst.to_tensor();
    Tensor dlogits;
    const double loss = nn::bce_with_logits(logits, target, gx ? &dlogits : nullptr);
    if (gx) *gx = e.backward_input(dlogits);
    return loss;
}

double ed_pixel_accuracy(EncoderDecoder& e, const Tensor& x_raw, const imaging::BinaryMask& ref) {
    Tensor logits = e.forward_logits(x_raw, nn::Mode::Eval);
    Tensor target = ref.to_tensor();
    int64_t correct = 0;
    for (int64_t i = 0; i < logits.numel(); ++i)
        if ((logits[i] >= 0.0 ? 1.0 : 0.0) == target[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(logits.numel());
}

imaging::BinaryMask ed_predict_mask(EncoderDecoder& e, const Tensor& x_raw) {
    Tensor logits = e.forward_logits(x_raw, nn::Mode::Eval);
    imaging::BinaryMask m(x_raw.dim(2), x_raw.dim(3));
    for (int64_t i = 0; i < logits.numel(); ++i)
        m.values[static_cast<size_t>(i)] = logits[i] >= 0.0 ? 1 : 0;
    return m;
}

}  // namespace magic::ed
