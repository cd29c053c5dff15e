#pragma once

#include <memory>
#include <string>
#include <vector>

#include "magic/imaging.hpp"
#include "magic/nn.hpp"
#include "magic/rng.hpp"

namespace magic::ed {

struct EDConfig {
    int width = 64;
    int kernel = 3;
    double leaky_slope = 0.2;
};

/// Patch-based encoder-decoder mapping an RGB image to a single-channel mask
/// probability map. Three convolutions, three stride-1 transposed
/// convolutions (all width filters, batchnorm + leaky relu), then a 1x1
/// logit head with logistic squashing. Fully convolutional: output spatial
/// shape always equals input spatial shape.
class EncoderDecoder {
public:
    EncoderDecoder(EDConfig cfg, uint64_t seed);

    Tensor forward_logits(const Tensor& x, nn::Mode mode);  // [N,3,H,W] -> [N,1,H,W]
    Tensor forward_probs(const Tensor& x, nn::Mode mode);   // sigmoid of logits, in (0,1)
    Tensor backward_input(const Tensor& glogits);
    void backward_params(const Tensor& glogits);

    void collect_params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs);
    std::vector<const Tensor*> param_view() const;
    uint64_t checksum() const;
    int64_t param_count() const;

    void freeze() { frozen_ = true; }
    bool frozen() const { return frozen_; }
    const EDConfig& config() const { return cfg_; }
    uint64_t seed() const { return seed_; }

    struct Meta {
        uint64_t src_image_hash = 0;
        uint64_t src_mask_hash = 0;
        int iters = 0;
        double final_bce = 0.0;
    };
    Meta& meta() { return meta_; }
    const Meta& meta() const { return meta_; }

    void save_checkpoint(const std::string& path) const;
    static std::unique_ptr<EncoderDecoder> load_checkpoint(const std::string& path);

private:
    EDConfig cfg_;
    uint64_t seed_;
    bool frozen_ = false;
    Meta meta_;
    nn::Sequential net_;
};

/// The default preset.
std::unique_ptr<EncoderDecoder> build_ed(uint64_t seed);

struct TrainEDOptions {
    int iters = 2000;
    double lr = 5e-4;
    double stop_bce = 0.0;  // >0: stop once eval-mode BCE drops below
    int check_every = 25;
};

struct TrainEDResult {
    int iters_run = 0;
    double final_bce = 0.0;       // eval mode, end of training
    double final_pixel_acc = 0.0;  // thresholded at 0.5
};

/// Overfits the single (x_src, y_src) pair with per-pixel binary
/// cross-entropy. No augmentation of any kind.
TrainEDResult train_ed(EncoderDecoder& e, const imaging::Image& x_src,
                       const imaging::BinaryMask& y_src, const TrainEDOptions& opts);

/// Mean BCE between E(x) and y_dst with E frozen; optionally returns the
/// gradient with respect to x.
double ed_inversion_loss(EncoderDecoder& e, const Tensor& x_raw, const imaging::BinaryMask& y_dst,
                         Tensor* gx = nullptr);

/// Pixel accuracy of thresholded E(x) against a reference mask.
double ed_pixel_accuracy(EncoderDecoder& e, const Tensor& x_raw, const imaging::BinaryMask& ref);

/// Thresholds E(x) at 0.5.
imaging::BinaryMask ed_predict_mask(EncoderDecoder& e, const Tensor& x_raw);

}  // namespace magic::ed
