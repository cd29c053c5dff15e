#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "magic/imaging.hpp"
#include "magic/nn.hpp"
#include "magic/rng.hpp"
#include "magic/tensor.hpp"

namespace magic::qr {

enum class NormKind { L2, Linf };

std::string norm_name(NormKind n);
NormKind norm_from_name(const std::string& s);

/// Threat model of the adversarial-training inner problem: perturbations
/// bounded by epsilon in the given norm, in raw [0,1] pixel units.
struct PerturbationBudget {
    NormKind norm = NormKind::L2;
    double epsilon = 0.0;
    int steps = 7;
    double step_size = 0.0;  // <= 0 selects the 2.5*eps/steps convention
    bool random_start = true;

    void validate() const;
    double effective_step() const;

    /// The original full-scale training setting (L2 ball, eps = 0.05),
    /// recorded as a named preset. Desk-scale runs use rescaled budgets.
    static PerturbationBudget reference_full_scale();
};

/// Anything PGD can attack: mean classification loss and its gradient with
/// respect to the raw input batch.
struct DifferentiableModel {
    virtual ~DifferentiableModel() = default;
    virtual double loss_and_input_grad(const Tensor& x_raw, const std::vector<int>& labels,
                                       Tensor* gx) = 0;
};

struct ClassifierConfig {
    int num_classes = 10;
    int input_hw = 32;  // training resolution; the network itself is fully convolutional
    int width = 16;     // stem channels; stages use width, 2*width, 4*width
    std::vector<double> norm_mean = {0.5, 0.5, 0.5};
    std::vector<double> norm_std = {0.25, 0.25, 0.25};
    std::vector<std::string> stat_layers = {"stage1", "stage2", "stage3"};
};

struct Prediction {
    std::vector<double> logits;
    int cls = -1;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double clean_acc = 0.0;
    double adv_acc = 0.0;
};

struct LabeledImages {
    Tensor images;  // [N,3,H,W], unit domain
    std::vector<int> labels;
    int size() const { return static_cast<int>(labels.size()); }
};

/// Small 3-stage residual classifier over unit-domain RGB inputs, with
/// per-channel input normalization owned by the model. Stage outputs are the
/// feature taps used for statistics matching.
class Classifier final : public DifferentiableModel {
public:
    Classifier(ClassifierConfig cfg, uint64_t init_seed);

    // --- forward paths -----------------------------------------------------
    /// x: [N,3,H,W] in [0,1]; applies input normalization.
    Tensor forward_raw(const Tensor& x, nn::Mode mode);
    /// xn: [N,3,H,W] already normalized.
    Tensor forward_normalized(const Tensor& xn, nn::Mode mode);
    /// Backward from logits plus optional gradients injected at the stage
    /// taps of the last forward. Returns gradient in normalized space.
    Tensor backward(const Tensor& dlogits,
                    const std::map<std::string, Tensor>* tap_grads = nullptr,
                    bool accumulate_param_grads = false);
    /// Stage outputs of the last forward, keyed by layer id.
    const std::map<std::string, Tensor>& taps() const { return taps_; }

    // --- core operations ----------------------------------------------------
    Prediction predict(const imaging::Image& img);
    Prediction predict_batched(const Tensor& x_raw1, nn::Mode mode);
    imaging::FeatureStats extract_stats(const imaging::Image& img);
    /// Stats of a normalized [1,3,H,W] input (synthesis path).
    imaging::FeatureStats extract_stats_normalized(const Tensor& xn);
    /// Gradient of the classification loss at (x, cls) w.r.t. raw pixels.
    Tensor input_gradient(const imaging::Image& img, int cls);

    double loss_and_input_grad(const Tensor& x_raw, const std::vector<int>& labels,
                               Tensor* gx) override;

    // --- training/infrastructure -------------------------------------------
    void collect_params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs);
    std::vector<const Tensor*> param_view() const;
    uint64_t checksum() const;
    int64_t param_count() const;
    void freeze() { frozen_ = true; }
    bool frozen() const { return frozen_; }

    const ClassifierConfig& config() const { return cfg_; }
    std::vector<EpochLog>& training_log() { return log_; }
    const std::vector<EpochLog>& training_log() const { return log_; }
    PerturbationBudget& trained_budget() { return trained_budget_; }
    uint64_t seed() const { return seed_; }

    void save_checkpoint(const std::string& path) const;
    static std::unique_ptr<Classifier> load_checkpoint(const std::string& path);

    /// Fully-convolutional feature map at a named tap for a raw input
    /// (used by the single-image metric).
    Tensor feature_map(const imaging::Image& img, const std::string& layer_id);
    /// Pooled penultimate feature vector for a raw input (set-metric features).
    std::vector<double> pooled_features(const imaging::Image& img);

private:
    Tensor normalize(const Tensor& x) const;
    void validate_stat_layers() const;

    ClassifierConfig cfg_;
    uint64_t seed_;
    bool frozen_ = false;
    std::vector<EpochLog> log_;
    PerturbationBudget trained_budget_;

    nn::Conv2d stem_conv_;
    nn::BatchNorm2d stem_bn_;
    nn::ResidualBlock stage1_, stage2_, stage3_;
    nn::GlobalAvgPool gap_;
    nn::Linear fc_;
    Tensor stem_pre_;  // cached stem pre-activation
    std::map<std::string, Tensor> taps_;
};

// --------------------------------------------------------------- attacks

/// PGD on a batch: returns delta with ||delta_n|| <= eps per sample and
/// x+delta inside [0,1]. eps == 0 returns an all-zero perturbation.
Tensor pgd_attack_batch(DifferentiableModel& f, const Tensor& x_raw,
                        const std::vector<int>& labels, const PerturbationBudget& budget,
                        Rng& rng);

/// Single-image convenience wrapper around pgd_attack_batch.
Tensor pgd_attack(DifferentiableModel& f, const imaging::Image& img, int label,
                  const PerturbationBudget& budget, Rng& rng);

double perturbation_norm(const Tensor& delta, NormKind norm);

struct TrainOptions {
    int epochs = 10;
    int batch_size = 32;
    double lr = 1e-3;
    uint64_t seed = 1;
    int adv_eval_samples = 200;  // test subset used for adversarial accuracy
};

/// Adversarial training (standard training when budget.epsilon == 0): every
/// batch is replaced by its PGD perturbation before the update.
std::vector<EpochLog> adversarial_train(Classifier& f, const LabeledImages& train,
                                        const LabeledImages& test,
                                        const PerturbationBudget& budget,
                                        const TrainOptions& opts);

double accuracy(Classifier& f, const LabeledImages& data);
double adversarial_accuracy(Classifier& f, const LabeledImages& data,
                            const PerturbationBudget& budget, Rng& rng, int max_samples);

/// Pearson correlation between the per-pixel input-gradient magnitude and a
/// Sobel edge map of the image.
double edge_alignment_score(Classifier& f, const imaging::Image& img, int label);

}  // namespace magic::qr
