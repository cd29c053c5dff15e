#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "magic/imaging.hpp"
#include "magic/mask_ed.hpp"
#include "magic/patch_critic.hpp"
#include "magic/quasi_robust.hpp"

namespace magic::synth {

/// Eq.-style semantic objective: hard-class cross-entropy (the default used
/// by the full method) or KL against the source softmax distribution.
enum class SemanticMode { CrossEntropy, KlToSource };

struct HyperParams {
    double eta = 0.05;     // critic weight once activated
    double gamma = 30.0;   // mask-guided inversion weight
    double kappa = 1.0;    // image-space regularizer weight
    double nu = 5.0;       // feature-statistics weight
    double lambda = 5e-4;  // pre-image learning rate
    double alpha = 1e-4;   // TV term inside R
    double beta = 1e-5;    // squared-norm term inside R
    int eta_activation_iter = 5000;
    int total_iters = 10000;
    SemanticMode mode = SemanticMode::CrossEntropy;

    void validate() const;
    double eta_at(int t) const { return t >= eta_activation_iter ? eta : 0.0; }
};

struct TermBreakdown {
    double total = 0.0;
    double semantic = 0.0;     // CE (or KL) term, weight 1
    double critic_term = 0.0;  // eta_t * gen_loss
    double ed_term = 0.0;      // gamma * inversion BCE
    double reg_term = 0.0;     // kappa * (alpha*TV + beta*||.||^2)
    double feat_term = 0.0;    // nu * feature-stat loss
};

struct SynthesisConfig {
    HyperParams h;
    critic::CriticConfig critic_cfg = critic::CriticConfig::default_preset();
    double critic_lr = 5e-4;
    uint64_t seed = 1;
    int snapshot_every = 500;
    std::string out_dir;  // run_synthesis writes manifest/outputs here
    // provenance recorded in the manifest when known (set by the CLI)
    std::string classifier_ckpt_path;
    std::string ed_ckpt_path;
};

/// Frozen networks plus everything precomputed once per run.
struct SynthesisProblem {
    qr::Classifier* f = nullptr;
    ed::EncoderDecoder* e = nullptr;
    Tensor x_src_raw;  // [1,3,H,W]
    imaging::BinaryMask y_dst;
    int target_class = -1;
    std::vector<double> source_softmax;   // KL mode reference
    imaging::FeatureStats source_stats;   // cached: only the pre-image side is differentiated
};

SynthesisProblem make_problem(qr::Classifier& f, ed::EncoderDecoder& e,
                              const imaging::Image& x_src, const imaging::BinaryMask& y_dst,
                              SemanticMode mode);

struct SynthesisState {
    int t = 0;
    Tensor preimage;  // [1,3,H,W], classifier-normalized space
    std::unique_ptr<critic::Critic> critic;
    nn::Adam pre_adam;
    std::vector<TermBreakdown> loss_history;
    Rng rng{1};

    void save(const std::string& path) const;
    static SynthesisState load(const std::string& path, const critic::CriticConfig& expected_cfg);
};

/// Standard-normal pre-image, deterministic in the seed.
imaging::PreImage init_preimage(int h, int w, uint64_t seed);

/// Raw-domain view of a normalized pre-image (affine, unclamped).
Tensor preimage_raw_view(const qr::Classifier& f, const Tensor& preimage);
/// Denormalized, clamped export.
imaging::Image export_preimage(const qr::Classifier& f, const Tensor& preimage);

/// All Eq.-4 terms at the current pre-image; when grad is non-null also the
/// fused gradient in normalized pre-image space. Frozen-network parameters
/// are never touched.
TermBreakdown total_loss(SynthesisState& state, SynthesisProblem& prob, const HyperParams& h,
                         Tensor* grad);

/// Gradient of one isolated term (diagnostics/tests). Term ids: "semantic",
/// "critic", "ed", "reg", "feat".
Tensor term_gradient(SynthesisState& state, SynthesisProblem& prob, const HyperParams& h,
                     const std::string& term);

/// One synthesis iteration: critic updates while active, then one Adam step
/// on the pre-image. Appends to loss_history and increments t.
void step(SynthesisState& state, SynthesisProblem& prob, const SynthesisConfig& cfg);

struct RunResult {
    imaging::Image x_dst;
    TermBreakdown final_losses;
    int source_class = -1;
    int output_class = -1;
    std::string manifest_path;
    std::string output_png_path;
};

/// Full pipeline: init from noise, iterate, export image + manifest + loss
/// CSV + snapshots + critic checkpoint + resumable state.
RunResult run_synthesis(qr::Classifier& f, ed::EncoderDecoder& e, const imaging::Image& x_src,
                        const imaging::BinaryMask* y_src, const imaging::BinaryMask& y_dst,
                        const SynthesisConfig& cfg,
                        SynthesisState* resume_from = nullptr);

}  // namespace magic::synth
