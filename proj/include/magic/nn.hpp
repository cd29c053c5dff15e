#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "magic/rng.hpp"
#include "magic/tensor.hpp"

namespace magic::nn {

/// Forward-pass mode. TrainNoStats normalizes with batch statistics like
/// Train but leaves running statistics untouched (used when a training-mode
/// network is evaluated purely to obtain gradients, e.g. the critic score on
/// the pre-image).
enum class Mode { Train, Eval, TrainNoStats };

struct Layer {
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, Mode mode) = 0;
    /// Propagates gy back to the layer input. Parameter gradients are
    /// accumulated only when accumulate_param_grads is set, so frozen-network
    /// inversions can obtain input gradients without touching grads.
    virtual Tensor backward(const Tensor& gy, bool accumulate_param_grads) = 0;
    virtual void collect_params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) {
        (void)ps;
        (void)gs;
    }
    virtual void collect_buffers(std::vector<Tensor*>& bs) { (void)bs; }
    virtual std::string kind() const = 0;
};

// ---------------------------------------------------------------------------

class Conv2d final : public Layer {
public:
    Conv2d(int cin, int cout, int k, int stride, int pad, bool bias = true);
    void init_params(Rng& rng);  // Kaiming-style fan-in scaling
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& gy, bool accumulate_param_grads) override;
    void collect_params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) override;
    std::string kind() const override { return "conv2d"; }

    int cin, cout, k, stride, pad;
    bool has_bias;
    Tensor W, b, gW, gb;

private:
    Tensor x_;  // cached input
    std::vector<double> col_, buf_;
    bool col_cached_ = false;
};

/// Stride-1 transposed convolution. Weight layout [Cin,Cout,k,k]; forward is
/// realized as a convolution with the spatially flipped, channel-swapped
/// kernel and padding k-1-pad, which is exact for stride 1.
class ConvTranspose2d final : public Layer {
public:
    ConvTranspose2d(int cin, int cout, int k, int pad, bool bias = true);
    void init_params(Rng& rng);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& gy, bool accumulate_param_grads) override;
    void collect_params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) override;
    std::string kind() const override { return "conv_transpose2d"; }

    int cin, cout, k, pad;
    bool has_bias;
    Tensor W, b, gW, gb;

private:
    Tensor flipped() const;
    void scatter_grad(const Tensor& gWf);
    std::unique_ptr<Conv2d> inner_;  // holds flipped weights during fwd/bwd
};

class BatchNorm2d final : public Layer {
public:
    explicit BatchNorm2d(int channels, bool track_running = true, double eps = 1e-5,
                         double momentum = 0.1);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& gy, bool accumulate_param_grads) override;
    void collect_params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) override;
    void collect_buffers(std::vector<Tensor*>& bs) override;
    std::string kind() const override { return "batchnorm2d"; }

    int channels;
    bool track_running;
    double eps, momentum;
    Tensor gamma, beta, ggamma, gbeta;
    Tensor running_mean, running_var;

private:
    Tensor xhat_;
    std::vector<double> invstd_;
    bool used_batch_stats_ = false;
    int n_ = 0, hw_ = 0;
};

class LeakyReLU final : public Layer {
public:
    explicit LeakyReLU(double slope) : slope(slope) {}
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& gy, bool accumulate_param_grads) override;
    std::string kind() const override { return "leaky_relu"; }

    double slope;

private:
    Tensor x_;
};

class Linear final : public Layer {
public:
    Linear(int in, int out, bool bias = true);
    void init_params(Rng& rng);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& gy, bool accumulate_param_grads) override;
    void collect_params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) override;
    std::string kind() const override { return "linear"; }

    int in, out;
    bool has_bias;
    Tensor W, b, gW, gb;

private:
    Tensor x_;
};

class GlobalAvgPool final : public Layer {
public:
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& gy, bool accumulate_param_grads) override;
    std::string kind() const override { return "global_avg_pool"; }

private:
    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
};

class Sequential final : public Layer {
public:
    Sequential() = default;
    template <typename L, typename... Args>
    L* emplace(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L* raw = layer.get();
        layers.push_back(std::move(layer));
        return raw;
    }
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& gy, bool accumulate_param_grads) override;
    void collect_params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) override;
    void collect_buffers(std::vector<Tensor*>& bs) override;
    std::string kind() const override { return "sequential"; }

    std::vector<std::unique_ptr<Layer>> layers;
};

/// Pre-activation-free basic residual block: conv-bn-relu-conv-bn + skip,
/// then relu. A 1x1 projection (with bn) is inserted when shape changes.
class ResidualBlock final : public Layer {
public:
    ResidualBlock(int cin, int cout, int stride);
    void init_params(Rng& rng);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& gy, bool accumulate_param_grads) override;
    void collect_params(std::vector<Tensor*>& ps, std::vector<Tensor*>& gs) override;
    void collect_buffers(std::vector<Tensor*>& bs) override;
    std::string kind() const override { return "residual_block"; }

    Conv2d conv1, conv2;
    BatchNorm2d bn1, bn2;
    std::unique_ptr<Conv2d> proj;
    std::unique_ptr<BatchNorm2d> proj_bn;

private:
    Tensor pre1_;  // pre-activation of the inner relu
    Tensor sum_;   // pre-activation of the output relu
    bool has_proj_;
};

// ---------------------------------------------------------------------------

/// Adam with canonical moment coefficients.
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t t = 0;
    std::vector<Tensor> m, v;

    void init(const std::vector<Tensor*>& params);
    void step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads);
    bool initialized() const { return !m.empty(); }
};

void zero_grads(const std::vector<Tensor*>& grads);
uint64_t params_checksum(const std::vector<const Tensor*>& params);
uint64_t params_checksum(const std::vector<Tensor*>& params);
int64_t params_count(const std::vector<const Tensor*>& params);

// Binary tensor (de)serialization: i32 rank, i32 dims..., f64 payload, LE.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

// Numerically stable helpers shared by training code.
/// Softmax cross-entropy over logits [N,C] with integer labels; returns mean
/// loss and writes dlogits (already divided by N) when dlogits != nullptr.
double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tensor* dlogits);
/// Row-wise softmax of [N,C] (or a single [C] vector).
Tensor softmax(const Tensor& logits);
/// Mean binary cross-entropy between logits and targets in {0,1} (same shape);
/// writes dlogits (divided by numel) when requested.
double bce_with_logits(const Tensor& logits, const Tensor& targets, Tensor* dlogits);

}  // namespace magic::nn
