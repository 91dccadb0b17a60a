#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "latcomp/common.hpp"
#include "latcomp/tensor.hpp"

namespace latcomp {
inline namespace LATCOMP_ABI {
namespace nn {

/// Activations a layer keeps from forward for its backward pass.
struct Cache {
    std::vector<Tensor> tensors;
    std::vector<Cache> children;
};

/// A differentiable map with its own parameters. Layers are immutable during
/// forward/backward; per-call state lives in a Cache owned by the caller, so a
/// frozen network can be evaluated from several threads at once.
class Layer {
public:
    virtual ~Layer() = default;

    virtual std::string kind() const = 0;
    /// cache == nullptr means inference only.
    virtual Tensor forward(const Tensor& x, Cache* cache) const = 0;
    /// grads is either empty (skip parameter gradients) or aligned with params().
    /// Parameter gradients are accumulated, not overwritten.
    virtual Tensor backward(const Tensor& gy, const Cache& cache, std::span<Tensor> grads,
                            bool need_input_grad) const = 0;
    virtual std::vector<Tensor*> params() { return {}; }
    virtual std::vector<const Tensor*> params() const { return {}; }
    virtual std::unique_ptr<Layer> clone() const = 0;
};

class Sequential {
public:
    Sequential() = default;
    Sequential(const Sequential& other);
    Sequential& operator=(const Sequential& other);
    Sequential(Sequential&&) noexcept = default;
    Sequential& operator=(Sequential&&) noexcept = default;

    template <typename L, typename... Args>
    Sequential& add(Args&&... args) {
        layers_.push_back(std::make_unique<L>(std::forward<Args>(args)...));
        return *this;
    }
    Sequential& add(std::unique_ptr<Layer> layer) {
        layers_.push_back(std::move(layer));
        return *this;
    }

    Tensor forward(const Tensor& x, Cache* cache) const;
    /// grads empty → input gradient only.
    Tensor backward(const Tensor& gy, const Cache& cache, std::span<Tensor> grads, bool need_input_grad = true) const;

    std::vector<Tensor*> params();
    std::vector<const Tensor*> params() const;
    std::size_t num_layers() const { return layers_.size(); }
    const Layer& layer(std::size_t i) const { return *layers_.at(i); }

    /// Zero gradients aligned with params().
    std::vector<Tensor> zero_grads() const;
    std::uint64_t checksum() const;

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

/// He-normal initialisation for every weight, zero biases.
void init_he(Sequential& net, Rng& rng, Real gain = Real(1));

class Conv2d final : public Layer {
public:
    Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad);
    std::string kind() const override { return "conv2d"; }
    Tensor forward(const Tensor& x, Cache* cache) const override;
    Tensor backward(const Tensor& gy, const Cache& cache, std::span<Tensor> grads,
                    bool need_input_grad) const override;
    std::vector<Tensor*> params() override { return {&weight_, &bias_}; }
    std::vector<const Tensor*> params() const override { return {&weight_, &bias_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

private:
    int in_, out_, k_, stride_, pad_;
    Tensor weight_;  // [out, in, k, k]
    Tensor bias_;    // [out]
};

class ConvTranspose2d final : public Layer {
public:
    ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int pad);
    std::string kind() const override { return "conv_transpose2d"; }
    Tensor forward(const Tensor& x, Cache* cache) const override;
    Tensor backward(const Tensor& gy, const Cache& cache, std::span<Tensor> grads,
                    bool need_input_grad) const override;
    std::vector<Tensor*> params() override { return {&weight_, &bias_}; }
    std::vector<const Tensor*> params() const override { return {&weight_, &bias_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<ConvTranspose2d>(*this); }

private:
    int in_, out_, k_, stride_, pad_;
    Tensor weight_;  // [in, out, k, k]
    Tensor bias_;    // [out]
};

class Linear final : public Layer {
public:
    Linear(int in_features, int out_features);
    std::string kind() const override { return "linear"; }
    Tensor forward(const Tensor& x, Cache* cache) const override;
    Tensor backward(const Tensor& gy, const Cache& cache, std::span<Tensor> grads,
                    bool need_input_grad) const override;
    std::vector<Tensor*> params() override { return {&weight_, &bias_}; }
    std::vector<const Tensor*> params() const override { return {&weight_, &bias_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }

private:
    int in_, out_;
    Tensor weight_;  // [out, in]
    Tensor bias_;    // [out]
};

class LeakyRelu final : public Layer {
public:
    explicit LeakyRelu(Real slope = Real(0.2)) : slope_(slope) {}
    std::string kind() const override { return "leaky_relu"; }
    Tensor forward(const Tensor& x, Cache* cache) const override;
    Tensor backward(const Tensor& gy, const Cache& cache, std::span<Tensor> grads,
                    bool need_input_grad) const override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<LeakyRelu>(*this); }

private:
    Real slope_;
};

class Tanh final : public Layer {
public:
    std::string kind() const override { return "tanh"; }
    Tensor forward(const Tensor& x, Cache* cache) const override;
    Tensor backward(const Tensor& gy, const Cache& cache, std::span<Tensor> grads,
                    bool need_input_grad) const override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Tanh>(*this); }
};

/// Reshapes every sample to `sample_shape` (leading batch axis preserved).
class Reshape final : public Layer {
public:
    explicit Reshape(Shape sample_shape) : sample_shape_(std::move(sample_shape)) {}
    std::string kind() const override { return "reshape"; }
    Tensor forward(const Tensor& x, Cache* cache) const override;
    Tensor backward(const Tensor& gy, const Cache& cache, std::span<Tensor> grads,
                    bool need_input_grad) const override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Reshape>(*this); }

private:
    Shape sample_shape_;
};

/// x / sqrt(mean(x^2) + eps) per sample; the input-normalisation layer of
/// pixel-normalised generators.
class PixelNorm final : public Layer {
public:
    explicit PixelNorm(Real eps = Real(1e-8)) : eps_(eps) {}
    std::string kind() const override { return "pixel_norm"; }
    Tensor forward(const Tensor& x, Cache* cache) const override;
    Tensor backward(const Tensor& gy, const Cache& cache, std::span<Tensor> grads,
                    bool need_input_grad) const override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<PixelNorm>(*this); }

private:
    Real eps_;
};

class AvgPool2 final : public Layer {
public:
    std::string kind() const override { return "avg_pool2"; }
    Tensor forward(const Tensor& x, Cache* cache) const override;
    Tensor backward(const Tensor& gy, const Cache& cache, std::span<Tensor> grads,
                    bool need_input_grad) const override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPool2>(*this); }
};

class GlobalAvgPool final : public Layer {
public:
    std::string kind() const override { return "global_avg_pool"; }
    Tensor forward(const Tensor& x, Cache* cache) const override;
    Tensor backward(const Tensor& gy, const Cache& cache, std::span<Tensor> grads,
                    bool need_input_grad) const override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }
};

/// y = x + body(x); body must preserve shape.
class Residual final : public Layer {
public:
    explicit Residual(Sequential body) : body_(std::move(body)) {}
    std::string kind() const override { return "residual"; }
    Tensor forward(const Tensor& x, Cache* cache) const override;
    Tensor backward(const Tensor& gy, const Cache& cache, std::span<Tensor> grads,
                    bool need_input_grad) const override;
    std::vector<Tensor*> params() override { return body_.params(); }
    std::vector<const Tensor*> params() const override { return std::as_const(body_).params(); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Residual>(*this); }

private:
    Sequential body_;
};

/// Adam with bias correction. State is plain tensors so it checkpoints exactly.
class Adam {
public:
    struct Options {
        Real lr = Real(1e-4);
        Real beta1 = Real(0.9);
        Real beta2 = Real(0.999);
        Real eps = Real(1e-8);
    };

    Adam() = default;
    Adam(const std::vector<const Tensor*>& params, Options opts);

    void step(const std::vector<Tensor*>& params, std::span<const Tensor> grads);

    const Options& options() const { return opts_; }
    void set_lr(Real lr) { opts_.lr = lr; }
    long long steps() const { return t_; }
    void set_steps(long long t) { t_ = t; }
    std::vector<Tensor>& first_moments() { return m_; }
    std::vector<Tensor>& second_moments() { return v_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }

private:
    Options opts_;
    long long t_ = 0;
    std::vector<Tensor> m_, v_;
};

namespace detail {
// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(int M, int N, int K, const Real* A, const Real* B, Real* C);
// C[M,K] += A[M,N] * B[K,N]^T
void gemm_nt(int M, int N, int K, const Real* A, const Real* B, Real* C);
// C[K,N] += A[M,K]^T * B[M,N]
void gemm_tn(int M, int N, int K, const Real* A, const Real* B, Real* C);
void im2col(const Real* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, Real* col);
void col2im(const Real* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, Real* x);
}  // namespace detail

}  // namespace nn
}  // namespace LATCOMP_ABI
}  // namespace latcomp
