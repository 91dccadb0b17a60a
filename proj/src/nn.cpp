#include "latcomp/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace latcomp {
inline namespace LATCOMP_ABI {
namespace nn {

namespace detail {

void gemm_nn(int M, int N, int K, const Real* A, const Real* B, Real* C) {
    constexpr int kBlock = 128;
    for (int k0 = 0; k0 < K; k0 += kBlock) {
        const int k1 = std::min(K, k0 + kBlock);
        for (int i = 0; i < M; ++i) {
            Real* c = C + static_cast<std::size_t>(i) * N;
            const Real* a = A + static_cast<std::size_t>(i) * K;
            for (int k = k0; k < k1; ++k) {
                const Real aik = a[k];
                if (aik == Real(0)) continue;
                const Real* b = B + static_cast<std::size_t>(k) * N;
#pragma omp simd
                for (int j = 0; j < N; ++j) c[j] += aik * b[j];
            }
        }
    }
}

void gemm_nt(int M, int N, int K, const Real* A, const Real* B, Real* C) {
    for (int i = 0; i < M; ++i) {
        const Real* a = A + static_cast<std::size_t>(i) * N;
        Real* c = C + static_cast<std::size_t>(i) * K;
        for (int k = 0; k < K; ++k) {
            const Real* b = B + static_cast<std::size_t>(k) * N;
            Real s = 0;
#pragma omp simd reduction(+ : s)
            for (int j = 0; j < N; ++j) s += a[j] * b[j];
            c[k] += s;
        }
    }
}

void gemm_tn(int M, int N, int K, const Real* A, const Real* B, Real* C) {
    for (int i = 0; i < M; ++i) {
        const Real* a = A + static_cast<std::size_t>(i) * K;
        const Real* b = B + static_cast<std::size_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            const Real aik = a[k];
            if (aik == Real(0)) continue;
            Real* c = C + static_cast<std::size_t>(k) * N;
#pragma omp simd
            for (int j = 0; j < N; ++j) c[j] += aik * b[j];
        }
    }
}

void im2col(const Real* x, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, Real* col) {
    const int P = Ho * Wo;
    for (int c = 0; c < C; ++c) {
        const Real* xc = x + static_cast<std::size_t>(c) * H * W;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                Real* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * P;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    Real* r = row + oy * Wo;
                    if (iy < 0 || iy >= H) {
                        std::fill_n(r, Wo, Real(0));
                        continue;
                    }
                    const Real* xr = xc + static_cast<std::size_t>(iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        r[ox] = (ix >= 0 && ix < W) ? xr[ix] : Real(0);
                    }
                }
            }
        }
    }
}

void col2im(const Real* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, Real* x) {
    const int P = Ho * Wo;
    for (int c = 0; c < C; ++c) {
        Real* xc = x + static_cast<std::size_t>(c) * H * W;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const Real* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * P;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    Real* xr = xc + static_cast<std::size_t>(iy) * W;
                    const Real* r = row + oy * Wo;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) xr[ix] += r[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sequential

Sequential::Sequential(const Sequential& other) {
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
    if (this != &other) {
        Sequential tmp(other);
        *this = std::move(tmp);
    }
    return *this;
}

Tensor Sequential::forward(const Tensor& x, Cache* cache) const {
    if (cache) cache->children.assign(layers_.size(), Cache{});
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i]->forward(h, cache ? &cache->children[i] : nullptr);
    }
    return h;
}

Tensor Sequential::backward(const Tensor& gy, const Cache& cache, std::span<Tensor> grads,
                            bool need_input_grad) const {
    require(cache.children.size() == layers_.size(), ErrorCode::InvalidArgument,
            "backward without a matching forward cache");
    std::vector<std::size_t> offsets(layers_.size() + 1, 0);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        offsets[i + 1] = offsets[i] + std::as_const(*layers_[i]).params().size();
    }
    require(grads.empty() || grads.size() == offsets.back(), ErrorCode::InvalidArgument,
            "gradient buffer does not match parameter list");
    Tensor g = gy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        std::span<Tensor> lg;
        if (!grads.empty()) lg = grads.subspan(offsets[i], offsets[i + 1] - offsets[i]);
        const bool need = i > 0 || need_input_grad;
        g = layers_[i]->backward(g, cache.children[i], lg, need);
        if (!need) break;
    }
    return g;
}

std::vector<Tensor*> Sequential::params() {
    std::vector<Tensor*> out;
    for (auto& l : layers_) {
        auto p = l->params();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::vector<const Tensor*> Sequential::params() const {
    std::vector<const Tensor*> out;
    for (const auto& l : layers_) {
        auto p = std::as_const(*l).params();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::vector<Tensor> Sequential::zero_grads() const {
    std::vector<Tensor> g;
    for (const Tensor* p : params()) g.emplace_back(p->shape());
    return g;
}

std::uint64_t Sequential::checksum() const {
    std::uint64_t h = fnv1a(nullptr, 0);
    for (const Tensor* p : params()) h = fnv1a(p->data(), p->size() * sizeof(Real), h);
    return h;
}

void init_he(Sequential& net, Rng& rng, Real gain) {
    for (Tensor* p : net.params()) {
        if (p->rank() == 1) {
            p->fill(0);
            continue;
        }
        // Conv2d [out, in, k, k], ConvTranspose2d [in, out, k, k], Linear [out, in].
        // [out, in, k, k] / [in, out, k, k] / [out, in]: everything after the leading axis feeds one output.
        const std::size_t fan_in = p->size() / static_cast<std::size_t>(p->dim(0));
        std::normal_distribution<double> nd(0.0, gain * std::sqrt(2.0 / static_cast<double>(fan_in)));
        for (Real& v : p->values()) v = static_cast<Real>(nd(rng));
    }
}

// ---------------------------------------------------------------------------
// Conv2d

namespace {

int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

void check_nchw(const Tensor& x, int channels, const char* who) {
    require(x.rank() == 4 && x.dim(1) == channels, ErrorCode::ShapeMismatch,
            std::string(who) + " expects [N, " + std::to_string(channels) + ", H, W], got " + shape_str(x.shape()));
}

}  // namespace

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad)
    : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(pad),
      weight_({out_channels, in_channels, kernel, kernel}), bias_({out_channels}) {}

Tensor Conv2d::forward(const Tensor& x, Cache* cache) const {
    check_nchw(x, in_, "conv2d");
    const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int Ho = conv_out(H, k_, stride_, pad_), Wo = conv_out(W, k_, stride_, pad_);
    const int K = in_ * k_ * k_, P = Ho * Wo;
    Tensor y({N, out_, Ho, Wo});
    std::vector<Real> col(static_cast<std::size_t>(K) * P);
    for (int n = 0; n < N; ++n) {
        detail::im2col(x.sample(n), in_, H, W, k_, stride_, pad_, Ho, Wo, col.data());
        Real* yn = y.sample(n);
        for (int o = 0; o < out_; ++o) std::fill_n(yn + static_cast<std::size_t>(o) * P, P, bias_[o]);
        detail::gemm_nn(out_, P, K, weight_.data(), col.data(), yn);
    }
    if (cache) cache->tensors = {x};
    return y;
}

Tensor Conv2d::backward(const Tensor& gy, const Cache& cache, std::span<Tensor> grads, bool need_input_grad) const {
    const Tensor& x = cache.tensors.at(0);
    const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int Ho = gy.dim(2), Wo = gy.dim(3);
    const int K = in_ * k_ * k_, P = Ho * Wo;
    Tensor gx;
    if (need_input_grad) gx = Tensor(x.shape());
    std::vector<Real> col(static_cast<std::size_t>(K) * P);
    for (int n = 0; n < N; ++n) {
        const Real* gyn = gy.sample(n);
        if (!grads.empty()) {
            detail::im2col(x.sample(n), in_, H, W, k_, stride_, pad_, Ho, Wo, col.data());
            detail::gemm_nt(out_, P, K, gyn, col.data(), grads[0].data());
            for (int o = 0; o < out_; ++o) {
                Real s = 0;
                const Real* g = gyn + static_cast<std::size_t>(o) * P;
                for (int j = 0; j < P; ++j) s += g[j];
                grads[1][o] += s;
            }
        }
        if (need_input_grad) {
            std::fill(col.begin(), col.end(), Real(0));
            detail::gemm_tn(out_, P, K, weight_.data(), gyn, col.data());
            detail::col2im(col.data(), in_, H, W, k_, stride_, pad_, Ho, Wo, gx.sample(n));
        }
    }
    return gx;
}

// ---------------------------------------------------------------------------
// ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int pad)
    : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(pad),
      weight_({in_channels, out_channels, kernel, kernel}), bias_({out_channels}) {}

Tensor ConvTranspose2d::forward(const Tensor& x, Cache* cache) const {
    check_nchw(x, in_, "conv_transpose2d");
    const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int Ho = (H - 1) * stride_ - 2 * pad_ + k_, Wo = (W - 1) * stride_ - 2 * pad_ + k_;
    const int K = out_ * k_ * k_, P = H * W;
    Tensor y({N, out_, Ho, Wo});
    std::vector<Real> col(static_cast<std::size_t>(K) * P);
    for (int n = 0; n < N; ++n) {
        std::fill(col.begin(), col.end(), Real(0));
        detail::gemm_tn(in_, P, K, weight_.data(), x.sample(n), col.data());
        Real* yn = y.sample(n);
        detail::col2im(col.data(), out_, Ho, Wo, k_, stride_, pad_, H, W, yn);
        const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
        for (int o = 0; o < out_; ++o) {
            Real* p = yn + o * plane;
            for (std::size_t j = 0; j < plane; ++j) p[j] += bias_[o];
        }
    }
    if (cache) cache->tensors = {x};
    return y;
}

Tensor ConvTranspose2d::backward(const Tensor& gy, const Cache& cache, std::span<Tensor> grads,
                                 bool need_input_grad) const {
    const Tensor& x = cache.tensors.at(0);
    const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int Ho = gy.dim(2), Wo = gy.dim(3);
    const int K = out_ * k_ * k_, P = H * W;
    Tensor gx;
    if (need_input_grad) gx = Tensor(x.shape());
    std::vector<Real> col(static_cast<std::size_t>(K) * P);
    const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;
    for (int n = 0; n < N; ++n) {
        const Real* gyn = gy.sample(n);
        detail::im2col(gyn, out_, Ho, Wo, k_, stride_, pad_, H, W, col.data());
        if (!grads.empty()) {
            detail::gemm_nt(in_, P, K, x.sample(n), col.data(), grads[0].data());
            for (int o = 0; o < out_; ++o) {
                Real s = 0;
                const Real* g = gyn + o * plane;
                for (std::size_t j = 0; j < plane; ++j) s += g[j];
                grads[1][o] += s;
            }
        }
        if (need_input_grad) detail::gemm_nn(in_, P, K, weight_.data(), col.data(), gx.sample(n));
    }
    return gx;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(int in_features, int out_features)
    : in_(in_features), out_(out_features), weight_({out_features, in_features}), bias_({out_features}) {}

Tensor Linear::forward(const Tensor& x, Cache* cache) const {
    require(x.rank() >= 1 && x.size() == static_cast<std::size_t>(x.dim(0)) * in_, ErrorCode::ShapeMismatch,
            "linear expects " + std::to_string(in_) + " features per sample, got " + shape_str(x.shape()));
    const int N = x.dim(0);
    Tensor y({N, out_});
    for (int n = 0; n < N; ++n) {
        const Real* xn = x.sample(n);
        Real* yn = y.sample(n);
        for (int o = 0; o < out_; ++o) {
            const Real* w = weight_.data() + static_cast<std::size_t>(o) * in_;
            Real s = 0;
#pragma omp simd reduction(+ : s)
            for (int i = 0; i < in_; ++i) s += w[i] * xn[i];
            yn[o] = s + bias_[o];
        }
    }
    if (cache) cache->tensors = {x};
    return y;
}

Tensor Linear::backward(const Tensor& gy, const Cache& cache, std::span<Tensor> grads, bool need_input_grad) const {
    const Tensor& x = cache.tensors.at(0);
    const int N = x.dim(0);
    Tensor gx;
    if (need_input_grad) gx = Tensor(x.shape());
    for (int n = 0; n < N; ++n) {
        const Real* g = gy.sample(n);
        const Real* xn = x.sample(n);
        if (!grads.empty()) {
            for (int o = 0; o < out_; ++o) {
                Real* gw = grads[0].data() + static_cast<std::size_t>(o) * in_;
                const Real go = g[o];
#pragma omp simd
                for (int i = 0; i < in_; ++i) gw[i] += go * xn[i];
                grads[1][o] += go;
            }
        }
        if (need_input_grad) {
            Real* gxn = gx.sample(n);
            for (int o = 0; o < out_; ++o) {
                const Real* w = weight_.data() + static_cast<std::size_t>(o) * in_;
                const Real go = g[o];
#pragma omp simd
                for (int i = 0; i < in_; ++i) gxn[i] += go * w[i];
            }
        }
    }
    return gx;
}

// ---------------------------------------------------------------------------
// Pointwise and shape layers

Tensor LeakyRelu::forward(const Tensor& x, Cache* cache) const {
    Tensor y = x;
    for (Real& v : y.values()) v = v > 0 ? v : slope_ * v;
    if (cache) cache->tensors = {x};
    return y;
}

Tensor LeakyRelu::backward(const Tensor& gy, const Cache& cache, std::span<Tensor>, bool) const {
    const Tensor& x = cache.tensors.at(0);
    Tensor gx = gy;
    for (std::size_t i = 0; i < gx.size(); ++i) {
        if (!(x[i] > 0)) gx[i] *= slope_;
    }
    return gx;
}

Tensor Tanh::forward(const Tensor& x, Cache* cache) const {
    Tensor y = x;
    for (Real& v : y.values()) v = std::tanh(v);
    if (cache) cache->tensors = {y};
    return y;
}

Tensor Tanh::backward(const Tensor& gy, const Cache& cache, std::span<Tensor>, bool) const {
    const Tensor& y = cache.tensors.at(0);
    Tensor gx = gy;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= Real(1) - y[i] * y[i];
    return gx;
}

Tensor Reshape::forward(const Tensor& x, Cache* cache) const {
    Shape s{x.dim(0)};
    s.insert(s.end(), sample_shape_.begin(), sample_shape_.end());
    if (cache) cache->tensors = {Tensor(x.shape())};  // only the shape is needed
    return x.reshaped(std::move(s));
}

Tensor Reshape::backward(const Tensor& gy, const Cache& cache, std::span<Tensor>, bool) const {
    return gy.reshaped(cache.tensors.at(0).shape());
}

Tensor PixelNorm::forward(const Tensor& x, Cache* cache) const {
    const int N = x.dim(0);
    const std::size_t D = x.sample_size();
    Tensor y = x;
    Tensor inv({N});
    for (int n = 0; n < N; ++n) {
        Real* v = y.sample(n);
        double ss = 0;
        for (std::size_t i = 0; i < D; ++i) ss += double(v[i]) * v[i];
        const Real r = static_cast<Real>(1.0 / std::sqrt(ss / static_cast<double>(D) + eps_));
        inv[n] = r;
        for (std::size_t i = 0; i < D; ++i) v[i] *= r;
    }
    if (cache) cache->tensors = {y, inv};
    return y;
}

Tensor PixelNorm::backward(const Tensor& gy, const Cache& cache, std::span<Tensor>, bool) const {
    // y = x r, r = (mean x^2 + eps)^-1/2  =>  gx = r (gy - y <gy, y> / D)
    const Tensor& y = cache.tensors.at(0);
    const Tensor& inv = cache.tensors.at(1);
    const int N = y.dim(0);
    const std::size_t D = y.sample_size();
    Tensor gx(y.shape());
    for (int n = 0; n < N; ++n) {
        const Real* g = gy.sample(n);
        const Real* yn = y.sample(n);
        double dot = 0;
        for (std::size_t i = 0; i < D; ++i) dot += double(g[i]) * yn[i];
        const Real c = static_cast<Real>(dot / static_cast<double>(D));
        Real* o = gx.sample(n);
        for (std::size_t i = 0; i < D; ++i) o[i] = inv[n] * (g[i] - yn[i] * c);
    }
    return gx;
}

Tensor AvgPool2::forward(const Tensor& x, Cache* cache) const {
    require(x.rank() == 4 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0, ErrorCode::ShapeMismatch,
            "avg_pool2 expects even spatial size, got " + shape_str(x.shape()));
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2) / 2, W = x.dim(3) / 2;
    Tensor y({N, C, H, W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    y.at(n, c, h, w) = Real(0.25) * (x.at(n, c, 2 * h, 2 * w) + x.at(n, c, 2 * h, 2 * w + 1) +
                                                     x.at(n, c, 2 * h + 1, 2 * w) + x.at(n, c, 2 * h + 1, 2 * w + 1));
    if (cache) cache->tensors = {Tensor(x.shape())};
    return y;
}

Tensor AvgPool2::backward(const Tensor& gy, const Cache& cache, std::span<Tensor>, bool) const {
    Tensor gx(cache.tensors.at(0).shape());
    const int N = gy.dim(0), C = gy.dim(1), H = gy.dim(2), W = gy.dim(3);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w) {
                    const Real g = Real(0.25) * gy.at(n, c, h, w);
                    gx.at(n, c, 2 * h, 2 * w) = g;
                    gx.at(n, c, 2 * h, 2 * w + 1) = g;
                    gx.at(n, c, 2 * h + 1, 2 * w) = g;
                    gx.at(n, c, 2 * h + 1, 2 * w + 1) = g;
                }
    return gx;
}

Tensor GlobalAvgPool::forward(const Tensor& x, Cache* cache) const {
    require(x.rank() == 4, ErrorCode::ShapeMismatch, "global_avg_pool expects NCHW");
    const int N = x.dim(0), C = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    Tensor y({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const Real* p = x.sample(n) + c * plane;
            double s = 0;
            for (std::size_t j = 0; j < plane; ++j) s += p[j];
            y[static_cast<std::size_t>(n) * C + c] = static_cast<Real>(s / static_cast<double>(plane));
        }
    if (cache) cache->tensors = {Tensor(x.shape())};
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& gy, const Cache& cache, std::span<Tensor>, bool) const {
    Tensor gx(cache.tensors.at(0).shape());
    const int N = gx.dim(0), C = gx.dim(1);
    const std::size_t plane = static_cast<std::size_t>(gx.dim(2)) * gx.dim(3);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const Real g = gy[static_cast<std::size_t>(n) * C + c] / static_cast<Real>(plane);
            std::fill_n(gx.sample(n) + c * plane, plane, g);
        }
    return gx;
}

Tensor Residual::forward(const Tensor& x, Cache* cache) const {
    if (cache) cache->children.assign(1, Cache{});
    Tensor y = body_.forward(x, cache ? &cache->children[0] : nullptr);
    y += x;
    return y;
}

Tensor Residual::backward(const Tensor& gy, const Cache& cache, std::span<Tensor> grads, bool need_input_grad) const {
    Tensor g = body_.backward(gy, cache.children.at(0), grads, need_input_grad);
    if (!need_input_grad) return {};
    g += gy;
    return g;
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(const std::vector<const Tensor*>& params, Options opts) : opts_(opts) {
    for (const Tensor* p : params) {
        m_.emplace_back(p->shape());
        v_.emplace_back(p->shape());
    }
}

void Adam::step(const std::vector<Tensor*>& params, std::span<const Tensor> grads) {
    require(params.size() == grads.size() && params.size() == m_.size(), ErrorCode::InvalidArgument,
            "adam: parameter/gradient count mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(double(opts_.beta1), double(t_));
    const double bc2 = 1.0 - std::pow(double(opts_.beta2), double(t_));
    const Real step = static_cast<Real>(opts_.lr / bc1);
    const Real b1 = opts_.beta1, b2 = opts_.beta2;
    const Real sq = static_cast<Real>(1.0 / std::sqrt(bc2));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Real* p = params[i]->data();
        const Real* g = grads[i].data();
        Real* m = m_[i].data();
        Real* v = v_[i].data();
        const std::size_t n = params[i]->size();
        for (std::size_t j = 0; j < n; ++j) {
            m[j] = b1 * m[j] + (1 - b1) * g[j];
            v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
            p[j] -= step * m[j] / (std::sqrt(v[j]) * sq + opts_.eps);
        }
    }
}

}  // namespace nn
}  // namespace LATCOMP_ABI
}  // namespace latcomp
