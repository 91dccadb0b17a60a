#include "latcomp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace latcomp {
inline namespace LATCOMP_ABI {

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        require(d >= 0, ErrorCode::ShapeMismatch, "negative dimension in " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(Shape shape, Real fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<Real> values) : shape_(std::move(shape)), data_(std::move(values)) {
    require(data_.size() == shape_numel(shape_), ErrorCode::ShapeMismatch,
            "value count " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
}

Tensor Tensor::reshaped(Shape shape) const {
    Tensor t = *this;
    t.reshape(std::move(shape));
    return t;
}

void Tensor::reshape(Shape shape) {
    require(shape_numel(shape) == data_.size(), ErrorCode::ShapeMismatch,
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    shape_ = std::move(shape);
}

Tensor Tensor::slice(int begin, int end) const {
    require(!shape_.empty() && 0 <= begin && begin <= end && end <= shape_[0], ErrorCode::ShapeMismatch,
            "bad slice of " + shape_str(shape_));
    Shape s = shape_;
    s[0] = end - begin;
    const std::size_t stride = sample_size();
    return Tensor(std::move(s), std::vector<Real>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                                  data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
}

void Tensor::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
}

Real Tensor::sum() const {
    double s = 0;
    for (Real v : data_) s += v;
    return static_cast<Real>(s);
}

Real Tensor::min() const { return data_.empty() ? Real(0) : *std::min_element(data_.begin(), data_.end()); }
Real Tensor::max() const { return data_.empty() ? Real(0) : *std::max_element(data_.begin(), data_.end()); }

Tensor& Tensor::operator+=(const Tensor& o) {
    require_same_shape(*this, o, "tensor +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
    require_same_shape(*this, o, "tensor -=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(Real s) {
    for (Real& v : data_) v *= s;
    return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, Real s) { return a *= s; }

Tensor concat_batch(std::span<const Tensor> parts) {
    require(!parts.empty(), ErrorCode::EmptyInput, "concat_batch of nothing");
    Shape s = parts.front().shape();
    int n = 0;
    std::vector<Real> values;
    for (const Tensor& t : parts) {
        Shape rest(t.shape().begin() + 1, t.shape().end());
        require(Shape(s.begin() + 1, s.end()) == rest, ErrorCode::ShapeMismatch,
                "concat_batch: " + shape_str(s) + " vs " + shape_str(t.shape()));
        n += t.dim(0);
        values.insert(values.end(), t.storage().begin(), t.storage().end());
    }
    s[0] = n;
    return Tensor(std::move(s), std::move(values));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require(a.rank() == 4 && b.rank() == 4 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
            ErrorCode::ShapeMismatch, "concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out({a.dim(0), a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
    for (int n = 0; n < a.dim(0); ++n) {
        Real* dst = out.sample(n);
        dst = std::copy_n(a.sample(n), a.sample_size(), dst);
        std::copy_n(b.sample(n), b.sample_size(), dst);
    }
    return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
            std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    Real m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace LATCOMP_ABI
}  // namespace latcomp
