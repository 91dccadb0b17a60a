#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "latcomp/common.hpp"

namespace latcomp {
inline namespace LATCOMP_ABI {

using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of Real. Image tensors are [N, C, H, W].
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, Real fill = Real(0));
    Tensor(Shape shape, std::vector<Real> values);

    const Shape& shape() const noexcept { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    Real* data() noexcept { return data_.data(); }
    const Real* data() const noexcept { return data_.data(); }
    std::span<Real> values() noexcept { return data_; }
    std::span<const Real> values() const noexcept { return data_; }
    std::vector<Real>& storage() noexcept { return data_; }
    const std::vector<Real>& storage() const noexcept { return data_; }

    Real& operator[](std::size_t i) noexcept { return data_[i]; }
    Real operator[](std::size_t i) const noexcept { return data_[i]; }

    Real& at(int n, int c, int h, int w) noexcept {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    Real at(int n, int c, int h, int w) const noexcept {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    /// Same storage, new shape; element count must match.
    Tensor reshaped(Shape shape) const;
    void reshape(Shape shape);

    /// Copy of samples [begin, end) along the leading axis.
    Tensor slice(int begin, int end) const;
    /// Pointer to the first element of sample n along the leading axis.
    Real* sample(int n) noexcept { return data_.data() + static_cast<std::size_t>(n) * sample_size(); }
    const Real* sample(int n) const noexcept {
        return data_.data() + static_cast<std::size_t>(n) * sample_size();
    }
    std::size_t sample_size() const noexcept { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

    void fill(Real v);
    bool all_finite() const;
    Real sum() const;
    Real min() const;
    Real max() const;

    Tensor& operator+=(const Tensor& o);
    Tensor& operator-=(const Tensor& o);
    Tensor& operator*=(Real s);

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<Real> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, Real s);

/// Concatenates along the leading axis.
Tensor concat_batch(std::span<const Tensor> parts);
/// Concatenates two [N, C, H, W] tensors along channels.
Tensor concat_channels(const Tensor& a, const Tensor& b);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

Real max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace LATCOMP_ABI
}  // namespace latcomp
