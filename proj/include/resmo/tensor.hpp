#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <span>
#include <string>

#include <Eigen/Core>

#include "resmo/errors.hpp"

namespace resmo {

using Index = std::int64_t;

/// Shape of a tensor: 1 to 4 strictly positive dimensions.
class Shape
{
public:
    static constexpr int kMaxRank = 4;

    Shape() = default;

    Shape(std::initializer_list<Index> dims) { assign(dims.begin(), dims.end()); }

    explicit Shape(std::span<const Index> dims) { assign(dims.begin(), dims.end()); }

    int rank() const noexcept { return rank_; }
    bool empty() const noexcept { return rank_ == 0; }

    Index operator[](int axis) const
    {
        if (axis < 0 || axis >= rank_)
            throw IndexError("axis " + std::to_string(axis) + " out of range for rank " +
                             std::to_string(rank_));
        return dims_[static_cast<std::size_t>(axis)];
    }

    Index numel() const noexcept
    {
        if (rank_ == 0)
            return 0;
        Index n = 1;
        for (int i = 0; i < rank_; ++i)
            n *= dims_[static_cast<std::size_t>(i)];
        return n;
    }

    std::span<const Index> dims() const noexcept
    {
        return {dims_.data(), static_cast<std::size_t>(rank_)};
    }

    std::string str() const
    {
        std::string s = "(";
        for (int i = 0; i < rank_; ++i) {
            if (i)
                s += "x";
            s += std::to_string(dims_[static_cast<std::size_t>(i)]);
        }
        return s + ")";
    }

    friend bool operator==(const Shape& a, const Shape& b) noexcept
    {
        if (a.rank_ != b.rank_)
            return false;
        return std::equal(a.dims_.begin(), a.dims_.begin() + a.rank_, b.dims_.begin());
    }

private:
    template <typename It>
    void assign(It first, It last)
    {
        const auto n = std::distance(first, last);
        if (n < 1 || n > kMaxRank)
            throw DimensionError("tensor rank must be 1..4, got " + std::to_string(n));
        rank_ = static_cast<int>(n);
        int i = 0;
        for (auto it = first; it != last; ++it, ++i) {
            if (*it <= 0)
                throw DimensionError("dimension " + std::to_string(i) + " must be positive, got " +
                                     std::to_string(*it));
            dims_[static_cast<std::size_t>(i)] = *it;
        }
    }

    std::array<Index, kMaxRank> dims_{};
    int rank_ = 0;
};

/// Dense row-major array of rank 1..4. Storage is an Eigen column vector so
/// whole-tensor arithmetic can go through Eigen expressions.
template <typename Scalar>
class BasicTensor
{
public:
    using scalar_type = Scalar;
    using Storage = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    BasicTensor() = default;

    explicit BasicTensor(const Shape& shape) : shape_(shape), data_(Storage::Zero(shape.numel())) {}

    BasicTensor(const Shape& shape, Scalar fill)
        : shape_(shape), data_(Storage::Constant(shape.numel(), fill))
    {
    }

    BasicTensor(const Shape& shape, std::initializer_list<Scalar> values)
        : BasicTensor(shape, std::span<const Scalar>(values.begin(), values.size()))
    {
    }

    BasicTensor(const Shape& shape, std::span<const Scalar> values) : shape_(shape)
    {
        if (static_cast<Index>(values.size()) != shape.numel())
            throw DimensionError("shape " + shape.str() + " needs " + std::to_string(shape.numel()) +
                                 " values, got " + std::to_string(values.size()));
        data_.resize(shape.numel());
        std::copy(values.begin(), values.end(), data_.data());
    }

    BasicTensor(const Shape& shape, Storage data) : shape_(shape), data_(std::move(data))
    {
        if (data_.size() != shape.numel())
            throw DimensionError("shape " + shape.str() + " does not match " +
                                 std::to_string(data_.size()) + " values");
    }

    const Shape& shape() const noexcept { return shape_; }
    int rank() const noexcept { return shape_.rank(); }
    Index dim(int axis) const { return shape_[axis]; }
    Index size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.size() == 0; }

    Scalar* data() noexcept { return data_.data(); }
    const Scalar* data() const noexcept { return data_.data(); }

    std::span<Scalar> values() noexcept { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
    std::span<const Scalar> values() const noexcept
    {
        return {data_.data(), static_cast<std::size_t>(data_.size())};
    }

    Storage& storage() noexcept { return data_; }
    const Storage& storage() const noexcept { return data_; }

    Scalar& operator[](Index i) noexcept { return data_[i]; }
    Scalar operator[](Index i) const noexcept { return data_[i]; }

    Scalar& at(Index i0, Index i1) { return data_[offset(i0, i1)]; }
    Scalar at(Index i0, Index i1) const { return data_[offset(i0, i1)]; }
    Scalar& at(Index i0, Index i1, Index i2) { return data_[offset(i0, i1, i2)]; }
    Scalar at(Index i0, Index i1, Index i2) const { return data_[offset(i0, i1, i2)]; }
    Scalar& at(Index i0, Index i1, Index i2, Index i3) { return data_[offset(i0, i1, i2, i3)]; }
    Scalar at(Index i0, Index i1, Index i2, Index i3) const { return data_[offset(i0, i1, i2, i3)]; }

    /// Same data viewed under a new shape with the same element count.
    BasicTensor reshaped(const Shape& shape) const
    {
        if (shape.numel() != size())
            throw DimensionError("cannot reshape " + shape_.str() + " to " + shape.str());
        return BasicTensor(shape, data_);
    }

    template <typename Other>
    BasicTensor<Other> cast() const
    {
        return BasicTensor<Other>(shape_, data_.template cast<Other>().eval());
    }

    bool all_finite() const { return data_.allFinite(); }

    /// Bitwise equality of shape and contents.
    friend bool operator==(const BasicTensor& a, const BasicTensor& b)
    {
        return a.shape_ == b.shape_ &&
               (a.size() == 0 ||
                std::memcmp(a.data(), b.data(), sizeof(Scalar) * static_cast<std::size_t>(a.size())) == 0);
    }

private:
    template <typename... I>
    Index offset(I... idx) const
    {
        constexpr int n = sizeof...(I);
        if (n != shape_.rank())
            throw IndexError("index of rank " + std::to_string(n) + " into tensor " + shape_.str());
        const std::array<Index, n> ix{idx...};
        Index off = 0;
        for (int a = 0; a < n; ++a) {
            const Index d = shape_[a];
            if (ix[static_cast<std::size_t>(a)] < 0 || ix[static_cast<std::size_t>(a)] >= d)
                throw IndexError("index " + std::to_string(ix[static_cast<std::size_t>(a)]) +
                                 " out of range on axis " + std::to_string(a) + " of " + shape_.str());
            off = off * d + ix[static_cast<std::size_t>(a)];
        }
        return off;
    }

    Shape shape_;
    Storage data_;
};

using Tensor = BasicTensor<float>;

/// Largest absolute elementwise difference; shapes must agree.
template <typename A, typename B>
double max_abs_diff(const BasicTensor<A>& a, const BasicTensor<B>& b)
{
    if (!(a.shape() == b.shape()))
        throw DimensionError("shape " + a.shape().str() + " vs " + b.shape().str());
    double m = 0.0;
    for (Index i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

} // namespace resmo
