#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace actjepa {

/// Raised when tensor shapes do not conform to an op's contract.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when an op is called outside its documented domain.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

using Shape = std::vector<std::size_t>;

/// 64-byte aligned storage. Eigen's vectorized kernels peel loops according
/// to the address of the first element, so unaligned buffers make float
/// results depend on where the heap happened to place them.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};
    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <class T>
using Storage = std::vector<T, AlignedAllocator<T>>;

inline std::size_t numel_of(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major tensor. Most ops treat it as a matrix whose column count is
/// the trailing dimension and whose row count is the product of the rest.
template <class T>
class Tensor {
public:
    Tensor() : shape_{0} {}

    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(numel_of(shape_), fill) {
        check_shape();
    }

    Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)), data_(data.begin(), data.end()) {
        check_shape();
        if (numel_of(shape_) != data_.size()) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                                 to_string(shape_));
        }
    }

    /// Builds a 2-D tensor from nested rows; all rows must share a length.
    static Tensor from_rows(const std::vector<std::vector<T>>& rows) {
        if (rows.empty()) throw DimensionError("from_rows: no rows");
        const std::size_t cols = rows.front().size();
        std::vector<T> data;
        data.reserve(rows.size() * cols);
        for (const auto& r : rows) {
            if (r.size() != cols) throw DimensionError("from_rows: ragged rows");
            data.insert(data.end(), r.begin(), r.end());
        }
        return Tensor({rows.size(), cols}, std::move(data));
    }

    static Tensor scalar(T v) { return Tensor({1}, std::vector<T>{v}); }

    /// Same as the data constructor but rejects NaN/Inf.
    static Tensor checked(Shape shape, std::vector<T> data) {
        for (const T v : data) {
            if (!std::isfinite(v)) throw ContractError("non-finite value in checked tensor");
        }
        return Tensor(std::move(shape), std::move(data));
    }

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    std::size_t cols() const { return shape_.back(); }
    std::size_t rows() const { return cols() == 0 ? 0 : data_.size() / cols(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    Storage<T>& storage() { return data_; }
    const Storage<T>& storage() const { return data_; }
    std::vector<T> to_vector() const { return {data_.begin(), data_.end()}; }

    T& operator[](std::size_t i) { return data_[i]; }
    T operator[](std::size_t i) const { return data_[i]; }
    T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    T at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    T item() const {
        if (data_.size() != 1) throw ContractError("item() on tensor with " + std::to_string(data_.size()) + " elements");
        return data_[0];
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    Tensor reshaped(Shape shape) const {
        if (numel_of(shape) != data_.size()) throw DimensionError("reshape to " + to_string(shape) + " changes element count");
        Tensor t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

    template <class U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

private:
    void check_shape() const {
        if (shape_.empty()) throw DimensionError("tensor shape must have at least one dimension");
        for (const auto d : shape_) {
            if (d == 0) throw DimensionError("tensor dimensions must be positive: " + to_string(shape_));
        }
    }

    Shape shape_;
    Storage<T> data_;
};

}  // namespace actjepa
