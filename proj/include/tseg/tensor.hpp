#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tseg/errors.hpp"

namespace tseg {

// Shape of a rank-4 tensor in NCHW order.
struct Shape4 {
    int64_t n = 0, c = 0, h = 0, w = 0;

    int64_t numel() const { return n * c * h * w; }
    bool operator==(const Shape4&) const = default;

    std::string str() const {
        return "[" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + "]";
    }
};

// Dense rank-4 array, contiguous row-major (n, c, h, w). T is float for
// training/inference and double for gradient checking.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape4 s) : shape_(s), data_(static_cast<size_t>(s.numel()), T(0)) {
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
            throw DimensionError("negative tensor dimension " + s.str());
    }
    Tensor(Shape4 s, std::vector<T> values) : shape_(s), data_(std::move(values)) {
        if (static_cast<int64_t>(data_.size()) != s.numel())
            throw DimensionError("data length " + std::to_string(data_.size()) +
                                 " does not match shape " + s.str());
    }

    static Tensor full(Shape4 s, T v) {
        Tensor t(s);
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }
    static Tensor scalar(T v) { return full({1, 1, 1, 1}, v); }

    const Shape4& shape() const { return shape_; }
    int64_t numel() const { return shape_.numel(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
    }
    T at(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
    }

    T& operator[](int64_t i) { return data_[i]; }
    T operator[](int64_t i) const { return data_[i]; }

    T item() const {
        if (numel() != 1) throw ContractError("item() requires a scalar tensor, got " + shape_.str());
        return data_[0];
    }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    // Releases the storage while keeping the shape (used by the tape to drop
    // activations that backward will not read).
    void release() {
        data_.clear();
        data_.shrink_to_fit();
    }
    bool released() const { return data_.empty() && shape_.numel() > 0; }

    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

private:
    Shape4 shape_{};
    std::vector<T> data_;
};

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!(a.shape() == b.shape()))
        throw DimensionError(std::string(what) + ": shape mismatch " + a.shape().str() +
                             " vs " + b.shape().str());
}

} // namespace tseg
