#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bsst {

/// Raised when a caller violates an operation's shape or argument contract.
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ContractError(what);
}

/// Dense row-major float32 tensor. Axis meaning is documented at each call site.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, float fill = 0.0f)
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
        require(shape_numel(shape_) == data_.size(),
                "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                    shape_str(shape_));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }
    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }
    std::vector<float>& storage() noexcept { return data_; }
    const std::vector<float>& storage() const noexcept { return data_; }

    template <typename... Idx>
    float& operator()(Idx... idx) noexcept {
        return data_[offset(idx...)];
    }
    template <typename... Idx>
    const float& operator()(Idx... idx) const noexcept {
        return data_[offset(idx...)];
    }

    template <typename... Idx>
    std::size_t offset(Idx... idx) const noexcept {
        static_assert(sizeof...(Idx) > 0);
        const std::size_t ids[] = {static_cast<std::size_t>(idx)...};
        std::size_t off = 0;
        for (std::size_t i = 0; i < sizeof...(Idx); ++i) off = off * shape_[i] + ids[i];
        return off;
    }

    /// Row-major view of the sub-tensor at leading index `i`.
    std::span<float> slab(std::size_t i) {
        const std::size_t n = data_.size() / shape_.at(0);
        return {data_.data() + i * n, n};
    }
    std::span<const float> slab(std::size_t i) const {
        const std::size_t n = data_.size() / shape_.at(0);
        return {data_.data() + i * n, n};
    }

    /// Copy of the sub-tensor at leading index `i` with the leading axis dropped.
    Tensor frame(std::size_t i) const {
        Shape sub(shape_.begin() + 1, shape_.end());
        auto s = slab(i);
        return Tensor(std::move(sub), std::vector<float>(s.begin(), s.end()));
    }

    void set_frame(std::size_t i, const Tensor& sub) {
        require(sub.size() * shape_.at(0) == data_.size(), "set_frame: sub-tensor size mismatch");
        std::copy(sub.data_.begin(), sub.data_.end(), slab(i).begin());
    }

    Tensor reshaped(Shape shape) const {
        require(shape_numel(shape) == data_.size(),
                "reshape " + shape_str(shape_) + " -> " + shape_str(shape) + " changes element count");
        return Tensor(std::move(shape), data_);
    }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<float> data_;
};

/// Dense displacement field, shape [H, W, 2]; channel 0 is horizontal, channel 1 vertical (pixels).
using Flow = Tensor;

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

/// Stacks equally shaped tensors along a new leading axis.
inline Tensor stack(std::span<const Tensor> items) {
    require(!items.empty(), "stack: no tensors");
    Shape shape = items.front().shape();
    shape.insert(shape.begin(), items.size());
    Tensor out(shape);
    for (std::size_t i = 0; i < items.size(); ++i) {
        require(items[i].shape() == items.front().shape(), "stack: inconsistent shapes " +
                                                               shape_str(items[i].shape()) + " vs " +
                                                               shape_str(items.front().shape()));
        out.set_frame(i, items[i]);
    }
    return out;
}

inline std::vector<Tensor> unstack(const Tensor& t) {
    std::vector<Tensor> out;
    out.reserve(t.dim(0));
    for (std::size_t i = 0; i < t.dim(0); ++i) out.push_back(t.frame(i));
    return out;
}

}  // namespace bsst
