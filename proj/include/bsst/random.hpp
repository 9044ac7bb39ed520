#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "bsst/tensor.hpp"

namespace bsst {

/// Deterministic weight source. Draws are reproducible across platforms
/// because uniform variates are built directly from mt19937 output bits.
class WeightRng {
public:
    explicit WeightRng(std::uint64_t seed) : engine_(static_cast<std::mt19937::result_type>(seed ^ (seed >> 32))) {}

    /// Uniform in [lo, hi).
    float uniform(float lo, float hi) {
        const double u = static_cast<double>(engine_()) / 4294967296.0;
        return static_cast<float>(lo + (hi - lo) * u);
    }

    Tensor uniform_tensor(Shape shape, float lo, float hi) {
        Tensor t(std::move(shape));
        for (float& v : t.values()) v = uniform(lo, hi);
        return t;
    }

    /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)).
    Tensor fan_in_tensor(Shape shape, std::size_t fan_in) {
        const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
        return uniform_tensor(std::move(shape), -bound, bound);
    }

private:
    std::mt19937 engine_;
};

}  // namespace bsst
