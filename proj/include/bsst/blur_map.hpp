#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "bsst/tensor.hpp"
#include "bsst/tensor_ops.hpp"

namespace bsst {

/// Bidirectional flows of a T-frame clip.
///
/// forward[t]  is O_{t -> t+1} and backward[t] is O_{t+1 -> t}, for t in [0, T-1).
/// The boundary flows O_{0 -> -1} and O_{T-1 -> T} are implicitly zero.
struct FlowSequence {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<Flow> forward;
    std::vector<Flow> backward;

    FlowSequence() = default;
    FlowSequence(std::size_t h, std::size_t w, std::vector<Flow> fwd, std::vector<Flow> bwd)
        : height(h), width(w), forward(std::move(fwd)), backward(std::move(bwd)) {
        validate();
    }

    /// All-zero flows for a static clip.
    static FlowSequence zeros(std::size_t frames, std::size_t h, std::size_t w) {
        require(frames >= 1, "FlowSequence: need at least one frame");
        std::vector<Flow> f(frames - 1, Flow({h, w, 2})), b(frames - 1, Flow({h, w, 2}));
        return FlowSequence(h, w, std::move(f), std::move(b));
    }

    std::size_t frames() const noexcept { return forward.size() + 1; }

    void validate() const {
        require(forward.size() == backward.size(), "FlowSequence: forward has " + std::to_string(forward.size()) +
                                                       " flows but backward has " +
                                                       std::to_string(backward.size()));
        const Shape expect{height, width, 2};
        for (const auto* list : {&forward, &backward})
            for (const Flow& f : *list)
                require(f.shape() == expect,
                        "FlowSequence: flow " + shape_str(f.shape()) + " does not match " + shape_str(expect));
    }

    /// O_{t -> t+1}, zero at the last frame.
    Flow to_next(std::size_t t) const { return t + 1 < frames() ? forward[t] : Flow({height, width, 2}); }
    /// O_{t -> t-1}, zero at the first frame.
    Flow to_prev(std::size_t t) const { return t > 0 ? backward[t - 1] : Flow({height, width, 2}); }
};

/// Per-frame blur estimates. `blur` and `sharp` are [T,H,W]; `downsampled` is the patch-grid
/// average [T,M,N] and `window_levels` the per-window maximum [T,m,n]. The last two are filled
/// by the attention stage once the window geometry is known.
struct BlurMapSequence {
    Tensor raw;
    Tensor blur;
    Tensor sharp;
    Tensor downsampled;
    Tensor window_levels;
};

/// Sum of squared forward and backward flow components per pixel, [T,H,W].
inline Tensor unnormalized_blur(const FlowSequence& flows) {
    flows.validate();
    const std::size_t T = flows.frames(), H = flows.height, W = flows.width;
    Tensor out({T, H, W});
    for (std::size_t t = 0; t < T; ++t) {
        float* dst = out.slab(t).data();
        auto accumulate = [&](const Flow& f) {
            const float* v = f.data();
            for (std::size_t q = 0; q < H * W; ++q) dst[q] += v[2 * q] * v[2 * q] + v[2 * q + 1] * v[2 * q + 1];
        };
        if (t + 1 < T) accumulate(flows.forward[t]);
        if (t > 0) accumulate(flows.backward[t - 1]);
    }
    return out;
}

/// Min-max normalization over the whole sequence. Returns (B, A = 1 - B).
/// A sequence with no spread (max == min) is treated as entirely sharp: B = 0, A = 1.
inline std::pair<Tensor, Tensor> normalize_blur(const Tensor& bhat) {
    require(!bhat.empty(), "normalize_blur: empty input");
    const auto [mn_it, mx_it] = std::minmax_element(bhat.values().begin(), bhat.values().end());
    const float mn = *mn_it, mx = *mx_it;
    Tensor blur(bhat.shape());
    if (mx > mn) {
        const float range = mx - mn;
        for (std::size_t i = 0; i < bhat.size(); ++i) blur.data()[i] = (bhat.data()[i] - mn) / range;
    }
    Tensor sharp(bhat.shape());
    for (std::size_t i = 0; i < bhat.size(); ++i) sharp.data()[i] = 1.0f - blur.data()[i];
    return {std::move(blur), std::move(sharp)};
}

inline BlurMapSequence estimate_blur_maps(const FlowSequence& flows) {
    BlurMapSequence seq;
    seq.raw = unnormalized_blur(flows);
    std::tie(seq.blur, seq.sharp) = normalize_blur(seq.raw);
    return seq;
}

/// Per-frame average pooling of B [T,H,W] onto the soft-split patch grid for (p, s).
inline Tensor downsample_blur(const Tensor& blur, std::size_t p, std::size_t s) {
    require(blur.rank() == 3, "downsample_blur: expected [T,H,W], got " + shape_str(blur.shape()));
    const std::size_t T = blur.dim(0);
    const std::size_t M = ops::patch_grid(blur.dim(1), s), N = ops::patch_grid(blur.dim(2), s);
    std::vector<Tensor> frames;
    frames.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        Tensor pooled = ops::avg_pool2d(blur.frame(t), p, s);
        require(pooled.dim(0) == M && pooled.dim(1) == N,
                "downsample_blur: pooled grid " + shape_str(pooled.shape()) + " differs from patch grid [" +
                    std::to_string(M) + "," + std::to_string(N) + "]");
        frames.push_back(std::move(pooled));
    }
    return stack(frames);
}

/// Max of B-down [T,M,N] over each non-overlapping h x w window -> U [T,M/h,N/w].
inline Tensor window_levels(const Tensor& bdown, std::size_t h, std::size_t w) {
    require(bdown.rank() == 3, "window_levels: expected [T,M,N], got " + shape_str(bdown.shape()));
    require(h >= 1 && w >= 1, "window_levels: window must be non-empty");
    const std::size_t T = bdown.dim(0), M = bdown.dim(1), N = bdown.dim(2);
    require(M % h == 0 && N % w == 0, "window_levels: grid " + std::to_string(M) + "x" + std::to_string(N) +
                                          " is not divisible by window " + std::to_string(h) + "x" +
                                          std::to_string(w));
    const std::size_t m = M / h, n = N / w;
    Tensor out({T, m, n}, -std::numeric_limits<float>::infinity());
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t y = 0; y < M; ++y)
            for (std::size_t x = 0; x < N; ++x) {
                float& u = out(t, y / h, x / w);
                u = std::max(u, bdown(t, y, x));
            }
    return out;
}

}  // namespace bsst
