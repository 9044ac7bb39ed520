#pragma once

// Blur-aware bidirectional feature propagation.
//
// Each branch walks the clip in one direction. At step t the aligned feature is built from the
// branch's own outputs at the two previous steps, warped by the (composed) flows, and fed through
// a modulated deformable convolution whose mask is lifted by the neighbours' sharp maps.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "bsst/blur_map.hpp"
#include "bsst/random.hpp"
#include "bsst/tensor.hpp"
#include "bsst/tensor_ops.hpp"

namespace bsst {

enum class Direction { backward, forward };

inline constexpr std::size_t kBfaKernel = 3;
inline constexpr std::size_t kBfaNeighbours = 2;  // one deformable group per neighbour

struct BfaWeights {
    // Offset/mask generator: [2*k*k*G + k*k*G, 3C + 6, 3, 3]. Output channels hold the offset
    // deltas laid out (g, tap, {dx, dy}) followed by the mask logits (g, tap).
    Tensor offset_weight;
    Tensor offset_bias;
    Tensor dcn_weight;  // [C, 2C, 3, 3]; input is [f_prev1, f_prev2]
    Tensor fusion_weight;  // [C, 2C, 3, 3]; input is [f_cur, aligned]
    Tensor fusion_bias;

    static constexpr std::size_t taps() { return kBfaKernel * kBfaKernel; }
    static constexpr std::size_t offset_channels() { return 2 * taps() * kBfaNeighbours; }
    static constexpr std::size_t generator_channels() { return 3 * taps() * kBfaNeighbours; }
    static constexpr std::size_t condition_channels(std::size_t c) { return 3 * c + 6; }

    std::size_t channels() const { return dcn_weight.dim(0); }

    static BfaWeights zeros(std::size_t c) {
        const std::size_t k = kBfaKernel;
        return {Tensor({generator_channels(), condition_channels(c), k, k}), Tensor({generator_channels()}),
                Tensor({c, 2 * c, k, k}), Tensor({c, 2 * c, k, k}), Tensor({c})};
    }

    static BfaWeights random(std::size_t c, WeightRng& rng) {
        const std::size_t k = kBfaKernel;
        const std::size_t gen_fan = condition_channels(c) * k * k, conv_fan = 2 * c * k * k;
        BfaWeights w;
        w.offset_weight = rng.fan_in_tensor({generator_channels(), condition_channels(c), k, k}, gen_fan);
        w.offset_bias = rng.fan_in_tensor({generator_channels()}, gen_fan);
        w.dcn_weight = rng.fan_in_tensor({c, 2 * c, k, k}, conv_fan);
        w.fusion_weight = rng.fan_in_tensor({c, 2 * c, k, k}, conv_fan);
        w.fusion_bias = rng.fan_in_tensor({c}, conv_fan);
        return w;
    }

    void validate(std::size_t c) const {
        const std::size_t k = kBfaKernel;
        require(offset_weight.shape() == Shape{generator_channels(), condition_channels(c), k, k} &&
                    offset_bias.shape() == Shape{generator_channels()} &&
                    dcn_weight.shape() == Shape{c, 2 * c, k, k} && fusion_weight.shape() == Shape{c, 2 * c, k, k} &&
                    fusion_bias.shape() == Shape{c},
                "BfaWeights: shapes inconsistent with " + std::to_string(c) + " channels");
    }
};

/// O_{t -> t-2} from O_{t -> t-1} and O_{t-1 -> t-2}: o1 + warp(o2, o1).
inline Flow compose_flow(const Flow& o1, const Flow& o2) {
    require(o1.shape() == o2.shape(), "compose_flow: shapes " + shape_str(o1.shape()) + " and " +
                                          shape_str(o2.shape()) + " differ");
    Flow out = ops::backward_warp(o2, o1);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += o1.data()[i];
    return out;
}

/// Neighbour inputs of one alignment step; t-1 and t-2 in the branch's direction of travel.
struct BfaInputs {
    const Tensor& f_cur;
    const Tensor& f_prev1;
    const Tensor& f_prev2;
    const Tensor& warped1;
    const Tensor& warped2;
    const Flow& o1;
    const Flow& o2;
    const Tensor& a1;  // [H,W]
    const Tensor& a2;  // [H,W]
};

/// Offsets (flow + predicted delta) and modulation masks (clamp(sigmoid(logit) + sharp, 0, 1))
/// produced by the generator conv for both neighbours.
inline std::pair<Tensor, Tensor> bfa_offsets_and_mask(const BfaInputs& in, const BfaWeights& w) {
    const std::size_t H = in.f_cur.dim(0), W = in.f_cur.dim(1);
    const Tensor a1 = in.a1.reshaped({H, W, 1});
    const Tensor a2 = in.a2.reshaped({H, W, 1});
    const Tensor cond = ops::concat_channels({&in.f_cur, &in.warped1, &in.warped2, &in.o1, &in.o2, &a1, &a2});
    const Tensor gen = ops::conv2d(cond, w.offset_weight, w.offset_bias, 1, kBfaKernel / 2);

    constexpr std::size_t taps = BfaWeights::taps();
    constexpr std::size_t n_off = BfaWeights::offset_channels();
    Tensor offsets({H, W, n_off});
    Tensor mask({H, W, taps * kBfaNeighbours});
    const Flow* flows[kBfaNeighbours] = {&in.o1, &in.o2};
    const Tensor* sharp[kBfaNeighbours] = {&in.a1, &in.a2};
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const float* g = &gen(y, x, 0);
            for (std::size_t n = 0; n < kBfaNeighbours; ++n) {
                const float dx = (*flows[n])(y, x, 0), dy = (*flows[n])(y, x, 1);
                const float a = (*sharp[n])(y, x);
                for (std::size_t t = 0; t < taps; ++t) {
                    const std::size_t gt = n * taps + t;
                    offsets(y, x, 2 * gt) = dx + g[2 * gt];
                    offsets(y, x, 2 * gt + 1) = dy + g[2 * gt + 1];
                    mask(y, x, gt) = std::clamp(ops::sigmoid(g[n_off + gt]) + a, 0.0f, 1.0f);
                }
            }
        }
    }
    return {std::move(offsets), std::move(mask)};
}

/// One blur-aware alignment step; returns f_cur + fusion([f_cur, aligned neighbours]).
inline Tensor bfa(const BfaInputs& in, const BfaWeights& w) {
    require(in.f_cur.rank() == 3, "bfa: features must be [H,W,C], got " + shape_str(in.f_cur.shape()));
    const std::size_t H = in.f_cur.dim(0), W = in.f_cur.dim(1), C = in.f_cur.dim(2);
    for (const Tensor* f : {&in.f_prev1, &in.f_prev2, &in.warped1, &in.warped2})
        require(f->shape() == in.f_cur.shape(),
                "bfa: feature " + shape_str(f->shape()) + " does not match " + shape_str(in.f_cur.shape()));
    for (const Flow* f : {&in.o1, &in.o2})
        require(f->shape() == Shape{H, W, 2}, "bfa: flow " + shape_str(f->shape()) + " does not match features");
    for (const Tensor* a : {&in.a1, &in.a2})
        require(a->shape() == Shape{H, W}, "bfa: sharp map " + shape_str(a->shape()) + " does not match features");
    w.validate(C);

    auto [offsets, mask] = bfa_offsets_and_mask(in, w);
    const Tensor neighbours = ops::concat_channels({&in.f_prev1, &in.f_prev2});
    const Tensor aligned = ops::deform_conv2d(neighbours, offsets, mask, w.dcn_weight, kBfaNeighbours);
    const Tensor fused_in = ops::concat_channels({&in.f_cur, &aligned});
    Tensor out = ops::conv2d(fused_in, w.fusion_weight, w.fusion_bias, 1, kBfaKernel / 2);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += in.f_cur.data()[i];
    return out;
}

/// Multiply-accumulates of one bfa call at H x W with C channels (generator, deformable, fusion convs).
inline std::uint64_t bfa_macs(std::size_t H, std::size_t W, std::size_t C) {
    const std::uint64_t px = static_cast<std::uint64_t>(H) * W;
    const std::uint64_t taps = BfaWeights::taps();
    return px * taps *
           (BfaWeights::generator_channels() * BfaWeights::condition_channels(C) + 2 * (C * 2 * C));
}

/// Runs one branch over the clip. `inputs` are the previous branch's features, `sharp` is [T,H,W].
/// Neighbours that fall outside the clip contribute zero features, zero flows and zero sharp maps.
inline std::vector<Tensor> propagate_branch(const std::vector<Tensor>& inputs, const FlowSequence& flows,
                                            const Tensor& sharp, const BfaWeights& weights, Direction dir) {
    const std::size_t T = inputs.size();
    require(T >= 1, "propagate: need at least one frame");
    require(flows.frames() == T, "propagate: " + std::to_string(T) + " frames but flows describe " +
                                     std::to_string(flows.frames()));
    const std::size_t H = inputs.front().dim(0), W = inputs.front().dim(1);
    require(flows.height == H && flows.width == W, "propagate: flow geometry does not match features");
    require(sharp.shape() == Shape{T, H, W}, "propagate: sharp maps " + shape_str(sharp.shape()) +
                                                 " do not match features");

    const Tensor zero_feat(inputs.front().shape());
    const Flow zero_flow({H, W, 2});
    const Tensor zero_map({H, W});
    std::vector<Tensor> out(T);

    // Flow from frame t to its neighbour one step back along the direction of travel.
    auto step_flow = [&](std::size_t t) -> const Flow& {
        return dir == Direction::forward ? flows.backward[t - 1] : flows.forward[t];
    };

    for (std::size_t step = 0; step < T; ++step) {
        const std::size_t t = dir == Direction::forward ? step : T - 1 - step;
        const bool has1 = step >= 1, has2 = step >= 2;
        const std::size_t n1 = dir == Direction::forward ? t - 1 : t + 1;
        const std::size_t n2 = dir == Direction::forward ? t - 2 : t + 2;

        const Tensor& f1 = has1 ? out[n1] : zero_feat;
        const Tensor& f2 = has2 ? out[n2] : zero_feat;
        const Flow o1 = has1 ? step_flow(t) : zero_flow;
        const Flow o2 = has2 ? compose_flow(o1, step_flow(n1)) : zero_flow;
        const Tensor a1 = has1 ? sharp.frame(n1) : zero_map;
        const Tensor a2 = has2 ? sharp.frame(n2) : zero_map;
        const Tensor w1 = has1 ? ops::backward_warp(f1, o1) : zero_feat;
        const Tensor w2 = has2 ? ops::backward_warp(f2, o2) : zero_feat;

        out[t] = bfa({inputs[t], f1, f2, w1, w2, o1, o2, a1, a2}, weights);
    }
    return out;
}

/// Branch j runs backward for even j and forward for odd j; returns the last branch's features.
inline Tensor propagate(const Tensor& features, const FlowSequence& flows, const Tensor& sharp,
                        const std::vector<BfaWeights>& branches) {
    require(features.rank() == 4, "propagate: features must be [T,H,W,C], got " + shape_str(features.shape()));
    require(!branches.empty(), "propagate: need at least one branch");
    std::vector<Tensor> current = unstack(features);
    for (std::size_t j = 0; j < branches.size(); ++j) {
        const Direction dir = j % 2 == 0 ? Direction::backward : Direction::forward;
        current = propagate_branch(current, flows, sharp, branches[j], dir);
    }
    return stack(current);
}

}  // namespace bsst
