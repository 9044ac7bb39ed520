#pragma once

// End-to-end forward pass: encode, blur maps from flows, propagation, sparse attention, decode.
// The encoder and decoder are fixed stand-ins (no trained weights exist for them here).

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bsst/bbfp.hpp"
#include "bsst/blur_map.hpp"
#include "bsst/bsst.hpp"
#include "bsst/config.hpp"
#include "bsst/flops.hpp"
#include "bsst/random.hpp"
#include "bsst/tensor.hpp"
#include "bsst/tensor_ops.hpp"

namespace bsst {

struct ModelWeights {
    Tensor enc1_weight, enc1_bias;  // [C,3,3,3]
    Tensor enc2_weight, enc2_bias;  // [C,C,3,3]
    std::vector<BfaWeights> branches;
    std::vector<LayerWeights> layers;
    Tensor dec1_weight, dec1_bias;  // [C,C,3,3]
    Tensor dec2_weight, dec2_bias;  // [3,C,3,3]

    static ModelWeights random(const ModelConfig& cfg) {
        cfg.validate();
        WeightRng rng(cfg.seed);
        const std::size_t C = cfg.channels;
        ModelWeights w;
        auto conv = [&](Tensor& weight, Tensor& bias, std::size_t out, std::size_t in) {
            weight = rng.fan_in_tensor({out, in, 3, 3}, in * 9);
            bias = rng.fan_in_tensor({out}, in * 9);
        };
        conv(w.enc1_weight, w.enc1_bias, C, 3);
        conv(w.enc2_weight, w.enc2_bias, C, C);
        for (std::size_t j = 0; j < cfg.branches; ++j) w.branches.push_back(BfaWeights::random(C, rng));
        for (std::size_t l = 0; l < cfg.layers; ++l)
            w.layers.push_back(LayerWeights::random(cfg.token_channels(), cfg.ffn_hidden(), cfg.heads, rng));
        conv(w.dec1_weight, w.dec1_bias, C, C);
        conv(w.dec2_weight, w.dec2_bias, 3, C);
        return w;
    }

    /// Zeroes every residual branch (alignment fusion, attention output, feed-forward output,
    /// decoder) so each stage passes its input through unchanged.
    void zero_residual_paths() {
        for (auto& b : branches) {
            b.fusion_weight.fill(0.0f);
            b.fusion_bias.fill(0.0f);
        }
        for (auto& l : layers) {
            l.out_weight.fill(0.0f);
            l.out_bias.fill(0.0f);
            l.ffn2_weight.fill(0.0f);
            l.ffn2_bias.fill(0.0f);
        }
        for (Tensor* t : {&dec1_weight, &dec1_bias, &dec2_weight, &dec2_bias}) t->fill(0.0f);
    }

    void validate(const ModelConfig& cfg) const {
        const std::size_t C = cfg.channels;
        require(enc1_weight.shape() == Shape{C, 3, 3, 3} && enc2_weight.shape() == Shape{C, C, 3, 3} &&
                    dec1_weight.shape() == Shape{C, C, 3, 3} && dec2_weight.shape() == Shape{3, C, 3, 3} &&
                    enc1_bias.shape() == Shape{C} && enc2_bias.shape() == Shape{C} &&
                    dec1_bias.shape() == Shape{C} && dec2_bias.shape() == Shape{3},
                "ModelWeights: encoder/decoder shapes do not match config");
        require(branches.size() == cfg.branches && layers.size() == cfg.layers,
                "ModelWeights: branch/layer counts do not match config");
        for (const auto& b : branches) b.validate(C);
        for (const auto& l : layers) {
            l.validate();
            require(l.token_channels() == cfg.token_channels() && l.heads == cfg.heads,
                    "ModelWeights: layer shapes do not match config");
        }
    }
};

inline std::uint64_t conv_macs(std::size_t ho, std::size_t wo, std::size_t cout, std::size_t cin, std::size_t k) {
    return static_cast<std::uint64_t>(ho) * wo * cout * cin * k * k;
}

/// Two stride-2 3x3 convs with a leaky ReLU between them. video [T,H,W,3] -> [T,H/4,W/4,C].
inline Tensor encode(const Tensor& video, const ModelWeights& w, FlopsCounter* counter = nullptr) {
    require(video.rank() == 4 && video.dim(3) == 3, "encode: video must be [T,H,W,3], got " + shape_str(video.shape()));
    const std::size_t T = video.dim(0), H = video.dim(1), W = video.dim(2);
    require(H % 4 == 0 && W % 4 == 0 && H > 0 && W > 0,
            "encode: frame size " + std::to_string(H) + "x" + std::to_string(W) + " is not divisible by 4");
    std::vector<Tensor> out(T);
    parallel_for(T, [&](std::size_t t) {
        Tensor h1 = ops::map(ops::conv2d(video.frame(t), w.enc1_weight, w.enc1_bias, 2, 1),
                             [](float v) { return ops::leaky_relu(v); });
        out[t] = ops::conv2d(h1, w.enc2_weight, w.enc2_bias, 2, 1);
    });
    if (counter) {
        const std::size_t C = w.enc1_weight.dim(0);
        counter->add(Stage::encoder, T * (conv_macs(H / 2, W / 2, C, 3, 3) + conv_macs(H / 4, W / 4, C, C, 3)));
    }
    return stack(out);
}

/// Two (nearest x2 upsample, 3x3 conv) stages produce a residual; restored = clamp(video + residual).
inline Tensor decode(const Tensor& features, const Tensor& video, const ModelWeights& w,
                     FlopsCounter* counter = nullptr) {
    require(video.rank() == 4 && features.rank() == 4 && features.dim(0) == video.dim(0) &&
                features.dim(1) * 4 == video.dim(1) && features.dim(2) * 4 == video.dim(2) && video.dim(3) == 3,
            "decode: features " + shape_str(features.shape()) + " inconsistent with video " +
                shape_str(video.shape()));
    const std::size_t T = video.dim(0), H = video.dim(1), W = video.dim(2);
    Tensor out(video.shape());
    parallel_for(T, [&](std::size_t t) {
        Tensor h1 = ops::map(ops::conv2d(ops::upsample_nearest2x(features.frame(t)), w.dec1_weight, w.dec1_bias, 1, 1),
                             [](float v) { return ops::leaky_relu(v); });
        Tensor residual = ops::conv2d(ops::upsample_nearest2x(h1), w.dec2_weight, w.dec2_bias, 1, 1);
        auto src = video.slab(t);
        auto dst = out.slab(t);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::clamp(src[i] + residual.data()[i], 0.0f, 1.0f);
    });
    if (counter) {
        const std::size_t C = w.dec1_weight.dim(0);
        counter->add(Stage::decoder, T * (conv_macs(H / 2, W / 2, C, C, 3) + conv_macs(H, W, 3, C, 3)));
    }
    return out;
}

struct StageTiming {
    std::string stage;
    double milliseconds = 0.0;
};

struct ForwardResult {
    Tensor restored;  // [T,H,W,3] in [0,1]
    BlurMapSequence blur;
    std::vector<SparsityPlan> plans;
    std::vector<StageTiming> timings;
};

namespace detail {

template <typename Fn>
auto run_stage(const char* name, std::vector<StageTiming>& timings, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    try {
        auto result = fn();
        timings.push_back(
            {name, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count()});
        return result;
    } catch (const ContractError& e) {
        throw ContractError(std::string("stage ") + name + ": " + e.what());
    }
}

}  // namespace detail

/// Full restoration pass. Flows must be given at feature resolution (H/4 x W/4).
inline ForwardResult forward(const Tensor& video, const FlowSequence& flows, const ModelConfig& cfg,
                             const ModelWeights& weights, FlopsCounter* counter = nullptr) {
    cfg.validate();
    weights.validate(cfg);
    require(video.rank() == 4 && video.dim(0) >= 1, "forward: video must be [T,H,W,3] with T >= 1");
    const std::size_t T = video.dim(0), H = video.dim(1), W = video.dim(2);
    require(flows.frames() == T, "forward: video has " + std::to_string(T) + " frames but flows describe " +
                                     std::to_string(flows.frames()));
    require(flows.height * 4 == H && flows.width * 4 == W,
            "forward: flows are " + std::to_string(flows.height) + "x" + std::to_string(flows.width) +
                ", expected feature resolution " + std::to_string(H / 4) + "x" + std::to_string(W / 4));

    ForwardResult res;
    const Tensor features = detail::run_stage("encode", res.timings, [&] { return encode(video, weights, counter); });
    res.blur = detail::run_stage("blur_map", res.timings, [&] { return estimate_blur_maps(flows); });
    const Tensor aligned = detail::run_stage("bbfp", res.timings, [&] {
        Tensor f = propagate(features, flows, res.blur.sharp, weights.branches);
        if (counter) counter->add(Stage::bbfp, weights.branches.size() * T * bfa_macs(H / 4, W / 4, cfg.channels));
        return f;
    });
    BsstResult refined = detail::run_stage(
        "bsst", res.timings, [&] { return bsst_stack(aligned, res.blur.blur, cfg, weights.layers, counter); });
    res.blur.downsampled = std::move(refined.downsampled);
    res.blur.window_levels = std::move(refined.window_levels);
    res.plans = std::move(refined.plans);
    res.restored = detail::run_stage("decode", res.timings,
                                     [&] { return decode(refined.features, video, weights, counter); });
    return res;
}

/// Closed-form MACs of the whole network for a clip of `frames` frames of size H x W.
inline FlopsReport analytic_pipeline_flops(const ModelConfig& cfg, std::size_t frames, std::size_t H, std::size_t W,
                                           AttentionMode mode, std::optional<std::size_t> selected_windows = {}) {
    const std::size_t C = cfg.channels, Hf = H / 4, Wf = W / 4;
    FlopsReport r = analytic_flops(cfg, geometry_for_features(cfg, frames, Hf, Wf), mode, selected_windows);
    r.macs[static_cast<std::size_t>(Stage::encoder)] =
        frames * (conv_macs(H / 2, W / 2, C, 3, 3) + conv_macs(Hf, Wf, C, C, 3));
    r.macs[static_cast<std::size_t>(Stage::bbfp)] = cfg.branches * frames * bfa_macs(Hf, Wf, C);
    r.macs[static_cast<std::size_t>(Stage::decoder)] =
        frames * (conv_macs(H / 2, W / 2, C, C, 3) + conv_macs(H, W, 3, C, 3));
    return r;
}

}  // namespace bsst
