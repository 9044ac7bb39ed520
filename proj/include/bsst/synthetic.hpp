#pragma once

// Synthetic clips and flows for self-contained runs: a constant global motion, or a textured box
// moving over a static background.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include <json.hpp>

#include "bsst/blur_map.hpp"
#include "bsst/tensor.hpp"

namespace bsst {

struct SyntheticSpec {
    enum class Kind { constant, moving_box };
    Kind kind = Kind::constant;
    std::size_t frames = 4;
    std::size_t height = 16;
    std::size_t width = 16;
    float u = 0.0f, v = 0.0f;                        // constant
    float box_x = 0, box_y = 0, box_w = 0, box_h = 0;  // moving_box, frame-0 rectangle in pixels
    float vel_x = 0.0f, vel_y = 0.0f;                 // moving_box, pixels per frame

    /// Box rectangle at frame t, scaled down by `scale`.
    void box_at(std::size_t t, float scale, float& x0, float& y0, float& x1, float& y1) const {
        x0 = (box_x + vel_x * static_cast<float>(t)) / scale;
        y0 = (box_y + vel_y * static_cast<float>(t)) / scale;
        x1 = x0 + box_w / scale;
        y1 = y0 + box_h / scale;
    }
};

inline SyntheticSpec synthetic_from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    const std::string type = j.at("type").get<std::string>();
    s.frames = j.at("T").get<std::size_t>();
    s.height = j.at("H").get<std::size_t>();
    s.width = j.at("W").get<std::size_t>();
    require(s.frames >= 1 && s.height >= 1 && s.width >= 1, "synthetic spec: T, H, W must be positive");
    if (type == "constant") {
        s.kind = SyntheticSpec::Kind::constant;
        s.u = j.at("u").get<float>();
        s.v = j.at("v").get<float>();
    } else if (type == "moving_box") {
        s.kind = SyntheticSpec::Kind::moving_box;
        const auto& box = j.at("box");
        require(box.is_array() && box.size() == 4, "synthetic spec: box must be [x, y, w, h]");
        s.box_x = box.at(0).get<float>();
        s.box_y = box.at(1).get<float>();
        s.box_w = box.at(2).get<float>();
        s.box_h = box.at(3).get<float>();
        const auto& vel = j.at("velocity");
        require(vel.is_array() && vel.size() == 2, "synthetic spec: velocity must be [vx, vy]");
        s.vel_x = vel.at(0).get<float>();
        s.vel_y = vel.at(1).get<float>();
    } else {
        throw ContractError("synthetic spec: unknown type '" + type + "' (expected constant|moving_box)");
    }
    return s;
}

/// Flows on a grid `scale` times coarser than the spec's frame size (displacements scale too).
inline FlowSequence synthetic_flows(const SyntheticSpec& s, std::size_t scale = 1) {
    require(scale >= 1 && s.height % scale == 0 && s.width % scale == 0,
            "synthetic_flows: frame size not divisible by scale");
    const std::size_t H = s.height / scale, W = s.width / scale;
    const float sc = static_cast<float>(scale);
    FlowSequence flows = FlowSequence::zeros(s.frames, H, W);
    for (std::size_t t = 0; t + 1 < s.frames; ++t) {
        Flow& fwd = flows.forward[t];
        Flow& bwd = flows.backward[t];
        if (s.kind == SyntheticSpec::Kind::constant) {
            for (std::size_t q = 0; q < H * W; ++q) {
                fwd.data()[2 * q] = s.u / sc;
                fwd.data()[2 * q + 1] = s.v / sc;
                bwd.data()[2 * q] = -s.u / sc;
                bwd.data()[2 * q + 1] = -s.v / sc;
            }
            continue;
        }
        float ax0, ay0, ax1, ay1, bx0, by0, bx1, by1;
        s.box_at(t, sc, ax0, ay0, ax1, ay1);
        s.box_at(t + 1, sc, bx0, by0, bx1, by1);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const float cx = static_cast<float>(x) + 0.5f, cy = static_cast<float>(y) + 0.5f;
                if (cx >= ax0 && cx < ax1 && cy >= ay0 && cy < ay1) {
                    fwd(y, x, 0) = s.vel_x / sc;
                    fwd(y, x, 1) = s.vel_y / sc;
                }
                if (cx >= bx0 && cx < bx1 && cy >= by0 && cy < by1) {
                    bwd(y, x, 0) = -s.vel_x / sc;
                    bwd(y, x, 1) = -s.vel_y / sc;
                }
            }
    }
    return flows;
}

/// Frames [T,H,W,3] in [0,1]: a smooth background and, for moving_box, a checkered box smeared
/// along its motion over one frame interval.
inline Tensor synthetic_video(const SyntheticSpec& s) {
    constexpr int kSubsteps = 8;
    Tensor video({s.frames, s.height, s.width, 3});
    for (std::size_t t = 0; t < s.frames; ++t)
        for (std::size_t y = 0; y < s.height; ++y)
            for (std::size_t x = 0; x < s.width; ++x) {
                const float fy = static_cast<float>(y) / static_cast<float>(s.height);
                const float fx = static_cast<float>(x) / static_cast<float>(s.width);
                float rgb[3] = {0.2f + 0.3f * fx, 0.25f + 0.2f * fy, 0.3f + 0.1f * (fx + fy)};
                if (s.kind == SyntheticSpec::Kind::moving_box) {
                    float cover = 0.0f, tex = 0.0f;
                    for (int k = 0; k < kSubsteps; ++k) {
                        const float dt = (static_cast<float>(k) + 0.5f) / kSubsteps - 0.5f;
                        const float x0 = s.box_x + s.vel_x * (static_cast<float>(t) + dt);
                        const float y0 = s.box_y + s.vel_y * (static_cast<float>(t) + dt);
                        const float px = static_cast<float>(x) + 0.5f - x0, py = static_cast<float>(y) + 0.5f - y0;
                        if (px >= 0 && py >= 0 && px < s.box_w && py < s.box_h) {
                            cover += 1.0f;
                            tex += ((static_cast<int>(px / 2) + static_cast<int>(py / 2)) % 2) ? 0.95f : 0.6f;
                        }
                    }
                    if (cover > 0.0f) {
                        const float a = cover / kSubsteps, val = tex / cover;
                        for (float& c : rgb) c = (1.0f - a) * c + a * val;
                    }
                }
                for (std::size_t c = 0; c < 3; ++c) video(t, y, x, c) = std::clamp(rgb[c], 0.0f, 1.0f);
            }
    return video;
}

}  // namespace bsst
