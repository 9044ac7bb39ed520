#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <string>

#include <json.hpp>

#include "bsst/tensor.hpp"

namespace bsst {

enum class AttentionMode { dense, sparse };

/// Key/value frame restriction of a layer. Frames are numbered from 1 for parity purposes,
/// so `odd` keeps 0-based indices 0, 2, 4, ...
enum class Parity { off, odd, even };

inline std::string to_string(AttentionMode m) { return m == AttentionMode::dense ? "dense" : "sparse"; }
inline std::string to_string(Parity p) {
    switch (p) {
        case Parity::odd: return "odd";
        case Parity::even: return "even";
        default: return "off";
    }
}
inline AttentionMode parse_mode(const std::string& s) {
    if (s == "dense") return AttentionMode::dense;
    if (s == "sparse") return AttentionMode::sparse;
    throw ContractError("unknown attention mode '" + s + "' (expected dense|sparse)");
}

/// Every tunable of the model. Defaults follow the reference hyperparameters where they are
/// known (theta, patch, stride, temporal length, K_q, K_kv) and small desk-scale values elsewhere.
struct ModelConfig {
    std::size_t patch = 4;
    std::size_t stride = 2;
    std::size_t window_h = 4;
    std::size_t window_w = 4;
    std::size_t pooled_h = 2;
    std::size_t pooled_w = 2;
    float theta = 0.3f;
    std::size_t k_q = 24;
    std::size_t k_kv = 24;
    std::size_t temporal_length = 48;
    std::size_t channels = 32;
    std::size_t branches = 2;
    std::size_t layers = 4;
    std::size_t heads = 4;
    std::size_t ffn_ratio = 2;
    bool parity_alternation = true;
    AttentionMode mode = AttentionMode::sparse;
    std::uint64_t seed = 0;

    std::size_t token_channels() const { return patch * patch * channels; }
    std::size_t ffn_hidden() const { return ffn_ratio * token_channels(); }

    /// Layer l (0-based) keeps odd frames when l is even and even frames otherwise.
    Parity layer_parity(std::size_t layer) const {
        if (!parity_alternation) return Parity::off;
        return layer % 2 == 0 ? Parity::odd : Parity::even;
    }

    void validate() const {
        for (auto [name, v] : {std::pair<const char*, std::size_t>{"patch", patch}, {"stride", stride},
                               {"window_h", window_h}, {"window_w", window_w}, {"pooled_h", pooled_h},
                               {"pooled_w", pooled_w}, {"k_q", k_q}, {"k_kv", k_kv},
                               {"temporal_length", temporal_length}, {"channels", channels},
                               {"branches", branches}, {"layers", layers}, {"heads", heads},
                               {"ffn_ratio", ffn_ratio}})
            require(v >= 1, std::string("config: ") + name + " must be positive");
        require(patch >= stride, "config: patch must be >= stride");
        require(theta >= 0.0f && theta <= 1.0f, "config: theta must lie in [0, 1]");
        require(token_channels() % heads == 0, "config: token channels " + std::to_string(token_channels()) +
                                                   " not divisible by " + std::to_string(heads) + " heads");
    }
};

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"patch", c.patch},
            {"stride", c.stride},
            {"window_h", c.window_h},
            {"window_w", c.window_w},
            {"pooled_h", c.pooled_h},
            {"pooled_w", c.pooled_w},
            {"theta", c.theta},
            {"k_q", c.k_q},
            {"k_kv", c.k_kv},
            {"temporal_length", c.temporal_length},
            {"channels", c.channels},
            {"branches", c.branches},
            {"layers", c.layers},
            {"heads", c.heads},
            {"ffn_ratio", c.ffn_ratio},
            {"parity_alternation", c.parity_alternation},
            {"mode", to_string(c.mode)},
            {"seed", c.seed}};
}

/// Reads a config; absent keys keep their defaults, unknown keys are rejected.
inline ModelConfig config_from_json(const nlohmann::json& j) {
    require(j.is_object(), "config: expected a JSON object");
    ModelConfig c;
    const nlohmann::json known = to_json(c);
    for (const auto& [key, _] : j.items())
        require(known.contains(key), "config: unknown key '" + key + "'");
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("patch", c.patch);
    get("stride", c.stride);
    get("window_h", c.window_h);
    get("window_w", c.window_w);
    get("pooled_h", c.pooled_h);
    get("pooled_w", c.pooled_w);
    get("theta", c.theta);
    get("k_q", c.k_q);
    get("k_kv", c.k_kv);
    get("temporal_length", c.temporal_length);
    get("channels", c.channels);
    get("branches", c.branches);
    get("layers", c.layers);
    get("heads", c.heads);
    get("ffn_ratio", c.ffn_ratio);
    get("parity_alternation", c.parity_alternation);
    get("seed", c.seed);
    if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
    c.validate();
    return c;
}

/// Token-grid and window geometry of one attention layer.
struct WindowGeometry {
    std::size_t frames = 0;
    std::size_t grid_h = 0;  // M
    std::size_t grid_w = 0;  // N
    std::size_t window_h = 0;
    std::size_t window_w = 0;
    std::size_t pooled_h = 0;
    std::size_t pooled_w = 0;

    std::size_t windows_y() const { return grid_h / window_h; }
    std::size_t windows_x() const { return grid_w / window_w; }
    std::size_t window_count() const { return windows_y() * windows_x(); }
    std::size_t window_tokens() const { return window_h * window_w; }
    /// Key/value tokens per window per frame after attaching the pooled global tokens.
    std::size_t kv_tokens() const { return (window_h + pooled_h) * (window_w + pooled_w); }

    void validate() const {
        require(frames >= 1 && window_h >= 1 && window_w >= 1 && pooled_h >= 1 && pooled_w >= 1,
                "window geometry: extents must be positive");
        require(grid_h % window_h == 0 && grid_w % window_w == 0,
                "window geometry: token grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                    " not divisible by window " + std::to_string(window_h) + "x" + std::to_string(window_w));
    }
};

inline std::size_t round_up(std::size_t v, std::size_t multiple) { return (v + multiple - 1) / multiple * multiple; }

/// Geometry used for features of size H' x W': features are padded so that the patch grid
/// divides evenly into windows.
inline WindowGeometry geometry_for_features(const ModelConfig& c, std::size_t frames, std::size_t height,
                                            std::size_t width) {
    const std::size_t hp = round_up(height, c.stride * c.window_h);
    const std::size_t wp = round_up(width, c.stride * c.window_w);
    return {frames, hp / c.stride, wp / c.stride, c.window_h, c.window_w, c.pooled_h, c.pooled_w};
}

}  // namespace bsst
