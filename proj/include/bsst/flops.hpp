#pragma once

// Multiply-accumulate accounting for the attention path and the whole network.
// Counts are exact integers; 1 MAC = 2 FLOPs when converting.

#include <algorithm>
#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bsst/config.hpp"
#include "bsst/tensor.hpp"

namespace bsst {

enum class Stage : std::size_t {
    qkv_projection,
    global_tokens,
    qk_logits,
    av,
    out_projection,
    ffn,
    encoder,
    bbfp,
    decoder,
};

inline constexpr std::size_t kStageCount = 9;
inline constexpr std::size_t kAttentionStageCount = 6;

inline const char* stage_name(Stage s) {
    static constexpr const char* names[kStageCount] = {"qkv_projection", "global_tokens", "qk_logits",
                                                       "av",             "out_projection", "ffn",
                                                       "encoder",        "bbfp",          "decoder"};
    return names[static_cast<std::size_t>(s)];
}

/// Number of frames a key/value selection may draw from under a parity rule. When the parity
/// leaves no frame (a single-frame clip on an even layer) every frame is eligible.
inline std::size_t parity_eligible(std::size_t frames, Parity parity) {
    std::size_t n = frames;
    if (parity == Parity::odd) n = (frames + 1) / 2;
    if (parity == Parity::even) n = frames / 2;
    return n == 0 ? frames : n;
}

/// Per-run accumulator filled by the instrumented kernels. Not shareable across concurrent runs.
class FlopsCounter {
public:
    void enable() noexcept { enabled_ = true; }
    bool enabled() const noexcept { return enabled_; }

    void add(Stage s, std::uint64_t macs) noexcept {
        if (enabled_) macs_[static_cast<std::size_t>(s)].fetch_add(macs, std::memory_order_relaxed);
    }
    void add_sparse_window(std::uint64_t query_tokens, std::uint64_t kv_tokens) noexcept {
        if (!enabled_) return;
        sparse_windows_.fetch_add(1, std::memory_order_relaxed);
        sparse_query_tokens_.fetch_add(query_tokens, std::memory_order_relaxed);
        sparse_kv_tokens_.fetch_add(kv_tokens, std::memory_order_relaxed);
    }
    void add_dense_window(std::uint64_t query_tokens) noexcept {
        if (!enabled_) return;
        dense_windows_.fetch_add(1, std::memory_order_relaxed);
        dense_query_tokens_.fetch_add(query_tokens, std::memory_order_relaxed);
    }

    std::uint64_t macs(Stage s) const noexcept { return macs_[static_cast<std::size_t>(s)].load(); }
    std::uint64_t sparse_windows() const noexcept { return sparse_windows_.load(); }
    std::uint64_t sparse_query_tokens() const noexcept { return sparse_query_tokens_.load(); }
    std::uint64_t sparse_kv_tokens() const noexcept { return sparse_kv_tokens_.load(); }
    std::uint64_t dense_windows() const noexcept { return dense_windows_.load(); }
    std::uint64_t dense_query_tokens() const noexcept { return dense_query_tokens_.load(); }

private:
    bool enabled_ = false;
    std::array<std::atomic<std::uint64_t>, kStageCount> macs_{};
    std::atomic<std::uint64_t> sparse_windows_{0}, sparse_query_tokens_{0}, sparse_kv_tokens_{0};
    std::atomic<std::uint64_t> dense_windows_{0}, dense_query_tokens_{0};
};

struct FlopsReport {
    std::size_t frames = 0;
    AttentionMode mode = AttentionMode::sparse;
    std::array<std::uint64_t, kStageCount> macs{};
    ModelConfig config;

    std::uint64_t stage(Stage s) const { return macs[static_cast<std::size_t>(s)]; }

    std::uint64_t attention_total() const {
        std::uint64_t sum = 0;
        for (std::size_t i = 0; i < kAttentionStageCount; ++i) sum += macs[i];
        return sum;
    }
    std::uint64_t total() const {
        std::uint64_t sum = 0;
        for (auto v : macs) sum += v;
        return sum;
    }

    friend bool operator==(const FlopsReport& a, const FlopsReport& b) { return a.macs == b.macs; }
};

/// Report from an instrumented run. Throws if the counter was never enabled.
inline FlopsReport instrumented_flops(const FlopsCounter& counter, const ModelConfig& config, std::size_t frames,
                                      AttentionMode mode) {
    require(counter.enabled(), "instrumented_flops: counting was not enabled for this run");
    FlopsReport r;
    r.frames = frames;
    r.mode = mode;
    r.config = config;
    for (std::size_t i = 0; i < kStageCount; ++i) r.macs[i] = counter.macs(static_cast<Stage>(i));
    return r;
}

/// Closed-form attention-path MACs of the layer stack.
///
/// `selected_windows` is the number of windows the spatial mask keeps (all of them for a fully
/// blurry clip, the default). Dense mode treats every window with all frames.
inline FlopsReport analytic_flops(const ModelConfig& c, const WindowGeometry& g, AttentionMode mode,
                                  std::optional<std::size_t> selected_windows = std::nullopt) {
    g.validate();
    const std::uint64_t T = g.frames;
    const std::uint64_t cz = c.token_channels();
    const std::uint64_t windows = g.window_count();
    const std::uint64_t ms =
        mode == AttentionMode::dense ? 0 : std::min<std::uint64_t>(selected_windows.value_or(windows), windows);
    const std::uint64_t hw = g.window_tokens();
    const std::uint64_t kvb = g.kv_tokens();
    const std::uint64_t pooled = static_cast<std::uint64_t>(g.pooled_h) * g.pooled_w;
    const std::uint64_t tokens = T * g.grid_h * g.grid_w;
    const std::uint64_t qf = std::min<std::uint64_t>(c.k_q, T);

    FlopsReport r;
    r.frames = g.frames;
    r.mode = mode;
    r.config = c;
    auto add = [&](Stage s, std::uint64_t v) { r.macs[static_cast<std::size_t>(s)] += v; };
    for (std::size_t layer = 0; layer < c.layers; ++layer) {
        const std::uint64_t kvf = std::min<std::uint64_t>(c.k_kv, parity_eligible(g.frames, c.layer_parity(layer)));
        const std::uint64_t dense_windows = windows - ms;
        add(Stage::qkv_projection, cz * cz * hw * (ms * (qf + 2 * kvf) + dense_windows * 3 * T));
        add(Stage::global_tokens, T * pooled * (9 * cz + 2 * cz * cz));
        const std::uint64_t logits = cz * (ms * (qf * hw) * (kvf * kvb) + dense_windows * (T * hw) * (T * kvb));
        add(Stage::qk_logits, logits);
        add(Stage::av, logits);
        add(Stage::out_projection, cz * cz * hw * (ms * qf + dense_windows * T));
        add(Stage::ffn, tokens * 2 * cz * c.ffn_hidden());
    }
    return r;
}

}  // namespace bsst
