#pragma once

// Blur-aware spatio-temporal sparse attention.
//
// Tokens live on a [T, M, N, Cz] grid cut into m x n windows of h x w tokens. For a window the
// spatial mask keeps, queries come only from its K_q blurriest frames and keys/values only from
// its K_kv sharpest parity-eligible frames. Every other window runs ordinary dense window
// attention over all T frames. Key/value blocks are (h + h_p) x (w + w_p) per frame: the local
// h x w tokens with the pooled global tokens repeated along the extra rows and columns.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <tuple>
#include <utility>
#include <vector>

#include "bsst/blur_map.hpp"
#include "bsst/config.hpp"
#include "bsst/flops.hpp"
#include "bsst/parallel.hpp"
#include "bsst/random.hpp"
#include "bsst/tensor.hpp"
#include "bsst/tensor_ops.hpp"

namespace bsst {

struct LayerWeights {
    std::size_t heads = 1;
    Tensor norm1_gamma, norm1_beta;
    Tensor q_weight, q_bias, k_weight, k_bias, v_weight, v_bias;
    Tensor pool_kernel;  // [3,3,Cz] depthwise
    Tensor global_k_weight, global_k_bias, global_v_weight, global_v_bias;
    Tensor out_weight, out_bias;
    Tensor norm2_gamma, norm2_beta;
    Tensor ffn1_weight, ffn1_bias, ffn2_weight, ffn2_bias;

    std::size_t token_channels() const { return q_weight.dim(0); }
    std::size_t hidden() const { return ffn1_weight.dim(0); }

    static LayerWeights random(std::size_t cz, std::size_t hidden, std::size_t heads, WeightRng& rng) {
        LayerWeights w;
        w.heads = heads;
        w.norm1_gamma = Tensor({cz}, 1.0f);
        w.norm1_beta = Tensor({cz});
        auto lin = [&](Tensor& weight, Tensor& bias, std::size_t out, std::size_t in) {
            weight = rng.fan_in_tensor({out, in}, in);
            bias = rng.fan_in_tensor({out}, in);
        };
        lin(w.q_weight, w.q_bias, cz, cz);
        lin(w.k_weight, w.k_bias, cz, cz);
        lin(w.v_weight, w.v_bias, cz, cz);
        w.pool_kernel = rng.fan_in_tensor({3, 3, cz}, 9);
        lin(w.global_k_weight, w.global_k_bias, cz, cz);
        lin(w.global_v_weight, w.global_v_bias, cz, cz);
        lin(w.out_weight, w.out_bias, cz, cz);
        w.norm2_gamma = Tensor({cz}, 1.0f);
        w.norm2_beta = Tensor({cz});
        lin(w.ffn1_weight, w.ffn1_bias, hidden, cz);
        lin(w.ffn2_weight, w.ffn2_bias, cz, hidden);
        return w;
    }

    void validate() const {
        const std::size_t cz = token_channels(), hid = ffn1_weight.dim(0);
        require(heads >= 1 && cz % heads == 0, "LayerWeights: token channels not divisible by head count");
        const Shape sq{cz, cz}, vec{cz};
        require(norm1_gamma.shape() == vec && norm1_beta.shape() == vec && norm2_gamma.shape() == vec &&
                    norm2_beta.shape() == vec,
                "LayerWeights: normalization parameters must be [Cz]");
        for (const Tensor* t : {&q_weight, &k_weight, &v_weight, &global_k_weight, &global_v_weight, &out_weight})
            require(t->shape() == sq, "LayerWeights: projection " + shape_str(t->shape()) + " must be [Cz,Cz]");
        for (const Tensor* t : {&q_bias, &k_bias, &v_bias, &global_k_bias, &global_v_bias, &out_bias, &ffn2_bias})
            require(t->shape() == vec, "LayerWeights: bias " + shape_str(t->shape()) + " must be [Cz]");
        require(pool_kernel.shape() == Shape{3, 3, cz}, "LayerWeights: pooling kernel must be [3,3,Cz]");
        require(ffn1_weight.shape() == Shape{hid, cz} && ffn1_bias.shape() == Shape{hid} &&
                    ffn2_weight.shape() == Shape{cz, hid},
                "LayerWeights: feed-forward shapes inconsistent");
    }
};

struct WindowSelection {
    std::size_t row = 0;
    std::size_t col = 0;
    std::vector<std::size_t> query_frames;  // 0-based, blurriest first
    std::vector<std::size_t> kv_frames;     // 0-based, sharpest first

    friend bool operator==(const WindowSelection&, const WindowSelection&) = default;
};

/// Which windows and frames one layer attends with. Windows absent from `selected` take the
/// dense path over all frames.
struct SparsityPlan {
    std::size_t frames = 0;
    std::size_t windows_y = 0;
    std::size_t windows_x = 0;
    Tensor spatial_mask;  // [m,n] of 0/1
    std::vector<WindowSelection> selected;
    float theta = 0.0f;
    std::size_t k_q = 0;
    std::size_t k_kv = 0;
    Parity parity = Parity::off;
    AttentionMode mode = AttentionMode::sparse;

    /// Query tokens attended through the sparse path.
    std::size_t sparse_query_tokens(std::size_t window_tokens) const {
        std::size_t n = 0;
        for (const auto& s : selected) n += s.query_frames.size() * window_tokens;
        return n;
    }

    friend bool operator==(const SparsityPlan&, const SparsityPlan&) = default;
};

/// Per-window frame index lists, indexed by row * n + col; empty for windows the mask drops.
using FrameSets = std::vector<std::vector<std::size_t>>;

/// S[i,j] = 1 iff U[t,i,j] >= theta for some frame t.
inline Tensor spatial_mask(const Tensor& levels, float theta) {
    require(levels.rank() == 3, "spatial_mask: expected U [T,m,n], got " + shape_str(levels.shape()));
    const std::size_t T = levels.dim(0), m = levels.dim(1), n = levels.dim(2);
    Tensor mask({m, n});
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (levels(t, i, j) >= theta) mask(i, j) = 1.0f;
    return mask;
}

namespace detail {

inline void require_mask(const Tensor& levels, const Tensor& mask) {
    require(levels.rank() == 3 && mask.shape() == Shape{levels.dim(1), levels.dim(2)},
            "frame selection: mask " + shape_str(mask.shape()) + " does not match U " + shape_str(levels.shape()));
}

inline bool parity_allows(std::size_t frame, Parity parity) {
    if (parity == Parity::odd) return frame % 2 == 0;  // 1-based frame number is odd
    if (parity == Parity::even) return frame % 2 == 1;
    return true;
}

/// The `k` best frames of `candidates` under `better(a, b)`; ties resolve to the smaller index.
template <typename Score>
std::vector<std::size_t> top_frames(std::vector<std::size_t> candidates, std::size_t k, Score score) {
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) { return score(a) > score(b); });
    candidates.resize(std::min(k, candidates.size()));
    return candidates;
}

}  // namespace detail

/// For each kept window, the min(K_q, T) frames with the largest blur level.
inline FrameSets select_query_frames(const Tensor& levels, const Tensor& mask, std::size_t k_q) {
    detail::require_mask(levels, mask);
    require(k_q >= 1, "select_query_frames: K_q must be >= 1");
    const std::size_t T = levels.dim(0), m = levels.dim(1), n = levels.dim(2);
    FrameSets sets(m * n);
    std::vector<std::size_t> all(T);
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (mask(i, j) != 0.0f)
                sets[i * n + j] = detail::top_frames(all, k_q, [&](std::size_t t) { return levels(t, i, j); });
    return sets;
}

/// For each kept window, the sharpest (largest 1 - U) parity-eligible frames, at most K_kv.
inline FrameSets select_kv_frames(const Tensor& levels, const Tensor& mask, std::size_t k_kv, Parity parity) {
    detail::require_mask(levels, mask);
    require(k_kv >= 1, "select_kv_frames: K_kv must be >= 1");
    const std::size_t T = levels.dim(0), m = levels.dim(1), n = levels.dim(2);
    std::vector<std::size_t> eligible;
    for (std::size_t t = 0; t < T; ++t)
        if (detail::parity_allows(t, parity)) eligible.push_back(t);
    if (eligible.empty()) {
        eligible.resize(T);
        std::iota(eligible.begin(), eligible.end(), std::size_t{0});
    }
    FrameSets sets(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (mask(i, j) != 0.0f)
                sets[i * n + j] =
                    detail::top_frames(eligible, k_kv, [&](std::size_t t) { return 1.0f - levels(t, i, j); });
    return sets;
}

inline SparsityPlan build_plan(const Tensor& levels, float theta, std::size_t k_q, std::size_t k_kv, Parity parity) {
    require(levels.rank() == 3, "build_plan: expected U [T,m,n], got " + shape_str(levels.shape()));
    SparsityPlan plan;
    plan.frames = levels.dim(0);
    plan.windows_y = levels.dim(1);
    plan.windows_x = levels.dim(2);
    plan.spatial_mask = spatial_mask(levels, theta);
    plan.theta = theta;
    plan.k_q = k_q;
    plan.k_kv = k_kv;
    plan.parity = parity;
    const FrameSets q = select_query_frames(levels, plan.spatial_mask, k_q);
    const FrameSets kv = select_kv_frames(levels, plan.spatial_mask, k_kv, parity);
    for (std::size_t i = 0; i < plan.windows_y; ++i)
        for (std::size_t j = 0; j < plan.windows_x; ++j)
            if (plan.spatial_mask(i, j) != 0.0f) {
                const std::size_t id = i * plan.windows_x + j;
                plan.selected.push_back({i, j, q[id], kv[id]});
            }
    return plan;
}

/// Plan that routes every window through dense attention.
inline SparsityPlan dense_plan(std::size_t frames, std::size_t windows_y, std::size_t windows_x) {
    SparsityPlan plan;
    plan.frames = frames;
    plan.windows_y = windows_y;
    plan.windows_x = windows_x;
    plan.spatial_mask = Tensor({windows_y, windows_x});
    plan.mode = AttentionMode::dense;
    return plan;
}

/// Per-frame soft split of F [T,H,W,C] -> z [T,M,N,p*p*C].
inline Tensor tokenize(const Tensor& features, std::size_t p, std::size_t s) {
    require(features.rank() == 4, "tokenize: expected [T,H,W,C], got " + shape_str(features.shape()));
    std::vector<Tensor> frames;
    frames.reserve(features.dim(0));
    for (std::size_t t = 0; t < features.dim(0); ++t) frames.push_back(ops::soft_split(features.frame(t), p, s));
    return stack(frames);
}

/// Inverse of tokenize back to [T,H,W,C].
inline Tensor detokenize(const Tensor& tokens, std::size_t p, std::size_t s, std::size_t H, std::size_t W) {
    require(tokens.rank() == 4, "detokenize: expected [T,M,N,Cz], got " + shape_str(tokens.shape()));
    std::vector<Tensor> frames;
    frames.reserve(tokens.dim(0));
    for (std::size_t t = 0; t < tokens.dim(0); ++t)
        frames.push_back(ops::soft_composition(tokens.frame(t), p, s, H, W));
    return stack(frames);
}

/// Pooled global key/value tokens g_k = l_k(DC(z)), g_v = l_v(DC(z)), each [T,h_p,w_p,Cz].
/// The depthwise conv uses a 3x3 kernel with stride floor(M/h_p) x floor(N/w_p).
inline std::pair<Tensor, Tensor> global_tokens(const Tensor& z, const LayerWeights& w, std::size_t pooled_h,
                                               std::size_t pooled_w) {
    require(z.rank() == 4, "global_tokens: expected z [T,M,N,Cz], got " + shape_str(z.shape()));
    const std::size_t T = z.dim(0), M = z.dim(1), N = z.dim(2), cz = z.dim(3);
    require(pooled_h >= 1 && pooled_w >= 1 && pooled_h <= M && pooled_w <= N,
            "global_tokens: pooled size exceeds token grid");
    const std::size_t sy = M / pooled_h, sx = N / pooled_w;
    Tensor gk({T, pooled_h, pooled_w, cz}), gv({T, pooled_h, pooled_w, cz});
    for (std::size_t t = 0; t < T; ++t) {
        const Tensor pooled = ops::depthwise_conv2d(z.frame(t), w.pool_kernel, sy, sx);
        require(pooled.dim(0) == pooled_h && pooled.dim(1) == pooled_w,
                "global_tokens: token grid " + std::to_string(M) + "x" + std::to_string(N) +
                    " cannot be pooled to " + std::to_string(pooled_h) + "x" + std::to_string(pooled_w) +
                    " (depthwise conv yields " + shape_str(pooled.shape()) + ")");
        gk.set_frame(t, ops::linear(pooled, w.global_k_weight, w.global_k_bias));
        gv.set_frame(t, ops::linear(pooled, w.global_v_weight, w.global_v_bias));
    }
    return {std::move(gk), std::move(gv)};
}

/// Softmax(Q K^T / sqrt(d_head)) V per head. Q [nq,cz], K/V [nk,cz] row-major; out [nq,cz].
inline void multi_head_attention(const float* q, std::size_t nq, const float* k, const float* v, std::size_t nk,
                                 std::size_t cz, std::size_t heads, float* out) {
    const std::size_t dh = cz / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    std::vector<float> row(nk);
    std::fill(out, out + nq * cz, 0.0f);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * dh;
        for (std::size_t a = 0; a < nq; ++a) {
            const float* qa = q + a * cz + c0;
            for (std::size_t b = 0; b < nk; ++b) {
                const float* kb = k + b * cz + c0;
                float acc = 0.0f;
                for (std::size_t d = 0; d < dh; ++d) acc += qa[d] * kb[d];
                row[b] = acc * scale;
            }
            ops::softmax_inplace(row);
            float* oa = out + a * cz + c0;
            for (std::size_t b = 0; b < nk; ++b) {
                const float p = row[b];
                const float* vb = v + b * cz + c0;
                for (std::size_t d = 0; d < dh; ++d) oa[d] += p * vb[d];
            }
        }
    }
}

inline void validate_plan(const SparsityPlan& plan, const WindowGeometry& g) {
    require(plan.frames == g.frames && plan.windows_y == g.windows_y() && plan.windows_x == g.windows_x(),
            "sparse_attention: plan covers " + std::to_string(plan.frames) + " frames and " +
                std::to_string(plan.windows_y) + "x" + std::to_string(plan.windows_x) + " windows; tokens have " +
                std::to_string(g.frames) + " frames and " + std::to_string(g.windows_y()) + "x" +
                std::to_string(g.windows_x()));
    std::vector<bool> seen(g.window_count(), false);
    for (const auto& s : plan.selected) {
        require(s.row < g.windows_y() && s.col < g.windows_x(), "sparse_attention: selected window out of range");
        const std::size_t id = s.row * g.windows_x() + s.col;
        require(!seen[id], "sparse_attention: window selected twice");
        seen[id] = true;
        require(!s.query_frames.empty() && !s.kv_frames.empty(), "sparse_attention: empty frame selection");
        for (const auto* list : {&s.query_frames, &s.kv_frames})
            for (std::size_t f : *list) require(f < g.frames, "sparse_attention: frame index out of range");
    }
}

/// Attention half of a layer: pre-norm, window attention on the planned slots, residual add.
/// Query tokens the plan skips are returned unchanged.
inline Tensor attention_stage(const Tensor& z, const SparsityPlan& plan, const LayerWeights& w,
                              const WindowGeometry& g, FlopsCounter* counter = nullptr) {
    require(z.rank() == 4 && z.dim(0) == g.frames && z.dim(1) == g.grid_h && z.dim(2) == g.grid_w,
            "sparse_attention: tokens " + shape_str(z.shape()) + " do not match window geometry");
    g.validate();
    w.validate();
    require(z.dim(3) == w.token_channels(), "sparse_attention: token channels differ from layer weights");
    validate_plan(plan, g);

    const std::size_t T = g.frames, N = g.grid_w, cz = z.dim(3);
    const std::size_t h = g.window_h, wd = g.window_w, ph = g.pooled_h, pw = g.pooled_w;
    const std::size_t hw = g.window_tokens(), kvb = g.kv_tokens();

    Tensor zn(z.shape());
    ops::layer_norm_rows(z.values(), cz, w.norm1_gamma, w.norm1_beta, zn.values());
    const auto [gk, gv] = global_tokens(zn, w, ph, pw);

    std::vector<const WindowSelection*> by_window(g.window_count(), nullptr);
    for (const auto& s : plan.selected) by_window[s.row * g.windows_x() + s.col] = &s;

    std::vector<std::size_t> all_frames(T);
    std::iota(all_frames.begin(), all_frames.end(), std::size_t{0});

    Tensor out = z;
    parallel_for(g.window_count(), [&](std::size_t id) {
        const std::size_t wi = id / g.windows_x(), wj = id % g.windows_x();
        const WindowSelection* sel = by_window[id];
        const std::vector<std::size_t>& qf = sel ? sel->query_frames : all_frames;
        const std::vector<std::size_t>& kvf = sel ? sel->kv_frames : all_frames;
        const std::size_t nq = qf.size() * hw, nk = kvf.size() * kvb;

        auto token = [&](std::size_t t, std::size_t r, std::size_t c) {
            return (t * g.grid_h + wi * h + r) * N + wj * wd + c;
        };

        std::vector<float> q(nq * cz), k(nk * cz), v(nk * cz), local(hw * cz);
        std::size_t row = 0;
        for (std::size_t f : qf)
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t c = 0; c < wd; ++c, ++row)
                    ops::linear_rows({zn.data() + token(f, r, c) * cz, cz}, 1, w.q_weight, w.q_bias,
                                     {q.data() + row * cz, cz});

        row = 0;
        for (std::size_t f : kvf) {
            for (const auto& [weight, bias, global, dst] :
                 {std::tuple{&w.k_weight, &w.k_bias, &gk, &k}, std::tuple{&w.v_weight, &w.v_bias, &gv, &v}}) {
                for (std::size_t r = 0; r < h; ++r)
                    for (std::size_t c = 0; c < wd; ++c)
                        ops::linear_rows({zn.data() + token(f, r, c) * cz, cz}, 1, *weight, *bias,
                                         {local.data() + (r * wd + c) * cz, cz});
                std::size_t at = row;
                for (std::size_t r = 0; r < h + ph; ++r)
                    for (std::size_t c = 0; c < wd + pw; ++c, ++at) {
                        const float* src = r < h && c < wd
                                               ? local.data() + (r * wd + c) * cz
                                               : &(*global)(f, r < h ? r % ph : r - h, c < wd ? c % pw : c - wd, 0);
                        std::copy(src, src + cz, dst->data() + at * cz);
                    }
            }
            row += kvb;
        }

        std::vector<float> attn(nq * cz), proj(nq * cz);
        multi_head_attention(q.data(), nq, k.data(), v.data(), nk, cz, w.heads, attn.data());
        ops::linear_rows(attn, nq, w.out_weight, w.out_bias, proj);

        row = 0;
        for (std::size_t f : qf)
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t c = 0; c < wd; ++c, ++row) {
                    float* dst = out.data() + token(f, r, c) * cz;
                    const float* src = proj.data() + row * cz;
                    for (std::size_t d = 0; d < cz; ++d) dst[d] += src[d];
                }

        if (counter) {
            const std::uint64_t cz2 = static_cast<std::uint64_t>(cz) * cz;
            counter->add(Stage::qkv_projection, cz2 * (nq + 2 * kvf.size() * hw));
            counter->add(Stage::qk_logits, static_cast<std::uint64_t>(nq) * nk * cz);
            counter->add(Stage::av, static_cast<std::uint64_t>(nq) * nk * cz);
            counter->add(Stage::out_projection, cz2 * nq);
            if (sel)
                counter->add_sparse_window(nq, nk);
            else
                counter->add_dense_window(nq);
        }
    });
    if (counter)
        counter->add(Stage::global_tokens, static_cast<std::uint64_t>(T) * ph * pw * (9 * cz + 2 * cz * cz));
    return out;
}

/// Feed-forward half of a layer applied to every token: x + W2 gelu(W1 norm(x)).
inline Tensor ffn_stage(const Tensor& x, const LayerWeights& w, FlopsCounter* counter = nullptr) {
    const std::size_t cz = w.token_channels(), hid = w.hidden();
    require(x.shape().back() == cz, "ffn: token channels differ from layer weights");
    const std::size_t tokens = x.size() / cz;
    Tensor out = x;
    parallel_for(x.dim(0), [&](std::size_t t) {
        const std::size_t per = tokens / x.dim(0);
        std::vector<float> normed(cz), hidden(hid), back(cz);
        for (std::size_t i = 0; i < per; ++i) {
            float* row = out.data() + (t * per + i) * cz;
            ops::layer_norm_rows({row, cz}, cz, w.norm2_gamma, w.norm2_beta, normed);
            ops::linear_rows(normed, 1, w.ffn1_weight, w.ffn1_bias, hidden);
            for (float& v : hidden) v = ops::gelu(v);
            ops::linear_rows(hidden, 1, w.ffn2_weight, w.ffn2_bias, back);
            for (std::size_t d = 0; d < cz; ++d) row[d] += back[d];
        }
    });
    if (counter) counter->add(Stage::ffn, static_cast<std::uint64_t>(tokens) * 2 * cz * hid);
    return out;
}

/// One full layer on a token grid [T,M,N,Cz].
inline Tensor sparse_attention(const Tensor& z, const SparsityPlan& plan, const LayerWeights& w,
                               const WindowGeometry& g, FlopsCounter* counter = nullptr) {
    return ffn_stage(attention_stage(z, plan, w, g, counter), w, counter);
}

struct BsstResult {
    Tensor features;       // [T,H,W,C]
    Tensor downsampled;    // B-down [T,M,N]
    Tensor window_levels;  // U [T,m,n]
    std::vector<SparsityPlan> plans;
    WindowGeometry geometry;
};

/// The layer stack. Features [T,H,W,C] and blur maps [T,H,W] are reflect-padded so the patch
/// grid divides into windows; each layer re-splits the features, attends, and composes back.
inline BsstResult bsst_stack(const Tensor& features, const Tensor& blur, const ModelConfig& cfg,
                             const std::vector<LayerWeights>& layers, FlopsCounter* counter = nullptr) {
    require(features.rank() == 4, "bsst_stack: features must be [T,H,W,C], got " + shape_str(features.shape()));
    require(!layers.empty(), "bsst_stack: need at least one layer");
    const std::size_t T = features.dim(0), H = features.dim(1), W = features.dim(2), C = features.dim(3);
    require(blur.shape() == Shape{T, H, W}, "bsst_stack: blur maps " + shape_str(blur.shape()) +
                                                " do not match features " + shape_str(features.shape()));
    require(C * cfg.patch * cfg.patch == layers.front().token_channels(),
            "bsst_stack: p*p*C does not match the layer token channels");

    BsstResult res;
    res.geometry = geometry_for_features(cfg, T, H, W);
    const WindowGeometry& g = res.geometry;
    const std::size_t Hp = g.grid_h * cfg.stride, Wp = g.grid_w * cfg.stride;

    std::vector<Tensor> padded_blur, padded_feat;
    for (std::size_t t = 0; t < T; ++t) {
        padded_blur.push_back(ops::reflect_pad_to(blur.frame(t), Hp, Wp));
        padded_feat.push_back(ops::reflect_pad_to(features.frame(t), Hp, Wp));
    }
    res.downsampled = downsample_blur(stack(padded_blur), cfg.patch, cfg.stride);
    res.window_levels = window_levels(res.downsampled, g.window_h, g.window_w);

    Tensor current = stack(padded_feat);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        SparsityPlan plan = cfg.mode == AttentionMode::dense
                                ? dense_plan(T, g.windows_y(), g.windows_x())
                                : build_plan(res.window_levels, cfg.theta, cfg.k_q, cfg.k_kv, cfg.layer_parity(l));
        const Tensor z = tokenize(current, cfg.patch, cfg.stride);
        const Tensor updated = sparse_attention(z, plan, layers[l], g, counter);
        current = detokenize(updated, cfg.patch, cfg.stride, Hp, Wp);
        res.plans.push_back(std::move(plan));
    }

    std::vector<Tensor> cropped;
    for (std::size_t t = 0; t < T; ++t) cropped.push_back(ops::crop_to(current.frame(t), H, W));
    res.features = stack(cropped);
    return res;
}

}  // namespace bsst
