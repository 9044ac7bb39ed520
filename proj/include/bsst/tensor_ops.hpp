#pragma once

// Dense forward kernels shared by the propagation and attention stages.
// Layout conventions: images are [H, W, C] (channels last), conv weights are
// [Cout, Cin, k, k], and every op is a pure function of its arguments.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "bsst/tensor.hpp"

namespace bsst::ops {

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* name) {
    require(t.rank() == rank, std::string(op) + ": " + name + " must have rank " + std::to_string(rank) +
                                  ", got " + shape_str(t.shape()));
}

/// Zero-padded bilinear sample of all channels of `img` [H,W,C] at (x, y), accumulated
/// into `out` scaled by `scale`.
inline void bilinear_accumulate(const Tensor& img, float x, float y, std::size_t c0, std::size_t cn,
                                float scale, float* out) {
    const long H = static_cast<long>(img.dim(0));
    const long W = static_cast<long>(img.dim(1));
    const std::size_t C = img.dim(2);
    if (!(x > -1.0f && y > -1.0f && x < static_cast<float>(W) && y < static_cast<float>(H))) return;
    const float fx = std::floor(x);
    const float fy = std::floor(y);
    const long x0 = static_cast<long>(fx);
    const long y0 = static_cast<long>(fy);
    const float lx = x - fx;
    const float ly = y - fy;
    const float* base = img.data();
    auto corner = [&](long yy, long xx, float w) {
        if (w == 0.0f || yy < 0 || yy >= H || xx < 0 || xx >= W) return;
        const float* px = base + (static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)) * C + c0;
        const float sw = scale * w;
        for (std::size_t c = 0; c < cn; ++c) out[c] += sw * px[c];
    };
    corner(y0, x0, (1.0f - ly) * (1.0f - lx));
    corner(y0, x0 + 1, (1.0f - ly) * lx);
    corner(y0 + 1, x0, ly * (1.0f - lx));
    corner(y0 + 1, x0 + 1, ly * lx);
}

}  // namespace detail

/// Index into [0, n) by mirroring about the edges without repeating them (reflect padding).
inline std::size_t mirror_index(long i, std::size_t n) {
    if (n == 1) return 0;
    const long period = 2 * (static_cast<long>(n) - 1);
    long m = i % period;
    if (m < 0) m += period;
    return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - m);
}

/// Samples `feature` [H,W,C] at (x + u, y + v) for each pixel with bilinear weights and zero padding.
inline Tensor backward_warp(const Tensor& feature, const Flow& flow) {
    detail::require_rank(feature, 3, "backward_warp", "feature");
    detail::require_rank(flow, 3, "backward_warp", "flow");
    require(flow.dim(0) == feature.dim(0) && flow.dim(1) == feature.dim(1) && flow.dim(2) == 2,
            "backward_warp: flow " + shape_str(flow.shape()) + " does not match feature " +
                shape_str(feature.shape()));
    const std::size_t H = feature.dim(0), W = feature.dim(1), C = feature.dim(2);
    Tensor out(feature.shape());
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const float sx = static_cast<float>(x) + flow(y, x, 0);
            const float sy = static_cast<float>(y) + flow(y, x, 1);
            float* dst = &out(y, x, 0);
            // Integer displacement: copy without interpolation so the result is bit-exact.
            if (sx == std::floor(sx) && sy == std::floor(sy)) {
                if (!(sx >= 0.0f && sy >= 0.0f && sx < static_cast<float>(W) && sy < static_cast<float>(H))) continue;
                const float* src = &feature(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), 0);
                std::copy(src, src + C, dst);
                continue;
            }
            detail::bilinear_accumulate(feature, sx, sy, 0, C, 1.0f, dst);
        }
    }
    return out;
}

namespace detail {

inline std::size_t pooled_extent(std::size_t n, std::size_t stride) { return (n + stride - 1) / stride; }

template <typename Reduce>
Tensor pool2d(const Tensor& x, std::size_t kernel, std::size_t stride, const char* op, Reduce reduce) {
    require_rank(x, 2, op, "input");
    require(kernel >= 1 && stride >= 1, std::string(op) + ": kernel and stride must be >= 1");
    const std::size_t H = x.dim(0), W = x.dim(1);
    require(kernel <= H && kernel <= W, std::string(op) + ": kernel " + std::to_string(kernel) +
                                            " exceeds input " + shape_str(x.shape()));
    const std::size_t M = pooled_extent(H, stride), N = pooled_extent(W, stride);
    Tensor out({M, N});
    for (std::size_t i = 0; i < M; ++i) {
        const std::size_t y0 = i * stride, y1 = std::min(H, y0 + kernel);
        for (std::size_t j = 0; j < N; ++j) {
            const std::size_t x0 = j * stride, x1 = std::min(W, x0 + kernel);
            out(i, j) = reduce(x, y0, y1, x0, x1);
        }
    }
    return out;
}

}  // namespace detail

/// Output grid of the pooling ops: one window per stride step that starts inside the input.
inline std::size_t pooled_size(std::size_t n, std::size_t stride) { return detail::pooled_extent(n, stride); }

/// Mean over each kernel window; windows running past the edge average only their valid pixels.
inline Tensor avg_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
    return detail::pool2d(x, kernel, stride, "avg_pool2d",
                          [](const Tensor& t, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1) {
                              float sum = 0.0f;
                              for (std::size_t y = y0; y < y1; ++y)
                                  for (std::size_t xx = x0; xx < x1; ++xx) sum += t(y, xx);
                              return sum / static_cast<float>((y1 - y0) * (x1 - x0));
                          });
}

inline Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
    return detail::pool2d(x, kernel, stride, "max_pool2d",
                          [](const Tensor& t, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1) {
                              float best = -std::numeric_limits<float>::infinity();
                              for (std::size_t y = y0; y < y1; ++y)
                                  for (std::size_t xx = x0; xx < x1; ++xx) best = std::max(best, t(y, xx));
                              return best;
                          });
}

/// In-place max-subtracted softmax of one row.
inline void softmax_inplace(std::span<float> row) {
    if (row.empty()) return;
    const float mx = *std::max_element(row.begin(), row.end());
    float sum = 0.0f;
    for (float& v : row) {
        v = std::exp(v - mx);
        sum += v;
    }
    const float inv = 1.0f / sum;
    for (float& v : row) v *= inv;
}

inline Tensor softmax_rows(const Tensor& x) {
    detail::require_rank(x, 2, "softmax_rows", "input");
    Tensor out = x;
    const std::size_t K = x.dim(1);
    for (std::size_t r = 0; r < x.dim(0); ++r) softmax_inplace({out.data() + r * K, K});
    return out;
}

/// y = x W^T + b along the last axis. `x` rows are contiguous Cin-vectors.
inline void linear_rows(std::span<const float> x, std::size_t rows, const Tensor& weight, const Tensor& bias,
                        std::span<float> y) {
    const std::size_t cout = weight.dim(0), cin = weight.dim(1);
    const float* w = weight.data();
    const float* b = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const float* xr = x.data() + r * cin;
        float* yr = y.data() + r * cout;
        for (std::size_t o = 0; o < cout; ++o) {
            const float* wo = w + o * cin;
            float acc = 0.0f;
            for (std::size_t i = 0; i < cin; ++i) acc += wo[i] * xr[i];
            yr[o] = acc + b[o];
        }
    }
}

inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    detail::require_rank(weight, 2, "linear", "weight");
    detail::require_rank(bias, 1, "linear", "bias");
    require(x.rank() >= 1 && x.shape().back() == weight.dim(1),
            "linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape()));
    require(bias.dim(0) == weight.dim(0), "linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                                              shape_str(weight.shape()));
    Shape shape = x.shape();
    shape.back() = weight.dim(0);
    Tensor out(shape);
    linear_rows(x.values(), x.size() / weight.dim(1), weight, bias, out.values());
    return out;
}

/// Dense 2-D convolution with zero padding. x [H,W,Cin], weight [Cout,Cin,k,k], bias [Cout] or empty.
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t pad) {
    detail::require_rank(x, 3, "conv2d", "input");
    detail::require_rank(weight, 4, "conv2d", "weight");
    require(weight.dim(1) == x.dim(2) && weight.dim(2) == weight.dim(3),
            "conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
    require(bias.empty() || (bias.rank() == 1 && bias.dim(0) == weight.dim(0)), "conv2d: bias shape mismatch");
    require(stride >= 1, "conv2d: stride must be >= 1");
    const std::size_t H = x.dim(0), W = x.dim(1), cin = x.dim(2);
    const std::size_t cout = weight.dim(0), k = weight.dim(2);
    require(H + 2 * pad >= k && W + 2 * pad >= k, "conv2d: kernel larger than padded input");
    const std::size_t Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;

    // Reorder weights to [ky, kx, Cout, Cin] so the inner loop walks contiguous memory.
    std::vector<float> wt(weight.size());
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t i = 0; i < cin; ++i)
            for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) wt[((ky * k + kx) * cout + o) * cin + i] = weight(o, i, ky, kx);

    Tensor out({Ho, Wo, cout});
    for (std::size_t oy = 0; oy < Ho; ++oy) {
        for (std::size_t ox = 0; ox < Wo; ++ox) {
            float* dst = &out(oy, ox, 0);
            if (!bias.empty()) std::copy(bias.data(), bias.data() + cout, dst);
            for (std::size_t ky = 0; ky < k; ++ky) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                if (iy < 0 || iy >= static_cast<long>(H)) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                    if (ix < 0 || ix >= static_cast<long>(W)) continue;
                    const float* src = &x(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), 0);
                    const float* wk = wt.data() + (ky * k + kx) * cout * cin;
                    for (std::size_t o = 0; o < cout; ++o) {
                        const float* wo = wk + o * cin;
                        float acc = 0.0f;
                        for (std::size_t i = 0; i < cin; ++i) acc += wo[i] * src[i];
                        dst[o] += acc;
                    }
                }
            }
        }
    }
    return out;
}

/// Per-channel convolution. x [H,W,C], kernels [k,k,C]. An axis with stride 1 is zero-padded by
/// k/2 ("same"); an axis with a larger stride uses valid windows only.
inline Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernels, std::size_t stride_y, std::size_t stride_x) {
    detail::require_rank(x, 3, "depthwise_conv2d", "input");
    detail::require_rank(kernels, 3, "depthwise_conv2d", "kernels");
    const std::size_t k = kernels.dim(0);
    require(kernels.dim(1) == k && k % 2 == 1, "depthwise_conv2d: kernel must be square with odd size, got " +
                                                   shape_str(kernels.shape()));
    require(kernels.dim(2) == x.dim(2), "depthwise_conv2d: kernel channels " + shape_str(kernels.shape()) +
                                            " do not match input " + shape_str(x.shape()));
    require(stride_y >= 1 && stride_x >= 1, "depthwise_conv2d: stride must be >= 1");
    const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
    const std::size_t pad_y = stride_y == 1 ? k / 2 : 0, pad_x = stride_x == 1 ? k / 2 : 0;
    require(H + 2 * pad_y >= k && W + 2 * pad_x >= k, "depthwise_conv2d: kernel larger than input " +
                                                          shape_str(x.shape()));
    const std::size_t Ho = (H + 2 * pad_y - k) / stride_y + 1, Wo = (W + 2 * pad_x - k) / stride_x + 1;
    Tensor out({Ho, Wo, C});
    for (std::size_t oy = 0; oy < Ho; ++oy) {
        for (std::size_t ox = 0; ox < Wo; ++ox) {
            float* dst = &out(oy, ox, 0);
            for (std::size_t ky = 0; ky < k; ++ky) {
                const long iy = static_cast<long>(oy * stride_y + ky) - static_cast<long>(pad_y);
                if (iy < 0 || iy >= static_cast<long>(H)) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const long ix = static_cast<long>(ox * stride_x + kx) - static_cast<long>(pad_x);
                    if (ix < 0 || ix >= static_cast<long>(W)) continue;
                    const float* src = &x(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), 0);
                    const float* kw = &kernels(ky, kx, 0);
                    for (std::size_t c = 0; c < C; ++c) dst[c] += kw[c] * src[c];
                }
            }
        }
    }
    return out;
}

inline Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernels, std::size_t stride) {
    return depthwise_conv2d(x, kernels, stride, stride);
}

/// Modulated deformable convolution, stride 1, zero padding k/2, no bias.
///
/// Input channels are split into `groups` contiguous blocks; block g uses its own offsets and mask.
/// offsets [H,W,2*k*k*G] are laid out as (g, tap, {dx, dy}) with tap = ky*k + kx; mask [H,W,k*k*G]
/// as (g, tap). Tap (ky,kx) of output pixel (y,x) samples at
/// (x + kx - k/2 + dx, y + ky - k/2 + dy) and is scaled by its mask value before the weighted sum.
inline Tensor deform_conv2d(const Tensor& x, const Tensor& offsets, const Tensor& mask, const Tensor& weight,
                            std::size_t groups) {
    detail::require_rank(x, 3, "deform_conv2d", "input");
    detail::require_rank(offsets, 3, "deform_conv2d", "offsets");
    detail::require_rank(mask, 3, "deform_conv2d", "mask");
    detail::require_rank(weight, 4, "deform_conv2d", "weight");
    const std::size_t H = x.dim(0), W = x.dim(1), cin = x.dim(2);
    const std::size_t cout = weight.dim(0), k = weight.dim(2), taps = k * k;
    require(groups >= 1 && cin % groups == 0, "deform_conv2d: input channels must divide into groups");
    require(weight.dim(1) == cin && weight.dim(3) == k && k % 2 == 1,
            "deform_conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " + shape_str(x.shape()));
    require(offsets.dim(0) == H && offsets.dim(1) == W && offsets.dim(2) == 2 * taps * groups,
            "deform_conv2d: offsets " + shape_str(offsets.shape()) + " do not match input/kernel geometry");
    require(mask.dim(0) == H && mask.dim(1) == W && mask.dim(2) == taps * groups,
            "deform_conv2d: mask " + shape_str(mask.shape()) + " does not match input/kernel geometry");
    const std::size_t cg = cin / groups;
    const long half = static_cast<long>(k / 2);

    // Weights as [Cout, tap, Cin] to match the sampled column layout below.
    std::vector<float> wt(weight.size());
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t i = 0; i < cin; ++i)
            for (std::size_t t = 0; t < taps; ++t) wt[(o * taps + t) * cin + i] = weight(o, i, t / k, t % k);

    Tensor out({H, W, cout});
    std::vector<float> column(taps * cin);
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t xx = 0; xx < W; ++xx) {
            std::fill(column.begin(), column.end(), 0.0f);
            const float* off = &offsets(y, xx, 0);
            const float* mk = &mask(y, xx, 0);
            for (std::size_t g = 0; g < groups; ++g) {
                for (std::size_t t = 0; t < taps; ++t) {
                    const std::size_t gt = g * taps + t;
                    const float m = mk[gt];
                    if (m == 0.0f) continue;
                    const float sx = static_cast<float>(static_cast<long>(xx) + static_cast<long>(t % k) - half) +
                                     off[2 * gt];
                    const float sy = static_cast<float>(static_cast<long>(y) + static_cast<long>(t / k) - half) +
                                     off[2 * gt + 1];
                    detail::bilinear_accumulate(x, sx, sy, g * cg, cg, m, column.data() + t * cin + g * cg);
                }
            }
            float* dst = &out(y, xx, 0);
            for (std::size_t o = 0; o < cout; ++o) {
                const float* wo = wt.data() + o * taps * cin;
                float acc = 0.0f;
                for (std::size_t i = 0; i < taps * cin; ++i) acc += wo[i] * column[i];
                dst[o] = acc;
            }
        }
    }
    return out;
}

/// Patch grid extent for soft_split: one patch per stride step, M = ceil(n / s).
inline std::size_t patch_grid(std::size_t n, std::size_t stride) { return (n + stride - 1) / stride; }

/// Overlapping p x p patches at stride s. x [H,W,C] -> [M,N,p*p*C], each patch flattened as (py, px, c).
/// The bottom/right edges are reflect-padded so the last patch is complete.
inline Tensor soft_split(const Tensor& x, std::size_t p, std::size_t s) {
    detail::require_rank(x, 3, "soft_split", "input");
    require(s >= 1 && p >= s, "soft_split: patch size " + std::to_string(p) + " must be >= stride " +
                                  std::to_string(s) + " (and stride >= 1)");
    const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
    const std::size_t M = patch_grid(H, s), N = patch_grid(W, s);
    Tensor out({M, N, p * p * C});
    for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
            float* dst = &out(i, j, 0);
            for (std::size_t py = 0; py < p; ++py) {
                const std::size_t sy = mirror_index(static_cast<long>(i * s + py), H);
                for (std::size_t px = 0; px < p; ++px) {
                    const std::size_t sx = mirror_index(static_cast<long>(j * s + px), W);
                    const float* src = &x(sy, sx, 0);
                    std::copy(src, src + C, dst + (py * p + px) * C);
                }
            }
        }
    }
    return out;
}

/// Inverse of soft_split: sums overlapping patch entries per pixel and divides by the overlap
/// count. Entries landing in the padded margin are discarded.
inline Tensor soft_composition(const Tensor& patches, std::size_t p, std::size_t s, std::size_t H, std::size_t W) {
    detail::require_rank(patches, 3, "soft_composition", "patches");
    require(s >= 1 && p >= s, "soft_composition: patch size must be >= stride");
    require(H >= 1 && W >= 1, "soft_composition: empty output geometry");
    const std::size_t M = patches.dim(0), N = patches.dim(1);
    require(M == patch_grid(H, s) && N == patch_grid(W, s) && patches.dim(2) % (p * p) == 0,
            "soft_composition: patch grid " + shape_str(patches.shape()) + " inconsistent with output " +
                std::to_string(H) + "x" + std::to_string(W) + " at p=" + std::to_string(p) +
                ", s=" + std::to_string(s));
    const std::size_t C = patches.dim(2) / (p * p);
    Tensor out({H, W, C});
    std::vector<float> count(H * W, 0.0f);
    for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
            const float* src = &patches(i, j, 0);
            for (std::size_t py = 0; py < p; ++py) {
                const std::size_t y = i * s + py;
                if (y >= H) break;
                for (std::size_t px = 0; px < p; ++px) {
                    const std::size_t xx = j * s + px;
                    if (xx >= W) break;
                    float* dst = &out(y, xx, 0);
                    const float* e = src + (py * p + px) * C;
                    for (std::size_t c = 0; c < C; ++c) dst[c] += e[c];
                    count[y * W + xx] += 1.0f;
                }
            }
        }
    }
    for (std::size_t q = 0; q < H * W; ++q) {
        const float n = count[q];
        float* dst = out.data() + q * C;
        for (std::size_t c = 0; c < C; ++c) dst[c] /= n;
    }
    return out;
}

/// Reflect-pads an [H,W,...] tensor at the bottom and right to (Ht, Wt).
inline Tensor reflect_pad_to(const Tensor& x, std::size_t Ht, std::size_t Wt) {
    require(x.rank() >= 2, "reflect_pad_to: rank must be >= 2");
    const std::size_t H = x.dim(0), W = x.dim(1);
    require(Ht >= H && Wt >= W, "reflect_pad_to: target smaller than input");
    if (Ht == H && Wt == W) return x;
    const std::size_t inner = x.size() / (H * W);
    Shape shape = x.shape();
    shape[0] = Ht;
    shape[1] = Wt;
    Tensor out(shape);
    for (std::size_t y = 0; y < Ht; ++y) {
        const std::size_t sy = mirror_index(static_cast<long>(y), H);
        for (std::size_t xx = 0; xx < Wt; ++xx) {
            const std::size_t sx = mirror_index(static_cast<long>(xx), W);
            const float* src = x.data() + (sy * W + sx) * inner;
            std::copy(src, src + inner, out.data() + (y * Wt + xx) * inner);
        }
    }
    return out;
}

/// Top-left crop of an [H,W,...] tensor.
inline Tensor crop_to(const Tensor& x, std::size_t Ht, std::size_t Wt) {
    require(x.rank() >= 2 && Ht <= x.dim(0) && Wt <= x.dim(1), "crop_to: target larger than input");
    const std::size_t W = x.dim(1);
    const std::size_t inner = x.size() / (x.dim(0) * W);
    Shape shape = x.shape();
    shape[0] = Ht;
    shape[1] = Wt;
    Tensor out(shape);
    for (std::size_t y = 0; y < Ht; ++y) {
        const float* src = x.data() + y * W * inner;
        std::copy(src, src + Wt * inner, out.data() + y * Wt * inner);
    }
    return out;
}

/// Concatenates [H,W,Ci] tensors along the channel axis.
inline Tensor concat_channels(std::initializer_list<const Tensor*> parts) {
    require(parts.size() > 0, "concat_channels: no inputs");
    const Tensor& first = **parts.begin();
    const std::size_t H = first.dim(0), W = first.dim(1);
    std::size_t C = 0;
    for (const Tensor* t : parts) {
        require(t->rank() == 3 && t->dim(0) == H && t->dim(1) == W,
                "concat_channels: " + shape_str(t->shape()) + " does not match " + shape_str(first.shape()));
        C += t->dim(2);
    }
    Tensor out({H, W, C});
    std::size_t c0 = 0;
    for (const Tensor* t : parts) {
        const std::size_t ci = t->dim(2);
        for (std::size_t q = 0; q < H * W; ++q)
            std::copy(t->data() + q * ci, t->data() + (q + 1) * ci, out.data() + q * C + c0);
        c0 += ci;
    }
    return out;
}

/// Normalizes each contiguous row of `dim` values to zero mean, unit variance, then applies gamma/beta.
inline void layer_norm_rows(std::span<const float> x, std::size_t dim, const Tensor& gamma, const Tensor& beta,
                            std::span<float> y, float eps = 1e-5f) {
    const std::size_t rows = x.size() / dim;
    for (std::size_t r = 0; r < rows; ++r) {
        const float* xr = x.data() + r * dim;
        float* yr = y.data() + r * dim;
        float mean = 0.0f;
        for (std::size_t i = 0; i < dim; ++i) mean += xr[i];
        mean /= static_cast<float>(dim);
        float var = 0.0f;
        for (std::size_t i = 0; i < dim; ++i) var += (xr[i] - mean) * (xr[i] - mean);
        var /= static_cast<float>(dim);
        const float inv = 1.0f / std::sqrt(var + eps);
        for (std::size_t i = 0; i < dim; ++i) yr[i] = (xr[i] - mean) * inv * gamma.data()[i] + beta.data()[i];
    }
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f) {
    const std::size_t dim = x.shape().back();
    require(gamma.size() == dim && beta.size() == dim, "layer_norm: parameter size mismatch");
    Tensor out(x.shape());
    layer_norm_rows(x.values(), dim, gamma, beta, out.values(), eps);
    return out;
}

inline float gelu(float v) { return 0.5f * v * (1.0f + std::erf(v * 0.70710678118654752f)); }
inline float sigmoid(float v) { return 1.0f / (1.0f + std::exp(-v)); }
inline float leaky_relu(float v, float slope = 0.1f) { return v >= 0.0f ? v : slope * v; }

template <typename Fn>
Tensor map(Tensor x, Fn&& fn) {
    for (float& v : x.values()) v = fn(v);
    return x;
}

/// Nearest-neighbour x2 upsampling of [H,W,C].
inline Tensor upsample_nearest2x(const Tensor& x) {
    detail::require_rank(x, 3, "upsample_nearest2x", "input");
    const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
    Tensor out({2 * H, 2 * W, C});
    for (std::size_t y = 0; y < 2 * H; ++y)
        for (std::size_t xx = 0; xx < 2 * W; ++xx) {
            const float* src = &x(y / 2, xx / 2, 0);
            std::copy(src, src + C, &out(y, xx, 0));
        }
    return out;
}

inline bool all_finite(const Tensor& t) {
    return std::all_of(t.values().begin(), t.values().end(), [](float v) { return std::isfinite(v); });
}

}  // namespace bsst::ops
