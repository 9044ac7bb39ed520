#include <gtest/gtest.h>

#include <cmath>

#include "bsst/tensor_ops.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using bsst::ContractError;
using bsst::Tensor;
using testutil::random_tensor;
namespace ops = bsst::ops;

TEST(BackwardWarp, ZeroFlowIsBitExactIdentity) {
    const Tensor f = random_tensor({9, 7, 3}, 1, -100.0f, 100.0f);
    EXPECT_EQ(ops::backward_warp(f, Tensor({9, 7, 2})), f);
}

TEST(BackwardWarp, IntegerShiftMovesPixel) {
    Tensor f({6, 6, 1});
    f(2, 3, 0) = 5.0f;  // row 2, column 3
    Tensor flow({6, 6, 2});
    for (std::size_t y = 0; y < 6; ++y)
        for (std::size_t x = 0; x < 6; ++x) flow(y, x, 0) = -1.0f;
    const Tensor out = ops::backward_warp(f, flow);
    EXPECT_EQ(out(2, 4, 0), 5.0f);
    EXPECT_EQ(out(2, 3, 0), 0.0f);
    EXPECT_EQ(out(2, 0, 0), 0.0f);  // sampled outside on the left: zero
}

TEST(BackwardWarp, MatchesBilinearOracle) {
    for (std::uint32_t seed = 0; seed < 5; ++seed) {
        const Tensor f = random_tensor({8, 8, 2}, seed);
        const Tensor flow = random_tensor({8, 8, 2}, 100 + seed, -2.0f, 2.0f);
        const Tensor got = ops::backward_warp(f, flow);
        const auto want = oracle::warp(oracle::Arr(f), oracle::Arr(flow));
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data()[i], want.v[i], 1e-6);
    }
}

TEST(BackwardWarp, ShapeMismatchThrows) {
    EXPECT_THROW(ops::backward_warp(Tensor({4, 4, 1}), Tensor({4, 5, 2})), ContractError);
    EXPECT_THROW(ops::backward_warp(Tensor({4, 4, 1}), Tensor({4, 4, 3})), ContractError);
}

TEST(BackwardWarp, FarOutOfRangeFlowGivesZero) {
    const Tensor f = random_tensor({4, 4, 1}, 3);
    const Tensor flow({4, 4, 2}, 1e30f);
    const Tensor out = ops::backward_warp(f, flow);
    for (float v : out.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Pooling, SmallExamples) {
    const Tensor ones({2, 2}, 1.0f);
    EXPECT_EQ(ops::avg_pool2d(ones, 2, 2), Tensor({1, 1}, 1.0f));
    const Tensor x({2, 2}, {0, 2, 4, 6});
    EXPECT_EQ(ops::avg_pool2d(x, 2, 2)(0, 0), 3.0f);
    EXPECT_EQ(ops::max_pool2d(x, 2, 2)(0, 0), 6.0f);
    const Tensor c({5, 7}, 0.25f);
    const Tensor m = ops::max_pool2d(c, 3, 2);
    for (float v : m.values()) EXPECT_EQ(v, 0.25f);
}

TEST(Pooling, MatchesNestedLoopOracle) {
    const Tensor a = random_tensor({16, 16}, 7);
    const Tensor got = ops::avg_pool2d(a, 4, 2);
    const auto want = oracle::pool(oracle::Arr(a), 4, 2, false);
    ASSERT_EQ(got.shape(), want.shape);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data()[i], want.v[i], 1e-6);

    const Tensor b = random_tensor({12, 12}, 8);
    const Tensor gm = ops::max_pool2d(b, 3, 3);
    const auto wm = oracle::pool(oracle::Arr(b), 3, 3, true);
    ASSERT_EQ(gm.shape(), wm.shape);
    for (std::size_t i = 0; i < gm.size(); ++i) EXPECT_EQ(gm.data()[i], static_cast<float>(wm.v[i]));
}

TEST(Pooling, TruncatedEdgeWindowsAverageValidPixels) {
    // 5 wide, kernel 4, stride 2: windows start at 0, 2, 4; the last covers only column 4.
    const Tensor x({1, 5}, {1, 2, 3, 4, 10});
    EXPECT_THROW(ops::avg_pool2d(x, 4, 2), ContractError);  // kernel taller than the map
    const Tensor y({4, 5}, 1.0f);
    const Tensor out = ops::avg_pool2d(y, 4, 2);
    EXPECT_EQ(out.shape(), (bsst::Shape{2, 3}));
    for (float v : out.values()) EXPECT_EQ(v, 1.0f);
}

TEST(Pooling, KernelLargerThanInputThrows) {
    EXPECT_THROW(ops::max_pool2d(Tensor({3, 3}), 4, 1), ContractError);
    EXPECT_THROW(ops::avg_pool2d(Tensor({3, 8}), 4, 1), ContractError);
}

TEST(Softmax, Examples) {
    const Tensor s = ops::softmax_rows(Tensor({1, 3}));
    for (float v : s.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-7);
    const Tensor big = ops::softmax_rows(Tensor({1, 2}, {1000.0f, 0.0f}));
    EXPECT_NEAR(big(0, 0), 1.0, 1e-6);
    EXPECT_NEAR(big(0, 1), 0.0, 1e-6);
    // exp(k) / (e + e^2 + e^3) in long double.
    const Tensor r = ops::softmax_rows(Tensor({1, 3}, {1, 2, 3}));
    const long double den = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(r(0, k), static_cast<double>(std::exp(static_cast<long double>(k + 1)) / den), 1e-7);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
    const Tensor x = random_tensor({6, 11}, 4, -20.0f, 20.0f);
    Tensor shifted = x;
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t k = 0; k < 11; ++k) shifted(r, k) += static_cast<float>(r) * 3.5f;
    const Tensor a = ops::softmax_rows(x), b = ops::softmax_rows(shifted);
    for (std::size_t r = 0; r < 6; ++r) {
        double sum = 0.0;
        for (std::size_t k = 0; k < 11; ++k) {
            EXPECT_GE(a(r, k), 0.0f);
            sum += a(r, k);
            EXPECT_NEAR(a(r, k), b(r, k), 1e-6);
        }
        EXPECT_NEAR(sum, 1.0, 1e-6);
    }
}

TEST(Linear, Examples) {
    const Tensor x = random_tensor({3, 4}, 2);
    Tensor eye({4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0f;
    EXPECT_EQ(ops::linear(x, eye, Tensor({4})), x);
    const Tensor y = ops::linear(Tensor({2}, {1, 2}), Tensor({1, 2}, {1, 1}), Tensor({1}));
    EXPECT_EQ(y(0), 3.0f);
    EXPECT_THROW(ops::linear(x, Tensor({2, 3}), Tensor({2})), ContractError);
}

TEST(Linear, MatchesMatmulOracle) {
    const Tensor x = random_tensor({2, 5, 7}, 11);
    const Tensor w = random_tensor({3, 7}, 12), b = random_tensor({3}, 13);
    const Tensor got = ops::linear(x, w, b);
    const auto want = oracle::matmul_bias(oracle::Arr(x), 10, oracle::Arr(w), oracle::Arr(b));
    EXPECT_EQ(got.shape(), (bsst::Shape{2, 5, 3}));
    EXPECT_LT(oracle::rel_err(got, want), 1e-6);
}

TEST(Conv2d, MatchesOracleWithStrideAndPadding) {
    const Tensor x = random_tensor({9, 10, 3}, 20);
    const Tensor w = random_tensor({4, 3, 3, 3}, 21), b = random_tensor({4}, 22);
    for (std::size_t stride : {1, 2})
        for (std::size_t pad : {0, 1}) {
            const Tensor got = bsst::ops::conv2d(x, w, b, stride, pad);
            const auto want = oracle::conv(oracle::Arr(x), oracle::Arr(w), oracle::Arr(b), stride, pad);
            ASSERT_EQ(got.shape(), want.shape);
            EXPECT_LT(oracle::rel_err(got, want), 1e-6);
        }
}

TEST(DepthwiseConv, Examples) {
    const Tensor x = random_tensor({6, 5, 3}, 30);
    Tensor delta({3, 3, 3});
    for (std::size_t c = 0; c < 3; ++c) delta(1, 1, c) = 1.0f;
    EXPECT_EQ(ops::depthwise_conv2d(x, delta, 1), x);

    const Tensor c({5, 5, 2}, 0.5f);
    const Tensor out = ops::depthwise_conv2d(c, Tensor({3, 3, 2}, 1.0f), 1);
    EXPECT_FLOAT_EQ(out(2, 2, 0), 4.5f);
    EXPECT_FLOAT_EQ(out(0, 0, 1), 2.0f);  // corner sees four pixels
}

TEST(DepthwiseConv, MatchesOracleAndChannelsStaySeparate) {
    const Tensor x = random_tensor({8, 8, 4}, 31), k = random_tensor({3, 3, 4}, 32);
    for (std::size_t stride : {1, 2, 3}) {
        const Tensor got = ops::depthwise_conv2d(x, k, stride);
        const std::size_t pad = stride == 1 ? 1 : 0;
        const auto want = oracle::depthwise(oracle::Arr(x), oracle::Arr(k), stride, stride, pad, pad);
        ASSERT_EQ(got.shape(), want.shape);
        EXPECT_LT(oracle::rel_err(got, want), 1e-6);
    }
    Tensor bumped = x;
    bumped(4, 4, 2) += 1.0f;
    const Tensor a = ops::depthwise_conv2d(x, k, 1), b = ops::depthwise_conv2d(bumped, k, 1);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t xx = 0; xx < 8; ++xx)
            for (std::size_t c : {0, 1, 3}) EXPECT_EQ(a(y, xx, c), b(y, xx, c));
    EXPECT_THROW(ops::depthwise_conv2d(x, Tensor({3, 3, 3}), 1), ContractError);
    EXPECT_THROW(ops::depthwise_conv2d(x, Tensor({2, 2, 4}), 1), ContractError);
}

namespace {

Tensor delta_kernel(std::size_t c, std::size_t k) {
    Tensor w({c, c, k, k});
    for (std::size_t i = 0; i < c; ++i) w(i, i, k / 2, k / 2) = 1.0f;
    return w;
}

}  // namespace

TEST(DeformConv, ZeroOffsetsUnitMaskDeltaKernelIsIdentity) {
    const Tensor x = random_tensor({7, 6, 3}, 40);
    const Tensor out = ops::deform_conv2d(x, Tensor({7, 6, 18}), Tensor({7, 6, 9}, 1.0f), delta_kernel(3, 3), 1);
    EXPECT_LT(oracle::max_abs_diff(out, x), 1e-6);
}

TEST(DeformConv, IntegerOffsetEqualsShift) {
    const Tensor x = random_tensor({6, 6, 2}, 41);
    Tensor off({6, 6, 18});
    Tensor flow({6, 6, 2});
    for (std::size_t y = 0; y < 6; ++y)
        for (std::size_t xx = 0; xx < 6; ++xx) {
            for (std::size_t t = 0; t < 9; ++t) {
                off(y, xx, 2 * t) = 2.0f;
                off(y, xx, 2 * t + 1) = -1.0f;
            }
            flow(y, xx, 0) = 2.0f;
            flow(y, xx, 1) = -1.0f;
        }
    const Tensor out = ops::deform_conv2d(x, off, Tensor({6, 6, 9}, 1.0f), delta_kernel(2, 3), 1);
    EXPECT_LT(oracle::max_abs_diff(out, ops::backward_warp(x, flow)), 1e-6);
}

TEST(DeformConv, ZeroOffsetsUnitMaskEqualsConv) {
    const Tensor x = random_tensor({8, 9, 4}, 42);
    const Tensor w = random_tensor({5, 4, 3, 3}, 43);
    const Tensor got = ops::deform_conv2d(x, Tensor({8, 9, 36}), Tensor({8, 9, 18}, 1.0f), w, 2);
    const auto want = oracle::conv(oracle::Arr(x), oracle::Arr(w), oracle::Arr(), 1, 1);
    EXPECT_LT(oracle::rel_err(got, want), 1e-5);
}

TEST(DeformConv, MatchesTapByTapOracle) {
    for (std::size_t groups : {1, 2}) {
        const Tensor x = random_tensor({8, 8, 2}, 44);
        const Tensor off = random_tensor({8, 8, 18 * groups}, 45, -2.5f, 2.5f);
        const Tensor mask = random_tensor({8, 8, 9 * groups}, 46, 0.0f, 1.0f);
        const Tensor w = random_tensor({3, 2, 3, 3}, 47);
        const Tensor got = ops::deform_conv2d(x, off, mask, w, groups);
        const auto want = oracle::deform(oracle::Arr(x), oracle::Arr(off), oracle::Arr(mask), oracle::Arr(w), groups);
        EXPECT_LT(oracle::rel_err(got, want), 1e-5);
    }
}

TEST(DeformConv, ShapeErrors) {
    const Tensor x({4, 4, 2});
    EXPECT_THROW(ops::deform_conv2d(x, Tensor({4, 4, 17}), Tensor({4, 4, 9}), delta_kernel(2, 3), 1), ContractError);
    EXPECT_THROW(ops::deform_conv2d(x, Tensor({4, 4, 18}), Tensor({4, 3, 9}), delta_kernel(2, 3), 1), ContractError);
    EXPECT_THROW(ops::deform_conv2d(x, Tensor({4, 4, 18}), Tensor({4, 4, 9}), delta_kernel(2, 3), 3), ContractError);
}

TEST(SoftSplit, UnitPatchIsReshape) {
    const Tensor x = random_tensor({5, 4, 3}, 50);
    const Tensor z = ops::soft_split(x, 1, 1);
    EXPECT_EQ(z.shape(), (bsst::Shape{5, 4, 3}));
    EXPECT_EQ(z.storage(), x.storage());
}

TEST(SoftSplit, RampByHand) {
    // 4x4 ramp v = 4y + x; grid ceil(4/2) = 2; rows/cols 4 and 5 reflect to 2 and 1.
    Tensor x({4, 4, 1});
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t xx = 0; xx < 4; ++xx) x(y, xx, 0) = static_cast<float>(4 * y + xx);
    const Tensor z = ops::soft_split(x, 4, 2);
    ASSERT_EQ(z.shape(), (bsst::Shape{2, 2, 16}));
    const float p00[16] = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
    const float p01[16] = {2, 3, 2, 1, 6, 7, 6, 5, 10, 11, 10, 9, 14, 15, 14, 13};
    const float p10[16] = {8, 9, 10, 11, 12, 13, 14, 15, 8, 9, 10, 11, 4, 5, 6, 7};
    const float p11[16] = {10, 11, 10, 9, 14, 15, 14, 13, 10, 11, 10, 9, 6, 7, 6, 5};
    for (int e = 0; e < 16; ++e) {
        EXPECT_EQ(z(0, 0, e), p00[e]);
        EXPECT_EQ(z(0, 1, e), p01[e]);
        EXPECT_EQ(z(1, 0, e), p10[e]);
        EXPECT_EQ(z(1, 1, e), p11[e]);
    }
}

TEST(SoftSplit, ConstantInputAndOracle) {
    const Tensor c({6, 6, 2}, 1.5f);
    const Tensor zc = ops::soft_split(c, 4, 2);
    for (float v : zc.values()) EXPECT_EQ(v, 1.5f);
    const Tensor x = random_tensor({7, 9, 3}, 51);
    const Tensor got = ops::soft_split(x, 4, 2);
    const auto want = oracle::split(oracle::Arr(x), 4, 2);
    ASSERT_EQ(got.shape(), want.shape);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got.data()[i], static_cast<float>(want.v[i]));
    EXPECT_THROW(ops::soft_split(x, 1, 2), ContractError);
}

TEST(SoftComposition, RoundTripIdentity) {
    for (auto [p, s] : {std::pair<std::size_t, std::size_t>{4, 2}, {2, 1}, {1, 1}, {3, 2}, {4, 4}, {5, 3}})
        for (auto [H, W] : {std::pair<std::size_t, std::size_t>{32, 32}, {7, 13}, {1, 5}}) {
            const Tensor x = random_tensor({H, W, 4}, static_cast<std::uint32_t>(p * 100 + s * 10 + H));
            const Tensor back = ops::soft_composition(ops::soft_split(x, p, s), p, s, H, W);
            EXPECT_LT(oracle::max_abs_diff(back, x), 1e-6) << "p=" << p << " s=" << s << " H=" << H << " W=" << W;
        }
}

TEST(SoftComposition, OverlapAveragesAndTilingInverse) {
    // p = 2, s = 1 over a 1x3 output; entries are (py, px) and row py = 1 falls off the map.
    // Patch j covers x = j, j+1, so x = 1 gets a = 4 from patch 0 and b = 10 from patch 1.
    Tensor z({1, 3, 4});
    z(0, 0, 0) = 1.0f;
    z(0, 0, 1) = 4.0f;
    z(0, 1, 0) = 10.0f;
    z(0, 1, 1) = 7.0f;
    z(0, 2, 0) = 7.0f;
    const Tensor out = ops::soft_composition(z, 2, 1, 1, 3);
    EXPECT_FLOAT_EQ(out(0, 1, 0), 7.0f);  // (4 + 10) / 2
    EXPECT_FLOAT_EQ(out(0, 0, 0), 1.0f);
    EXPECT_FLOAT_EQ(out(0, 2, 0), 7.0f);

    const Tensor x = random_tensor({8, 8, 2}, 52);
    const Tensor tiles = ops::soft_split(x, 2, 2);
    EXPECT_EQ(ops::soft_composition(tiles, 2, 2, 8, 8), x);
    const auto want = oracle::compose(oracle::Arr(tiles), 2, 2, 8, 8);
    EXPECT_LT(oracle::rel_err(ops::soft_composition(tiles, 2, 2, 8, 8), want), 1e-7);
    EXPECT_THROW(ops::soft_composition(tiles, 2, 2, 9, 9), ContractError);
}

TEST(Elementwise, NormAndActivations) {
    const Tensor x = random_tensor({5, 6}, 60, -3.0f, 3.0f);
    const Tensor g = random_tensor({6}, 61), b = random_tensor({6}, 62);
    const Tensor y = ops::layer_norm(x, g, b);
    for (std::size_t r = 0; r < 5; ++r) {
        const auto want = oracle::layer_norm(oracle::Arr(x.frame(r)).v.data(), 6, oracle::Arr(g), oracle::Arr(b));
        for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(y(r, i), want[i], 1e-5);
    }
    for (float v : {-4.0f, -0.5f, 0.0f, 0.7f, 3.0f}) EXPECT_NEAR(ops::gelu(v), oracle::gelu(v), 1e-6);
    EXPECT_EQ(ops::sigmoid(-1e4f), 0.0f);
    EXPECT_EQ(ops::leaky_relu(-2.0f), -0.2f);
    const Tensor up = ops::upsample_nearest2x(Tensor({1, 2, 1}, {1, 2}));
    EXPECT_EQ(up, Tensor({2, 4, 1}, {1, 1, 2, 2, 1, 1, 2, 2}));
}

TEST(Finiteness, OpsKeepFiniteInputsFinite) {
    const Tensor x = random_tensor({8, 8, 4}, 70, -50.0f, 50.0f);
    const Tensor flow = random_tensor({8, 8, 2}, 71, -20.0f, 20.0f);
    EXPECT_TRUE(ops::all_finite(ops::backward_warp(x, flow)));
    EXPECT_TRUE(ops::all_finite(ops::soft_composition(ops::soft_split(x, 4, 2), 4, 2, 8, 8)));
    EXPECT_TRUE(ops::all_finite(ops::softmax_rows(random_tensor({3, 9}, 72, -80.0f, 80.0f))));
    EXPECT_TRUE(ops::all_finite(ops::deform_conv2d(x, random_tensor({8, 8, 18}, 73, -9.0f, 9.0f),
                                                   random_tensor({8, 8, 9}, 74, 0.0f, 1.0f),
                                                   random_tensor({2, 4, 3, 3}, 75), 1)));
}

TEST(ReflectPad, MirrorsWithoutEdgeRepeat) {
    const Tensor x({1, 3, 1}, {1, 2, 3});
    const Tensor p = ops::reflect_pad_to(x, 1, 6);
    EXPECT_EQ(p, Tensor({1, 6, 1}, {1, 2, 3, 2, 1, 2}));
    EXPECT_EQ(ops::crop_to(p, 1, 3), x);
}
