#include <gtest/gtest.h>

#include "amfusion/gradcheck.hpp"
#include "amfusion/ops.hpp"
#include "amfusion/tensor.hpp"
#include "test_util.hpp"

using namespace amfusion;
using testutil::conv2d_naive;
using testutil::max_abs_diff;
using testutil::rand_tensor;

TEST(Tensor, ShapeAndValues) {
    Tensor t = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_FLOAT_EQ(t.values()[4], 5.0f);
    EXPECT_THROW(Tensor::from_values({2, 2}, {1, 2, 3}), ShapeError);
    EXPECT_THROW(Tensor::zeros({2, 0, 3}), ShapeError);
    EXPECT_THROW(t.item(), ShapeError);
    EXPECT_FLOAT_EQ(Tensor::scalar(7.0f).item(), 7.0f);
}

TEST(Tensor, GradBufferMatchesShape) {
    Tensor t = Tensor::zeros({3, 4}, true);
    EXPECT_EQ(t.grad().size(), t.numel());
    t.set_requires_grad(false);
    EXPECT_TRUE(t.grad().empty());
}

TEST(Tensor, CheckFinite) {
    Tensor t = Tensor::from_values({2}, {1.0f, std::nanf("")});
    EXPECT_THROW(t.check_finite("t"), NumericError);
}

TEST(Backward, SumGivesOnes) {
    Rng rng(1);
    Tensor x = rand_tensor(rng, {2, 3, 4, 4});
    x.set_requires_grad(true);
    Tape tape;
    backward(sum_all(x, &tape), tape);
    for (float g : x.grad()) EXPECT_FLOAT_EQ(g, 1.0f);
}

TEST(Backward, SumOfSquaresGivesTwoX) {
    Rng rng(2);
    Tensor x = rand_tensor(rng, {3, 5});
    x.set_requires_grad(true);
    Tape tape;
    backward(sum_all(mul(x, x, &tape), &tape), tape);
    for (std::size_t i = 0; i < x.numel(); ++i)
        EXPECT_NEAR(x.grad()[i], 2.0f * x.values()[i], 1e-6);
}

TEST(Backward, RequiresScalarLoss) {
    Tensor x = Tensor::zeros({2, 2}, true);
    Tape tape;
    EXPECT_THROW(backward(x, tape), ShapeError);
}

TEST(Conv2d, MatchesNaiveOracle) {
    Rng rng(3);
    for (int trial = 0; trial < 8; ++trial) {
        const int k = 2 * static_cast<int>(rng.next_below(3)) + 3;  // 3/5/7
        const int pad = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(k / 2 + 1)));
        const int stride = 1 + static_cast<int>(rng.next_below(2));
        Tensor x = rand_tensor(rng, {2, 3, 9, 9});
        Tensor w = rand_tensor(rng, {4, 3, k, k});
        Tensor b = rand_tensor(rng, {4});
        Tensor got = conv2d(x, w, b, stride, pad);
        Tensor want = conv2d_naive(x, w, b, stride, pad);
        ASSERT_EQ(got.shape(), want.shape());
        EXPECT_LT(max_abs_diff(got, want), 1e-5) << "k=" << k << " pad=" << pad;
    }
}

TEST(Conv2d, IdentityKernel) {
    Rng rng(4);
    Tensor x = rand_tensor(rng, {1, 1, 5, 5});
    Tensor w = Tensor::from_values({1, 1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
    Tensor b = Tensor::zeros({1});
    Tensor y = conv2d(x, w, b, 1, 1);
    EXPECT_EQ(y.shape(), x.shape());
    EXPECT_LT(max_abs_diff(y, x), 1e-7);
}

TEST(Conv2d, CountingKernelOnOnes) {
    // all-ones 3x3 kernel over an all-ones image counts the unpadded taps
    Tensor x = Tensor::full({1, 1, 4, 4}, 1.0f);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor b = Tensor::zeros({1});
    Tensor y = conv2d(x, w, b, 1, 1);
    EXPECT_FLOAT_EQ(y.at4(0, 0, 0, 0), 4.0f);   // corner
    EXPECT_FLOAT_EQ(y.at4(0, 0, 0, 1), 6.0f);   // edge
    EXPECT_FLOAT_EQ(y.at4(0, 0, 1, 1), 9.0f);   // interior
}

TEST(Conv2d, LinearInInput) {
    Rng rng(5);
    Tensor x1 = rand_tensor(rng, {1, 2, 6, 6});
    Tensor x2 = rand_tensor(rng, {1, 2, 6, 6});
    Tensor w = rand_tensor(rng, {3, 2, 3, 3});
    Tensor zb = Tensor::zeros({3});
    const float alpha = 0.7f, beta = -1.3f;
    Tensor mix = add(scale(x1, alpha), scale(x2, beta));
    Tensor lhs = conv2d(mix, w, zb, 1, 1);
    Tensor rhs = add(scale(conv2d(x1, w, zb, 1, 1), alpha),
                     scale(conv2d(x2, w, zb, 1, 1), beta));
    EXPECT_LT(max_abs_diff(lhs, rhs), 1e-5);
}

TEST(Conv2d, ShapeErrors) {
    Tensor x = Tensor::zeros({1, 2, 5, 5});
    Tensor w = Tensor::zeros({3, 2, 3, 3});
    Tensor b = Tensor::zeros({3});
    EXPECT_THROW(conv2d(x, Tensor::zeros({3, 1, 3, 3}), b, 1, 1), ShapeError);
    EXPECT_THROW(conv2d(x, Tensor::zeros({3, 2, 4, 4}), b, 1, 1), ShapeError);
    EXPECT_THROW(conv2d(x, w, Tensor::zeros({2}), 1, 1), ShapeError);
    EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 2, 2}), w, b, 1, 0), ShapeError);
}

TEST(Pooling, LoopOracles) {
    Rng rng(6);
    Tensor x = rand_tensor(rng, {2, 3, 4, 5});
    const int B = 2, C = 3, H = 4, W = 5;

    Tensor mp = max_pool_spatial(x);
    Tensor ap = avg_pool_spatial(x);
    Tensor gmp = global_max_pool(x);
    Tensor gap = global_avg_pool(x);
    for (int b = 0; b < B; ++b) {
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                float mx = -1e30f;
                double s = 0.0;
                for (int c = 0; c < C; ++c) {
                    mx = std::max(mx, x.at4(b, c, y, xx));
                    s += x.at4(b, c, y, xx);
                }
                EXPECT_FLOAT_EQ(mp.at4(b, 0, y, xx), mx);
                EXPECT_NEAR(ap.at4(b, 0, y, xx), s / C, 1e-6);
            }
        for (int c = 0; c < C; ++c) {
            float mx = -1e30f;
            double s = 0.0;
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) {
                    mx = std::max(mx, x.at4(b, c, y, xx));
                    s += x.at4(b, c, y, xx);
                }
            EXPECT_FLOAT_EQ(gmp.at4(b, c, 0, 0), mx);
            EXPECT_NEAR(gap.at4(b, c, 0, 0), s / (H * W), 1e-6);
        }
    }
}

TEST(Pooling, Avg2x2) {
    Tensor x = Tensor::from_values({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor y = avg_pool_2x2(x);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 2}));
    EXPECT_FLOAT_EQ(y.at4(0, 0, 0, 0), 3.5f);
    EXPECT_FLOAT_EQ(y.at4(0, 0, 0, 1), 5.5f);
    EXPECT_THROW(avg_pool_2x2(Tensor::zeros({1, 1, 3, 4})), ShapeError);
}

TEST(Channels, ConcatSliceRoundTrip) {
    Rng rng(7);
    Tensor a = rand_tensor(rng, {2, 2, 3, 3});
    Tensor b = rand_tensor(rng, {2, 4, 3, 3});
    Tensor cat = concat_channels({a, b});
    ASSERT_EQ(cat.dim(1), 6);
    EXPECT_EQ(max_abs_diff(slice_channels(cat, 0, 2), a), 0.0);
    EXPECT_EQ(max_abs_diff(slice_channels(cat, 2, 4), b), 0.0);
    EXPECT_THROW(slice_channels(cat, 5, 2), ShapeError);
    EXPECT_THROW(concat_channels({a, Tensor::zeros({2, 1, 4, 3})}), ShapeError);
}

TEST(Activations, Ranges) {
    Rng rng(8);
    Tensor x = rand_tensor(rng, {1, 1, 8, 8}, -12.0f, 12.0f);  // sigmoid(x) saturates to 1.0f beyond ~16
    Tensor r = relu(x), th = tanh_act(x), sg = sigmoid(x);
    for (float v : r.values()) EXPECT_GE(v, 0.0f);
    for (float v : th.values()) {
        EXPECT_GE(v, -1.0f);
        EXPECT_LE(v, 1.0f);
    }
    for (float v : sg.values()) {
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
    }
}

TEST(BatchNorm, NormalizesInTraining) {
    Rng rng(9);
    Tensor x = rand_tensor(rng, {2, 3, 6, 6}, -2.0f, 5.0f);
    BnStats stats{Tensor::zeros({3}), Tensor::full({3}, 1.0f)};
    Tensor y = batch_norm(x, Tensor::full({3}, 1.0f), Tensor::zeros({3}), stats, true);
    for (int c = 0; c < 3; ++c) {
        double m = 0.0, v = 0.0;
        for (int b = 0; b < 2; ++b)
            for (int i = 0; i < 36; ++i) {
                const float val = y.values()[(b * 3 + c) * 36 + i];
                m += val;
            }
        m /= 72.0;
        for (int b = 0; b < 2; ++b)
            for (int i = 0; i < 36; ++i) {
                const double d = y.values()[(b * 3 + c) * 36 + i] - m;
                v += d * d;
            }
        v /= 72.0;
        EXPECT_NEAR(m, 0.0, 1e-5);
        EXPECT_NEAR(v, 1.0, 1e-3);
    }
}

TEST(GradCheck, SuitePasses) {
    for (const auto& r : gradcheck_suite(17)) {
        EXPECT_TRUE(r.passed) << r.op << " worst rel err " << r.worst_rel_err;
        EXPECT_LT(r.worst_rel_err, kGradCheckTol) << r.op;
    }
}
