#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "amfusion/fusion.hpp"
#include "test_util.hpp"

using namespace amfusion;
using testutil::max_abs_diff;
using testutil::rand_tensor;

namespace {

Shape random_shape(Rng& rng) {
    return {1, 1 + static_cast<int>(rng.next_below(6)),
            3 + static_cast<int>(rng.next_below(6)),
            3 + static_cast<int>(rng.next_below(6))};
}

// test-local restatement of the per-pixel activity definition:
// channel abs-sum, then 3x3 box mean with clamped borders
std::vector<double> activity_oracle(const Tensor& f) {
    const int C = f.dim(1), H = f.dim(2), W = f.dim(3);
    std::vector<double> l1(static_cast<std::size_t>(H) * W, 0.0);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                l1[static_cast<std::size_t>(y) * W + x] += std::fabs(f.at4(0, c, y, x));
    std::vector<double> out(l1.size());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    acc += l1[static_cast<std::size_t>(std::clamp(y + dy, 0, H - 1)) * W +
                              std::clamp(x + dx, 0, W - 1)];
            out[static_cast<std::size_t>(y) * W + x] = acc / 9.0;
        }
    return out;
}

} // namespace

TEST(Fusion, ParseStrategy) {
    EXPECT_EQ(parse_strategy("avg"), FusionStrategy::WeightedAverage);
    EXPECT_EQ(parse_strategy("l1"), FusionStrategy::L1Norm);
    EXPECT_EQ(parse_strategy("mean"), FusionStrategy::MeanFilter);
    EXPECT_THROW(parse_strategy("max"), ConfigError);
    EXPECT_THROW(parse_strategy(""), ConfigError);
}

TEST(Fusion, SymmetryAndConvexityOnRandomPairs) {
    Rng rng(31);
    const FusionStrategy all[] = {FusionStrategy::WeightedAverage,
                                  FusionStrategy::L1Norm, FusionStrategy::MeanFilter};
    for (int trial = 0; trial < 100; ++trial) {
        Shape s = random_shape(rng);
        Tensor f1 = rand_tensor(rng, s, -2.0f, 2.0f);
        Tensor f2 = rand_tensor(rng, s, -2.0f, 2.0f);
        for (FusionStrategy strat : all) {
            Tensor fused = fuse_features(f1, f2, strat);
            Tensor swapped = fuse_features(f2, f1, strat);
            ASSERT_EQ(fused.shape(), f1.shape());
            EXPECT_LT(max_abs_diff(fused, swapped), 1e-7);
            // nonnegative weights summing to ~1: each output lies between the inputs
            for (std::size_t i = 0; i < fused.numel(); ++i) {
                const float lo = std::min(f1.values()[i], f2.values()[i]);
                const float hi = std::max(f1.values()[i], f2.values()[i]);
                EXPECT_GE(fused.values()[i], lo - 1e-5f);
                EXPECT_LE(fused.values()[i], hi + 1e-5f);
            }
        }
    }
}

TEST(Fusion, IdempotentOnEqualInputs) {
    Rng rng(32);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = rand_tensor(rng, random_shape(rng), -2.0f, 2.0f);
        EXPECT_EQ(max_abs_diff(fuse_weighted_average(x, x), x), 0.0);
        EXPECT_EQ(max_abs_diff(fuse_l1norm(x, x), x), 0.0);
        EXPECT_LT(max_abs_diff(fuse_meanfilter(x, x), x), 1e-6);
    }
}

TEST(Fusion, WeightedAverageElementwiseOracle) {
    Rng rng(33);
    Shape s{1, 3, 4, 5};
    Tensor f1 = rand_tensor(rng, s), f2 = rand_tensor(rng, s);
    Tensor fused = fuse_weighted_average(f1, f2);
    for (std::size_t i = 0; i < fused.numel(); ++i)
        EXPECT_FLOAT_EQ(fused.values()[i], 0.5f * (f1.values()[i] + f2.values()[i]));
}

TEST(Fusion, L1NormScalarWeightsSumToOne) {
    Rng rng(34);
    for (int trial = 0; trial < 100; ++trial) {
        Shape s = random_shape(rng);
        Tensor f1 = rand_tensor(rng, s, -2.0f, 2.0f);
        Tensor f2 = rand_tensor(rng, s, -2.0f, 2.0f);
        double a1 = 0.0, a2 = 0.0;
        for (float v : f1.values()) a1 += std::fabs(v);
        for (float v : f2.values()) a2 += std::fabs(v);
        const double w1 = a1 / (a1 + a2), w2 = a2 / (a1 + a2);
        EXPECT_NEAR(w1 + w2, 1.0, 1e-9);
        Tensor fused = fuse_l1norm(f1, f2);
        for (std::size_t i = 0; i < fused.numel(); ++i)
            EXPECT_NEAR(fused.values()[i],
                        w1 * f1.values()[i] + w2 * f2.values()[i], 1e-6)
                << "trial " << trial << " elem " << i;
    }
}

TEST(Fusion, L1NormZeroStackReturnsOtherExactly) {
    Rng rng(35);
    Tensor z = Tensor::zeros({1, 4, 5, 5});
    Tensor f = rand_tensor(rng, {1, 4, 5, 5}, -3.0f, 3.0f);
    Tensor fused = fuse_l1norm(z, f);
    EXPECT_EQ(fused.values(), f.values());  // w2 == 1 exactly
    EXPECT_EQ(fuse_l1norm(f, z).values(), f.values());
    Tensor both = fuse_l1norm(z, z);
    for (float v : both.values()) EXPECT_FLOAT_EQ(v, 0.0f);
}

TEST(Fusion, MeanFilterPerPixelOracle) {
    Rng rng(36);
    for (int trial = 0; trial < 20; ++trial) {
        Shape s = random_shape(rng);
        Tensor f1 = rand_tensor(rng, s, -2.0f, 2.0f);
        Tensor f2 = rand_tensor(rng, s, -2.0f, 2.0f);
        const std::vector<double> a1 = activity_oracle(f1);
        const std::vector<double> a2 = activity_oracle(f2);
        Tensor fused = fuse_meanfilter(f1, f2);
        const int C = s[1], H = s[2], W = s[3];
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * W + x;
                const double total = a1[p] + a2[p];
                const double w1 = a1[p] / total, w2 = a2[p] / total;
                EXPECT_NEAR(w1 + w2, 1.0, 1e-9);
                for (int c = 0; c < C; ++c)
                    EXPECT_NEAR(fused.at4(0, c, y, x),
                                w1 * f1.at4(0, c, y, x) + w2 * f2.at4(0, c, y, x), 1e-5);
            }
    }
}

TEST(Fusion, MeanFilterFavorsActiveSource) {
    // one source flat, the other strong: weights should lean to the strong one
    Tensor weak = Tensor::full({1, 1, 5, 5}, 0.001f);
    Tensor strong = Tensor::full({1, 1, 5, 5}, 1.0f);
    Tensor fused = fuse_meanfilter(weak, strong);
    for (float v : fused.values()) EXPECT_GT(v, 0.9f);
}

TEST(Fusion, ShapeMismatchThrows) {
    Tensor a = Tensor::zeros({1, 2, 4, 4});
    Tensor b = Tensor::zeros({1, 2, 4, 5});
    EXPECT_THROW(fuse_weighted_average(a, b), ShapeError);
    EXPECT_THROW(fuse_l1norm(a, b), ShapeError);
    EXPECT_THROW(fuse_meanfilter(a, b), ShapeError);
}
