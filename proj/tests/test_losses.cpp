#include <gtest/gtest.h>

#include <cmath>

#include "amfusion/losses.hpp"
#include "amfusion/ref64.hpp"
#include "test_util.hpp"

using namespace amfusion;
using testutil::rand_tensor;

namespace {

SsimConfig small_cfg() {
    SsimConfig cfg;
    cfg.window = 5;
    cfg.scales = 2;
    return cfg;
}

} // namespace

TEST(LossWeights, Validation) {
    EXPECT_NO_THROW(LossWeights{}.validate());
    LossWeights w;
    w.beta = 0.0f;
    EXPECT_THROW(w.validate(), ConfigError);
    w.beta = 1.0f;
    EXPECT_THROW(w.validate(), ConfigError);
    w = LossWeights{};
    w.alpha3 = -0.5f;
    EXPECT_THROW(w.validate(), ConfigError);
}

TEST(Losses, MatchDoubleReferenceOnRandomImages) {
    Rng rng(21);
    for (int trial = 0; trial < 3; ++trial) {
        Tensor o = rand_tensor(rng, {1, 1, 48, 48});
        Tensor i = rand_tensor(rng, {1, 1, 48, 48});
        ref64::D od = ref64::from(o), id = ref64::from(i);
        const SsimConfig cfg;  // defaults: window 11, 3 scales (needs side >= 44)
        const LossWeights w;

        EXPECT_NEAR(loss_pixel(o, i).item(), ref64::loss_pixel(od, id), 5e-5);
        EXPECT_NEAR(ssim(o, i, cfg).item(), ref64::ssim(od, id, cfg), 5e-5);
        EXPECT_NEAR(loss_ssim(o, i, cfg).item(), ref64::loss_ssim(od, id, cfg), 5e-5);
        EXPECT_NEAR(loss_msssim(o, i, cfg).item(), ref64::loss_msssim(od, id, cfg), 5e-5);
        EXPECT_NEAR(loss_l1(o, i).item(), ref64::loss_l1(od, id), 5e-4);  // sum of ~2300 terms
        EXPECT_NEAR(loss_grad(o, i).item(), ref64::loss_grad(od, id), 5e-5);
        EXPECT_NEAR(loss_total(o, i, w, cfg).item(), ref64::loss_total(od, id, w, cfg), 1e-3);
    }
}

TEST(Losses, VanishAtIdentity) {
    Rng rng(22);
    Tensor x = rand_tensor(rng, {2, 1, 16, 16});
    const SsimConfig cfg = small_cfg();
    EXPECT_NEAR(loss_pixel(x, x).item(), 0.0, 1e-6);
    EXPECT_NEAR(ssim(x, x, cfg).item(), 1.0, 1e-6);
    EXPECT_NEAR(loss_ssim(x, x, cfg).item(), 0.0, 1e-6);
    EXPECT_NEAR(loss_msssim(x, x, cfg).item(), 0.0, 1e-6);
    EXPECT_NEAR(loss_l1(x, x).item(), 0.0, 1e-6);
    EXPECT_NEAR(loss_grad(x, x).item(), 0.0, 1e-6);
    EXPECT_NEAR(loss_total(x, x, LossWeights{}, cfg).item(), 0.0, 1e-5);
}

TEST(Losses, SymmetryAndBounds) {
    Rng rng(23);
    const SsimConfig cfg = small_cfg();
    for (int trial = 0; trial < 5; ++trial) {
        Tensor o = rand_tensor(rng, {1, 1, 20, 20});
        Tensor i = rand_tensor(rng, {1, 1, 20, 20});
        EXPECT_NEAR(ssim(o, i, cfg).item(), ssim(i, o, cfg).item(), 1e-6);
        EXPECT_NEAR(loss_pixel(o, i).item(), loss_pixel(i, o).item(), 1e-7);
        EXPECT_NEAR(loss_l1(o, i).item(), loss_l1(i, o).item(), 1e-5);
        EXPECT_NEAR(loss_grad(o, i).item(), loss_grad(i, o).item(), 1e-6);
        EXPECT_LE(ssim(o, i, cfg).item(), 1.0f + 1e-6f);
        EXPECT_GE(ssim(o, i, cfg).item(), -1.0f - 1e-6f);
        EXPECT_GE(loss_pixel(o, i).item(), 0.0f);
        EXPECT_GE(loss_l1(o, i).item(), 0.0f);
        EXPECT_GE(loss_grad(o, i).item(), 0.0f);
        EXPECT_LE(loss_ssim(o, i, cfg).item(), 2.0f + 1e-6f);
        EXPECT_LE(loss_msssim(o, i, cfg).item(), 2.0f + 1e-6f);
    }
}

TEST(Losses, PixelNormScalesLinearly) {
    Rng rng(24);
    Tensor i = rand_tensor(rng, {1, 1, 8, 8});
    Tensor d = rand_tensor(rng, {1, 1, 8, 8}, 0.1f, 0.2f);
    Tensor o1 = add(i, d);
    Tensor o2 = add(i, scale(d, 3.0f));
    EXPECT_NEAR(loss_pixel(o2, i).item(), 3.0 * loss_pixel(o1, i).item(), 1e-6);
}

TEST(Losses, CombineReducesToL1AtBetaOne) {
    Rng rng(25);
    Tensor o = rand_tensor(rng, {1, 1, 12, 12});
    Tensor i = rand_tensor(rng, {1, 1, 12, 12});
    const SsimConfig cfg = small_cfg();
    EXPECT_NEAR(combine_msssim_l1(o, i, 1.0f, cfg).item(), loss_l1(o, i).item(), 1e-6);
    const float beta = 0.0025f;
    const float want = (1.0f - beta) * loss_msssim(o, i, cfg).item() +
                       beta * loss_l1(o, i).item();
    EXPECT_NEAR(combine_msssim_l1(o, i, beta, cfg).item(), want, 1e-6);
}

TEST(Losses, GradRampHandOracle) {
    // o(y,x) = s*x against i = 0: Sobel-x response is 8s everywhere valid,
    // Sobel-y response 0, so the stacked mean abs diff is 4s
    const float s = 0.3f;
    Tensor o = Tensor::zeros({1, 1, 5, 5});
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) o.at4(0, 0, y, x) = s * static_cast<float>(x);
    Tensor i = Tensor::zeros({1, 1, 5, 5});
    EXPECT_NEAR(loss_grad(o, i).item(), 4.0 * s, 1e-6);
}

TEST(Losses, ContrastStructureShiftInvariant) {
    // adding the same constant to both images leaves local variances and
    // covariance untouched; only the luminance term can move
    Rng rng(26);
    SsimConfig cfg = small_cfg();
    Tensor o = rand_tensor(rng, {1, 1, 16, 16});
    Tensor i = rand_tensor(rng, {1, 1, 16, 16});
    ref64::D od = ref64::from(o), id = ref64::from(i);
    ref64::D os = ref64::add_const(od, 0.37), is = ref64::add_const(id, 0.37);
    EXPECT_NEAR(ref64::ssim_terms(os, is, cfg).cs, ref64::ssim_terms(od, id, cfg).cs, 1e-12);
    // the f32 pipeline agrees through the cs-only part of the pyramid
    Tensor of = add_const(o, 0.37f), sf = add_const(i, 0.37f);
    ref64::D ofd = ref64::from(of), sfd = ref64::from(sf);
    EXPECT_NEAR(ref64::ssim_terms(ofd, sfd, cfg).cs, ref64::ssim_terms(od, id, cfg).cs, 1e-6);
}

TEST(Losses, TotalDecomposition) {
    Rng rng(27);
    Tensor o = rand_tensor(rng, {1, 1, 16, 16});
    Tensor i = rand_tensor(rng, {1, 1, 16, 16});
    const SsimConfig cfg = small_cfg();
    LossWeights w;
    w.alpha1 = 0.5f;
    w.alpha2 = 1.5f;
    w.alpha3 = 2.0f;
    w.alpha4 = 0.01f;
    LossTerms t = loss_total_terms(o, i, w, cfg);
    EXPECT_NEAR(t.pixel.item(), loss_pixel(o, i).item(), 1e-7);
    EXPECT_NEAR(t.ssim.item(), loss_ssim(o, i, cfg).item(), 1e-7);
    EXPECT_NEAR(t.msl1.item(), combine_msssim_l1(o, i, w.beta, cfg).item(), 1e-7);
    EXPECT_NEAR(t.grad.item(), loss_grad(o, i).item(), 1e-7);
    const double want = w.alpha1 * t.pixel.item() + w.alpha2 * t.ssim.item() +
                        w.alpha3 * t.msl1.item() + w.alpha4 * t.grad.item();
    EXPECT_NEAR(t.total.item(), want, 1e-5);
}

TEST(Losses, ShapeErrors) {
    Tensor a = Tensor::zeros({1, 1, 16, 16});
    Tensor b = Tensor::zeros({1, 1, 16, 12});
    Tensor two_ch = Tensor::zeros({1, 2, 16, 16});
    EXPECT_THROW(loss_pixel(a, b), ShapeError);
    EXPECT_THROW(ssim(a, b), ShapeError);
    EXPECT_THROW(loss_l1(a, b), ShapeError);
    EXPECT_THROW(loss_grad(a, b), ShapeError);
    EXPECT_THROW(ssim(two_ch, two_ch), ShapeError);
    EXPECT_THROW(loss_grad(two_ch, two_ch), ShapeError);
    Tensor tiny = Tensor::zeros({1, 1, 8, 8});
    EXPECT_THROW(ssim(tiny, tiny), ShapeError);  // smaller than the 11-window
    SsimConfig cfg;  // 3 scales: needs side >= 44
    Tensor mid = Tensor::zeros({1, 1, 32, 32});
    EXPECT_THROW(loss_msssim(mid, mid, cfg), ShapeError);
    Tensor small = Tensor::zeros({1, 1, 2, 2});
    EXPECT_THROW(loss_grad(small, small), ShapeError);
}
