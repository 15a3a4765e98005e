#pragma once

#include <cmath>
#include <vector>

#include "amfusion/ops.hpp"
#include "amfusion/tensor.hpp"

namespace amfusion {

struct LossWeights {
    float alpha1 = 1.0f;    // pixel
    float alpha2 = 1.0f;    // SSIM
    float alpha3 = 2.0f;    // MS-SSIM + L1 combination
    float alpha4 = 0.005f;  // gradient
    float beta = 0.0025f;   // inside the MS-SSIM/L1 combination

    void validate() const {
        if (alpha1 < 0 || alpha2 < 0 || alpha3 < 0 || alpha4 < 0)
            throw ConfigError("LossWeights: alphas must be nonnegative");
        if (!(beta > 0.0f && beta < 1.0f))
            throw ConfigError("LossWeights: beta must lie in (0,1)");
    }
};

struct SsimConfig {
    int window = 11;
    float sigma = 1.5f;
    float dynamic_range = 2.0f;  // data in [-1,1]
    int scales = 3;              // MS-SSIM pyramid depth (5 at 224x224)

    float c1() const { return (0.01f * dynamic_range) * (0.01f * dynamic_range); }
    float c2() const { return (0.03f * dynamic_range) * (0.03f * dynamic_range); }
};

namespace detail {

inline Tensor gaussian_window(int size, float sigma) {
    Tensor w = Tensor::zeros({1, 1, size, size});
    const float c = (size - 1) / 2.0f;
    double total = 0.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double d2 = (y - c) * (y - c) + (x - c) * (x - c);
            const double v = std::exp(-d2 / (2.0 * sigma * sigma));
            w.mutable_values()[y * size + x] = static_cast<float>(v);
            total += v;
        }
    for (auto& v : w.mutable_values()) v = static_cast<float>(v / total);
    return w;
}

struct WindowStats {
    Tensor mu1, mu2, sigma1_sq, sigma2_sq, sigma12;
};

// Gaussian-weighted local statistics over valid window positions
inline WindowStats window_stats(const Tensor& o, const Tensor& i, const SsimConfig& cfg,
                                Tape* tape) {
    if (o.dim(1) != 1) throw ShapeError("ssim: expects single-channel images");
    if (o.dim(2) < cfg.window || o.dim(3) < cfg.window)
        throw ShapeError("ssim: image smaller than the window");
    static thread_local Tensor win;  // cache; fixed weights, no grad
    static thread_local float win_sigma = 0.0f;
    if (!win.defined() || win.dim(2) != cfg.window || win_sigma != cfg.sigma) {
        win = gaussian_window(cfg.window, cfg.sigma);
        win_sigma = cfg.sigma;
    }
    Tensor zero_b = Tensor::zeros({1});
    WindowStats s;
    s.mu1 = conv2d(o, win, zero_b, 1, 0, tape);
    s.mu2 = conv2d(i, win, zero_b, 1, 0, tape);
    Tensor e_oo = conv2d(mul(o, o, tape), win, zero_b, 1, 0, tape);
    Tensor e_ii = conv2d(mul(i, i, tape), win, zero_b, 1, 0, tape);
    Tensor e_oi = conv2d(mul(o, i, tape), win, zero_b, 1, 0, tape);
    s.sigma1_sq = sub(e_oo, mul(s.mu1, s.mu1, tape), tape);
    s.sigma2_sq = sub(e_ii, mul(s.mu2, s.mu2, tape), tape);
    s.sigma12 = sub(e_oi, mul(s.mu1, s.mu2, tape), tape);
    return s;
}

// mean over windows of (2*mu1*mu2 + C1) / (mu1^2 + mu2^2 + C1)
inline Tensor luminance_term(const WindowStats& s, const SsimConfig& cfg, Tape* tape) {
    Tensor num = add_const(scale(mul(s.mu1, s.mu2, tape), 2.0f, tape), cfg.c1(), tape);
    Tensor den = add_const(add(mul(s.mu1, s.mu1, tape), mul(s.mu2, s.mu2, tape), tape),
                           cfg.c1(), tape);
    return mean_all(div(num, den, tape), tape);
}

// mean over windows of (2*sigma12 + C2) / (sigma1^2 + sigma2^2 + C2)
inline Tensor contrast_structure_term(const WindowStats& s, const SsimConfig& cfg,
                                      Tape* tape) {
    Tensor num = add_const(scale(s.sigma12, 2.0f, tape), cfg.c2(), tape);
    Tensor den = add_const(add(s.sigma1_sq, s.sigma2_sq, tape), cfg.c2(), tape);
    return mean_all(div(num, den, tape), tape);
}

} // namespace detail

// (1/(B*C*H*W)) * ||O-I||_2 : the Euclidean norm itself, not its square
inline Tensor loss_pixel(const Tensor& o, const Tensor& i, Tape* tape = nullptr) {
    if (!o.same_shape(i)) throw ShapeError("loss_pixel: shape mismatch");
    Tensor d = sub(o, i, tape);
    Tensor norm = sqrt_elem(sum_all(mul(d, d, tape), tape), tape);
    return scale(norm, 1.0f / static_cast<float>(o.numel()), tape);
}

// windowed SSIM in [-1,1]; per-window Gaussian statistics, mean over windows
inline Tensor ssim(const Tensor& o, const Tensor& i, const SsimConfig& cfg = {},
                   Tape* tape = nullptr) {
    if (!o.same_shape(i)) throw ShapeError("ssim: shape mismatch");
    detail::WindowStats s = detail::window_stats(o, i, cfg, tape);
    Tensor num = mul(add_const(scale(mul(s.mu1, s.mu2, tape), 2.0f, tape), cfg.c1(), tape),
                     add_const(scale(s.sigma12, 2.0f, tape), cfg.c2(), tape), tape);
    Tensor den = mul(add_const(add(mul(s.mu1, s.mu1, tape), mul(s.mu2, s.mu2, tape), tape),
                               cfg.c1(), tape),
                     add_const(add(s.sigma1_sq, s.sigma2_sq, tape), cfg.c2(), tape), tape);
    return mean_all(div(num, den, tape), tape);
}

inline Tensor loss_ssim(const Tensor& o, const Tensor& i, const SsimConfig& cfg = {},
                        Tape* tape = nullptr) {
    return add_const(scale(ssim(o, i, cfg, tape), -1.0f, tape), 1.0f, tape);
}

// 1 - l_M * prod_j cs_j, luminance only at the coarsest scale, no exponents
inline Tensor loss_msssim(const Tensor& o, const Tensor& i, const SsimConfig& cfg = {},
                          Tape* tape = nullptr) {
    if (!o.same_shape(i)) throw ShapeError("loss_msssim: shape mismatch");
    const int min_side = std::min(o.dim(2), o.dim(3));
    if (min_side < cfg.window * (1 << (cfg.scales - 1)))
        throw ShapeError("loss_msssim: image side must be >= window * 2^(M-1)");
    Tensor oo = o, ii = i;
    Tensor product;
    for (int j = 1; j <= cfg.scales; ++j) {
        detail::WindowStats s = detail::window_stats(oo, ii, cfg, tape);
        Tensor cs = detail::contrast_structure_term(s, cfg, tape);
        product = product.defined() ? mul(product, cs, tape) : cs;
        if (j == cfg.scales) {
            product = mul(product, detail::luminance_term(s, cfg, tape), tape);
        } else {
            const int H2 = oo.dim(2) & ~1, W2 = oo.dim(3) & ~1;
            oo = avg_pool_2x2(crop_spatial(oo, H2, W2, tape), tape);
            ii = avg_pool_2x2(crop_spatial(ii, H2, W2, tape), tape);
        }
    }
    return add_const(scale(product, -1.0f, tape), 1.0f, tape);
}

// (1/(H*W)) * ||O-I||_1
inline Tensor loss_l1(const Tensor& o, const Tensor& i, Tape* tape = nullptr) {
    if (!o.same_shape(i)) throw ShapeError("loss_l1: shape mismatch");
    Tensor s = sum_all(abs_elem(sub(o, i, tape), tape), tape);
    return scale(s, 1.0f / static_cast<float>(o.dim(o.rank() - 1) * o.dim(o.rank() - 2)), tape);
}

inline Tensor combine_msssim_l1(const Tensor& o, const Tensor& i, float beta,
                                const SsimConfig& cfg = {}, Tape* tape = nullptr) {
    Tensor ms = loss_msssim(o, i, cfg, tape);
    Tensor l1 = loss_l1(o, i, tape);
    return add(scale(ms, 1.0f - beta, tape), scale(l1, beta, tape), tape);
}

// Sobel responses (valid positions), horizontal and vertical stacked,
// mean absolute difference over the stacked field
inline Tensor loss_grad(const Tensor& o, const Tensor& i, Tape* tape = nullptr) {
    if (!o.same_shape(i)) throw ShapeError("loss_grad: shape mismatch");
    if (o.dim(1) != 1) throw ShapeError("loss_grad: expects single-channel images");
    if (o.dim(2) < 3 || o.dim(3) < 3) throw ShapeError("loss_grad: side must be >= 3");
    static thread_local Tensor kx, ky;
    if (!kx.defined()) {
        kx = Tensor::from_values({1, 1, 3, 3}, {-1, 0, 1, -2, 0, 2, -1, 0, 1});
        ky = Tensor::from_values({1, 1, 3, 3}, {-1, -2, -1, 0, 0, 0, 1, 2, 1});
    }
    Tensor zb = Tensor::zeros({1});
    Tensor go = concat_channels({conv2d(o, kx, zb, 1, 0, tape), conv2d(o, ky, zb, 1, 0, tape)}, tape);
    Tensor gi = concat_channels({conv2d(i, kx, zb, 1, 0, tape), conv2d(i, ky, zb, 1, 0, tape)}, tape);
    return mean_all(abs_elem(sub(go, gi, tape), tape), tape);
}

struct LossTerms {
    Tensor pixel, ssim, msl1, grad, total;
};

inline LossTerms loss_total_terms(const Tensor& o, const Tensor& i,
                                  const LossWeights& w, const SsimConfig& cfg = {},
                                  Tape* tape = nullptr) {
    w.validate();
    LossTerms t;
    t.pixel = loss_pixel(o, i, tape);
    t.ssim = loss_ssim(o, i, cfg, tape);
    t.msl1 = combine_msssim_l1(o, i, w.beta, cfg, tape);
    t.grad = loss_grad(o, i, tape);
    Tensor acc = scale(t.pixel, w.alpha1, tape);
    acc = add(acc, scale(t.ssim, w.alpha2, tape), tape);
    acc = add(acc, scale(t.msl1, w.alpha3, tape), tape);
    acc = add(acc, scale(t.grad, w.alpha4, tape), tape);
    t.total = acc;
    return t;
}

inline Tensor loss_total(const Tensor& o, const Tensor& i, const LossWeights& w,
                         const SsimConfig& cfg = {}, Tape* tape = nullptr) {
    return loss_total_terms(o, i, w, cfg, tape).total;
}

} // namespace amfusion
