#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "amfusion/losses.hpp"
#include "amfusion/tensor.hpp"

// Double-precision reference implementations, written direct-from-definition
// (plain loops, no im2col/GEMM, no graph composition). They serve two roles:
//   - value oracles for the f32 pipeline in the tests,
//   - 64-bit forward for finite-difference gradient checks, where the f32
//     rounding of the production forward would drown the h=1e-3 quotient.

namespace amfusion {
namespace ref64 {

struct D {
    Shape shape;
    std::vector<double> v;

    int dim(std::size_t i) const { return shape[i]; }
    double& at4(int b, int c, int y, int x) {
        return v[((static_cast<std::size_t>(b) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    double at4(int b, int c, int y, int x) const {
        return v[((static_cast<std::size_t>(b) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
};

inline D from(const Tensor& t) {
    D d;
    d.shape = t.shape();
    d.v.assign(t.values().begin(), t.values().end());
    return d;
}

inline D make(Shape s) {
    D d;
    d.shape = std::move(s);
    d.v.assign(shape_numel(d.shape), 0.0);
    return d;
}

template <class F>
inline D map2(const D& a, const D& b, F f) {
    D out = make(a.shape);
    for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = f(a.v[i], b.v[i]);
    return out;
}

template <class F>
inline D map1(const D& a, F f) {
    D out = make(a.shape);
    for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = f(a.v[i]);
    return out;
}

inline D add(const D& a, const D& b) { return map2(a, b, [](double x, double y) { return x + y; }); }
inline D sub(const D& a, const D& b) { return map2(a, b, [](double x, double y) { return x - y; }); }
inline D mul(const D& a, const D& b) { return map2(a, b, [](double x, double y) { return x * y; }); }
inline D div(const D& a, const D& b) { return map2(a, b, [](double x, double y) { return x / y; }); }
inline D scale(const D& a, double s) { return map1(a, [s](double x) { return x * s; }); }
inline D add_const(const D& a, double c) { return map1(a, [c](double x) { return x + c; }); }
inline D abs_elem(const D& a) { return map1(a, [](double x) { return std::fabs(x); }); }
inline D sqrt_elem(const D& a) { return map1(a, [](double x) { return std::sqrt(x); }); }
inline D relu(const D& a) { return map1(a, [](double x) { return x > 0 ? x : 0; }); }
inline D prelu(const D& a, double s) {
    return map1(a, [s](double x) { return x >= 0 ? x : s * x; });
}
inline D sigmoid(const D& a) { return map1(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }); }
inline D tanh_act(const D& a) { return map1(a, [](double x) { return std::tanh(x); }); }

inline double sum(const D& a) {
    double acc = 0.0;
    for (double x : a.v) acc += x;
    return acc;
}
inline double mean(const D& a) { return sum(a) / static_cast<double>(a.v.size()); }

inline D mul_channel_gate(const D& x, const D& gate) {
    D out = make(x.shape);
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < HW; ++i)
                out.v[(static_cast<std::size_t>(b) * C + c) * HW + i] =
                    x.v[(static_cast<std::size_t>(b) * C + c) * HW + i] *
                    gate.v[static_cast<std::size_t>(b) * C + c];
    return out;
}

inline D mul_spatial_gate(const D& x, const D& map) {
    D out = make(x.shape);
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < HW; ++i)
                out.v[(static_cast<std::size_t>(b) * C + c) * HW + i] =
                    x.v[(static_cast<std::size_t>(b) * C + c) * HW + i] *
                    map.v[static_cast<std::size_t>(b) * HW + i];
    return out;
}

inline D conv2d(const D& x, const D& w, const D& bias, int stride, int padding) {
    const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), k = w.dim(2);
    const int Ho = (H + 2 * padding - k) / stride + 1;
    const int Wo = (W + 2 * padding - k) / stride + 1;
    D out = make({B, Cout, Ho, Wo});
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Cout; ++co)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    double acc = bias.v[co];
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = oy * stride + ky - padding;
                                const int ix = ox * stride + kx - padding;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x.at4(b, ci, iy, ix) * w.at4(co, ci, ky, kx);
                            }
                    out.at4(b, co, oy, ox) = acc;
                }
    return out;
}

inline D batch_norm(const D& x, const D& gamma, const D& beta, const D& rm,
                    const D& rv, bool training, double eps = 1e-5) {
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    const double N = static_cast<double>(B) * HW;
    D out = make(x.shape);
    for (int c = 0; c < C; ++c) {
        double m, var;
        if (training) {
            m = 0.0;
            for (int b = 0; b < B; ++b)
                for (int i = 0; i < HW; ++i)
                    m += x.v[(static_cast<std::size_t>(b) * C + c) * HW + i];
            m /= N;
            var = 0.0;
            for (int b = 0; b < B; ++b)
                for (int i = 0; i < HW; ++i) {
                    const double d = x.v[(static_cast<std::size_t>(b) * C + c) * HW + i] - m;
                    var += d * d;
                }
            var /= N;
        } else {
            m = rm.v[c];
            var = rv.v[c];
        }
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int b = 0; b < B; ++b)
            for (int i = 0; i < HW; ++i)
                out.v[(static_cast<std::size_t>(b) * C + c) * HW + i] =
                    (x.v[(static_cast<std::size_t>(b) * C + c) * HW + i] - m) * inv *
                        gamma.v[c] +
                    beta.v[c];
    }
    return out;
}

inline D max_pool_spatial(const D& x) {
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    D out = make({B, 1, x.dim(2), x.dim(3)});
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < HW; ++i) {
            double best = x.v[static_cast<std::size_t>(b) * C * HW + i];
            for (int c = 1; c < C; ++c)
                best = std::max(best, x.v[(static_cast<std::size_t>(b) * C + c) * HW + i]);
            out.v[static_cast<std::size_t>(b) * HW + i] = best;
        }
    return out;
}

inline D avg_pool_spatial(const D& x) {
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    D out = make({B, 1, x.dim(2), x.dim(3)});
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < HW; ++i) {
            double acc = 0.0;
            for (int c = 0; c < C; ++c)
                acc += x.v[(static_cast<std::size_t>(b) * C + c) * HW + i];
            out.v[static_cast<std::size_t>(b) * HW + i] = acc / C;
        }
    return out;
}

inline D global_max_pool(const D& x) {
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    D out = make({B, C, 1, 1});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(b) * C + c) * HW;
            double best = x.v[base];
            for (int i = 1; i < HW; ++i) best = std::max(best, x.v[base + i]);
            out.v[static_cast<std::size_t>(b) * C + c] = best;
        }
    return out;
}

inline D global_avg_pool(const D& x) {
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    D out = make({B, C, 1, 1});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(b) * C + c) * HW;
            double acc = 0.0;
            for (int i = 0; i < HW; ++i) acc += x.v[base + i];
            out.v[static_cast<std::size_t>(b) * C + c] = acc / HW;
        }
    return out;
}

inline D avg_pool_2x2(const D& x) {
    const int B = x.dim(0), C = x.dim(1), Ho = x.dim(2) / 2, Wo = x.dim(3) / 2;
    D out = make({B, C, Ho, Wo});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox)
                    out.at4(b, c, oy, ox) =
                        0.25 * (x.at4(b, c, 2 * oy, 2 * ox) + x.at4(b, c, 2 * oy, 2 * ox + 1) +
                                x.at4(b, c, 2 * oy + 1, 2 * ox) +
                                x.at4(b, c, 2 * oy + 1, 2 * ox + 1));
    return out;
}

inline D crop_spatial(const D& x, int H2, int W2) {
    D out = make({x.dim(0), x.dim(1), H2, W2});
    for (int b = 0; b < x.dim(0); ++b)
        for (int c = 0; c < x.dim(1); ++c)
            for (int y = 0; y < H2; ++y)
                for (int xx = 0; xx < W2; ++xx)
                    out.at4(b, c, y, xx) = x.at4(b, c, y, xx);
    return out;
}

inline D concat_channels(const std::vector<D>& xs) {
    const int B = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
    int Ctot = 0;
    for (const D& t : xs) Ctot += t.dim(1);
    D out = make({B, Ctot, H, W});
    const int HW = H * W;
    int coff = 0;
    for (const D& t : xs) {
        const int C = t.dim(1);
        for (int b = 0; b < B; ++b)
            std::copy(t.v.begin() + static_cast<std::size_t>(b) * C * HW,
                      t.v.begin() + static_cast<std::size_t>(b + 1) * C * HW,
                      out.v.begin() + (static_cast<std::size_t>(b) * Ctot + coff) * HW);
        coff += C;
    }
    return out;
}

inline D slice_channels(const D& x, int start, int count) {
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    D out = make({B, count, x.dim(2), x.dim(3)});
    for (int b = 0; b < B; ++b)
        std::copy(x.v.begin() + (static_cast<std::size_t>(b) * C + start) * HW,
                  x.v.begin() + (static_cast<std::size_t>(b) * C + start + count) * HW,
                  out.v.begin() + static_cast<std::size_t>(b) * count * HW);
    return out;
}

// ---------------------------------------------------------------------------
// losses: sliding-window direct formulas, no conv composition
// ---------------------------------------------------------------------------

inline double loss_pixel(const D& o, const D& i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < o.v.size(); ++k) {
        const double d = o.v[k] - i.v[k];
        acc += d * d;
    }
    return std::sqrt(acc) / static_cast<double>(o.v.size());
}

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(size) * size);
    const double c = (size - 1) / 2.0;
    double total = 0.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double d2 = (y - c) * (y - c) + (x - c) * (x - c);
            w[static_cast<std::size_t>(y) * size + x] = std::exp(-d2 / (2.0 * sigma * sigma));
            total += w[static_cast<std::size_t>(y) * size + x];
        }
    for (auto& v : w) v /= total;
    return w;
}

struct SsimSums {
    double luminance = 0.0;  // mean luminance term
    double cs = 0.0;         // mean contrast-structure term
    double full = 0.0;       // mean full SSIM
};

inline SsimSums ssim_terms(const D& o, const D& i, const SsimConfig& cfg) {
    const int B = o.dim(0), H = o.dim(2), W = o.dim(3);
    const int n = cfg.window;
    const std::vector<double> win = gaussian_window(n, cfg.sigma);
    const double c1 = cfg.c1(), c2 = cfg.c2();
    SsimSums s;
    long count = 0;
    for (int b = 0; b < B; ++b)
        for (int oy = 0; oy + n <= H; ++oy)
            for (int ox = 0; ox + n <= W; ++ox) {
                double mu1 = 0, mu2 = 0, e11 = 0, e22 = 0, e12 = 0;
                for (int ky = 0; ky < n; ++ky)
                    for (int kx = 0; kx < n; ++kx) {
                        const double wgt = win[static_cast<std::size_t>(ky) * n + kx];
                        const double a = o.at4(b, 0, oy + ky, ox + kx);
                        const double bb = i.at4(b, 0, oy + ky, ox + kx);
                        mu1 += wgt * a;
                        mu2 += wgt * bb;
                        e11 += wgt * a * a;
                        e22 += wgt * bb * bb;
                        e12 += wgt * a * bb;
                    }
                const double s11 = e11 - mu1 * mu1;
                const double s22 = e22 - mu2 * mu2;
                const double s12 = e12 - mu1 * mu2;
                const double lum = (2 * mu1 * mu2 + c1) / (mu1 * mu1 + mu2 * mu2 + c1);
                const double cs = (2 * s12 + c2) / (s11 + s22 + c2);
                s.luminance += lum;
                s.cs += cs;
                s.full += lum * cs;
                ++count;
            }
    s.luminance /= count;
    s.cs /= count;
    s.full /= count;
    return s;
}

inline double ssim(const D& o, const D& i, const SsimConfig& cfg = {}) {
    return ssim_terms(o, i, cfg).full;
}

inline double loss_ssim(const D& o, const D& i, const SsimConfig& cfg = {}) {
    return 1.0 - ssim(o, i, cfg);
}

inline double loss_msssim(const D& o, const D& i, const SsimConfig& cfg = {}) {
    D oo = o, ii = i;
    double product = 1.0;
    for (int j = 1; j <= cfg.scales; ++j) {
        const SsimSums s = ssim_terms(oo, ii, cfg);
        product *= s.cs;
        if (j == cfg.scales) {
            product *= s.luminance;
        } else {
            const int H2 = oo.dim(2) & ~1, W2 = oo.dim(3) & ~1;
            oo = avg_pool_2x2(crop_spatial(oo, H2, W2));
            ii = avg_pool_2x2(crop_spatial(ii, H2, W2));
        }
    }
    return 1.0 - product;
}

inline double loss_l1(const D& o, const D& i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < o.v.size(); ++k) acc += std::fabs(o.v[k] - i.v[k]);
    return acc / static_cast<double>(o.dim(2) * o.dim(3));
}

inline double loss_grad(const D& o, const D& i) {
    static const double kx[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
    static const double ky[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
    const int B = o.dim(0), H = o.dim(2), W = o.dim(3);
    double acc = 0.0;
    long count = 0;
    for (int b = 0; b < B; ++b)
        for (int oy = 0; oy + 3 <= H; ++oy)
            for (int ox = 0; ox + 3 <= W; ++ox) {
                double gox = 0, goy = 0, gix = 0, giy = 0;
                for (int t = 0; t < 9; ++t) {
                    const int yy = oy + t / 3, xx = ox + t % 3;
                    gox += kx[t] * o.at4(b, 0, yy, xx);
                    goy += ky[t] * o.at4(b, 0, yy, xx);
                    gix += kx[t] * i.at4(b, 0, yy, xx);
                    giy += ky[t] * i.at4(b, 0, yy, xx);
                }
                acc += std::fabs(gox - gix) + std::fabs(goy - giy);
                count += 2;
            }
    return acc / count;
}

inline double loss_total(const D& o, const D& i, const LossWeights& w,
                         const SsimConfig& cfg = {}) {
    const double msl1 =
        (1.0 - w.beta) * loss_msssim(o, i, cfg) + w.beta * loss_l1(o, i);
    return w.alpha1 * loss_pixel(o, i) + w.alpha2 * loss_ssim(o, i, cfg) +
           w.alpha3 * msl1 + w.alpha4 * loss_grad(o, i);
}

} // namespace ref64
} // namespace amfusion
