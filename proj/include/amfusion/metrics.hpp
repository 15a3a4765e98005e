#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "amfusion/errors.hpp"
#include "amfusion/gray_image.hpp"

namespace amfusion {
namespace metrics {

inline constexpr std::array<const char*, 9> kMetricNames = {
    "EN", "AG", "MI", "SD", "SF", "Qabf", "SSIM", "VIF", "SCD"};

using MetricRow = std::array<double, 9>;

namespace detail {

inline std::vector<double> to_double(const GrayImageU8& img) {
    std::vector<double> out(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) out[i] = img.px[i];
    return out;
}

// separable 'valid' filtering with a 1-D kernel applied along both axes
inline std::vector<double> filter_valid(const std::vector<double>& im, int h, int w,
                                        const std::vector<double>& k, int& ho, int& wo) {
    const int n = static_cast<int>(k.size());
    ho = h - n + 1;
    wo = w - n + 1;
    if (ho <= 0 || wo <= 0) { ho = wo = 0; return {}; }
    std::vector<double> tmp(static_cast<std::size_t>(h) * wo);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < wo; ++x) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += k[i] * im[static_cast<std::size_t>(y) * w + x + i];
            tmp[static_cast<std::size_t>(y) * wo + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(ho) * wo);
    for (int y = 0; y < ho; ++y)
        for (int x = 0; x < wo; ++x) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += k[i] * tmp[static_cast<std::size_t>(y + i) * wo + x];
            out[static_cast<std::size_t>(y) * wo + x] = acc;
        }
    return out;
}

inline std::vector<double> gaussian_kernel_1d(int n, double sd) {
    std::vector<double> k(n);
    const double c = (n - 1) / 2.0;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        k[i] = std::exp(-(i - c) * (i - c) / (2.0 * sd * sd));
        total += k[i];
    }
    for (auto& v : k) v /= total;
    return k;
}

inline std::array<double, 256> histogram(const GrayImageU8& img) {
    std::array<double, 256> h{};
    for (std::uint8_t p : img.px) h[p] += 1.0;
    const double n = static_cast<double>(img.size());
    for (auto& v : h) v /= n;
    return h;
}

inline double mutual_information(const GrayImageU8& a, const GrayImageU8& b) {
    if (a.width != b.width || a.height != b.height)
        throw ShapeError("mutual_information: size mismatch");
    std::vector<double> joint(256 * 256, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        joint[static_cast<std::size_t>(a.px[i]) * 256 + b.px[i]] += 1.0;
    const double n = static_cast<double>(a.size());
    std::array<double, 256> pa{}, pb{};
    for (int i = 0; i < 256; ++i)
        for (int j = 0; j < 256; ++j) {
            joint[static_cast<std::size_t>(i) * 256 + j] /= n;
            pa[i] += joint[static_cast<std::size_t>(i) * 256 + j];
            pb[j] += joint[static_cast<std::size_t>(i) * 256 + j];
        }
    double mi = 0.0;
    for (int i = 0; i < 256; ++i)
        for (int j = 0; j < 256; ++j) {
            const double p = joint[static_cast<std::size_t>(i) * 256 + j];
            if (p > 0.0) mi += p * std::log2(p / (pa[i] * pb[j]));
        }
    return mi;
}

// Sobel responses with zero padding ('same')
inline void sobel(const std::vector<double>& im, int h, int w,
                  std::vector<double>& gx, std::vector<double>& gy) {
    gx.assign(im.size(), 0.0);
    gy.assign(im.size(), 0.0);
    auto px = [&](int y, int x) -> double {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
        return im[static_cast<std::size_t>(y) * w + x];
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            gx[static_cast<std::size_t>(y) * w + x] =
                px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1) -
                px(y - 1, x - 1) - 2 * px(y, x - 1) - px(y + 1, x - 1);
            gy[static_cast<std::size_t>(y) * w + x] =
                px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1) -
                px(y - 1, x - 1) - 2 * px(y - 1, x) - px(y - 1, x + 1);
        }
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) { ma += a[i]; mb += b[i]; }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;  // zero-variance: r defined as 0
    return sab / std::sqrt(saa * sbb);
}

// mean windowed SSIM between two images, 11x11 Gaussian sigma 1.5, L = 255
inline double ssim_pair(const GrayImageU8& x, const GrayImageU8& y) {
    if (x.width != y.width || x.height != y.height)
        throw ShapeError("ssim: size mismatch");
    if (x.width < 11 || x.height < 11)
        throw ShapeError("ssim: image smaller than the 11x11 window");
    const double c1 = (0.01 * 255) * (0.01 * 255);
    const double c2 = (0.03 * 255) * (0.03 * 255);
    const std::vector<double> k = gaussian_kernel_1d(11, 1.5);
    const std::vector<double> xa = to_double(x), ya = to_double(y);
    std::vector<double> xx(xa.size()), yy(xa.size()), xy(xa.size());
    for (std::size_t i = 0; i < xa.size(); ++i) {
        xx[i] = xa[i] * xa[i];
        yy[i] = ya[i] * ya[i];
        xy[i] = xa[i] * ya[i];
    }
    int ho, wo;
    const auto mu1 = filter_valid(xa, x.height, x.width, k, ho, wo);
    const auto mu2 = filter_valid(ya, x.height, x.width, k, ho, wo);
    const auto e11 = filter_valid(xx, x.height, x.width, k, ho, wo);
    const auto e22 = filter_valid(yy, x.height, x.width, k, ho, wo);
    const auto e12 = filter_valid(xy, x.height, x.width, k, ho, wo);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu1.size(); ++i) {
        const double s11 = e11[i] - mu1[i] * mu1[i];
        const double s22 = e22[i] - mu2[i] * mu2[i];
        const double s12 = e12[i] - mu1[i] * mu2[i];
        acc += ((2 * mu1[i] * mu2[i] + c1) * (2 * s12 + c2)) /
               ((mu1[i] * mu1[i] + mu2[i] * mu2[i] + c1) * (s11 + s22 + c2));
    }
    return acc / static_cast<double>(mu1.size());
}

// pixel-domain VIF of dist against ref: 4 scales, sigma_n^2 = 2
inline void vif_sums(const GrayImageU8& ref, const GrayImageU8& dist,
                     double& num, double& den) {
    const double sigma_nsq = 2.0, eps = 1e-10;
    std::vector<double> r = to_double(ref), d = to_double(dist);
    int h = ref.height, w = ref.width;
    num = 0.0;
    den = 0.0;
    for (int scale = 1; scale <= 4; ++scale) {
        const int n = (1 << (5 - scale)) + 1;  // 17, 9, 5, 3
        const std::vector<double> k = gaussian_kernel_1d(n, n / 5.0);
        if (scale > 1) {
            int ho, wo;
            std::vector<double> rf = filter_valid(r, h, w, k, ho, wo);
            std::vector<double> df = filter_valid(d, h, w, k, ho, wo);
            if (ho == 0) break;
            const int h2 = (ho + 1) / 2, w2 = (wo + 1) / 2;
            std::vector<double> r2(static_cast<std::size_t>(h2) * w2),
                d2(static_cast<std::size_t>(h2) * w2);
            for (int y = 0; y < h2; ++y)
                for (int x = 0; x < w2; ++x) {
                    r2[static_cast<std::size_t>(y) * w2 + x] = rf[static_cast<std::size_t>(2 * y) * wo + 2 * x];
                    d2[static_cast<std::size_t>(y) * w2 + x] = df[static_cast<std::size_t>(2 * y) * wo + 2 * x];
                }
            r = std::move(r2);
            d = std::move(d2);
            h = h2;
            w = w2;
        }
        int ho, wo;
        const auto mu1 = filter_valid(r, h, w, k, ho, wo);
        if (ho == 0) continue;
        const auto mu2 = filter_valid(d, h, w, k, ho, wo);
        std::vector<double> rr(r.size()), dd(r.size()), rd(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) {
            rr[i] = r[i] * r[i];
            dd[i] = d[i] * d[i];
            rd[i] = r[i] * d[i];
        }
        int ho2, wo2;
        const auto e11 = filter_valid(rr, h, w, k, ho2, wo2);
        const auto e22 = filter_valid(dd, h, w, k, ho2, wo2);
        const auto e12 = filter_valid(rd, h, w, k, ho2, wo2);
        for (std::size_t i = 0; i < mu1.size(); ++i) {
            double s1 = e11[i] - mu1[i] * mu1[i];
            double s2 = e22[i] - mu2[i] * mu2[i];
            double s12 = e12[i] - mu1[i] * mu2[i];
            if (s1 < 0) s1 = 0;
            if (s2 < 0) s2 = 0;
            double g = s12 / (s1 + eps);
            double sv = s2 - g * s12;
            if (s1 < eps) { g = 0; sv = s2; s1 = 0; }
            if (s2 < eps) { g = 0; sv = 0; }
            if (g < 0) { sv = s2; g = 0; }
            if (sv <= eps) sv = eps;
            num += std::log10(1.0 + g * g * s1 / (sv + sigma_nsq));
            den += std::log10(1.0 + s1 / sigma_nsq);
        }
    }
}

} // namespace detail

// Shannon entropy of the 256-bin histogram, log base 2
inline double en(const GrayImageU8& img) {
    const auto h = detail::histogram(img);
    double e = 0.0;
    for (double p : h)
        if (p > 0.0) e -= p * std::log2(p);
    return e;
}

// MI(a, fused) + MI(b, fused)
inline double mi(const GrayImageU8& a, const GrayImageU8& b, const GrayImageU8& fused) {
    return detail::mutual_information(a, fused) + detail::mutual_information(b, fused);
}

// population standard deviation
inline double sd(const GrayImageU8& img) {
    double m = 0.0;
    for (std::uint8_t p : img.px) m += p;
    m /= static_cast<double>(img.size());
    double v = 0.0;
    for (std::uint8_t p : img.px) v += (p - m) * (p - m);
    return std::sqrt(v / static_cast<double>(img.size()));
}

// mean of sqrt((dx^2 + dy^2)/2) over the (H-1) x (W-1) forward-difference grid
inline double ag(const GrayImageU8& img) {
    double acc = 0.0;
    for (int y = 0; y < img.height - 1; ++y)
        for (int x = 0; x < img.width - 1; ++x) {
            const double dx = static_cast<double>(img.at(y, x + 1)) - img.at(y, x);
            const double dy = static_cast<double>(img.at(y + 1, x)) - img.at(y, x);
            acc += std::sqrt((dx * dx + dy * dy) / 2.0);
        }
    return acc / (static_cast<double>(img.height - 1) * (img.width - 1));
}

// sqrt(RF^2 + CF^2) from mean squared forward differences
inline double sf(const GrayImageU8& img) {
    double rf = 0.0, cf = 0.0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width - 1; ++x) {
            const double d = static_cast<double>(img.at(y, x + 1)) - img.at(y, x);
            rf += d * d;
        }
    for (int y = 0; y < img.height - 1; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double d = static_cast<double>(img.at(y + 1, x)) - img.at(y, x);
            cf += d * d;
        }
    rf /= static_cast<double>(img.height) * (img.width - 1);
    cf /= static_cast<double>(img.height - 1) * img.width;
    return std::sqrt(rf + cf);
}

// Xydeas-Petrovic edge-preservation metric
inline double qabf(const GrayImageU8& a, const GrayImageU8& b, const GrayImageU8& fused) {
    const double gamma_g = 0.9994, k_g = -15.0, sigma_g = 0.5;
    const double gamma_a = 0.9879, k_a = -22.0, sigma_a = 0.8;
    const int h = a.height, w = a.width;
    std::vector<double> gxa, gya, gxb, gyb, gxf, gyf;
    detail::sobel(detail::to_double(a), h, w, gxa, gya);
    detail::sobel(detail::to_double(b), h, w, gxb, gyb);
    detail::sobel(detail::to_double(fused), h, w, gxf, gyf);
    auto strength = [](double gx, double gy) { return std::sqrt(gx * gx + gy * gy); };
    auto angle = [](double gx, double gy) {
        return gx == 0.0 ? M_PI / 2.0 : std::atan(gy / gx);
    };
    auto preservation = [&](double gs, double as, double gf, double af) {
        double gq;  // relative edge-strength preservation
        if (gs == 0.0 && gf == 0.0)
            gq = 1.0;
        else if (gs == 0.0 || gf == 0.0)
            gq = 0.0;
        else
            gq = gf > gs ? gs / gf : gf / gs;
        const double aq = 1.0 - std::fabs(as - af) / (M_PI / 2.0);
        const double qg = gamma_g / (1.0 + std::exp(k_g * (gq - sigma_g)));
        const double qa = gamma_a / (1.0 + std::exp(k_a * (aq - sigma_a)));
        return qg * qa;
    };
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < gxa.size(); ++i) {
        const double ga = strength(gxa[i], gya[i]);
        const double gb = strength(gxb[i], gyb[i]);
        const double gf = strength(gxf[i], gyf[i]);
        const double aa = angle(gxa[i], gya[i]);
        const double ab = angle(gxb[i], gyb[i]);
        const double af = angle(gxf[i], gyf[i]);
        num += preservation(ga, aa, gf, af) * ga + preservation(gb, ab, gf, af) * gb;
        den += ga + gb;
    }
    return den == 0.0 ? 0.0 : num / den;  // both sources gradient-free: 0
}

// mean of SSIM(a, fused) and SSIM(b, fused)
inline double ssim_metric(const GrayImageU8& a, const GrayImageU8& b,
                          const GrayImageU8& fused) {
    return 0.5 * (detail::ssim_pair(a, fused) + detail::ssim_pair(b, fused));
}

// pixel-domain visual information fidelity, averaged over the two sources
inline double vif(const GrayImageU8& a, const GrayImageU8& b, const GrayImageU8& fused) {
    double n1, d1, n2, d2;
    detail::vif_sums(a, fused, n1, d1);
    detail::vif_sums(b, fused, n2, d2);
    const double v1 = d1 == 0.0 ? 0.0 : n1 / d1;
    const double v2 = d2 == 0.0 ? 0.0 : n2 / d2;
    return 0.5 * (v1 + v2);
}

// sum of correlations of differences: r(fused - b, a) + r(fused - a, b)
inline double scd(const GrayImageU8& a, const GrayImageU8& b, const GrayImageU8& fused) {
    std::vector<double> da(a.size()), db(a.size());
    std::vector<double> va = detail::to_double(a), vb = detail::to_double(b);
    for (std::size_t i = 0; i < a.size(); ++i) {
        da[i] = static_cast<double>(fused.px[i]) - vb[i];
        db[i] = static_cast<double>(fused.px[i]) - va[i];
    }
    return detail::pearson(da, va) + detail::pearson(db, vb);
}

inline MetricRow evaluate_pair(const GrayImageU8& a, const GrayImageU8& b,
                               const GrayImageU8& fused) {
    return {en(fused), ag(fused),          mi(a, b, fused), sd(fused), sf(fused),
            qabf(a, b, fused), ssim_metric(a, b, fused), vif(a, b, fused), scd(a, b, fused)};
}

// xi(i) = sum_j f_j(x_i) / max_i f_j(x_i); requires positive column maxima
inline std::map<std::string, double> normalized_index(
    const std::map<std::string, MetricRow>& table) {
    if (table.empty()) throw ConfigError("normalized_index: no methods");
    MetricRow colmax{};
    colmax.fill(-1e300);
    for (const auto& [name, row] : table)
        for (std::size_t j = 0; j < row.size(); ++j)
            colmax[j] = std::max(colmax[j], row[j]);
    for (std::size_t j = 0; j < colmax.size(); ++j)
        if (!(colmax[j] > 0.0))
            throw ConfigError("normalized_index: column " + std::string(kMetricNames[j]) +
                              " has nonpositive maximum");
    std::map<std::string, double> out;
    for (const auto& [name, row] : table) {
        double xi = 0.0;
        for (std::size_t j = 0; j < row.size(); ++j) xi += row[j] / colmax[j];
        out[name] = xi;
    }
    return out;
}

} // namespace metrics
} // namespace amfusion
