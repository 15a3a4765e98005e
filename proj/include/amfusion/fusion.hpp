#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "amfusion/tensor.hpp"

namespace amfusion {

enum class FusionStrategy { WeightedAverage, L1Norm, MeanFilter };

inline FusionStrategy parse_strategy(const std::string& s) {
    if (s == "avg") return FusionStrategy::WeightedAverage;
    if (s == "l1") return FusionStrategy::L1Norm;
    if (s == "mean") return FusionStrategy::MeanFilter;
    throw ConfigError("unknown fusion strategy '" + s + "' (expected avg|l1|mean)");
}

inline constexpr double kFusionEps = 1e-12;

// elementwise (f1+f2)/2
inline Tensor fuse_weighted_average(const Tensor& f1, const Tensor& f2) {
    if (!f1.same_shape(f2))
        throw ShapeError("fuse_weighted_average: shape mismatch");
    Tensor out = Tensor::zeros(f1.shape());
    const std::size_t n = f1.numel();
    for (std::size_t i = 0; i < n; ++i)
        out.mutable_values()[i] = 0.5f * (f1.values()[i] + f2.values()[i]);
    return out;
}

// Per-source scalar weights from whole-stack L1 activity; the sums collapse
// the full channel/spatial structure, so each source contributes one weight.
inline Tensor fuse_l1norm(const Tensor& f1, const Tensor& f2) {
    if (!f1.same_shape(f2)) throw ShapeError("fuse_l1norm: shape mismatch");
    double a1 = 0.0, a2 = 0.0;
    for (float v : f1.values()) a1 += std::fabs(v);
    for (float v : f2.values()) a2 += std::fabs(v);
    double w1, w2;
    const double total = a1 + a2;
    if (total <= kFusionEps) {
        // both stacks vanish: equal split
        w1 = w2 = 0.5;
    } else {
        w1 = a1 / total;
        w2 = a2 / total;
    }
    Tensor out = Tensor::zeros(f1.shape());
    const std::size_t n = f1.numel();
    const float fw1 = static_cast<float>(w1), fw2 = static_cast<float>(w2);
    for (std::size_t i = 0; i < n; ++i)
        out.mutable_values()[i] = fw1 * f1.values()[i] + fw2 * f2.values()[i];
    return out;
}

namespace detail {

// channel-wise absolute sum followed by a 3x3 box mean (replicate padding)
inline std::vector<double> activity_map(const Tensor& f) {
    const int B = f.dim(0), C = f.dim(1), H = f.dim(2), W = f.dim(3);
    std::vector<double> l1(static_cast<std::size_t>(B) * H * W, 0.0);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    l1[(static_cast<std::size_t>(b) * H + y) * W + x] +=
                        std::fabs(f.at4(b, c, y, x));
    std::vector<double> out(l1.size());
    for (int b = 0; b < B; ++b)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double acc = 0.0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = std::clamp(y + dy, 0, H - 1);
                        const int xx = std::clamp(x + dx, 0, W - 1);
                        acc += l1[(static_cast<std::size_t>(b) * H + yy) * W + xx];
                    }
                out[(static_cast<std::size_t>(b) * H + y) * W + x] = acc / 9.0;
            }
    return out;
}

} // namespace detail

// Per-pixel weights from mean-filtered L1 activity, broadcast over channels.
inline Tensor fuse_meanfilter(const Tensor& f1, const Tensor& f2) {
    if (!f1.same_shape(f2)) throw ShapeError("fuse_meanfilter: shape mismatch");
    const int B = f1.dim(0), C = f1.dim(1), H = f1.dim(2), W = f1.dim(3);
    const std::vector<double> a1 = detail::activity_map(f1);
    const std::vector<double> a2 = detail::activity_map(f2);
    Tensor out = Tensor::zeros(f1.shape());
    for (int b = 0; b < B; ++b)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const std::size_t p = (static_cast<std::size_t>(b) * H + y) * W + x;
                const double total = a1[p] + a2[p];
                double w1, w2;
                if (total <= kFusionEps) {
                    w1 = w2 = 0.5;
                } else {
                    w1 = a1[p] / (total + kFusionEps);
                    w2 = a2[p] / (total + kFusionEps);
                }
                for (int c = 0; c < C; ++c)
                    out.at4(b, c, y, x) = static_cast<float>(
                        w1 * f1.at4(b, c, y, x) + w2 * f2.at4(b, c, y, x));
            }
    return out;
}

inline Tensor fuse_features(const Tensor& f1, const Tensor& f2, FusionStrategy s) {
    switch (s) {
        case FusionStrategy::WeightedAverage: return fuse_weighted_average(f1, f2);
        case FusionStrategy::L1Norm: return fuse_l1norm(f1, f2);
        case FusionStrategy::MeanFilter: return fuse_meanfilter(f1, f2);
    }
    throw ConfigError("fuse_features: invalid strategy");
}

} // namespace amfusion
