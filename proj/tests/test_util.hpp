#pragma once

#include <cmath>
#include <vector>

#include "amfusion/rng.hpp"
#include "amfusion/tensor.hpp"

namespace testutil {

using amfusion::Rng;
using amfusion::Shape;
using amfusion::Tensor;

inline Tensor rand_tensor(Rng& rng, Shape shape, float lo = -1.0f, float hi = 1.0f) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.mutable_values()) v = rng.uniform(lo, hi);
    return t;
}

// reference convolution: direct quadruple loop, double accumulation,
// cross-correlation with zero padding
inline Tensor conv2d_naive(const Tensor& x, const Tensor& w, const Tensor& bias,
                           int stride, int padding) {
    const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), k = w.dim(2);
    const int Ho = (H + 2 * padding - k) / stride + 1;
    const int Wo = (W + 2 * padding - k) / stride + 1;
    Tensor out = Tensor::zeros({B, Cout, Ho, Wo});
    for (int b = 0; b < B; ++b)
        for (int co = 0; co < Cout; ++co)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    double acc = bias.values()[co];
                    for (int ci = 0; ci < Cin; ++ci)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = oy * stride + ky - padding;
                                const int ix = ox * stride + kx - padding;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += static_cast<double>(x.at4(b, ci, iy, ix)) *
                                       w.at4(co, ci, ky, kx);
                            }
                    out.at4(b, co, oy, ox) = static_cast<float>(acc);
                }
    return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(static_cast<double>(a.values()[i]) - b.values()[i]));
    return m;
}

} // namespace testutil
