#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "amfusion/tensor.hpp"

namespace amfusion {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor make_out(Shape shape, bool tracked) {
    Tensor t = Tensor::zeros(std::move(shape));
    if (tracked) t.set_requires_grad(true);
    return t;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

} // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::check_same_shape(a, b, "add");
    const bool tracked = track(tape, {&a, &b});
    Tensor out = detail::make_out(a.shape(), tracked);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i)
        out.mutable_values()[i] = a.values()[i] + b.values()[i];
    if (tracked) {
        auto da = a.data_ptr(), db = b.data_ptr(), dout = out.data_ptr();
        tape->record([da, db, dout, n] {
            for (std::size_t i = 0; i < n; ++i) {
                if (da->requires_grad) da->g[i] += dout->g[i];
                if (db->requires_grad) db->g[i] += dout->g[i];
            }
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::check_same_shape(a, b, "sub");
    const bool tracked = track(tape, {&a, &b});
    Tensor out = detail::make_out(a.shape(), tracked);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i)
        out.mutable_values()[i] = a.values()[i] - b.values()[i];
    if (tracked) {
        auto da = a.data_ptr(), db = b.data_ptr(), dout = out.data_ptr();
        tape->record([da, db, dout, n] {
            for (std::size_t i = 0; i < n; ++i) {
                if (da->requires_grad) da->g[i] += dout->g[i];
                if (db->requires_grad) db->g[i] -= dout->g[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::check_same_shape(a, b, "mul");
    const bool tracked = track(tape, {&a, &b});
    Tensor out = detail::make_out(a.shape(), tracked);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i)
        out.mutable_values()[i] = a.values()[i] * b.values()[i];
    if (tracked) {
        auto da = a.data_ptr(), db = b.data_ptr(), dout = out.data_ptr();
        tape->record([da, db, dout, n] {
            for (std::size_t i = 0; i < n; ++i) {
                if (da->requires_grad) da->g[i] += dout->g[i] * db->v[i];
                if (db->requires_grad) db->g[i] += dout->g[i] * da->v[i];
            }
        });
    }
    return out;
}

inline Tensor div(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
    detail::check_same_shape(a, b, "div");
    const bool tracked = track(tape, {&a, &b});
    Tensor out = detail::make_out(a.shape(), tracked);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i)
        out.mutable_values()[i] = a.values()[i] / b.values()[i];
    if (tracked) {
        auto da = a.data_ptr(), db = b.data_ptr(), dout = out.data_ptr();
        tape->record([da, db, dout, n] {
            for (std::size_t i = 0; i < n; ++i) {
                const float inv = 1.0f / db->v[i];
                if (da->requires_grad) da->g[i] += dout->g[i] * inv;
                if (db->requires_grad)
                    db->g[i] -= dout->g[i] * da->v[i] * inv * inv;
            }
        });
    }
    return out;
}

inline Tensor scale(const Tensor& a, float s, Tape* tape = nullptr) {
    const bool tracked = track(tape, {&a});
    Tensor out = detail::make_out(a.shape(), tracked);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.mutable_values()[i] = a.values()[i] * s;
    if (tracked) {
        auto da = a.data_ptr();
        auto dout = out.data_ptr();
        tape->record([da, dout, s, n] {
            for (std::size_t i = 0; i < n; ++i) da->g[i] += dout->g[i] * s;
        });
    }
    return out;
}

inline Tensor add_const(const Tensor& a, float c, Tape* tape = nullptr) {
    const bool tracked = track(tape, {&a});
    Tensor out = detail::make_out(a.shape(), tracked);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.mutable_values()[i] = a.values()[i] + c;
    if (tracked) {
        auto da = a.data_ptr();
        auto dout = out.data_ptr();
        tape->record([da, dout, n] {
            for (std::size_t i = 0; i < n; ++i) da->g[i] += dout->g[i];
        });
    }
    return out;
}

inline Tensor abs_elem(const Tensor& a, Tape* tape = nullptr) {
    const bool tracked = track(tape, {&a});
    Tensor out = detail::make_out(a.shape(), tracked);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.mutable_values()[i] = std::fabs(a.values()[i]);
    if (tracked) {
        auto da = a.data_ptr();
        auto dout = out.data_ptr();
        tape->record([da, dout, n] {
            for (std::size_t i = 0; i < n; ++i)
                da->g[i] += dout->g[i] * (da->v[i] > 0.0f ? 1.0f : (da->v[i] < 0.0f ? -1.0f : 0.0f));
        });
    }
    return out;
}

inline Tensor sqrt_elem(const Tensor& a, Tape* tape = nullptr) {
    const bool tracked = track(tape, {&a});
    Tensor out = detail::make_out(a.shape(), tracked);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) out.mutable_values()[i] = std::sqrt(a.values()[i]);
    if (tracked) {
        auto da = a.data_ptr();
        auto dout = out.data_ptr();
        tape->record([da, dout, n] {
            for (std::size_t i = 0; i < n; ++i) {
                const float denom = std::max(2.0f * dout->v[i], 1e-12f);
                da->g[i] += dout->g[i] / denom;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& a, Tape* tape = nullptr) {
    const bool tracked = track(tape, {&a});
    Tensor out = detail::make_out(a.shape(), tracked);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i)
        out.mutable_values()[i] = a.values()[i] > 0.0f ? a.values()[i] : 0.0f;
    if (tracked) {
        auto da = a.data_ptr();
        auto dout = out.data_ptr();
        tape->record([da, dout, n] {
            for (std::size_t i = 0; i < n; ++i)
                if (da->v[i] > 0.0f) da->g[i] += dout->g[i];
        });
    }
    return out;
}

// slope is a learnable single-element tensor shared across the layer
inline Tensor prelu(const Tensor& a, const Tensor& slope, Tape* tape = nullptr) {
    if (slope.numel() != 1) throw ShapeError("prelu: slope must be a scalar tensor");
    const bool tracked = track(tape, {&a, &slope});
    Tensor out = detail::make_out(a.shape(), tracked);
    const float s = slope.item();
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) {
        const float x = a.values()[i];
        out.mutable_values()[i] = x >= 0.0f ? x : s * x;
    }
    if (tracked) {
        auto da = a.data_ptr(), ds = slope.data_ptr();
        auto dout = out.data_ptr();
        tape->record([da, ds, dout, n] {
            const float s2 = ds->v[0];
            double slope_acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const float x = da->v[i];
                if (da->requires_grad)
                    da->g[i] += dout->g[i] * (x >= 0.0f ? 1.0f : s2);
                if (ds->requires_grad && x < 0.0f)
                    slope_acc += static_cast<double>(dout->g[i]) * x;
            }
            if (ds->requires_grad) ds->g[0] += static_cast<float>(slope_acc);
        });
    }
    return out;
}

inline Tensor sigmoid(const Tensor& a, Tape* tape = nullptr) {
    const bool tracked = track(tape, {&a});
    Tensor out = detail::make_out(a.shape(), tracked);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i)
        out.mutable_values()[i] = 1.0f / (1.0f + std::exp(-a.values()[i]));
    if (tracked) {
        auto da = a.data_ptr();
        auto dout = out.data_ptr();
        tape->record([da, dout, n] {
            for (std::size_t i = 0; i < n; ++i) {
                const float y = dout->v[i];
                da->g[i] += dout->g[i] * y * (1.0f - y);
            }
        });
    }
    return out;
}

inline Tensor tanh_act(const Tensor& a, Tape* tape = nullptr) {
    const bool tracked = track(tape, {&a});
    Tensor out = detail::make_out(a.shape(), tracked);
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i)
        out.mutable_values()[i] = std::tanh(a.values()[i]);
    if (tracked) {
        auto da = a.data_ptr();
        auto dout = out.data_ptr();
        tape->record([da, dout, n] {
            for (std::size_t i = 0; i < n; ++i) {
                const float y = dout->v[i];
                da->g[i] += dout->g[i] * (1.0f - y * y);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions (64-bit accumulation)
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& a, Tape* tape = nullptr) {
    const bool tracked = track(tape, {&a});
    double acc = 0.0;
    for (float x : a.values()) acc += x;
    Tensor out = detail::make_out({1}, tracked);
    out.mutable_values()[0] = static_cast<float>(acc);
    if (tracked) {
        auto da = a.data_ptr();
        auto dout = out.data_ptr();
        tape->record([da, dout] {
            const float g = dout->g[0];
            for (auto& gi : da->g) gi += g;
        });
    }
    return out;
}

inline Tensor mean_all(const Tensor& a, Tape* tape = nullptr) {
    Tensor s = sum_all(a, tape);
    return scale(s, 1.0f / static_cast<float>(a.numel()), tape);
}

// ---------------------------------------------------------------------------
// broadcast gates (attention)
// ---------------------------------------------------------------------------

// x[B,C,H,W] * gate[B,C,1,1]
inline Tensor mul_channel_gate(const Tensor& x, const Tensor& gate, Tape* tape = nullptr) {
    if (x.rank() != 4 || gate.rank() != 4 || gate.dim(2) != 1 || gate.dim(3) != 1 ||
        gate.dim(0) != x.dim(0) || gate.dim(1) != x.dim(1))
        throw ShapeError("mul_channel_gate: gate must be [B,C,1,1] matching x");
    const bool tracked = track(tape, {&x, &gate});
    Tensor out = detail::make_out(x.shape(), tracked);
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float g = gate.values()[b * C + c];
            const std::size_t base = (static_cast<std::size_t>(b) * C + c) * HW;
            for (int i = 0; i < HW; ++i)
                out.mutable_values()[base + i] = x.values()[base + i] * g;
        }
    if (tracked) {
        auto dx = x.data_ptr(), dg = gate.data_ptr();
        auto dout = out.data_ptr();
        tape->record([dx, dg, dout, B, C, HW] {
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const float g = dg->v[b * C + c];
                    const std::size_t base = (static_cast<std::size_t>(b) * C + c) * HW;
                    double acc = 0.0;
                    for (int i = 0; i < HW; ++i) {
                        const float go = dout->g[base + i];
                        if (dx->requires_grad) dx->g[base + i] += go * g;
                        acc += static_cast<double>(go) * dx->v[base + i];
                    }
                    if (dg->requires_grad) dg->g[b * C + c] += static_cast<float>(acc);
                }
        });
    }
    return out;
}

// x[B,C,H,W] * map[B,1,H,W]
inline Tensor mul_spatial_gate(const Tensor& x, const Tensor& map, Tape* tape = nullptr) {
    if (x.rank() != 4 || map.rank() != 4 || map.dim(1) != 1 ||
        map.dim(0) != x.dim(0) || map.dim(2) != x.dim(2) || map.dim(3) != x.dim(3))
        throw ShapeError("mul_spatial_gate: map must be [B,1,H,W] matching x");
    const bool tracked = track(tape, {&x, &map});
    Tensor out = detail::make_out(x.shape(), tracked);
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(b) * C + c) * HW;
            const std::size_t mbase = static_cast<std::size_t>(b) * HW;
            for (int i = 0; i < HW; ++i)
                out.mutable_values()[base + i] = x.values()[base + i] * map.values()[mbase + i];
        }
    if (tracked) {
        auto dx = x.data_ptr(), dm = map.data_ptr();
        auto dout = out.data_ptr();
        tape->record([dx, dm, dout, B, C, HW] {
            for (int b = 0; b < B; ++b) {
                const std::size_t mbase = static_cast<std::size_t>(b) * HW;
                for (int c = 0; c < C; ++c) {
                    const std::size_t base = (static_cast<std::size_t>(b) * C + c) * HW;
                    for (int i = 0; i < HW; ++i) {
                        const float go = dout->g[base + i];
                        if (dx->requires_grad) dx->g[base + i] += go * dm->v[mbase + i];
                        if (dm->requires_grad) dm->g[mbase + i] += go * dx->v[base + i];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolution (im2col + GEMM; cross-correlation, zero padding)
// ---------------------------------------------------------------------------

namespace detail {

inline void im2col(const TensorData& x, int b, int k, int stride, int pad,
                   int Ho, int Wo, Eigen::MatrixXf& col) {
    const int Cin = x.shape[1], H = x.shape[2], W = x.shape[3];
    col.resize(Cin * k * k, Ho * Wo);
    const float* xb = x.v.data() + static_cast<std::size_t>(b) * Cin * H * W;
    for (int ci = 0; ci < Cin; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const int row = (ci * k + ky) * k + kx;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        col(row, oy * Wo + ox) =
                            (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                ? xb[(static_cast<std::size_t>(ci) * H + iy) * W + ix]
                                : 0.0f;
                    }
                }
            }
}

inline void col2im_acc(const Eigen::MatrixXf& col, TensorData& gx, int b, int k,
                       int stride, int pad, int Ho, int Wo) {
    const int Cin = gx.shape[1], H = gx.shape[2], W = gx.shape[3];
    float* gb = gx.g.data() + static_cast<std::size_t>(b) * Cin * H * W;
    for (int ci = 0; ci < Cin; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const int row = (ci * k + ky) * k + kx;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= W) continue;
                        gb[(static_cast<std::size_t>(ci) * H + iy) * W + ix] +=
                            col(row, oy * Wo + ox);
                    }
                }
            }
}

} // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                     int stride = 1, int padding = 0, Tape* tape = nullptr) {
    if (x.rank() != 4 || w.rank() != 4)
        throw ShapeError("conv2d: x and w must be rank-4");
    const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != Cin)
        throw ShapeError("conv2d: weight expects " + std::to_string(w.dim(1)) +
                         " input channels, got " + std::to_string(Cin));
    if (kh != kw || kh % 2 == 0)
        throw ShapeError("conv2d: kernel must be square with odd side");
    if (bias.numel() != static_cast<std::size_t>(Cout))
        throw ShapeError("conv2d: bias size must equal Cout");
    if (padding < 0 || stride < 1) throw ShapeError("conv2d: bad stride/padding");
    if (H + 2 * padding < kh || W + 2 * padding < kw)
        throw ShapeError("conv2d: input smaller than kernel");
    const int Ho = (H + 2 * padding - kh) / stride + 1;
    const int Wo = (W + 2 * padding - kw) / stride + 1;

    const bool tracked = track(tape, {&x, &w, &bias});
    Tensor out = detail::make_out({B, Cout, Ho, Wo}, tracked);

    Eigen::Map<const MatRM> wmat(w.values().data(), Cout, Cin * kh * kw);
    Eigen::MatrixXf col;
    for (int b = 0; b < B; ++b) {
        detail::im2col(*x.data_ptr(), b, kh, stride, padding, Ho, Wo, col);
        Eigen::Map<MatRM> ymat(out.mutable_values().data() +
                                   static_cast<std::size_t>(b) * Cout * Ho * Wo,
                               Cout, Ho * Wo);
        ymat.noalias() = wmat * col;
        for (int co = 0; co < Cout; ++co)
            ymat.row(co).array() += bias.values()[co];
    }

    if (tracked) {
        auto dx = x.data_ptr();
        auto dw = w.data_ptr();
        auto db = bias.data_ptr();
        auto dout = out.data_ptr();
        const int k = kh, s = stride, p = padding;
        tape->record([dx, dw, db, dout, B, Cin, Cout, Ho, Wo, k, s, p] {
            Eigen::MatrixXf col2;
            for (int b = 0; b < B; ++b) {
                Eigen::Map<const MatRM> gy(dout->g.data() +
                                               static_cast<std::size_t>(b) * Cout * Ho * Wo,
                                           Cout, Ho * Wo);
                if (dw->requires_grad || dx->requires_grad)
                    detail::im2col(*dx, b, k, s, p, Ho, Wo, col2);
                if (dw->requires_grad) {
                    Eigen::Map<MatRM> gw(dw->g.data(), Cout, Cin * k * k);
                    gw.noalias() += gy * col2.transpose();
                }
                if (db->requires_grad)
                    for (int co = 0; co < Cout; ++co)
                        db->g[co] += gy.row(co).sum();
                if (dx->requires_grad) {
                    Eigen::Map<const MatRM> wm(dw->v.data(), Cout, Cin * k * k);
                    Eigen::MatrixXf gcol = wm.transpose() * gy;
                    detail::col2im_acc(gcol, *dx, b, k, s, p, Ho, Wo);
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

struct BnStats {
    Tensor running_mean; // [C], mutated during training, never on the tape
    Tensor running_var;  // [C]
};

inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         BnStats& stats, bool training, Tape* tape = nullptr,
                         float eps = 1e-5f, float momentum = 0.1f) {
    if (x.rank() != 4) throw ShapeError("batch_norm: x must be [B,C,H,W]");
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (gamma.numel() != static_cast<std::size_t>(C) ||
        beta.numel() != static_cast<std::size_t>(C))
        throw ShapeError("batch_norm: gamma/beta must have C elements");
    const std::size_t N = static_cast<std::size_t>(B) * HW;
    if (training && N < 2)
        throw ShapeError("batch_norm: train mode needs B*H*W >= 2");

    const bool tracked = track(tape, {&x, &gamma, &beta});
    Tensor out = detail::make_out(x.shape(), tracked);

    std::vector<float> mean(C), inv_std(C);
    if (training) {
        for (int c = 0; c < C; ++c) {
            double m = 0.0, v = 0.0;
            for (int b = 0; b < B; ++b) {
                const float* p = x.values().data() +
                                 (static_cast<std::size_t>(b) * C + c) * HW;
                for (int i = 0; i < HW; ++i) m += p[i];
            }
            m /= static_cast<double>(N);
            for (int b = 0; b < B; ++b) {
                const float* p = x.values().data() +
                                 (static_cast<std::size_t>(b) * C + c) * HW;
                for (int i = 0; i < HW; ++i) {
                    const double d = p[i] - m;
                    v += d * d;
                }
            }
            const double var_biased = v / static_cast<double>(N);
            mean[c] = static_cast<float>(m);
            inv_std[c] = static_cast<float>(1.0 / std::sqrt(var_biased + eps));
            const double var_unbiased = N > 1 ? v / static_cast<double>(N - 1) : var_biased;
            auto& rm = stats.running_mean.mutable_values();
            auto& rv = stats.running_var.mutable_values();
            rm[c] = (1.0f - momentum) * rm[c] + momentum * static_cast<float>(m);
            rv[c] = (1.0f - momentum) * rv[c] + momentum * static_cast<float>(var_unbiased);
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean[c] = stats.running_mean.values()[c];
            inv_std[c] = 1.0f / std::sqrt(stats.running_var.values()[c] + eps);
        }
    }

    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(b) * C + c) * HW;
            const float g = gamma.values()[c], be = beta.values()[c];
            for (int i = 0; i < HW; ++i)
                out.mutable_values()[base + i] =
                    (x.values()[base + i] - mean[c]) * inv_std[c] * g + be;
        }

    if (tracked) {
        auto dx = x.data_ptr(), dg = gamma.data_ptr(), db = beta.data_ptr();
        auto dout = out.data_ptr();
        tape->record([dx, dg, db, dout, B, C, HW, N, mean, inv_std, training] {
            for (int c = 0; c < C; ++c) {
                // per-channel sums of dy and dy*xhat
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int b = 0; b < B; ++b) {
                    const std::size_t base = (static_cast<std::size_t>(b) * C + c) * HW;
                    for (int i = 0; i < HW; ++i) {
                        const float dy = dout->g[base + i];
                        const float xhat = (dx->v[base + i] - mean[c]) * inv_std[c];
                        sum_dy += dy;
                        sum_dy_xhat += static_cast<double>(dy) * xhat;
                    }
                }
                if (db->requires_grad) db->g[c] += static_cast<float>(sum_dy);
                if (dg->requires_grad) dg->g[c] += static_cast<float>(sum_dy_xhat);
                if (!dx->requires_grad) continue;
                const float g = dg->v[c];
                if (training) {
                    const float mdy = static_cast<float>(sum_dy / static_cast<double>(N));
                    const float mdyx = static_cast<float>(sum_dy_xhat / static_cast<double>(N));
                    for (int b = 0; b < B; ++b) {
                        const std::size_t base = (static_cast<std::size_t>(b) * C + c) * HW;
                        for (int i = 0; i < HW; ++i) {
                            const float xhat = (dx->v[base + i] - mean[c]) * inv_std[c];
                            dx->g[base + i] +=
                                g * inv_std[c] * (dout->g[base + i] - mdy - xhat * mdyx);
                        }
                    }
                } else {
                    for (int b = 0; b < B; ++b) {
                        const std::size_t base = (static_cast<std::size_t>(b) * C + c) * HW;
                        for (int i = 0; i < HW; ++i)
                            dx->g[base + i] += dout->g[base + i] * g * inv_std[c];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

// max over channels -> [B,1,H,W]
inline Tensor max_pool_spatial(const Tensor& x, Tape* tape = nullptr) {
    if (x.rank() != 4) throw ShapeError("max_pool_spatial: x must be [B,C,H,W]");
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    const bool tracked = track(tape, {&x});
    Tensor out = detail::make_out({B, 1, x.dim(2), x.dim(3)}, tracked);
    std::vector<int> argmax(static_cast<std::size_t>(B) * HW);
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < HW; ++i) {
            float best = x.values()[(static_cast<std::size_t>(b) * C) * HW + i];
            int bc = 0;
            for (int c = 1; c < C; ++c) {
                const float v = x.values()[(static_cast<std::size_t>(b) * C + c) * HW + i];
                if (v > best) { best = v; bc = c; }
            }
            out.mutable_values()[static_cast<std::size_t>(b) * HW + i] = best;
            argmax[static_cast<std::size_t>(b) * HW + i] = bc;
        }
    if (tracked) {
        auto dx = x.data_ptr();
        auto dout = out.data_ptr();
        tape->record([dx, dout, B, C, HW, argmax = std::move(argmax)] {
            for (int b = 0; b < B; ++b)
                for (int i = 0; i < HW; ++i) {
                    const int c = argmax[static_cast<std::size_t>(b) * HW + i];
                    dx->g[(static_cast<std::size_t>(b) * C + c) * HW + i] +=
                        dout->g[static_cast<std::size_t>(b) * HW + i];
                }
        });
    }
    return out;
}

// mean over channels -> [B,1,H,W]
inline Tensor avg_pool_spatial(const Tensor& x, Tape* tape = nullptr) {
    if (x.rank() != 4) throw ShapeError("avg_pool_spatial: x must be [B,C,H,W]");
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    const bool tracked = track(tape, {&x});
    Tensor out = detail::make_out({B, 1, x.dim(2), x.dim(3)}, tracked);
    const float inv = 1.0f / static_cast<float>(C);
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < HW; ++i) {
            double acc = 0.0;
            for (int c = 0; c < C; ++c)
                acc += x.values()[(static_cast<std::size_t>(b) * C + c) * HW + i];
            out.mutable_values()[static_cast<std::size_t>(b) * HW + i] =
                static_cast<float>(acc) * inv;
        }
    if (tracked) {
        auto dx = x.data_ptr();
        auto dout = out.data_ptr();
        tape->record([dx, dout, B, C, HW, inv] {
            for (int b = 0; b < B; ++b)
                for (int i = 0; i < HW; ++i) {
                    const float g = dout->g[static_cast<std::size_t>(b) * HW + i] * inv;
                    for (int c = 0; c < C; ++c)
                        dx->g[(static_cast<std::size_t>(b) * C + c) * HW + i] += g;
                }
        });
    }
    return out;
}

// max over H,W -> [B,C,1,1]
inline Tensor global_max_pool(const Tensor& x, Tape* tape = nullptr) {
    if (x.rank() != 4) throw ShapeError("global_max_pool: x must be [B,C,H,W]");
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    const bool tracked = track(tape, {&x});
    Tensor out = detail::make_out({B, C, 1, 1}, tracked);
    std::vector<int> argmax(static_cast<std::size_t>(B) * C);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(b) * C + c) * HW;
            float best = x.values()[base];
            int bi = 0;
            for (int i = 1; i < HW; ++i)
                if (x.values()[base + i] > best) { best = x.values()[base + i]; bi = i; }
            out.mutable_values()[static_cast<std::size_t>(b) * C + c] = best;
            argmax[static_cast<std::size_t>(b) * C + c] = bi;
        }
    if (tracked) {
        auto dx = x.data_ptr();
        auto dout = out.data_ptr();
        tape->record([dx, dout, B, C, HW, argmax = std::move(argmax)] {
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const std::size_t base = (static_cast<std::size_t>(b) * C + c) * HW;
                    dx->g[base + argmax[static_cast<std::size_t>(b) * C + c]] +=
                        dout->g[static_cast<std::size_t>(b) * C + c];
                }
        });
    }
    return out;
}

// mean over H,W -> [B,C,1,1]
inline Tensor global_avg_pool(const Tensor& x, Tape* tape = nullptr) {
    if (x.rank() != 4) throw ShapeError("global_avg_pool: x must be [B,C,H,W]");
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    const bool tracked = track(tape, {&x});
    Tensor out = detail::make_out({B, C, 1, 1}, tracked);
    const float inv = 1.0f / static_cast<float>(HW);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(b) * C + c) * HW;
            double acc = 0.0;
            for (int i = 0; i < HW; ++i) acc += x.values()[base + i];
            out.mutable_values()[static_cast<std::size_t>(b) * C + c] =
                static_cast<float>(acc) * inv;
        }
    if (tracked) {
        auto dx = x.data_ptr();
        auto dout = out.data_ptr();
        tape->record([dx, dout, B, C, HW, inv] {
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const std::size_t base = (static_cast<std::size_t>(b) * C + c) * HW;
                    const float g = dout->g[static_cast<std::size_t>(b) * C + c] * inv;
                    for (int i = 0; i < HW; ++i) dx->g[base + i] += g;
                }
        });
    }
    return out;
}

// 2x2 average pooling with stride 2; even H,W required (MS-SSIM downscale)
inline Tensor avg_pool_2x2(const Tensor& x, Tape* tape = nullptr) {
    if (x.rank() != 4) throw ShapeError("avg_pool_2x2: x must be [B,C,H,W]");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw ShapeError("avg_pool_2x2: H and W must be even");
    const int Ho = H / 2, Wo = W / 2;
    const bool tracked = track(tape, {&x});
    Tensor out = detail::make_out({B, C, Ho, Wo}, tracked);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    const float s = x.at4(b, c, 2 * oy, 2 * ox) +
                                    x.at4(b, c, 2 * oy, 2 * ox + 1) +
                                    x.at4(b, c, 2 * oy + 1, 2 * ox) +
                                    x.at4(b, c, 2 * oy + 1, 2 * ox + 1);
                    out.at4(b, c, oy, ox) = 0.25f * s;
                }
    if (tracked) {
        auto dx = x.data_ptr();
        auto dout = out.data_ptr();
        tape->record([dx, dout, B, C, H, W, Ho, Wo] {
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c)
                    for (int oy = 0; oy < Ho; ++oy)
                        for (int ox = 0; ox < Wo; ++ox) {
                            const float g =
                                0.25f * dout->g[((static_cast<std::size_t>(b) * C + c) * Ho + oy) * Wo + ox];
                            const std::size_t base =
                                (static_cast<std::size_t>(b) * C + c) * H * W;
                            dx->g[base + (2 * oy) * W + 2 * ox] += g;
                            dx->g[base + (2 * oy) * W + 2 * ox + 1] += g;
                            dx->g[base + (2 * oy + 1) * W + 2 * ox] += g;
                            dx->g[base + (2 * oy + 1) * W + 2 * ox + 1] += g;
                        }
        });
    }
    return out;
}

// top-left spatial crop to H2 x W2 (used to make dims even before pooling)
inline Tensor crop_spatial(const Tensor& x, int H2, int W2, Tape* tape = nullptr) {
    if (x.rank() != 4) throw ShapeError("crop_spatial: x must be [B,C,H,W]");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H2 <= 0 || W2 <= 0 || H2 > H || W2 > W)
        throw ShapeError("crop_spatial: bad target size");
    if (H2 == H && W2 == W) return x;
    const bool tracked = track(tape, {&x});
    Tensor out = detail::make_out({B, C, H2, W2}, tracked);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H2; ++y)
                for (int xx = 0; xx < W2; ++xx)
                    out.at4(b, c, y, xx) = x.at4(b, c, y, xx);
    if (tracked) {
        auto dx = x.data_ptr();
        auto dout = out.data_ptr();
        tape->record([dx, dout, B, C, H, W, H2, W2] {
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c)
                    for (int y = 0; y < H2; ++y)
                        for (int xx = 0; xx < W2; ++xx)
                            dx->g[((static_cast<std::size_t>(b) * C + c) * H + y) * W + xx] +=
                                dout->g[((static_cast<std::size_t>(b) * C + c) * H2 + y) * W2 + xx];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// concatenation / slicing along the channel axis
// ---------------------------------------------------------------------------

inline Tensor concat_channels(const std::vector<Tensor>& xs, Tape* tape = nullptr) {
    if (xs.empty()) throw ShapeError("concat_channels: empty input list");
    const int B = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
    int Ctot = 0;
    bool any_grad = false;
    for (const Tensor& t : xs) {
        if (t.rank() != 4 || t.dim(0) != B || t.dim(2) != H || t.dim(3) != W)
            throw ShapeError("concat_channels: mismatched batch/spatial dims");
        Ctot += t.dim(1);
        any_grad = any_grad || t.requires_grad();
    }
    const bool tracked = tape && any_grad;
    Tensor out = detail::make_out({B, Ctot, H, W}, tracked);
    const int HW = H * W;
    int coff = 0;
    for (const Tensor& t : xs) {
        const int C = t.dim(1);
        for (int b = 0; b < B; ++b)
            std::copy(t.values().begin() + static_cast<std::size_t>(b) * C * HW,
                      t.values().begin() + static_cast<std::size_t>(b + 1) * C * HW,
                      out.mutable_values().begin() +
                          (static_cast<std::size_t>(b) * Ctot + coff) * HW);
        coff += C;
    }
    if (tracked) {
        std::vector<std::shared_ptr<TensorData>> ins;
        for (const Tensor& t : xs) ins.push_back(t.data_ptr());
        auto dout = out.data_ptr();
        tape->record([ins = std::move(ins), dout, B, Ctot, HW] {
            int off = 0;
            for (auto& in : ins) {
                const int C = in->shape[1];
                if (in->requires_grad)
                    for (int b = 0; b < B; ++b) {
                        const std::size_t src =
                            (static_cast<std::size_t>(b) * Ctot + off) * HW;
                        const std::size_t dst = static_cast<std::size_t>(b) * C * HW;
                        for (std::size_t i = 0; i < static_cast<std::size_t>(C) * HW; ++i)
                            in->g[dst + i] += dout->g[src + i];
                    }
                off += C;
            }
        });
    }
    return out;
}

inline Tensor slice_channels(const Tensor& x, int start, int count, Tape* tape = nullptr) {
    if (x.rank() != 4) throw ShapeError("slice_channels: x must be [B,C,H,W]");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (start < 0 || count <= 0 || start + count > C)
        throw ShapeError("slice_channels: range out of bounds");
    const bool tracked = track(tape, {&x});
    Tensor out = detail::make_out({B, count, H, W}, tracked);
    const int HW = H * W;
    for (int b = 0; b < B; ++b)
        std::copy(x.values().begin() + (static_cast<std::size_t>(b) * C + start) * HW,
                  x.values().begin() + (static_cast<std::size_t>(b) * C + start + count) * HW,
                  out.mutable_values().begin() + static_cast<std::size_t>(b) * count * HW);
    if (tracked) {
        auto dx = x.data_ptr();
        auto dout = out.data_ptr();
        tape->record([dx, dout, B, C, HW, start, count] {
            for (int b = 0; b < B; ++b) {
                const std::size_t dst = (static_cast<std::size_t>(b) * C + start) * HW;
                const std::size_t src = static_cast<std::size_t>(b) * count * HW;
                for (std::size_t i = 0; i < static_cast<std::size_t>(count) * HW; ++i)
                    dx->g[dst + i] += dout->g[src + i];
            }
        });
    }
    return out;
}

} // namespace amfusion
