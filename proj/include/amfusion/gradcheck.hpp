#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "amfusion/losses.hpp"
#include "amfusion/ops.hpp"
#include "amfusion/ref64.hpp"
#include "amfusion/rng.hpp"

namespace amfusion {

inline constexpr double kGradCheckTol = 1e-3;

struct GradCheckResult {
    std::string op;
    double worst_rel_err = 0.0;
    bool passed = false;
};

namespace detail {

// f32 op under test (graph path) and its 64-bit reference forward. Central
// differences run on the reference: the f32 forward's own rounding at h=1e-3
// would otherwise dominate the quotient for small gradient entries.
using OpFn = std::function<Tensor(const std::vector<Tensor>&, Tape*)>;
using RefFn = std::function<ref64::D(const std::vector<ref64::D>&)>;
using RefLossFn = std::function<double(const std::vector<ref64::D>&)>;

inline double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-6});
}

inline double gradcheck_elems(std::vector<Tensor>& inputs, const OpFn& op,
                              const Tensor* r, const RefLossFn& ref_loss,
                              double h = 1e-3) {
    Tape tape;
    for (auto& t : inputs) t.set_requires_grad(true);
    Tensor y = op(inputs, &tape);
    Tensor loss = r ? sum_all(mul(y, *r, &tape), &tape) : y;
    backward(loss, tape);
    std::vector<std::vector<float>> grads;
    grads.reserve(inputs.size());
    for (auto& t : inputs) grads.push_back(t.grad());
    for (auto& t : inputs) t.set_requires_grad(false);

    std::vector<ref64::D> din;
    din.reserve(inputs.size());
    for (const auto& t : inputs) din.push_back(ref64::from(t));

    double worst = 0.0;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti)
        for (std::size_t i = 0; i < din[ti].v.size(); ++i) {
            const double orig = din[ti].v[i];
            // snap the probes to f32 grid points, then divide by the exact step
            const double hi = static_cast<float>(orig + h);
            const double lo = static_cast<float>(orig - h);
            din[ti].v[i] = hi;
            const double fp = ref_loss(din);
            din[ti].v[i] = lo;
            const double fm = ref_loss(din);
            din[ti].v[i] = orig;
            worst = std::max(worst, rel_err((fp - fm) / (hi - lo), grads[ti][i]));
        }
    return worst;
}

inline double gradcheck_op(std::vector<Tensor>& inputs, const OpFn& op,
                           const RefFn& ref, const Tensor& r, double h = 1e-3) {
    RefLossFn weighted = [&ref, &r](const std::vector<ref64::D>& din) {
        const ref64::D y = ref(din);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.v.size(); ++i)
            acc += static_cast<double>(r.values()[i]) * y.v[i];
        return acc;
    };
    return gradcheck_elems(inputs, op, &r, weighted, h);
}

inline double gradcheck_loss(std::vector<Tensor>& inputs, const OpFn& loss_fn,
                             const RefLossFn& ref, double h = 1e-3) {
    return gradcheck_elems(inputs, loss_fn, nullptr, ref, h);
}

inline Tensor rand_tensor(Rng& rng, Shape shape, float lo, float hi) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.mutable_values()) v = rng.uniform(lo, hi);
    return t;
}

// values with |v| in [0.3, 1.5]: safe margin around the kinks of
// abs/relu/prelu under the finite-difference step
inline Tensor rand_tensor_signed(Rng& rng, Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.mutable_values()) {
        const float mag = rng.uniform(0.3f, 1.5f);
        v = rng.next_below(2) ? mag : -mag;
    }
    return t;
}

} // namespace detail

// Finite-difference verification of every differentiable op and loss.
// Each entry runs with several random seeds; the reported figure is the worst
// relative error across seeds and elements.
inline std::vector<GradCheckResult> gradcheck_suite(std::uint64_t base_seed,
                                                    int seeds_per_op = 5) {
    using detail::OpFn;
    using detail::RefFn;
    using detail::RefLossFn;
    using detail::gradcheck_loss;
    using detail::gradcheck_op;
    using detail::rand_tensor;
    using detail::rand_tensor_signed;
    namespace r64 = ref64;

    std::vector<GradCheckResult> results;
    auto run = [&](const std::string& name,
                   const std::function<double(Rng&)>& one_seed) {
        GradCheckResult r;
        r.op = name;
        for (int s = 0; s < seeds_per_op; ++s) {
            Rng rng(base_seed * 1000003ULL + static_cast<std::uint64_t>(s) * 7919ULL +
                    std::hash<std::string>{}(name));
            r.worst_rel_err = std::max(r.worst_rel_err, one_seed(rng));
        }
        r.passed = r.worst_rel_err < kGradCheckTol;
        results.push_back(r);
    };

    const Shape s4{2, 3, 4, 4};

    auto simple = [&](const char* name, OpFn fn, RefFn ref, Shape in_shape,
                      Shape out_shape, float lo, float hi, bool signed_vals,
                      int arity = 1) {
        run(name, [&, fn, ref, in_shape, out_shape, lo, hi, signed_vals, arity](Rng& rng) {
            std::vector<Tensor> in;
            for (int a = 0; a < arity; ++a)
                in.push_back(signed_vals ? rand_tensor_signed(rng, in_shape)
                                         : rand_tensor(rng, in_shape, lo, hi));
            Tensor r = rand_tensor(rng, out_shape, 0.5f, 1.5f);
            return gradcheck_op(in, fn, ref, r);
        });
    };

    simple("add",
           [](const std::vector<Tensor>& x, Tape* t) { return add(x[0], x[1], t); },
           [](const std::vector<r64::D>& x) { return r64::add(x[0], x[1]); },
           s4, s4, 0, 0, true, 2);
    simple("sub",
           [](const std::vector<Tensor>& x, Tape* t) { return sub(x[0], x[1], t); },
           [](const std::vector<r64::D>& x) { return r64::sub(x[0], x[1]); },
           s4, s4, 0, 0, true, 2);
    simple("mul",
           [](const std::vector<Tensor>& x, Tape* t) { return mul(x[0], x[1], t); },
           [](const std::vector<r64::D>& x) { return r64::mul(x[0], x[1]); },
           s4, s4, 0, 0, true, 2);
    simple("div",
           [](const std::vector<Tensor>& x, Tape* t) { return div(x[0], x[1], t); },
           [](const std::vector<r64::D>& x) { return r64::div(x[0], x[1]); },
           s4, s4, 0.5f, 1.5f, false, 2);
    simple("scale",
           [](const std::vector<Tensor>& x, Tape* t) { return scale(x[0], 0.75f, t); },
           [](const std::vector<r64::D>& x) { return r64::scale(x[0], 0.75f); },
           s4, s4, 0, 0, true);
    simple("add_const",
           [](const std::vector<Tensor>& x, Tape* t) { return add_const(x[0], 0.3f, t); },
           [](const std::vector<r64::D>& x) { return r64::add_const(x[0], 0.3f); },
           s4, s4, 0, 0, true);
    simple("abs",
           [](const std::vector<Tensor>& x, Tape* t) { return abs_elem(x[0], t); },
           [](const std::vector<r64::D>& x) { return r64::abs_elem(x[0]); },
           s4, s4, 0, 0, true);
    simple("sqrt",
           [](const std::vector<Tensor>& x, Tape* t) { return sqrt_elem(x[0], t); },
           [](const std::vector<r64::D>& x) { return r64::sqrt_elem(x[0]); },
           s4, s4, 0.25f, 2.0f, false);
    simple("relu",
           [](const std::vector<Tensor>& x, Tape* t) { return relu(x[0], t); },
           [](const std::vector<r64::D>& x) { return r64::relu(x[0]); },
           s4, s4, 0, 0, true);
    simple("sigmoid",
           [](const std::vector<Tensor>& x, Tape* t) { return sigmoid(x[0], t); },
           [](const std::vector<r64::D>& x) { return r64::sigmoid(x[0]); },
           s4, s4, 0, 0, true);
    simple("tanh",
           [](const std::vector<Tensor>& x, Tape* t) { return tanh_act(x[0], t); },
           [](const std::vector<r64::D>& x) { return r64::tanh_act(x[0]); },
           s4, s4, 0, 0, true);
    simple("avg_pool_spatial",
           [](const std::vector<Tensor>& x, Tape* t) { return avg_pool_spatial(x[0], t); },
           [](const std::vector<r64::D>& x) { return r64::avg_pool_spatial(x[0]); },
           s4, {2, 1, 4, 4}, 0, 0, true);
    simple("global_avg_pool",
           [](const std::vector<Tensor>& x, Tape* t) { return global_avg_pool(x[0], t); },
           [](const std::vector<r64::D>& x) { return r64::global_avg_pool(x[0]); },
           s4, {2, 3, 1, 1}, 0, 0, true);
    simple("avg_pool_2x2",
           [](const std::vector<Tensor>& x, Tape* t) { return avg_pool_2x2(x[0], t); },
           [](const std::vector<r64::D>& x) { return r64::avg_pool_2x2(x[0]); },
           {2, 2, 4, 6}, {2, 2, 2, 3}, 0, 0, true);
    simple("crop_spatial",
           [](const std::vector<Tensor>& x, Tape* t) { return crop_spatial(x[0], 3, 3, t); },
           [](const std::vector<r64::D>& x) { return r64::crop_spatial(x[0], 3, 3); },
           s4, {2, 3, 3, 3}, 0, 0, true);
    simple("slice_channels",
           [](const std::vector<Tensor>& x, Tape* t) { return slice_channels(x[0], 1, 2, t); },
           [](const std::vector<r64::D>& x) { return r64::slice_channels(x[0], 1, 2); },
           s4, {2, 2, 4, 4}, 0, 0, true);

    // max pools need well-separated values so the argmax never flips under h
    auto maxpool = [&](const char* name, OpFn fn, RefFn ref, Shape out_shape) {
        run(name, [&, fn, ref, out_shape](Rng& rng) {
            Tensor x = Tensor::zeros(s4);
            auto& v = x.mutable_values();
            for (std::size_t i = 0; i < v.size(); ++i)
                v[i] = -2.0f + 0.05f * static_cast<float>(i);
            for (std::size_t i = v.size(); i > 1; --i)
                std::swap(v[i - 1], v[rng.next_below(i)]);
            std::vector<Tensor> in{x};
            Tensor r = rand_tensor(rng, out_shape, 0.5f, 1.5f);
            return gradcheck_op(in, fn, ref, r);
        });
    };
    maxpool("max_pool_spatial",
            [](const std::vector<Tensor>& x, Tape* t) { return max_pool_spatial(x[0], t); },
            [](const std::vector<r64::D>& x) { return r64::max_pool_spatial(x[0]); },
            {2, 1, 4, 4});
    maxpool("global_max_pool",
            [](const std::vector<Tensor>& x, Tape* t) { return global_max_pool(x[0], t); },
            [](const std::vector<r64::D>& x) { return r64::global_max_pool(x[0]); },
            {2, 3, 1, 1});

    run("prelu", [&](Rng& rng) {
        std::vector<Tensor> in{rand_tensor_signed(rng, s4),
                               Tensor::scalar(rng.uniform(0.1f, 0.6f))};
        Tensor r = rand_tensor(rng, s4, 0.5f, 1.5f);
        return gradcheck_op(in,
                            [](const std::vector<Tensor>& x, Tape* t) {
                                return prelu(x[0], x[1], t);
                            },
                            [](const std::vector<r64::D>& x) {
                                return r64::prelu(x[0], x[1].v[0]);
                            },
                            r);
    });

    run("sum_all", [&](Rng& rng) {
        std::vector<Tensor> in{rand_tensor_signed(rng, s4)};
        return gradcheck_loss(in,
                              [](const std::vector<Tensor>& x, Tape* t) {
                                  return sum_all(x[0], t);
                              },
                              [](const std::vector<r64::D>& x) { return r64::sum(x[0]); });
    });
    run("mean_all", [&](Rng& rng) {
        std::vector<Tensor> in{rand_tensor_signed(rng, s4)};
        return gradcheck_loss(in,
                              [](const std::vector<Tensor>& x, Tape* t) {
                                  return mean_all(x[0], t);
                              },
                              [](const std::vector<r64::D>& x) { return r64::mean(x[0]); });
    });

    run("mul_channel_gate", [&](Rng& rng) {
        std::vector<Tensor> in{rand_tensor_signed(rng, s4),
                               rand_tensor(rng, {2, 3, 1, 1}, 0.2f, 0.9f)};
        Tensor r = rand_tensor(rng, s4, 0.5f, 1.5f);
        return gradcheck_op(in,
                            [](const std::vector<Tensor>& x, Tape* t) {
                                return mul_channel_gate(x[0], x[1], t);
                            },
                            [](const std::vector<r64::D>& x) {
                                return r64::mul_channel_gate(x[0], x[1]);
                            },
                            r);
    });
    run("mul_spatial_gate", [&](Rng& rng) {
        std::vector<Tensor> in{rand_tensor_signed(rng, s4),
                               rand_tensor(rng, {2, 1, 4, 4}, 0.2f, 0.9f)};
        Tensor r = rand_tensor(rng, s4, 0.5f, 1.5f);
        return gradcheck_op(in,
                            [](const std::vector<Tensor>& x, Tape* t) {
                                return mul_spatial_gate(x[0], x[1], t);
                            },
                            [](const std::vector<r64::D>& x) {
                                return r64::mul_spatial_gate(x[0], x[1]);
                            },
                            r);
    });

    run("concat_channels", [&](Rng& rng) {
        std::vector<Tensor> in{rand_tensor_signed(rng, {2, 2, 3, 3}),
                               rand_tensor_signed(rng, {2, 3, 3, 3})};
        Tensor r = rand_tensor(rng, {2, 5, 3, 3}, 0.5f, 1.5f);
        return gradcheck_op(in,
                            [](const std::vector<Tensor>& x, Tape* t) {
                                return concat_channels({x[0], x[1]}, t);
                            },
                            [](const std::vector<r64::D>& x) {
                                return r64::concat_channels({x[0], x[1]});
                            },
                            r);
    });

    auto conv_case = [&](const char* name, int stride, int pad) {
        run(name, [&, stride, pad](Rng& rng) {
            std::vector<Tensor> in{rand_tensor_signed(rng, {2, 3, 6, 6}),
                                   rand_tensor(rng, {4, 3, 3, 3}, -0.5f, 0.5f),
                                   rand_tensor(rng, {4}, -0.5f, 0.5f)};
            Tensor probe = conv2d(in[0], in[1], in[2], stride, pad, nullptr);
            Tensor r = rand_tensor(rng, probe.shape(), 0.5f, 1.5f);
            return gradcheck_op(in,
                                [stride, pad](const std::vector<Tensor>& x, Tape* t) {
                                    return conv2d(x[0], x[1], x[2], stride, pad, t);
                                },
                                [stride, pad](const std::vector<r64::D>& x) {
                                    return r64::conv2d(x[0], x[1], x[2], stride, pad);
                                },
                                r);
        });
    };
    conv_case("conv2d_pad1", 1, 1);
    conv_case("conv2d_stride2", 2, 0);

    run("batch_norm_train", [&](Rng& rng) {
        std::vector<Tensor> in{rand_tensor_signed(rng, s4),
                               rand_tensor(rng, {3}, 0.5f, 1.5f),
                               rand_tensor(rng, {3}, -0.5f, 0.5f)};
        Tensor r = rand_tensor(rng, s4, 0.5f, 1.5f);
        return gradcheck_op(in,
                            [](const std::vector<Tensor>& x, Tape* t) {
                                // fresh running stats: the update is a side effect
                                BnStats stats{Tensor::zeros({3}), Tensor::full({3}, 1.0f)};
                                return batch_norm(x[0], x[1], x[2], stats, true, t);
                            },
                            [](const std::vector<r64::D>& x) {
                                const r64::D dummy = r64::make({3});
                                return r64::batch_norm(x[0], x[1], x[2], dummy, dummy, true);
                            },
                            r);
    });
    run("batch_norm_eval", [&](Rng& rng) {
        Tensor rm = rand_tensor(rng, {3}, -0.3f, 0.3f);
        Tensor rv = rand_tensor(rng, {3}, 0.5f, 1.5f);
        std::vector<Tensor> in{rand_tensor_signed(rng, s4),
                               rand_tensor(rng, {3}, 0.5f, 1.5f),
                               rand_tensor(rng, {3}, -0.5f, 0.5f)};
        Tensor r = rand_tensor(rng, s4, 0.5f, 1.5f);
        return gradcheck_op(in,
                            [rm, rv](const std::vector<Tensor>& x, Tape* t) {
                                BnStats stats{rm, rv};
                                return batch_norm(x[0], x[1], x[2], stats, false, t);
                            },
                            [drm = r64::from(rm), drv = r64::from(rv)](const std::vector<r64::D>& x) {
                                return r64::batch_norm(x[0], x[1], x[2], drm, drv, false);
                            },
                            r);
    });

    const Shape img{1, 1, 12, 12};
    SsimConfig small_cfg;
    small_cfg.window = 5;
    small_cfg.scales = 2;

    auto loss_case = [&](const char* name, OpFn fn, RefLossFn ref, bool offset_pair) {
        run(name, [&, fn, ref, offset_pair](Rng& rng) {
            Tensor o = rand_tensor(rng, img, -0.8f, 0.8f);
            Tensor i;
            if (offset_pair) {
                // keep every |o - i| >= 0.2: margin for the L1 kink
                i = Tensor::zeros(img);
                for (std::size_t k = 0; k < i.numel(); ++k) {
                    const float off = rng.uniform(0.2f, 0.6f);
                    i.mutable_values()[k] =
                        o.values()[k] + (rng.next_below(2) ? off : -off);
                }
            } else {
                i = rand_tensor(rng, img, -0.8f, 0.8f);
            }
            std::vector<Tensor> in{o, i};
            return gradcheck_loss(in, fn, ref);
        });
    };
    loss_case("loss_pixel",
              [](const std::vector<Tensor>& x, Tape* t) { return loss_pixel(x[0], x[1], t); },
              [](const std::vector<r64::D>& x) { return r64::loss_pixel(x[0], x[1]); },
              false);
    loss_case("loss_ssim",
              [](const std::vector<Tensor>& x, Tape* t) { return loss_ssim(x[0], x[1], {}, t); },
              [](const std::vector<r64::D>& x) { return r64::loss_ssim(x[0], x[1], {}); },
              false);
    loss_case("loss_msssim",
              [small_cfg](const std::vector<Tensor>& x, Tape* t) {
                  return loss_msssim(x[0], x[1], small_cfg, t);
              },
              [small_cfg](const std::vector<r64::D>& x) {
                  return r64::loss_msssim(x[0], x[1], small_cfg);
              },
              false);
    loss_case("loss_l1",
              [](const std::vector<Tensor>& x, Tape* t) { return loss_l1(x[0], x[1], t); },
              [](const std::vector<r64::D>& x) { return r64::loss_l1(x[0], x[1]); },
              true);
    // the plane offset keeps the Sobel-difference field away from its kink
    auto plane_pair = [&](Rng& rng) {
        Tensor o = rand_tensor(rng, img, -0.8f, 0.8f);
        Tensor i = Tensor::zeros(img);
        const float a = rng.uniform(0.1f, 0.2f), b = rng.uniform(0.1f, 0.2f);
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 12; ++x)
                i.at4(0, 0, y, x) = o.at4(0, 0, y, x) + a * x + b * y + 0.5f;
        return std::vector<Tensor>{o, i};
    };
    run("loss_grad", [&](Rng& rng) {
        auto in = plane_pair(rng);
        return gradcheck_loss(in,
                              [](const std::vector<Tensor>& x, Tape* t) {
                                  return loss_grad(x[0], x[1], t);
                              },
                              [](const std::vector<r64::D>& x) {
                                  return r64::loss_grad(x[0], x[1]);
                              });
    });
    run("loss_total", [&](Rng& rng) {
        auto in = plane_pair(rng);
        return gradcheck_loss(in,
                              [small_cfg](const std::vector<Tensor>& x, Tape* t) {
                                  return loss_total(x[0], x[1], LossWeights{}, small_cfg, t);
                              },
                              [small_cfg](const std::vector<r64::D>& x) {
                                  return r64::loss_total(x[0], x[1], LossWeights{}, small_cfg);
                              });
    });

    return results;
}

} // namespace amfusion
