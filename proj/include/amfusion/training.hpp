#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "amfusion/amfw.hpp"
#include "amfusion/losses.hpp"
#include "amfusion/nn.hpp"
#include "amfusion/rng.hpp"

namespace amfusion {

struct TrainConfig {
    int batch_size = 2;          // 12 at paper scale
    int iterations = 200;        // optimizer steps (160 at paper scale)
    bool iterations_are_epochs = false;
    float learning_rate = 1e-3f;
    float adam_beta1 = 0.9f;
    float adam_beta2 = 0.999f;
    float adam_eps = 1e-8f;
    std::uint64_t seed = 0;
    int side = 64;               // 224 at paper scale
    bool use_attention = true;
    LossWeights weights;
    SsimConfig ssim;
    ArchConfig arch{4, 4};
    std::string checkpoint_path;
    int checkpoint_interval = 0;  // 0 disables intermediate checkpoints

    void validate() const {
        if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
        if (iterations < 1) throw ConfigError("TrainConfig: iterations must be >= 1");
        if (!(learning_rate > 0.0f)) throw ConfigError("TrainConfig: learning_rate must be > 0");
        weights.validate();
        arch.validate();
        if (side < ssim.window * (1 << (ssim.scales - 1)))
            throw ConfigError("TrainConfig: side too small for " +
                              std::to_string(ssim.scales) + " MS-SSIM scales");
    }
};

struct AdamState {
    struct Moments {
        Tensor m, v;
    };
    std::unordered_map<std::string, Moments> moments;
    long step = 0;
};

// standard bias-corrected Adam update over all trainable parameters
inline void adam_step(ModelParams& params, AdamState& state, const TrainConfig& cfg) {
    state.step += 1;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (const auto& name : params.trainable_names()) {
        Tensor& w = params.get(name);
        if (!w.requires_grad() || w.grad().size() != w.numel())
            throw ConfigError("adam_step: missing gradient for " + name);
        auto it = state.moments.find(name);
        if (it == state.moments.end())
            it = state.moments
                     .emplace(name, AdamState::Moments{Tensor::zeros(w.shape()),
                                                       Tensor::zeros(w.shape())})
                     .first;
        auto& mv = it->second;
        for (std::size_t i = 0; i < w.numel(); ++i) {
            const double g = w.grad()[i];
            double m = mv.m.values()[i] * b1 + (1.0 - b1) * g;
            double v = mv.v.values()[i] * b2 + (1.0 - b2) * g * g;
            mv.m.mutable_values()[i] = static_cast<float>(m);
            mv.v.mutable_values()[i] = static_cast<float>(v);
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            w.mutable_values()[i] -= static_cast<float>(
                cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps));
        }
    }
}

struct LossTraceRow {
    int iter = 0;
    double pixel = 0, ssim = 0, msl1 = 0, grad = 0, total = 0;
};

struct TrainResult {
    ModelParams params;
    std::vector<LossTraceRow> trace;
};

// Trains the shared autoencoder on every supplied image (IR and VIS alike are
// independent reconstruction samples). Deterministic given config + data.
inline TrainResult train(const std::vector<Tensor>& images, const TrainConfig& cfg) {
    cfg.validate();
    if (images.empty()) throw ConfigError("train: no training images");
    for (const Tensor& img : images)
        if (img.rank() != 4 || img.dim(0) != 1 || img.dim(1) != 1 ||
            img.dim(2) != cfg.side || img.dim(3) != cfg.side)
            throw ShapeError("train: images must be [1,1,side,side]");

    TrainResult result;
    result.params = init_params(cfg.arch, cfg.seed);
    result.params.set_requires_grad(true);
    AdamState opt;
    Rng sampler(cfg.seed ^ 0x5b8f1d2c3a497e60ULL);

    const int steps =
        cfg.iterations_are_epochs
            ? cfg.iterations * static_cast<int>((images.size() + cfg.batch_size - 1) /
                                                cfg.batch_size)
            : cfg.iterations;

    for (int it = 1; it <= steps; ++it) {
        Tape tape;
        result.params.zero_grad();

        LossTraceRow row;
        row.iter = it;
        Tensor batch_total;
        for (int s = 0; s < cfg.batch_size; ++s) {
            const Tensor& img = images[sampler.next_below(images.size())];
            Tensor recon = autoencode(img, result.params, /*training=*/true, &tape,
                                      cfg.use_attention);
            LossTerms terms = loss_total_terms(recon, img, cfg.weights, cfg.ssim, &tape);
            row.pixel += terms.pixel.item();
            row.ssim += terms.ssim.item();
            row.msl1 += terms.msl1.item();
            row.grad += terms.grad.item();
            batch_total = batch_total.defined() ? add(batch_total, terms.total, &tape)
                                                : terms.total;
        }
        Tensor step_loss = scale(batch_total, 1.0f / cfg.batch_size, &tape);
        const double inv_b = 1.0 / cfg.batch_size;
        row.pixel *= inv_b;
        row.ssim *= inv_b;
        row.msl1 *= inv_b;
        row.grad *= inv_b;
        row.total = step_loss.item();

        if (!std::isfinite(row.total))
            throw NumericError("train: non-finite loss at iteration " + std::to_string(it) +
                               " (pixel=" + std::to_string(row.pixel) +
                               " ssim=" + std::to_string(row.ssim) +
                               " msl1=" + std::to_string(row.msl1) +
                               " grad=" + std::to_string(row.grad) + ")");

        backward(step_loss, tape);
        adam_step(result.params, opt, cfg);
        result.trace.push_back(row);

        if (!cfg.checkpoint_path.empty() && cfg.checkpoint_interval > 0 &&
            it % cfg.checkpoint_interval == 0)
            amfw::save(result.params, cfg.checkpoint_path);
    }
    if (!cfg.checkpoint_path.empty()) amfw::save(result.params, cfg.checkpoint_path);
    return result;
}

inline void write_loss_trace(const std::vector<LossTraceRow>& trace, std::ostream& out) {
    out << "iter,L_pixel,L_ssim,L_msl1,L_grad,L_total\n";
    char buf[160];
    for (const auto& r : trace) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.iter, r.pixel,
                      r.ssim, r.msl1, r.grad, r.total);
        out << buf;
    }
}

} // namespace amfusion
