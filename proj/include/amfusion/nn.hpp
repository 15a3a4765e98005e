#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "amfusion/fusion.hpp"
#include "amfusion/ops.hpp"
#include "amfusion/rng.hpp"
#include "amfusion/tensor.hpp"

namespace amfusion {

// Channel plan is a pure function of c0:
//   initial conv 1 -> c0
//   MKBlock branch widths 2c0 / 4c0 / 8c0, block outputs 6c0 / 12c0 / 24c0
//   attention + residual at 24c0, encoder output 48c0
//   decoder 48c0 -> 24c0 -> 12c0 -> 6c0 -> 3c0 -> 1
struct ArchConfig {
    int c0 = 16;
    int reduction = 16;

    void validate() const {
        if (c0 < 2) throw ConfigError("ArchConfig: c0 must be >= 2");
        if (reduction < 1 || (24 * c0) % reduction != 0)
            throw ConfigError("ArchConfig: 24*c0 must be divisible by reduction");
    }

    int branch_width(int block) const { return c0 * (1 << block); }  // block 1..3
    int block_in(int block) const { return block == 1 ? c0 : 6 * c0 * (1 << (block - 2)); }
    int block_out(int block) const { return 3 * branch_width(block); }
    int attention_channels() const { return 24 * c0; }
    int encoder_out() const { return 48 * c0; }
    std::vector<int> decoder_channels() const {
        return {48 * c0, 24 * c0, 12 * c0, 6 * c0, 3 * c0, 1};
    }
};

// Named, ordered weight set. The name set is closed: every instance carries
// exactly the tensors implied by its ArchConfig, in a fixed order.
class ModelParams {
public:
    ArchConfig config;

    void add(const std::string& name, Tensor t) {
        if (map_.count(name)) throw ConfigError("duplicate parameter " + name);
        order_.push_back(name);
        map_.emplace(name, std::move(t));
    }

    Tensor& get(const std::string& name) {
        auto it = map_.find(name);
        if (it == map_.end()) throw ConfigError("unknown parameter " + name);
        return it->second;
    }
    const Tensor& get(const std::string& name) const {
        auto it = map_.find(name);
        if (it == map_.end()) throw ConfigError("unknown parameter " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return map_.count(name) != 0; }
    const std::vector<std::string>& names() const { return order_; }

    // trainable = everything except BN running stats
    std::vector<std::string> trainable_names() const {
        std::vector<std::string> out;
        for (const auto& n : order_)
            if (n.find(".bn.rm") == std::string::npos &&
                n.find(".bn.rv") == std::string::npos)
                out.push_back(n);
        return out;
    }

    void set_requires_grad(bool rg) {
        for (const auto& n : trainable_names()) get(n).set_requires_grad(rg);
    }
    void zero_grad() {
        for (const auto& n : trainable_names()) get(n).zero_grad();
    }

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Tensor> map_;
};

namespace detail {

inline Tensor kaiming_conv(Rng& rng, int cout, int cin, int k) {
    Tensor w = Tensor::zeros({cout, cin, k, k});
    const float bound = std::sqrt(6.0f / static_cast<float>(cin * k * k));
    for (auto& v : w.mutable_values()) v = rng.uniform(-bound, bound);
    return w;
}

inline void add_conv(ModelParams& p, Rng& rng, const std::string& prefix,
                     int cout, int cin, int k) {
    p.add(prefix + ".w", kaiming_conv(rng, cout, cin, k));
    p.add(prefix + ".b", Tensor::zeros({cout}));
}

} // namespace detail

inline ModelParams init_params(const ArchConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelParams p;
    p.config = cfg;
    const int c0 = cfg.c0;

    detail::add_conv(p, rng, "enc.init", c0, 1, 3);
    for (int blk = 1; blk <= 3; ++blk) {
        const int cin = cfg.block_in(blk), bw = cfg.branch_width(blk);
        for (int k : {3, 5, 7}) {
            const std::string prefix = "mk" + std::to_string(blk) + ".c" + std::to_string(k);
            detail::add_conv(p, rng, prefix, bw, cin, k);
            p.add(prefix + ".a", Tensor::scalar(0.25f));
        }
    }
    detail::add_conv(p, rng, "sa.conv", 1, 2, 3);
    const int C = cfg.attention_channels();
    detail::add_conv(p, rng, "ca.fc1", C / cfg.reduction, C, 1);
    detail::add_conv(p, rng, "ca.fc2", C, C / cfg.reduction, 1);
    detail::add_conv(p, rng, "res", C, C, 3);

    const std::vector<int> dc = cfg.decoder_channels();
    for (int j = 1; j <= 5; ++j) {
        const std::string prefix = "dec" + std::to_string(j);
        detail::add_conv(p, rng, prefix, dc[j], dc[j - 1], 3);
        if (j <= 4) {
            p.add(prefix + ".bn.gamma", Tensor::full({dc[j]}, 1.0f));
            p.add(prefix + ".bn.beta", Tensor::zeros({dc[j]}));
            p.add(prefix + ".bn.rm", Tensor::zeros({dc[j]}));
            p.add(prefix + ".bn.rv", Tensor::full({dc[j]}, 1.0f));
            p.add(prefix + ".a", Tensor::scalar(0.25f));
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// forward blocks
// ---------------------------------------------------------------------------

// three parallel conv branches (3/5/7, same padding), PReLU each, concat
inline Tensor mkblock_forward(const Tensor& x, const ModelParams& p, int block,
                              Tape* tape = nullptr) {
    if (block < 1 || block > 3) throw ConfigError("mkblock_forward: block must be 1..3");
    if (x.dim(1) != p.config.block_in(block))
        throw ConfigError("mkblock_forward: block " + std::to_string(block) +
                          " expects " + std::to_string(p.config.block_in(block)) +
                          " input channels, got " + std::to_string(x.dim(1)));
    std::vector<Tensor> branches;
    for (int k : {3, 5, 7}) {
        const std::string prefix = "mk" + std::to_string(block) + ".c" + std::to_string(k);
        Tensor y = conv2d(x, p.get(prefix + ".w"), p.get(prefix + ".b"), 1, k / 2, tape);
        branches.push_back(prelu(y, p.get(prefix + ".a"), tape));
    }
    return concat_channels(branches, tape);
}

// channel-pooled statistics -> 3x3 conv -> sigmoid map in (0,1)
inline Tensor spatial_attention(const Tensor& x, const ModelParams& p,
                                Tape* tape = nullptr) {
    Tensor stacked = concat_channels({max_pool_spatial(x, tape), avg_pool_spatial(x, tape)}, tape);
    Tensor y = conv2d(stacked, p.get("sa.conv.w"), p.get("sa.conv.b"), 1, 1, tape);
    return sigmoid(y, tape);
}

// shared two-layer bottleneck over global max/avg pooled vectors
inline Tensor channel_attention(const Tensor& x, const ModelParams& p,
                                Tape* tape = nullptr) {
    if (x.dim(1) % p.config.reduction != 0)
        throw ConfigError("channel_attention: C not divisible by reduction");
    auto bottleneck = [&](const Tensor& pooled) {
        Tensor h = conv2d(pooled, p.get("ca.fc1.w"), p.get("ca.fc1.b"), 1, 0, tape);
        h = relu(h, tape);
        return conv2d(h, p.get("ca.fc2.w"), p.get("ca.fc2.b"), 1, 0, tape);
    };
    Tensor m = bottleneck(global_max_pool(x, tape));
    Tensor a = bottleneck(global_avg_pool(x, tape));
    return sigmoid(add(m, a, tape), tape);
}

// parallel attention: both branches read the same x, attended maps averaged
inline Tensor pscnet_forward(const Tensor& x, const ModelParams& p,
                             Tape* tape = nullptr) {
    Tensor ca = channel_attention(x, p, tape);
    Tensor sa = spatial_attention(x, p, tape);
    Tensor gated = add(mul_channel_gate(x, ca, tape), mul_spatial_gate(x, sa, tape), tape);
    return scale(gated, 0.5f, tape);
}

inline Tensor encoder_forward(const Tensor& img, const ModelParams& p,
                              Tape* tape = nullptr, bool use_attention = true) {
    Tensor h = relu(conv2d(img, p.get("enc.init.w"), p.get("enc.init.b"), 1, 1, tape), tape);
    for (int blk = 1; blk <= 3; ++blk) h = mkblock_forward(h, p, blk, tape);
    Tensor attended = use_attention ? pscnet_forward(h, p, tape) : h;
    Tensor residual = conv2d(h, p.get("res.w"), p.get("res.b"), 1, 1, tape);
    return concat_channels({residual, attended}, tape);
}

inline Tensor decoder_forward(const Tensor& f, ModelParams& p, bool training,
                              Tape* tape = nullptr) {
    const std::vector<int> dc = p.config.decoder_channels();
    if (f.dim(1) != dc[0])
        throw ConfigError("decoder_forward: expected " + std::to_string(dc[0]) +
                          " channels, got " + std::to_string(f.dim(1)));
    Tensor h = f;
    for (int j = 1; j <= 4; ++j) {
        const std::string prefix = "dec" + std::to_string(j);
        h = conv2d(h, p.get(prefix + ".w"), p.get(prefix + ".b"), 1, 1, tape);
        BnStats stats{p.get(prefix + ".bn.rm"), p.get(prefix + ".bn.rv")};
        h = batch_norm(h, p.get(prefix + ".bn.gamma"), p.get(prefix + ".bn.beta"),
                       stats, training, tape);
        h = prelu(h, p.get(prefix + ".a"), tape);
    }
    h = conv2d(h, p.get("dec5.w"), p.get("dec5.b"), 1, 1, tape);
    return tanh_act(h, tape);
}

// training path: single image in, reconstruction out
inline Tensor autoencode(const Tensor& img, ModelParams& p, bool training,
                         Tape* tape = nullptr, bool use_attention = true) {
    return decoder_forward(encoder_forward(img, p, tape, use_attention), p, training, tape);
}

// test path: fusion operates on the two encoder outputs
inline Tensor fuse_forward(const Tensor& ir, const Tensor& vis, ModelParams& p,
                           FusionStrategy strategy, bool use_attention = true) {
    if (!ir.same_shape(vis))
        throw ShapeError("fuse_forward: ir and vis shapes differ");
    Tensor fi = encoder_forward(ir, p, nullptr, use_attention);
    Tensor fv = encoder_forward(vis, p, nullptr, use_attention);
    Tensor fused = fuse_features(fi, fv, strategy);
    return decoder_forward(fused, p, /*training=*/false, nullptr);
}

} // namespace amfusion
