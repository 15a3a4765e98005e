#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "amfusion/training.hpp"
#include "test_util.hpp"

using namespace amfusion;
using testutil::rand_tensor;

namespace {

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.arch = {2, 2};
    cfg.side = 16;
    cfg.ssim.window = 5;
    cfg.ssim.scales = 2;
    cfg.batch_size = 1;
    cfg.iterations = 3;
    cfg.seed = 7;
    return cfg;
}

std::vector<Tensor> tiny_images(int n, int side, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor> out;
    for (int i = 0; i < n; ++i) out.push_back(rand_tensor(rng, {1, 1, side, side}));
    return out;
}

} // namespace

TEST(TrainConfig, Validation) {
    EXPECT_NO_THROW(tiny_config().validate());
    TrainConfig cfg = tiny_config();
    cfg.batch_size = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.iterations = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.learning_rate = 0.0f;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.side = 8;  // < window * 2^(scales-1) = 10
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.weights.beta = 1.5f;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Adam, ScalarQuadraticHandOracle) {
    // minimize f(w) = w^2 from w = 1; grad = 2w; textbook update replayed in
    // doubles alongside
    ModelParams p;
    p.add("w", Tensor::scalar(1.0f));
    p.get("w").set_requires_grad(true);
    AdamState state;
    TrainConfig cfg;
    cfg.learning_rate = 0.1f;

    double w_ref = 1.0, m = 0.0, v = 0.0;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int t = 1; t <= 3; ++t) {
        const float w_now = p.get("w").item();
        p.get("w").zero_grad();
        p.get("w").mutable_grad()[0] = 2.0f * w_now;
        adam_step(p, state, cfg);

        const double g = 2.0 * w_now;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        w_ref -= 0.1 * mhat / (std::sqrt(vhat) + eps);
        EXPECT_NEAR(p.get("w").item(), w_ref, 1e-6) << "step " << t;
    }
    // bias correction makes the very first move ~= the full learning rate
    ModelParams q;
    q.add("w", Tensor::scalar(5.0f));
    q.get("w").set_requires_grad(true);
    q.get("w").mutable_grad()[0] = 3.0f;
    AdamState s2;
    adam_step(q, s2, cfg);
    EXPECT_NEAR(q.get("w").item(), 5.0f - 0.1f, 1e-6);
}

TEST(Adam, ZeroGradientIsNoOp) {
    ModelParams p;
    p.add("w", Tensor::from_values({3}, {1.0f, -2.0f, 0.5f}));
    p.get("w").set_requires_grad(true);
    p.get("w").zero_grad();
    AdamState state;
    TrainConfig cfg;
    adam_step(p, state, cfg);
    EXPECT_FLOAT_EQ(p.get("w").values()[0], 1.0f);
    EXPECT_FLOAT_EQ(p.get("w").values()[1], -2.0f);
    EXPECT_FLOAT_EQ(p.get("w").values()[2], 0.5f);
}

TEST(Adam, MissingGradientThrows) {
    ModelParams p;
    p.add("w", Tensor::scalar(1.0f));  // requires_grad never set
    AdamState state;
    TrainConfig cfg;
    EXPECT_THROW(adam_step(p, state, cfg), ConfigError);
}

TEST(Train, RejectsBadInputs) {
    TrainConfig cfg = tiny_config();
    EXPECT_THROW(train({}, cfg), ConfigError);
    EXPECT_THROW(train(tiny_images(1, 12, 1), cfg), ShapeError);  // wrong side
    EXPECT_THROW(train({Tensor::zeros({1, 2, 16, 16})}, cfg), ShapeError);
}

TEST(Train, DeterministicAcrossRuns) {
    TrainConfig cfg = tiny_config();
    const std::vector<Tensor> images = tiny_images(2, cfg.side, 99);
    TrainResult a = train(images, cfg);
    TrainResult b = train(images, cfg);
    ASSERT_EQ(a.trace.size(), b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        EXPECT_EQ(a.trace[i].total, b.trace[i].total) << "iter " << i;
        EXPECT_EQ(a.trace[i].pixel, b.trace[i].pixel);
    }
    for (const auto& n : a.params.names())
        EXPECT_EQ(a.params.get(n).values(), b.params.get(n).values()) << n;

    TrainConfig other = cfg;
    other.seed = 8;
    TrainResult c = train(images, other);
    EXPECT_NE(a.trace.back().total, c.trace.back().total);
}

TEST(Train, TraceAccountsForWeightedTerms) {
    TrainConfig cfg = tiny_config();
    cfg.iterations = 2;
    cfg.batch_size = 2;
    TrainResult r = train(tiny_images(3, cfg.side, 5), cfg);
    ASSERT_EQ(r.trace.size(), 2u);
    for (const auto& row : r.trace) {
        const double want = cfg.weights.alpha1 * row.pixel + cfg.weights.alpha2 * row.ssim +
                            cfg.weights.alpha3 * row.msl1 + cfg.weights.alpha4 * row.grad;
        EXPECT_NEAR(row.total, want, 1e-5);
        EXPECT_GT(row.total, 0.0);
    }
}

TEST(Train, EpochsModeMultipliesSteps) {
    TrainConfig cfg = tiny_config();
    cfg.iterations = 2;
    cfg.iterations_are_epochs = true;
    cfg.batch_size = 2;
    // 3 images, batch 2 -> ceil(3/2) = 2 steps per epoch -> 4 steps
    TrainResult r = train(tiny_images(3, cfg.side, 5), cfg);
    EXPECT_EQ(r.trace.size(), 4u);
}

TEST(Train, WritesLoadableCheckpoint) {
    namespace fs = std::filesystem;
    const std::string path =
        (fs::temp_directory_path() / ("train_ckpt_" + std::to_string(::getpid()) + ".amfw"))
            .string();
    TrainConfig cfg = tiny_config();
    cfg.iterations = 2;
    cfg.checkpoint_path = path;
    cfg.checkpoint_interval = 1;
    TrainResult r = train(tiny_images(2, cfg.side, 3), cfg);
    ModelParams loaded = amfw::load(path);
    for (const auto& n : r.params.names())
        EXPECT_EQ(loaded.get(n).values(), r.params.get(n).values()) << n;
    std::error_code ec;
    fs::remove(path, ec);
}

TEST(Train, LossTraceFormat) {
    TrainConfig cfg = tiny_config();
    cfg.iterations = 2;
    TrainResult r = train(tiny_images(1, cfg.side, 4), cfg);
    std::ostringstream out;
    write_loss_trace(r.trace, out);
    std::istringstream in(out.str());
    std::string line;
    ASSERT_TRUE(std::getline(in, line));
    EXPECT_EQ(line, "iter,L_pixel,L_ssim,L_msl1,L_grad,L_total");
    int rows = 0;
    while (std::getline(in, line)) {
        EXPECT_EQ(line.rfind(std::to_string(rows + 1) + ",", 0), 0u);
        ++rows;
    }
    EXPECT_EQ(rows, 2);
}
