#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "amfusion/training.hpp"

namespace amfusion {

// Flat `key = value` configuration covering ArchConfig, TrainConfig,
// LossWeights and SsimConfig. '#' starts a comment; unknown keys are
// rejected with their line number. Command-line flags override file values.
struct PipelineConfig {
    TrainConfig train;

    void apply(const std::string& key, const std::string& value, int line) {
        auto bad = [&](const std::string& why) {
            throw ConfigError("config line " + std::to_string(line) + ": " + why);
        };
        auto as_int = [&]() {
            try {
                std::size_t used;
                const int v = std::stoi(value, &used);
                if (used != value.size()) throw std::invalid_argument("");
                return v;
            } catch (...) {
                bad("invalid integer '" + value + "' for " + key);
                return 0;
            }
        };
        auto as_float = [&]() {
            try {
                std::size_t used;
                const float v = std::stof(value, &used);
                if (used != value.size()) throw std::invalid_argument("");
                return v;
            } catch (...) {
                bad("invalid number '" + value + "' for " + key);
                return 0.0f;
            }
        };
        auto as_u64 = [&]() {
            try {
                // stoull accepts and wraps negative input; reject it explicitly
                if (!value.empty() && value[0] == '-') throw std::invalid_argument("");
                std::size_t used;
                const std::uint64_t v = std::stoull(value, &used);
                if (used != value.size()) throw std::invalid_argument("");
                return v;
            } catch (...) {
                bad("invalid integer '" + value + "' for " + key);
                return std::uint64_t{0};
            }
        };
        auto as_bool = [&]() {
            if (value == "true" || value == "1") return true;
            if (value == "false" || value == "0") return false;
            bad("invalid boolean '" + value + "' for " + key);
            return false;
        };

        if (key == "c0") train.arch.c0 = as_int();
        else if (key == "reduction") train.arch.reduction = as_int();
        else if (key == "side") train.side = as_int();
        else if (key == "batch_size") train.batch_size = as_int();
        else if (key == "iterations") train.iterations = as_int();
        else if (key == "epochs_mode") train.iterations_are_epochs = as_bool();
        else if (key == "learning_rate") train.learning_rate = as_float();
        else if (key == "adam_beta1") train.adam_beta1 = as_float();
        else if (key == "adam_beta2") train.adam_beta2 = as_float();
        else if (key == "adam_eps") train.adam_eps = as_float();
        else if (key == "seed") train.seed = as_u64();
        else if (key == "checkpoint_interval") train.checkpoint_interval = as_int();
        else if (key == "attention") train.use_attention = as_bool();
        else if (key == "alpha1") train.weights.alpha1 = as_float();
        else if (key == "alpha2") train.weights.alpha2 = as_float();
        else if (key == "alpha3") train.weights.alpha3 = as_float();
        else if (key == "alpha4") train.weights.alpha4 = as_float();
        else if (key == "beta") train.weights.beta = as_float();
        else if (key == "ssim_window") train.ssim.window = as_int();
        else if (key == "ssim_sigma") train.ssim.sigma = as_float();
        else if (key == "msssim_scales") train.ssim.scales = as_int();
        else bad("unknown key '" + key + "'");
    }
};

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    PipelineConfig cfg;
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const auto hash = raw.find('#');
        std::string s = hash == std::string::npos ? raw : raw.substr(0, hash);
        auto trim = [](std::string& t) {
            const auto b = t.find_first_not_of(" \t\r");
            const auto e = t.find_last_not_of(" \t\r");
            t = b == std::string::npos ? "" : t.substr(b, e - b + 1);
        };
        trim(s);
        if (s.empty()) continue;
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line) + ": expected key = value");
        std::string key = s.substr(0, eq), value = s.substr(eq + 1);
        trim(key);
        trim(value);
        cfg.apply(key, value, line);
    }
    return cfg;
}

} // namespace amfusion
