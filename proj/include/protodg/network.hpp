#pragma once

// DeepConvNet-style shared feature extractor with style and semantic encoder
// heads.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "protodg/ops.hpp"
#include "protodg/tensor.hpp"

namespace protodg {

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct NetworkConfig {
    std::size_t n_channels = 62;
    std::size_t n_samples = 1000;
    // Kernel width of the temporal convolution and of the block 2-4 convolutions.
    std::size_t temporal_kernel = 10;
    // Max-pool width and stride along time.
    std::size_t pool = 3;
    // temporal, spatial, block 2, block 3, block 4
    std::array<std::size_t, 5> block_filters{25, 25, 50, 100, 200};
    double dropout_p = 0.5;
    std::size_t encoder_dim = 2;

    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

struct StageLength {
    std::string stage;
    std::size_t length;
};

// Time-axis length after every convolution and pooling stage.
inline std::vector<StageLength> stage_lengths(const NetworkConfig& cfg) {
    if (cfg.n_channels == 0 || cfg.n_samples == 0 || cfg.temporal_kernel == 0 || cfg.pool == 0)
        throw ConfigError("network config: channels, samples, kernel and pool must be positive");
    if (cfg.encoder_dim == 0) throw ConfigError("network config: encoder_dim must be >= 1");
    for (auto f : cfg.block_filters)
        if (f == 0) throw ConfigError("network config: filter counts must be positive");
    if (!(cfg.dropout_p >= 0.0 && cfg.dropout_p < 1.0))
        throw ConfigError("network config: dropout_p must be in [0,1)");
    std::vector<StageLength> out;
    std::size_t len = cfg.n_samples;
    for (int block = 1; block <= 4; ++block) {
        const std::string conv_name = block == 1 ? "block1 temporal conv" : "block" + std::to_string(block) + " conv";
        if (len < cfg.temporal_kernel)
            throw ConfigError(conv_name + ": input length " + std::to_string(len) + " shorter than kernel " +
                              std::to_string(cfg.temporal_kernel));
        len = len - cfg.temporal_kernel + 1;
        out.push_back({conv_name, len});
        const std::string pool_name = "block" + std::to_string(block) + " pool";
        len = len / cfg.pool;
        if (len == 0)
            throw ConfigError(pool_name + ": pooled length collapses to 0 (pool " + std::to_string(cfg.pool) + ")");
        out.push_back({pool_name, len});
    }
    return out;
}

inline std::size_t feature_dim(const NetworkConfig& cfg) {
    return cfg.block_filters[4] * stage_lengths(cfg).back().length;
}

struct ConvBlockParams {
    Var weight;
    Var bias;
    Var gamma;
    Var beta;
    BatchNormState bn;
};

struct ModelParams {
    NetworkConfig config;
    Var temporal_weight;  // [f0, 1, 1, k]
    Var temporal_bias;
    ConvBlockParams block1;  // spatial conv [f1, f0, n_channels, 1]
    std::array<ConvBlockParams, 3> blocks;  // [f_i, f_{i-1}, 1, k]
    Var style_weight;  // [encoder_dim, F]
    Var style_bias;
    Var semantic_weight;
    Var semantic_bias;

    std::vector<Var> extractor_parameters() const {
        std::vector<Var> out{temporal_weight, temporal_bias, block1.weight, block1.bias, block1.gamma, block1.beta};
        for (const auto& b : blocks) out.insert(out.end(), {b.weight, b.bias, b.gamma, b.beta});
        return out;
    }
    std::vector<Var> style_parameters() const { return {style_weight, style_bias}; }
    std::vector<Var> semantic_parameters() const { return {semantic_weight, semantic_bias}; }

    // Every tensor (learnable or not) with a stable name, in serialization order.
    std::vector<std::pair<std::string, Var>> named_parameters() const {
        std::vector<std::pair<std::string, Var>> out{{"extractor.temporal.weight", temporal_weight},
                                                     {"extractor.temporal.bias", temporal_bias}};
        auto add_block = [&](const std::string& prefix, const ConvBlockParams& b) {
            out.emplace_back(prefix + ".weight", b.weight);
            out.emplace_back(prefix + ".bias", b.bias);
            out.emplace_back(prefix + ".bn.gamma", b.gamma);
            out.emplace_back(prefix + ".bn.beta", b.beta);
        };
        add_block("extractor.block1.spatial", block1);
        for (std::size_t i = 0; i < blocks.size(); ++i) add_block("extractor.block" + std::to_string(i + 2), blocks[i]);
        out.emplace_back("style.weight", style_weight);
        out.emplace_back("style.bias", style_bias);
        out.emplace_back("semantic.weight", semantic_weight);
        out.emplace_back("semantic.bias", semantic_bias);
        return out;
    }

    std::vector<BatchNormState*> batchnorm_states() {
        return {&block1.bn, &blocks[0].bn, &blocks[1].bn, &blocks[2].bn};
    }
    std::vector<const BatchNormState*> batchnorm_states() const {
        return {&block1.bn, &blocks[0].bn, &blocks[1].bn, &blocks[2].bn};
    }
};

namespace detail {

inline Var uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> data(numel(shape));
    for (auto& v : data) v = dist(rng);
    return make_param(std::move(shape), std::move(data));
}

inline Var zeros_param(Shape shape) { return make_var(std::move(shape), 0.0, true); }

}  // namespace detail

// Weights uniform in +-sqrt(1/fan_in), biases zero, batch-norm affine (1, 0).
inline ModelParams build_model(const NetworkConfig& cfg, std::uint64_t seed) {
    const std::size_t F = feature_dim(cfg);
    const auto& f = cfg.block_filters;
    const std::size_t k = cfg.temporal_kernel;
    Rng rng(seed);
    ModelParams p;
    p.config = cfg;
    p.temporal_weight = detail::uniform_fan_in({f[0], 1, 1, k}, k, rng);
    p.temporal_bias = detail::zeros_param({f[0]});
    p.block1.weight = detail::uniform_fan_in({f[1], f[0], cfg.n_channels, 1}, f[0] * cfg.n_channels, rng);
    p.block1.bias = detail::zeros_param({f[1]});
    p.block1.gamma = make_var({f[1]}, 1.0, true);
    p.block1.beta = detail::zeros_param({f[1]});
    p.block1.bn = BatchNormState(f[1]);
    for (std::size_t i = 0; i < 3; ++i) {
        auto& b = p.blocks[i];
        const std::size_t cin = f[i + 1], cout = f[i + 2];
        b.weight = detail::uniform_fan_in({cout, cin, 1, k}, cin * k, rng);
        b.bias = detail::zeros_param({cout});
        b.gamma = make_var({cout}, 1.0, true);
        b.beta = detail::zeros_param({cout});
        b.bn = BatchNormState(cout);
    }
    p.style_weight = detail::uniform_fan_in({cfg.encoder_dim, F}, F, rng);
    p.style_bias = detail::zeros_param({cfg.encoder_dim});
    p.semantic_weight = detail::uniform_fan_in({cfg.encoder_dim, F}, F, rng);
    p.semantic_bias = detail::zeros_param({cfg.encoder_dim});
    return p;
}

// Deep copy of every tensor and the batch-norm running statistics.
inline ModelParams clone(const ModelParams& src) {
    ModelParams p = src;
    p.temporal_weight = clone(src.temporal_weight);
    p.temporal_bias = clone(src.temporal_bias);
    auto copy_block = [](ConvBlockParams& dst, const ConvBlockParams& s) {
        dst.weight = clone(s.weight);
        dst.bias = clone(s.bias);
        dst.gamma = clone(s.gamma);
        dst.beta = clone(s.beta);
    };
    copy_block(p.block1, src.block1);
    for (std::size_t i = 0; i < 3; ++i) copy_block(p.blocks[i], src.blocks[i]);
    p.style_weight = clone(src.style_weight);
    p.style_bias = clone(src.style_bias);
    p.semantic_weight = clone(src.semantic_weight);
    p.semantic_bias = clone(src.semantic_bias);
    return p;
}

namespace detail {

inline Var conv_block(Tape& tape, const Var& x, ConvBlockParams& b, const NetworkConfig& cfg, RunMode mode, Rng& rng) {
    auto h = conv2d(tape, x, b.weight, b.bias);
    h = batchnorm(tape, h, b.gamma, b.beta, b.bn, mode);
    h = elu(tape, h);
    h = maxpool2d(tape, h, {1, cfg.pool}, {1, cfg.pool});
    return dropout(tape, h, cfg.dropout_p, mode, rng);
}

}  // namespace detail

// x [b, n_channels, n_samples] -> [b, F]. Train mode uses batch statistics
// (and updates the running ones) and draws dropout masks from rng.
inline Var extract_shared(ModelParams& params, Tape& tape, const Var& x, RunMode mode, Rng& rng) {
    const auto& cfg = params.config;
    if (x->rank() != 3 || x->dim(1) != cfg.n_channels || x->dim(2) != cfg.n_samples)
        throw ShapeError("extract_shared: expected [b," + std::to_string(cfg.n_channels) + "," +
                         std::to_string(cfg.n_samples) + "], got " + to_string(x->shape()));
    const std::size_t B = x->dim(0);
    auto h = reshape(tape, x, {B, 1, cfg.n_channels, cfg.n_samples});
    h = conv2d(tape, h, params.temporal_weight, params.temporal_bias);
    h = detail::conv_block(tape, h, params.block1, cfg, mode, rng);
    for (auto& b : params.blocks) h = detail::conv_block(tape, h, b, cfg, mode, rng);
    return flatten(tape, h);
}

inline Var encode_style(const ModelParams& params, Tape& tape, const Var& shared) {
    return linear(tape, shared, params.style_weight, params.style_bias);
}

inline Var encode_semantic(const ModelParams& params, Tape& tape, const Var& shared) {
    return linear(tape, shared, params.semantic_weight, params.semantic_bias);
}

}  // namespace protodg
