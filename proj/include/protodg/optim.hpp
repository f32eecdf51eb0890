#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "protodg/tensor.hpp"

namespace protodg {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Per-parameter moment buffers; the i-th buffer belongs to the i-th parameter
// passed to adam_step.
struct AdamState {
    AdamConfig config;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t step = 0;
};

// One bias-corrected Adam update, in place. names (optional) label parameters
// in error messages.
inline void adam_step(const std::vector<Var>& params, AdamState& state, double lr,
                      const std::vector<std::string>& names = {}) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p->size(), 0.0);
            state.v.emplace_back(p->size(), 0.0);
        }
    }
    if (state.m.size() != params.size())
        throw ParameterError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                             " parameters, got " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->has_grad()) {
            const std::string name = i < names.size() ? names[i] : "#" + std::to_string(i);
            throw ParameterError("adam_step: parameter " + name + " has no gradient");
        }
        if (state.m[i].size() != params[i]->size())
            throw ShapeError("adam_step: moment buffer size differs from parameter " + std::to_string(i));
    }
    ++state.step;
    const auto& c = state.config;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto x = params[i]->data();
        auto g = params[i]->grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < x.size(); ++j) {
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
            x[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.eps);
        }
    }
}

// eta_min + (lr0 - eta_min)(1 + cos(pi t / epochs)) / 2
inline double cosine_lr(std::size_t epoch, std::size_t epochs, double lr0, double eta_min = 0.0) {
    if (epochs == 0) return lr0;
    return eta_min + 0.5 * (lr0 - eta_min) *
                         (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(epochs)));
}

}  // namespace protodg
