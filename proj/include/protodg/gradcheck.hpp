#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "protodg/tensor.hpp"

namespace protodg {

// Scalar-valued function of the given inputs, built on the supplied tape.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
};

// Compares tape gradients with central differences (f(x+h) - f(x-h)) / 2h for
// every coordinate of every input that requires a gradient. The relative
// error uses max(1, |analytic|, |numeric|) as denominator.
inline GradCheckResult finite_diff_check(const ScalarFn& fn, const std::vector<Var>& inputs, double step = 1e-5) {
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        auto out = fn(tape, inputs);
        tape.backward(out);
        for (const auto& in : inputs) {
            if (!in->requires_grad()) {
                analytic.emplace_back();
                continue;
            }
            if (in->has_grad())
                analytic.emplace_back(in->grad().begin(), in->grad().end());
            else
                analytic.emplace_back(in->size(), 0.0);  // not reached by the graph
        }
    }
    GradCheckResult result;
    auto eval = [&] {
        Tape tape(Tape::Mode::no_grad);
        return fn(tape, inputs)->item();
    };
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        if (!inputs[t]->requires_grad()) continue;
        auto data = inputs[t]->data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + step;
            const double fp = eval();
            data[i] = orig - step;
            const double fm = eval();
            data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[t][i];
            const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
            result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
            ++result.coordinates;
        }
    }
    return result;
}

}  // namespace protodg
