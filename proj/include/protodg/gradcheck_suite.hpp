#pragma once

// Registry of finite-difference checks over every layer and loss.

#include <chrono>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "protodg/gradcheck.hpp"
#include "protodg/network.hpp"
#include "protodg/ops.hpp"
#include "protodg/proto_loss.hpp"

namespace protodg {

inline constexpr double kSmoothTolerance = 1e-6;
inline constexpr double kPiecewiseTolerance = 1e-4;

struct GradCheckCase {
    std::string name;
    double tolerance;
    // Builds a scalar from the op under test; `wrap` is applied to the op's
    // output before scalarization.
    std::function<GradCheckResult(const std::function<Var(Tape&, const Var&)>& wrap)> run;
};

struct GradCheckReportRow {
    std::string name;
    double tolerance = 0.0;
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    bool passed = false;
};

struct GradCheckReport {
    std::vector<GradCheckReportRow> rows;
    double seconds = 0.0;
    bool all_passed() const {
        for (const auto& r : rows)
            if (!r.passed) return false;
        return !rows.empty();
    }
};

namespace detail {

inline Var random_input(Shape shape, std::uint64_t seed, bool grad = true, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> data(numel(shape));
    for (auto& v : data) v = u(rng);
    return make_var(std::move(shape), std::move(data), grad);
}

inline Var weighted_sum(Tape& tape, const Var& y, std::uint64_t seed = 7) {
    return sum(tape, mul(tape, y, random_input(y->shape(), seed, false, 0.5, 1.5)));
}

inline Var pass_through(Tape&, const Var& y) { return y; }

// Identity forward whose backward scales the gradient: a deliberately broken op.
inline Var corrupt_backward(Tape& tape, const Var& y, double factor) {
    auto out = make_var(y->shape(), std::vector<double>(y->data().begin(), y->data().end()));
    if (tape.tracks({&y})) {
        tape.record({y}, out, [y, factor, o = out.get()] {
            auto g = o->grad();
            auto gy = y->grad();
            for (std::size_t i = 0; i < g.size(); ++i) gy[i] += factor * g[i];
        });
    }
    return out;
}

}  // namespace detail

inline std::vector<GradCheckCase> gradcheck_registry() {
    using detail::random_input;
    using detail::weighted_sum;
    using Wrap = std::function<Var(Tape&, const Var&)>;
    std::vector<GradCheckCase> cases;
    auto add = [&](std::string name, double tol, std::function<GradCheckResult(const Wrap&)> fn) {
        cases.push_back({std::move(name), tol, std::move(fn)});
    };

    add("conv2d", kSmoothTolerance, [](const Wrap& w) {
        auto x = random_input({2, 2, 3, 6}, 1), k = random_input({3, 2, 2, 3}, 2), b = random_input({3}, 3);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& in) { return weighted_sum(t, w(t, conv2d(t, in[0], in[1], in[2]))); },
            {x, k, b});
    });
    add("maxpool2d", kPiecewiseTolerance, [](const Wrap& w) {
        auto x = random_input({2, 2, 1, 9}, 4);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& in) { return weighted_sum(t, w(t, maxpool2d(t, in[0], {1, 3}, {1, 3}))); },
            {x});
    });
    add("batchnorm", kSmoothTolerance, [](const Wrap& w) {
        auto x = random_input({3, 2, 1, 4}, 5), g = random_input({2}, 6, true, 0.5, 1.5), b = random_input({2}, 7);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& in) {
                BatchNormState st(2);
                return weighted_sum(t, w(t, batchnorm(t, in[0], in[1], in[2], st, RunMode::train)));
            },
            {x, g, b});
    });
    add("elu", kPiecewiseTolerance, [](const Wrap& w) {
        auto x = random_input({4, 5}, 8, true, -2.0, 2.0);
        return finite_diff_check([&](Tape& t, const std::vector<Var>& in) { return weighted_sum(t, w(t, elu(t, in[0]))); },
                                 {x});
    });
    add("linear", kSmoothTolerance, [](const Wrap& w) {
        auto x = random_input({3, 5}, 9), W = random_input({4, 5}, 10), b = random_input({4}, 11);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& in) { return weighted_sum(t, w(t, linear(t, in[0], in[1], in[2]))); },
            {x, W, b});
    });
    add("flatten", kSmoothTolerance, [](const Wrap& w) {
        auto x = random_input({2, 3, 1, 4}, 12);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& in) { return weighted_sum(t, w(t, flatten(t, in[0]))); }, {x});
    });
    add("dropout", kSmoothTolerance, [](const Wrap& w) {
        auto x = random_input({4, 6}, 13);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& in) {
                Rng rng(14);
                return weighted_sum(t, w(t, dropout(t, in[0], 0.5, RunMode::train, rng)));
            },
            {x});
    });
    add("pairwise_sq_dist", kSmoothTolerance, [](const Wrap& w) {
        auto f = random_input({4, 2}, 15), p = random_input({3, 2}, 16);
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& in) { return weighted_sum(t, w(t, pairwise_sq_dist(t, in[0], in[1]))); },
            {f, p});
    });
    add("softmax_cross_entropy", kSmoothTolerance, [](const Wrap& w) {
        auto z = random_input({4, 3}, 17, true, -2.0, 2.0);
        const std::vector<int> y{0, 2, 1, 2};
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& in) { return w(t, softmax_cross_entropy(t, in[0], y)); }, {z});
    });
    add("dce_loss", kSmoothTolerance, [](const Wrap& w) {
        auto f = random_input({5, 2}, 18), p = random_input({3, 2}, 19);
        const std::vector<int> y{0, 1, 2, 1, 0};
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& in) {
                auto probs = dce_probabilities(t, pairwise_sq_dist(t, in[0], in[1]), 1.0);
                return w(t, dce_loss(t, probs, y));
            },
            {f, p});
    });
    add("dce_loss_from_distances", kSmoothTolerance, [](const Wrap& w) {
        auto f = random_input({5, 2}, 20), p = random_input({3, 2}, 21);
        const std::vector<int> y{2, 1, 0, 0, 1};
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& in) {
                return w(t, dce_loss_from_distances(t, pairwise_sq_dist(t, in[0], in[1]), y, 2.0));
            },
            {f, p});
    });
    add("prototype_loss", kSmoothTolerance, [](const Wrap& w) {
        auto f = random_input({5, 2}, 22);
        PrototypeSet p{random_input({3, 2}, 23), PrototypeRole::class_label};
        const std::vector<int> y{0, 1, 2, 2, 1};
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& in) {
                PrototypeSet q{in[1], p.role};
                return w(t, prototype_loss(t, in[0], q, y));
            },
            {f, p.values});
    });
    add("task_loss", kSmoothTolerance, [](const Wrap& w) {
        auto f = random_input({5, 2}, 24), p = random_input({2, 2}, 25);
        const std::vector<int> y{0, 1, 1, 0, 1};
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& in) {
                PrototypeSet q{in[1], PrototypeRole::class_label};
                return w(t, task_loss(t, in[0], q, y, 1.0, 0.1));
            },
            {f, p});
    });
    add("combined_loss", kSmoothTolerance, [](const Wrap& w) {
        auto sem = random_input({6, 2}, 26), cp = random_input({2, 2}, 27);
        auto sty = random_input({6, 2}, 28), sp = random_input({3, 2}, 29);
        const std::vector<int> cls{0, 1, 0, 1, 0, 1}, subj{0, 0, 1, 1, 2, 2};
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>& in) {
                PrototypeSet c{in[1], PrototypeRole::class_label}, s{in[3], PrototypeRole::subject};
                return w(t, combined_loss(t, in[0], c, cls, in[2], s, subj, {1.0, 0.1, 0.05, 0.05}).total);
            },
            {sem, cp, sty, sp});
    });
    add("extractor", kPiecewiseTolerance, [](const Wrap& w) {
        NetworkConfig cfg;
        cfg.n_channels = 2;
        cfg.n_samples = 24;
        cfg.temporal_kernel = 3;
        cfg.pool = 1;
        cfg.block_filters = {2, 2, 2, 2, 2};
        cfg.dropout_p = 0.0;
        auto params = build_model(cfg, 30);
        auto x = random_input({3, 2, 24}, 31, false);
        auto inputs = params.extractor_parameters();
        return finite_diff_check(
            [&](Tape& t, const std::vector<Var>&) {
                Rng rng(0);
                auto y = extract_shared(params, t, x, RunMode::train, rng);
                return weighted_sum(t, w(t, y));
            },
            inputs);
    });
    return cases;
}

// Runs every registered case. When `corrupt` names a case, that op's backward
// is scaled by 1.5 (negative control).
inline GradCheckReport run_gradcheck_suite(const std::string& corrupt = {}) {
    const auto start = std::chrono::steady_clock::now();
    GradCheckReport report;
    for (const auto& c : gradcheck_registry()) {
        std::function<Var(Tape&, const Var&)> wrap = detail::pass_through;
        if (c.name == corrupt) wrap = [](Tape& t, const Var& y) { return detail::corrupt_backward(t, y, 1.5); };
        const auto r = c.run(wrap);
        report.rows.push_back({c.name, c.tolerance, r.max_rel_error, r.coordinates,
                               r.coordinates > 0 && r.max_rel_error < c.tolerance});
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace protodg
