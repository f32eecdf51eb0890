#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "protodg/gradcheck.hpp"
#include "protodg/proto_loss.hpp"

using namespace protodg;

namespace {

Var random_var(Shape s, std::uint64_t seed, bool grad = true, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> d(numel(s));
    for (auto& v : d) v = u(rng);
    return make_var(std::move(s), std::move(d), grad);
}

std::vector<int> random_labels(std::size_t n, int k, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_int_distribution<int> u(0, k - 1);
    std::vector<int> y(n);
    for (auto& v : y) v = u(rng);
    return y;
}

}  // namespace

TEST(DceProbabilities, EquidistantIsUniform) {
    for (double gamma : {0.1, 1.0, 7.0}) {
        Tape t;
        auto p = dce_probabilities(t, make_var({1, 3}, {1, 1, 1}), gamma);
        for (int i = 0; i < 3; ++i) EXPECT_NEAR((*p)[i], 1.0 / 3.0, 1e-15);
    }
}

TEST(DceProbabilities, HandEvaluation) {
    Tape t;
    auto p = dce_probabilities(t, make_var({1, 2}, {0, 1}), 1.0);
    const double e = std::exp(-1.0);
    EXPECT_NEAR((*p)[0], 1.0 / (1.0 + e), 1e-12);
    EXPECT_NEAR((*p)[1], e / (1.0 + e), 1e-12);
    EXPECT_NEAR((*p)[0], 0.73106, 1e-5);
    EXPECT_NEAR((*p)[1], 0.26894, 1e-5);
}

TEST(DceProbabilities, RowsSumToOneAndStayInOpenInterval) {
    Tape t;
    auto d = random_var({50, 4}, 1, false, 0.0, 20.0);
    auto p = dce_probabilities(t, d, 1.0);
    for (std::size_t j = 0; j < 50; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            EXPECT_GT((*p)[j * 4 + i], 0.0);
            EXPECT_LT((*p)[j * 4 + i], 1.0);
            s += (*p)[j * 4 + i];
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(DceProbabilities, LargeDistancesStayFinite) {
    Tape t;
    auto p = dce_probabilities(t, make_var({1, 2}, {1e6, 1e6 + 1}), 10.0);
    EXPECT_TRUE(std::isfinite((*p)[0]));
    EXPECT_NEAR((*p)[0] + (*p)[1], 1.0, 1e-12);
}

TEST(DceProbabilities, DoublingGammaKeepsArgmax) {
    auto d = random_var({200, 5}, 2, false, 0.0, 3.0);
    Tape t;
    auto p1 = dce_probabilities(t, d, 0.5), p2 = dce_probabilities(t, d, 1.0);
    for (std::size_t j = 0; j < 200; ++j) {
        auto row = [&](const Var& p) {
            std::size_t best = 0;
            for (std::size_t i = 1; i < 5; ++i)
                if ((*p)[j * 5 + i] > (*p)[j * 5 + best]) best = i;
            return best;
        };
        EXPECT_EQ(row(p1), row(p2));
    }
}

TEST(DceProbabilities, Errors) {
    Tape t;
    EXPECT_THROW(dce_probabilities(t, make_var({1, 2}, {0, 1}), 0.0), ParameterError);
    EXPECT_THROW(dce_probabilities(t, make_var({1, 2}, {0, NAN}), 1.0), NumericError);
    EXPECT_THROW(dce_probabilities(t, make_var({1, 2}, {INFINITY, 1}), 1.0), NumericError);
}

TEST(DceLoss, PerfectConfidenceIsZero) {
    Tape t;
    EXPECT_EQ(dce_loss(t, make_var({1, 2}, {1, 0}), std::vector<int>{0})->item(), 0.0);
}

TEST(DceLoss, UniformTwoClassIsLn2) {
    Tape t;
    auto l = dce_loss(t, make_var({2, 2}, {0.5, 0.5, 0.5, 0.5}), std::vector<int>{0, 1});
    EXPECT_NEAR(l->item(), std::log(2.0), 1e-12);
    EXPECT_NEAR(l->item(), 0.69315, 1e-5);
}

TEST(DceLoss, LabelErrorNamesTrial) {
    Tape t;
    try {
        dce_loss(t, make_var({2, 2}, {0.5, 0.5, 0.5, 0.5}), std::vector<int>{0, 2});
        FAIL() << "expected LabelError";
    } catch (const LabelError& e) {
        EXPECT_NE(std::string(e.what()).find("trial 1"), std::string::npos) << e.what();
    }
}

TEST(DceLoss, FusedMatchesComposite) {
    auto f = random_var({20, 2}, 3), m = random_var({3, 2}, 4);
    auto y = random_labels(20, 3, 5);
    for (double gamma : {0.1, 1.0, 10.0}) {
        Tape t;
        auto d = pairwise_sq_dist(t, f, m);
        const double a = dce_loss(t, dce_probabilities(t, d, gamma), y)->item();
        const double b = dce_loss_from_distances(t, d, y, gamma)->item();
        EXPECT_NEAR(a, b, 1e-12);
    }
}

TEST(DceLoss, CompositeGradientsMatchFiniteDifferences) {
    auto f = random_var({6, 2}, 6), m = random_var({3, 2}, 7);
    auto y = random_labels(6, 3, 8);
    auto r = finite_diff_check(
        [&](Tape& t, const std::vector<Var>& in) {
            return dce_loss(t, dce_probabilities(t, pairwise_sq_dist(t, in[0], in[1]), 1.0), y);
        },
        {f, m});
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(PrototypeLoss, HandValues) {
    Tape t;
    PrototypeSet p{make_var({2, 2}, {0, 0, 5, 5}, true), PrototypeRole::class_label};
    EXPECT_EQ(prototype_loss(t, make_var({1, 2}, {1, 1}), p, std::vector<int>{0})->item(), 2.0);
    EXPECT_EQ(prototype_loss(t, make_var({1, 2}, {5, 5}), p, std::vector<int>{1})->item(), 0.0);
}

TEST(PrototypeLoss, UsesOnlyTheLabelledPrototype) {
    Tape t;
    PrototypeSet p{make_var({2, 2}, {0, 0, 100, 100}, true), PrototypeRole::class_label};
    // mean of 1 and 4
    EXPECT_EQ(prototype_loss(t, make_var({2, 2}, {1, 0, 0, 2}), p, std::vector<int>{0, 0})->item(), 2.5);
}

TEST(PrototypeLoss, NonNegativeOnRandomInputs) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        Tape t;
        PrototypeSet p{random_var({3, 2}, 100 + s), PrototypeRole::subject};
        EXPECT_GE(prototype_loss(t, random_var({8, 2}, 200 + s), p, random_labels(8, 3, s))->item(), 0.0);
    }
}

TEST(PrototypeLoss, GradientsMatchFiniteDifferences) {
    auto f = random_var({5, 3}, 9), m = random_var({4, 3}, 10);
    auto y = random_labels(5, 4, 11);
    auto r = finite_diff_check(
        [&](Tape& t, const std::vector<Var>& in) {
            return prototype_loss(t, in[0], PrototypeSet{in[1], PrototypeRole::class_label}, y);
        },
        {f, m});
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(TaskLoss, BetaZeroEqualsDce) {
    auto f = random_var({8, 2}, 12, false);
    PrototypeSet p{random_var({2, 2}, 13), PrototypeRole::class_label};
    auto y = random_labels(8, 2, 14);
    Tape t;
    const double dce = dce_loss_from_distances(t, pairwise_sq_dist(t, f, p.values), y, 1.0)->item();
    EXPECT_EQ(task_loss(t, f, p, y, 1.0, 0.0)->item(), dce);
}

TEST(TaskLoss, WeightedSumIdentity) {
    auto f = random_var({8, 2}, 15, false);
    PrototypeSet p{random_var({2, 2}, 16), PrototypeRole::class_label};
    auto y = random_labels(8, 2, 17);
    Tape t;
    auto terms = task_loss_terms(t, f, p, y, 1.0, 0.001);
    EXPECT_NEAR(terms.total->item(), terms.dce->item() + 0.001 * terms.prototype->item(), 1e-12);
}

TEST(TaskLoss, GradientDecomposesAdditively) {
    auto f = random_var({6, 2}, 18), m = random_var({2, 2}, 19);
    auto y = random_labels(6, 2, 20);
    const double beta = 0.3;
    auto grads = [&](auto build) {
        Tape t;
        auto out = build(t);
        t.backward(out);
        std::vector<double> g(f->grad().begin(), f->grad().end());
        g.insert(g.end(), m->grad().begin(), m->grad().end());
        return g;
    };
    PrototypeSet p{m, PrototypeRole::class_label};
    auto total = grads([&](Tape& t) { return task_loss(t, f, p, y, 1.0, beta); });
    auto dce = grads([&](Tape& t) { return dce_loss_from_distances(t, pairwise_sq_dist(t, f, m), y, 1.0); });
    auto pl = grads([&](Tape& t) { return prototype_loss(t, f, p, y); });
    for (std::size_t i = 0; i < total.size(); ++i) EXPECT_NEAR(total[i], dce[i] + beta * pl[i], 1e-12);

    auto r = finite_diff_check(
        [&](Tape& t, const std::vector<Var>& in) {
            return task_loss(t, in[0], PrototypeSet{in[1], PrototypeRole::class_label}, y, 1.0, beta);
        },
        {f, m});
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(TaskLoss, NegativeBetaRejected) {
    Tape t;
    PrototypeSet p = PrototypeSet::zeros(2, 2, PrototypeRole::class_label);
    EXPECT_THROW(task_loss(t, make_var({1, 2}, 0.0), p, std::vector<int>{0}, 1.0, -1.0), ParameterError);
}

namespace {

struct CombinedFixture {
    Var sem = random_var({10, 2}, 21), sty = random_var({10, 2}, 22);
    PrototypeSet cp{random_var({2, 2}, 23), PrototypeRole::class_label};
    PrototypeSet sp{random_var({3, 2}, 24), PrototypeRole::subject};
    std::vector<int> cls = random_labels(10, 2, 25), subj = random_labels(10, 3, 26);
};

}  // namespace

TEST(CombinedLoss, DefaultWeights) {
    LossWeights w;
    EXPECT_EQ(w.alpha, 0.1);
    EXPECT_EQ(w.beta1, 0.001);
    EXPECT_EQ(w.beta2, 0.001);
    EXPECT_EQ(w.gamma, 1.0);
}

TEST(CombinedLoss, BreakdownIdentity) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        CombinedFixture fx;
        fx.sem = random_var({10, 2}, 300 + s);
        Tape t;
        auto c = combined_loss(t, fx.sem, fx.cp, fx.cls, fx.sty, fx.sp, fx.subj, LossWeights{});
        const auto& b = c.breakdown;
        EXPECT_NEAR(b.total, b.l_c + 0.001 * b.l_cp + 0.1 * (b.l_d + 0.001 * b.l_dp), 1e-12);
        EXPECT_EQ(b.total, c.total->item());
    }
}

TEST(CombinedLoss, AlphaZeroBetaZeroIsPlainDce) {
    CombinedFixture fx;
    Tape t;
    auto c = combined_loss(t, fx.sem, fx.cp, fx.cls, fx.sty, fx.sp, fx.subj, {1.0, 0.0, 0.0, 0.001});
    const double dce = dce_loss_from_distances(t, pairwise_sq_dist(t, fx.sem, fx.cp.values), fx.cls, 1.0)->item();
    EXPECT_EQ(c.breakdown.total, c.breakdown.l_c);
    EXPECT_EQ(c.breakdown.total, dce);
}

TEST(CombinedLoss, GradientsMatchFiniteDifferences) {
    CombinedFixture fx;
    auto r = finite_diff_check(
        [&](Tape& t, const std::vector<Var>& in) {
            PrototypeSet c{in[1], PrototypeRole::class_label}, s{in[3], PrototypeRole::subject};
            return combined_loss(t, in[0], c, fx.cls, in[2], s, fx.subj, {1.0, 0.2, 0.05, 0.05}).total;
        },
        {fx.sem, fx.cp.values, fx.sty, fx.sp.values});
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(CombinedLoss, NegativeWeightsRejected) {
    CombinedFixture fx;
    Tape t;
    EXPECT_THROW(combined_loss(t, fx.sem, fx.cp, fx.cls, fx.sty, fx.sp, fx.subj, {1.0, -0.1, 0.0, 0.0}),
                 ParameterError);
}

TEST(Classify, ExactMatchAndTieBreak) {
    PrototypeSet p{make_var({2, 2}, {0, 0, 5, 5}), PrototypeRole::class_label};
    EXPECT_EQ(classify(Tensor({1, 2}, {0, 0}), p), std::vector<int>{0});
    EXPECT_EQ(classify(Tensor({1, 2}, {5, 4.9}), p), std::vector<int>{1});
    EXPECT_EQ(classify(Tensor({1, 2}, {2.5, 2.5}), p), std::vector<int>{0});
}

TEST(Classify, AgreesWithProbabilityArgmaxForEveryGamma) {
    Rng rng(27);
    std::uniform_int_distribution<int> kdist(2, 6);
    for (double gamma : {0.1, 1.0, 10.0}) {
        for (int inst = 0; inst < 1000; ++inst) {
            const std::size_t K = static_cast<std::size_t>(kdist(rng));
            auto f = random_var({1, 2}, 10000 * static_cast<std::uint64_t>(gamma * 10) + inst, false, -3, 3);
            PrototypeSet p{random_var({K, 2}, 7777 + inst, false, -3, 3), PrototypeRole::class_label};
            Tape t;
            auto probs = dce_probabilities(t, pairwise_sq_dist(t, f, p.values), gamma);
            // brute-force nearest prototype
            std::size_t near = 0;
            double best = INFINITY;
            for (std::size_t i = 0; i < K; ++i) {
                const double dx = (*f)[0] - (*p.values)[2 * i], dy = (*f)[1] - (*p.values)[2 * i + 1];
                if (dx * dx + dy * dy < best) best = dx * dx + dy * dy, near = i;
            }
            std::size_t arg = 0;
            for (std::size_t i = 1; i < K; ++i)
                if ((*probs)[i] > (*probs)[arg]) arg = i;
            ASSERT_EQ(classify(*f, p)[0], static_cast<int>(near));
            ASSERT_EQ(static_cast<int>(arg), static_cast<int>(near)) << "gamma " << gamma << " instance " << inst;
        }
    }
}

TEST(OpensetScore, SelfDistanceAndPermutationInvariance) {
    PrototypeSet p{make_var({3, 2}, {0, 0, 1, 2, -3, 1}), PrototypeRole::subject};
    PrototypeSet q{make_var({3, 2}, {-3, 1, 0, 0, 1, 2}), PrototypeRole::subject};
    EXPECT_EQ(openset_score(Tensor({1, 2}, {1, 2}), p)[0], 0.0);
    Tensor f({4, 2}, {0.3, 0.1, 5, 5, -2, 0, 1, 1});
    EXPECT_EQ(openset_score(f, p), openset_score(f, q));
    EXPECT_NEAR(openset_score(f, p)[0], 0.09 + 0.01, 1e-15);
}
