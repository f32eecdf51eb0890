// Acceptance suite: one [PASS]/[FAIL] line per criterion. Exit status is the
// number of failed criteria.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "fixture.hpp"
#include "protodg/cli.hpp"
#include "protodg/gradcheck_suite.hpp"
#include "protodg/signal.hpp"

using namespace protodg;
using namespace protodg::testing;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances and budgets.
constexpr double kGradSmoothTol = 1e-6;
constexpr double kGradPiecewiseTol = 1e-4;
constexpr double kGradBudgetSeconds = 120.0;
constexpr double kProbSumTol = 1e-9;
constexpr double kBreakdownTol = 1e-12;
constexpr double kDcTol = 1e-6;
constexpr double kPassbandTol = 0.01;
constexpr double kStopbandMinDb = 40.0;
constexpr double kLinearityTol = 1e-9;
constexpr double kMinMeanAcc = 0.60;
constexpr double kMaxDeficit = 0.02;
constexpr double kSweepBudgetSeconds = 15.0 * 60.0;
constexpr std::uint64_t kSweepSeeds = 5;

int failures = 0;

void report(bool ok, const std::string& name, const std::string& details) {
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << " (" << details << ")" << std::endl;
    if (!ok) ++failures;
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Var random_var(Shape s, Rng& rng, double lo = -3.0, double hi = 3.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> d(numel(s));
    for (auto& v : d) v = u(rng);
    return make_var(std::move(s), std::move(d));
}

std::vector<int> random_labels(std::size_t n, int k, Rng& rng) {
    std::uniform_int_distribution<int> u(0, k - 1);
    std::vector<int> y(n);
    for (auto& v : y) v = u(rng);
    return y;
}

void gradient_suite() {
    const auto rep = run_gradcheck_suite();
    double worst_smooth = 0.0, worst_piecewise = 0.0;
    bool tolerances_ok = true;
    std::set<std::string> names;
    for (const auto& r : rep.rows) {
        names.insert(r.name);
        const bool piecewise = r.tolerance == kGradPiecewiseTol;
        tolerances_ok = tolerances_ok && (r.tolerance == kGradSmoothTol || piecewise);
        (piecewise ? worst_piecewise : worst_smooth) =
            std::max(piecewise ? worst_piecewise : worst_smooth, r.max_rel_error);
    }
    bool covered = true;
    for (const char* op : {"conv2d", "maxpool2d", "batchnorm", "elu", "linear", "flatten", "dce_loss", "prototype_loss",
                           "task_loss", "combined_loss"})
        covered = covered && names.count(op);
    report(rep.all_passed() && tolerances_ok && covered && rep.seconds < kGradBudgetSeconds, "gradient suite",
           std::to_string(rep.rows.size()) + " cases, max rel err smooth " + fmt(worst_smooth, 3) + " / piecewise " +
               fmt(worst_piecewise, 3) + ", " + fmt(rep.seconds, 3) + " s");
}

void architecture() {
    // independent length arithmetic for the default configuration
    std::size_t len = 1000;
    len = len - 10 + 1;  // temporal conv
    len /= 3;
    for (int block = 0; block < 3; ++block) {
        len = len - 10 + 1;
        len /= 3;
    }
    const std::size_t oracle = 200 * len;

    NetworkConfig cfg;
    auto params = build_model(cfg, 0);
    std::vector<double> x(2 * 62 * 1000);
    Rng rng(1);
    std::normal_distribution<double> n;
    for (auto& v : x) v = n(rng);
    auto tape = Tape::no_grad();
    auto shared = extract_shared(params, tape, make_var({2, 62, 1000}, std::move(x)), RunMode::infer, rng);
    auto sem = encode_semantic(params, tape, shared), sty = encode_style(params, tape, shared);
    const bool ok = oracle == 1400 && feature_dim(cfg) == 1400 && shared->shape() == Shape{2, 1400} &&
                    sem->shape() == Shape{2, 2} && sty->shape() == Shape{2, 2};
    report(ok, "architecture arithmetic",
           "[2,62,1000] -> " + to_string(shared->shape()) + ", semantic " + to_string(sem->shape()) + ", style " +
               to_string(sty->shape()));
}

void loss_identities() {
    Rng rng(11);
    std::uniform_int_distribution<int> kdist(2, 6);

    double worst_sum = 0.0;
    std::size_t mismatches = 0, instances = 0;
    for (double gamma : {0.1, 1.0, 10.0}) {
        for (int inst = 0; inst < 1000; ++inst, ++instances) {
            const auto K = static_cast<std::size_t>(kdist(rng));
            auto f = random_var({1, 2}, rng);
            PrototypeSet p{random_var({K, 2}, rng), PrototypeRole::class_label};
            Tape t;
            auto probs = dce_probabilities(t, pairwise_sq_dist(t, f, p.values), gamma);
            double sum = 0.0;
            std::size_t arg = 0;
            for (std::size_t i = 0; i < K; ++i) {
                sum += (*probs)[i];
                if ((*probs)[i] > (*probs)[arg]) arg = i;
            }
            worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
            mismatches += classify(*f, p)[0] != static_cast<int>(arg);
        }
    }
    report(worst_sum < kProbSumTol, "probability rows sum to one",
           "max |sum-1| " + fmt(worst_sum, 3) + " over " + std::to_string(instances) + " rows");
    report(mismatches == 0, "classify == argmax of probabilities",
           std::to_string(mismatches) + " mismatches over " + std::to_string(instances) + " instances, gamma 0.1/1/10");

    double worst_breakdown = 0.0;
    bool degenerate_ok = true;
    for (int inst = 0; inst < 50; ++inst) {
        auto sem = random_var({12, 2}, rng), sty = random_var({12, 2}, rng);
        PrototypeSet cp{random_var({2, 2}, rng), PrototypeRole::class_label};
        PrototypeSet sp{random_var({4, 2}, rng), PrototypeRole::subject};
        auto cls = random_labels(12, 2, rng), subj = random_labels(12, 4, rng);
        LossWeights w;
        Tape t;
        auto c = combined_loss(t, sem, cp, cls, sty, sp, subj, w);
        const auto& b = c.breakdown;
        worst_breakdown = std::max(
            worst_breakdown, std::abs(b.total - (b.l_c + w.beta1 * b.l_cp + w.alpha * (b.l_d + w.beta2 * b.l_dp))));

        auto d = combined_loss(t, sem, cp, cls, sty, sp, subj, {1.0, 0.0, 0.0, 0.001});
        const double dce = dce_loss_from_distances(t, pairwise_sq_dist(t, sem, cp.values), cls, 1.0)->item();
        degenerate_ok = degenerate_ok && d.total->item() == dce;
    }
    report(worst_breakdown < kBreakdownTol, "combined-loss breakdown identity",
           "max residual " + fmt(worst_breakdown, 3));

    // same degeneration carried through training
    const auto data = generate_synthetic(fixture_synth(3, 10));
    auto p = fixture_train(Method::proposed, 2, 2);
    p.alpha = 0.0;
    p.beta1 = 0.0;
    auto c = fixture_train(Method::cpl, 2, 2);
    c.beta1 = 0.0;
    const auto hp = fit(data, p).result.history, hc = fit(data, c).result.history;
    bool same = hp.size() == hc.size();
    for (std::size_t i = 0; same && i < hp.size(); ++i)
        same = hp[i].train_loss == hc[i].train_loss && hp[i].val_loss == hc[i].val_loss;
    report(degenerate_ok && same, "alpha=0, beta1=0 reduces to the class DCE term",
           "50 loss instances bit-equal, 2-epoch proposed vs cpl trajectories " + std::string(same ? "equal" : "differ"));
}

std::vector<double> tone(double hz, double fs, std::size_t n, double phase = 0.0) {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / fs + phase);
    return x;
}

double rms(const std::vector<double>& x, std::size_t skip) {
    double s = 0.0;
    for (std::size_t i = skip; i + skip < x.size(); ++i) s += x[i] * x[i];
    return std::sqrt(s / static_cast<double>(x.size() - 2 * skip));
}

void decimation() {
    const auto dc = cheby1_decimate(std::vector<double>(1000, 1.0), 4);
    double dc_err = 0.0;
    for (double v : dc) dc_err = std::max(dc_err, std::abs(v - 1.0));
    report(dc_err < kDcTol, "decimation: DC preserved", "max |y-1| " + fmt(dc_err, 3));

    constexpr std::size_t edge = 25;  // output samples excluded at each end (filter transient)
    const double amp = rms(cheby1_decimate(tone(10.0, 1000.0, 1000), 4), edge) * std::sqrt(2.0);
    report(std::abs(amp - 1.0) < kPassbandTol, "decimation: 10 Hz tone amplitude",
           "amplitude " + fmt(amp, 6) + " at fs 1000, q 4");

    double worst_db = INFINITY, worst_full_db = INFINITY;
    for (double phase : {0.0, 0.3, 1.0, 2.0}) {
        const auto y = cheby1_decimate(tone(200.0, 1000.0, 1000, phase), 4);
        worst_db = std::min(worst_db, 20.0 * std::log10((1.0 / std::sqrt(2.0)) / rms(y, edge)));
        worst_full_db = std::min(worst_full_db, 20.0 * std::log10((1.0 / std::sqrt(2.0)) / rms(y, 0)));
    }
    report(worst_db > kStopbandMinDb, "decimation: 200 Hz tone attenuated",
           fmt(worst_db, 4) + " dB steady state (4 phases, " + std::to_string(edge) +
               " edge samples excluded); full length incl. edge transients " + fmt(worst_full_db, 4) + " dB");

    Rng rng(5);
    std::normal_distribution<double> n;
    std::vector<double> a(1000), b(1000), z(1000);
    for (auto& v : a) v = n(rng);
    for (auto& v : b) v = n(rng);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = 2.5 * a[i] - 0.7 * b[i];
    const auto da = cheby1_decimate(a, 4), db = cheby1_decimate(b, 4), dz = cheby1_decimate(z, 4);
    double lin = 0.0;
    for (std::size_t i = 0; i < dz.size(); ++i) lin = std::max(lin, std::abs(dz[i] - (2.5 * da[i] - 0.7 * db[i])));
    report(lin < kLinearityTol, "decimation: linearity", "max residual " + fmt(lin, 3));
}

void loso_sweep_criteria() {
    const auto data = generate_synthetic(fixture_synth());
    SweepSpec spec;
    spec.methods = {Method::baseline, Method::proposed};
    spec.seeds.clear();
    for (std::uint64_t s = 0; s < kSweepSeeds; ++s) spec.seeds.push_back(s);
    const auto t0 = Clock::now();
    const auto rows = loso_sweep(data, spec, fixture_train(Method::proposed, 0, kFixtureEpochs));
    const double elapsed = seconds_since(t0);
    const auto summary = summarize(rows);

    double base = 0.0, prop = 0.0;
    std::ostringstream detail;
    for (const auto& s : summary) {
        (s.method == Method::baseline ? base : prop) = s.mean_acc;
        detail << method_name(s.method) << " " << fmt(100 * s.mean_acc) << "% +/- " << fmt(100 * s.std_acc, 3)
               << " (" << s.runs << " runs), ";
    }
    detail << fmt(elapsed, 4) << " s; 6 subjects x 40 trials, 8 ch x 200 samples, noise " << kFixtureNoise << ", "
           << kFixtureEpochs << " epochs";
    const std::size_t expected_rows = 2 * 6 * kSweepSeeds;
    report(rows.size() == expected_rows && base > kMinMeanAcc && prop > kMinMeanAcc, "LOSO sweep: both above 60%",
           detail.str());
    report(prop >= base - kMaxDeficit, "LOSO sweep: proposed >= baseline - 2 pp",
           "difference " + fmt(100 * (prop - base), 3) + " pp");
    report(elapsed < kSweepBudgetSeconds, "LOSO sweep: sweep runtime", fmt(elapsed, 4) + " s for " +
                                                                              std::to_string(rows.size()) + " fits");

    std::size_t leaked = 0, bad_counts = 0, bad_init = 0, bad_distinct = 0, proposed_rows = 0;
    for (const auto& r : rows) {
        leaked += r.fold.excluded_trials_seen;
        bad_init += !r.fold.prototypes_zero_at_init;
        if (r.method != Method::proposed) continue;
        ++proposed_rows;
        bad_counts += r.fold.n_subject_prototypes != r.n_source_subjects || r.n_source_subjects != 5;
        bad_distinct += !r.fold.prototypes_distinct_after_first_epoch;
    }
    report(leaked == 0, "protocol: no target-subject trial in any batch",
           "counter " + std::to_string(leaked) + " over " + std::to_string(rows.size()) + " folds");
    report(bad_counts == 0, "protocol: subject prototypes == source subjects",
           std::to_string(proposed_rows - bad_counts) + "/" + std::to_string(proposed_rows) + " folds with 5 of 5");
    report(bad_init == 0 && bad_distinct == 0, "protocol: prototypes zero at init, distinct after epoch 1",
           std::to_string(bad_init) + " nonzero inits, " + std::to_string(bad_distinct) + " coincident after epoch 1");
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void determinism() {
    namespace fs = std::filesystem;
    const auto root = fs::temp_directory_path() / "protodg_acceptance";
    fs::remove_all(root);
    fs::create_directories(root);
    const auto data = (root / "fixture.ebd").string();
    std::ostringstream sink;
    auto cli = [&](std::vector<std::string> a) { return run_cli(a, sink, sink); };
    int rc = cli({"generate", "--subjects", "4", "--trials-per-class", "10", "--noise", "0.4", "--out", data});
    rc += cli({"train", "--data", data, "--out-dir", (root / "a").string(), "--target-subject", "2", "--epochs", "5",
               "--seed", "7", "--temporal-kernel", "5", "--pool", "2", "--filters", "8,8,16,16,16"});
    rc += cli({"train", "--from-manifest", (root / "a" / "manifest.json").string(), "--out-dir",
               (root / "b").string()});
    rc += cli({"loso", "--data", data, "--out-dir", (root / "c").string(), "--epochs", "2", "--seeds", "0,1",
               "--temporal-kernel", "5", "--pool", "2", "--filters", "8,8,16,16,16"});
    rc += cli({"loso", "--from-manifest", (root / "c" / "manifest.json").string(), "--out-dir",
               (root / "d").string()});
    const auto ma = slurp(root / "a" / "metrics.csv"), mb = slurp(root / "b" / "metrics.csv");
    const bool ok = rc == 0 && !ma.empty() && ma == mb && slurp(root / "a" / "model.pdgm") == slurp(root / "b" / "model.pdgm") &&
                    slurp(root / "c" / "sweep.csv") == slurp(root / "d" / "sweep.csv");
    report(ok, "determinism: identical manifests give identical metrics",
           "train metrics.csv " + std::string(ma == mb ? "identical" : "differ") + " (" + std::to_string(ma.size()) +
               " bytes), loso sweep.csv " +
               (slurp(root / "c" / "sweep.csv") == slurp(root / "d" / "sweep.csv") ? "identical" : "differ"));
    fs::remove_all(root);
}

}  // namespace

int main() {
    const auto t0 = Clock::now();
    try {
        gradient_suite();
        architecture();
        loss_identities();
        decimation();
        determinism();
        loso_sweep_criteria();
    } catch (const std::exception& e) {
        report(false, "acceptance harness", std::string("aborted: ") + e.what());
    }
    std::cout << (failures == 0 ? "all criteria pass" : std::to_string(failures) + " criteria failed") << " ("
              << fmt(seconds_since(t0), 4) << " s)" << std::endl;
    return failures;
}
