#pragma once

// Training loop, model selection, evaluation and the leave-one-subject-out
// harness for the three compared methods:
//   baseline  - affine layer + softmax cross-entropy on the shared feature
//   cpl       - prototype learning on the semantic head only
//   proposed  - semantic head on class prototypes plus style head on subject
//               prototypes, weighted by alpha

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "protodg/data_io.hpp"
#include "protodg/metrics.hpp"
#include "protodg/network.hpp"
#include "protodg/ops.hpp"
#include "protodg/optim.hpp"
#include "protodg/proto_loss.hpp"
#include "protodg/tensor.hpp"

namespace protodg {

enum class Method { baseline, cpl, proposed };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::baseline: return "baseline";
        case Method::cpl: return "cpl";
        case Method::proposed: return "proposed";
    }
    return "unknown";
}

inline Method parse_method(std::string_view s) {
    if (s == "baseline") return Method::baseline;
    if (s == "cpl") return Method::cpl;
    if (s == "proposed") return Method::proposed;
    throw ParameterError("unknown method '" + std::string(s) + "' (expected baseline, cpl or proposed)");
}

struct TrainConfig {
    Method method = Method::proposed;
    double lr = 0.005;
    std::size_t epochs = 200;
    std::size_t batch = 16;
    double alpha = 0.1;
    double beta1 = 0.001;
    double beta2 = 0.001;
    double gamma = 1.0;
    std::uint64_t seed = 0;
    double val_fraction = 0.2;
    double eta_min = 0.0;
    NetworkConfig network;
    std::size_t eval_batch = 64;
    // Trials of this subject must never reach a training or validation batch;
    // sightings are counted, not silently dropped.
    std::optional<std::uint16_t> excluded_subject;

    LossWeights weights() const { return {gamma, alpha, beta1, beta2}; }

    void validate() const {
        if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ParameterError("val_fraction must be in (0,1)");
        if (batch < 2) throw ParameterError("batch must be >= 2");
        if (eval_batch < 1) throw ParameterError("eval_batch must be >= 1");
        if (!(alpha >= 0.0 && beta1 >= 0.0 && beta2 >= 0.0)) throw ParameterError("loss weights must be >= 0");
        if (!(gamma > 0.0)) throw ParameterError("gamma must be > 0");
        if (!(lr > 0.0) || !(eta_min >= 0.0)) throw ParameterError("learning rates must be positive");
        stage_lengths(network);
    }
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    // mean training-batch values of the loss terms
    double l_c = 0.0;
    double l_cp = 0.0;
    double l_d = 0.0;
    double l_dp = 0.0;
};

struct BaselineHead {
    Var weight;  // [n_classes, F]
    Var bias;
};

struct Model {
    Method method = Method::proposed;
    ModelParams net;
    PrototypeSet class_protos;
    PrototypeSet subject_protos;  // row i belongs to subject_ids[i]
    BaselineHead head;
    std::vector<std::uint16_t> subject_ids;

    std::size_t n_classes() const { return class_protos.count(); }

    // Learnable tensors the optimizer updates for this method, with names.
    std::vector<std::pair<std::string, Var>> trainable() const {
        std::vector<std::pair<std::string, Var>> out;
        for (auto& [name, v] : net.named_parameters()) {
            const bool style = name.starts_with("style.");
            const bool semantic = name.starts_with("semantic.");
            if (style && method != Method::proposed) continue;
            if (semantic && method == Method::baseline) continue;
            out.emplace_back(name, v);
        }
        if (method == Method::baseline) {
            out.emplace_back("baseline.weight", head.weight);
            out.emplace_back("baseline.bias", head.bias);
        } else {
            out.emplace_back("class_prototypes", class_protos.values);
            if (method == Method::proposed) out.emplace_back("subject_prototypes", subject_protos.values);
        }
        return out;
    }
};

// Every architecture tensor is drawn from the seed in the same order whatever
// the method; the baseline head uses its own derived stream.
inline Model make_model(const NetworkConfig& net, Method method, std::size_t n_classes,
                        std::vector<std::uint16_t> subject_ids, std::uint64_t seed) {
    if (n_classes < 2) throw DataError("need at least 2 classes, got " + std::to_string(n_classes));
    if (subject_ids.empty()) throw DataError("need at least one source subject");
    Model m;
    m.method = method;
    m.net = build_model(net, seed);
    m.class_protos = PrototypeSet::zeros(n_classes, net.encoder_dim, PrototypeRole::class_label);
    m.subject_protos = PrototypeSet::zeros(subject_ids.size(), net.encoder_dim, PrototypeRole::subject);
    m.subject_ids = std::move(subject_ids);
    Rng head_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const std::size_t F = feature_dim(net);
    m.head.weight = detail::uniform_fan_in({n_classes, F}, F, head_rng);
    m.head.bias = detail::zeros_param({n_classes});
    return m;
}

inline Model clone(const Model& src) {
    Model m = src;
    m.net = clone(src.net);
    m.class_protos.values = clone(src.class_protos.values);
    m.subject_protos.values = clone(src.subject_protos.values);
    m.head.weight = clone(src.head.weight);
    m.head.bias = clone(src.head.bias);
    return m;
}

// Leakage instrumentation shared by every batch the trainer assembles.
struct ProtocolMonitor {
    std::size_t excluded_trials_seen = 0;
    std::size_t batches = 0;
};

struct Batch {
    Var x;
    std::vector<int> classes;
    std::vector<int> subjects;  // prototype row, -1 for subjects unknown to the model
};

inline Batch make_batch(const TrialSet& set, std::span<const std::size_t> idx, const Model& model) {
    Batch b;
    const std::size_t ts = set.trial_size();
    std::vector<double> data(idx.size() * ts);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        auto tr = set.trial(idx[k]);
        std::copy(tr.begin(), tr.end(), data.begin() + static_cast<std::ptrdiff_t>(k * ts));
        b.classes.push_back(set.class_ids[idx[k]]);
        auto it = std::lower_bound(model.subject_ids.begin(), model.subject_ids.end(), set.subject_ids[idx[k]]);
        b.subjects.push_back(it != model.subject_ids.end() && *it == set.subject_ids[idx[k]]
                                 ? static_cast<int>(it - model.subject_ids.begin())
                                 : -1);
    }
    b.x = make_var({idx.size(), set.n_channels, set.n_samples}, std::move(data));
    return b;
}

struct StepOutput {
    Var loss;
    LossBreakdown parts;
    std::vector<int> predictions;
    Var semantic;
    Var style;
    Var logits;
};

inline std::vector<int> argmax_rows(const Tensor& t) {
    const std::size_t B = t.dim(0), K = t.dim(1);
    std::vector<int> out(B, 0);
    for (std::size_t j = 0; j < B; ++j)
        for (std::size_t i = 1; i < K; ++i)
            if (t[j * K + i] > t[j * K + out[j]]) out[j] = static_cast<int>(i);
    return out;
}

// Forward pass plus the method's own training objective.
inline StepOutput forward_step(Model& model, Tape& tape, const Batch& batch, const TrainConfig& cfg, RunMode mode,
                               Rng& rng) {
    StepOutput out;
    auto shared = extract_shared(model.net, tape, batch.x, mode, rng);
    switch (model.method) {
        case Method::baseline: {
            out.logits = linear(tape, shared, model.head.weight, model.head.bias);
            out.loss = softmax_cross_entropy(tape, out.logits, batch.classes);
            out.parts.l_c = out.loss->item();
            out.parts.total = out.parts.l_c;
            out.predictions = argmax_rows(*out.logits);
            break;
        }
        case Method::cpl: {
            out.semantic = encode_semantic(model.net, tape, shared);
            auto terms = task_loss_terms(tape, out.semantic, model.class_protos, batch.classes, cfg.gamma, cfg.beta1);
            out.loss = terms.total;
            out.parts = {terms.dce->item(), terms.prototype->item(), 0.0, 0.0, terms.total->item()};
            out.predictions = classify(*out.semantic, model.class_protos);
            break;
        }
        case Method::proposed: {
            for (int s : batch.subjects)
                if (s < 0) throw DataError("batch contains a subject without a prototype");
            out.semantic = encode_semantic(model.net, tape, shared);
            out.style = encode_style(model.net, tape, shared);
            auto c = combined_loss(tape, out.semantic, model.class_protos, batch.classes, out.style,
                                   model.subject_protos, batch.subjects, cfg.weights());
            out.loss = c.total;
            out.parts = c.breakdown;
            out.predictions = classify(*out.semantic, model.class_protos);
            break;
        }
    }
    return out;
}

namespace detail {

inline void observe(ProtocolMonitor* monitor, const TrialSet& set, std::span<const std::size_t> idx,
                    const TrainConfig& cfg) {
    if (!monitor) return;
    ++monitor->batches;
    if (!cfg.excluded_subject) return;
    for (auto i : idx)
        if (set.subject_ids[i] == *cfg.excluded_subject) ++monitor->excluded_trials_seen;
}

inline std::size_t count_correct(std::span<const int> pred, std::span<const int> truth) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) n += pred[i] == truth[i];
    return n;
}

}  // namespace detail

// One pass over shuffled training data with the epoch's cosine learning rate.
// The trailing incomplete batch is dropped.
inline EpochMetrics train_epoch(Model& model, const TrialSet& train, AdamState& opt, const TrainConfig& cfg,
                                std::size_t epoch, Rng& rng, ProtocolMonitor* monitor = nullptr) {
    const std::size_t n_batches = train.n_trials() / cfg.batch;
    if (n_batches == 0)
        throw DataError("training set of " + std::to_string(train.n_trials()) + " trials is smaller than one batch");
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.eta_min);
    std::vector<std::size_t> order(train.n_trials());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    const auto named = model.trainable();
    std::vector<Var> params;
    std::vector<std::string> names;
    for (auto& [n, v] : named) {
        names.push_back(n);
        params.push_back(v);
    }
    std::size_t correct = 0;
    for (std::size_t b = 0; b < n_batches; ++b) {
        std::span<const std::size_t> idx(order.data() + b * cfg.batch, cfg.batch);
        detail::observe(monitor, train, idx, cfg);
        auto batch = make_batch(train, idx, model);
        const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b);
        Tape tape;
        StepOutput step;
        try {
            step = forward_step(model, tape, batch, cfg, RunMode::train, rng);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " at " + where);
        }
        if (!std::isfinite(step.parts.total)) throw NumericError("non-finite loss at " + where);
        tape.backward(step.loss);
        adam_step(params, opt, m.lr, names);
        m.train_loss += step.parts.total;
        m.l_c += step.parts.l_c;
        m.l_cp += step.parts.l_cp;
        m.l_d += step.parts.l_d;
        m.l_dp += step.parts.l_dp;
        correct += detail::count_correct(step.predictions, batch.classes);
    }
    const double nb = static_cast<double>(n_batches);
    m.train_loss /= nb;
    m.l_c /= nb;
    m.l_cp /= nb;
    m.l_d /= nb;
    m.l_dp /= nb;
    m.train_acc = static_cast<double>(correct) / static_cast<double>(n_batches * cfg.batch);
    return m;
}

struct LossEval {
    double loss = 0.0;
    double accuracy = 0.0;
    LossBreakdown parts;
};

// Inference-mode objective and accuracy, averaged over trials.
inline LossEval evaluate_loss(Model& model, const TrialSet& set, const TrainConfig& cfg,
                              ProtocolMonitor* monitor = nullptr) {
    LossEval out;
    if (set.n_trials() == 0) return out;
    Rng unused(0);
    std::size_t correct = 0;
    for (std::size_t start = 0; start < set.n_trials(); start += cfg.eval_batch) {
        const std::size_t n = std::min(cfg.eval_batch, set.n_trials() - start);
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), start);
        detail::observe(monitor, set, idx, cfg);
        auto batch = make_batch(set, idx, model);
        auto tape = Tape::no_grad();
        auto step = forward_step(model, tape, batch, cfg, RunMode::infer, unused);
        const double w = static_cast<double>(n);
        out.loss += w * step.parts.total;
        out.parts.l_c += w * step.parts.l_c;
        out.parts.l_cp += w * step.parts.l_cp;
        out.parts.l_d += w * step.parts.l_d;
        out.parts.l_dp += w * step.parts.l_dp;
        correct += detail::count_correct(step.predictions, batch.classes);
    }
    const double n = static_cast<double>(set.n_trials());
    out.loss /= n;
    out.parts.l_c /= n;
    out.parts.l_cp /= n;
    out.parts.l_d /= n;
    out.parts.l_dp /= n;
    out.parts.total = out.loss;
    out.accuracy = static_cast<double>(correct) / n;
    return out;
}

struct FoldResult {
    std::optional<std::uint16_t> target_subject;
    Method method = Method::proposed;
    std::uint64_t seed = 0;
    std::size_t best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    double test_acc = std::numeric_limits<double>::quiet_NaN();
    std::vector<EpochMetrics> history;

    std::size_t n_source_subjects = 0;
    std::size_t n_subject_prototypes = 0;
    std::size_t excluded_trials_seen = 0;
    bool prototypes_zero_at_init = false;
    bool prototypes_distinct_after_first_epoch = false;
    // Mean open-set score of held-out-target trials and of source validation
    // trials (NaN for the baseline).
    double openset_target_mean = std::numeric_limits<double>::quiet_NaN();
    double openset_val_mean = std::numeric_limits<double>::quiet_NaN();
};

struct FitOutcome {
    Model model;  // best validation checkpoint
    FoldResult result;
    TrialSet train;
    TrialSet val;
};

namespace detail {

inline bool all_zero(const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; });
}

inline bool rows_pairwise_distinct(const Tensor& t) {
    const std::size_t K = t.dim(0), D = t.dim(1);
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = i + 1; j < K; ++j) {
            bool same = true;
            for (std::size_t k = 0; k < D && same; ++k) same = t[i * D + k] == t[j * D + k];
            if (same) return false;
        }
    return true;
}

}  // namespace detail

// Stratified split, `epochs` epochs of training, and selection of the epoch
// with the strictly lowest validation objective.
inline FitOutcome fit(const TrialSet& source, const TrainConfig& cfg,
                      const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    cfg.validate();
    source.validate();
    if (source.n_channels != cfg.network.n_channels || source.n_samples != cfg.network.n_samples)
        throw ShapeError("fit: data is " + std::to_string(source.n_channels) + "x" + std::to_string(source.n_samples) +
                         " but the network expects " + std::to_string(cfg.network.n_channels) + "x" +
                         std::to_string(cfg.network.n_samples));
    std::map<std::uint16_t, std::size_t> per_subject;
    for (auto s : source.subject_ids) ++per_subject[s];
    for (auto [s, n] : per_subject)
        if (n < 5)
            throw DataError("subject " + std::to_string(s) + " has " + std::to_string(n) +
                            " trials; at least 5 are needed to stratify the split");

    auto split = split_indices(source, cfg.val_fraction, cfg.seed);
    FitOutcome out;
    out.train = subset(source, split.train);
    out.val = subset(source, split.val);

    Model model = make_model(cfg.network, cfg.method, source.n_classes(), source.subjects(), cfg.seed);
    FoldResult& r = out.result;
    r.method = cfg.method;
    r.seed = cfg.seed;
    r.target_subject = cfg.excluded_subject;
    r.n_source_subjects = model.subject_ids.size();
    r.n_subject_prototypes = model.method == Method::proposed ? model.subject_protos.count() : 0;
    r.prototypes_zero_at_init =
        detail::all_zero(*model.class_protos.values) && detail::all_zero(*model.subject_protos.values);

    ProtocolMonitor monitor;
    AdamState opt;
    Rng rng(cfg.seed + 1);
    std::optional<Model> best;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto m = train_epoch(model, out.train, opt, cfg, epoch, rng, &monitor);
        if (epoch == 0) {
            bool distinct = true;
            if (model.method != Method::baseline) distinct = detail::rows_pairwise_distinct(*model.class_protos.values);
            if (model.method == Method::proposed)
                distinct = distinct && detail::rows_pairwise_distinct(*model.subject_protos.values);
            r.prototypes_distinct_after_first_epoch = distinct;
        }
        auto v = evaluate_loss(model, out.val, cfg, &monitor);
        m.val_loss = v.loss;
        m.val_acc = v.accuracy;
        r.history.push_back(m);
        if (on_epoch) on_epoch(m);
        if (v.loss < r.best_val_loss) {
            r.best_val_loss = v.loss;
            r.best_epoch = epoch;
            best = clone(model);
        }
    }
    r.excluded_trials_seen = monitor.excluded_trials_seen;
    out.model = best ? std::move(*best) : std::move(model);
    return out;
}

struct Embedding {
    std::vector<double> semantic;  // [n x encoder_dim], empty for the baseline
    std::vector<double> style;     // [n x encoder_dim], empty unless proposed
    std::vector<double> logits;    // [n x classes], baseline only
};

inline Embedding embed(Model& model, const TrialSet& set, std::size_t eval_batch = 64) {
    if (set.n_channels != model.net.config.n_channels || set.n_samples != model.net.config.n_samples)
        throw ShapeError("evaluate: trials are " + std::to_string(set.n_channels) + "x" +
                         std::to_string(set.n_samples) + " but the model expects " +
                         std::to_string(model.net.config.n_channels) + "x" +
                         std::to_string(model.net.config.n_samples));
    Embedding e;
    Rng unused(0);
    for (std::size_t start = 0; start < set.n_trials(); start += eval_batch) {
        const std::size_t n = std::min(eval_batch, set.n_trials() - start);
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), start);
        auto batch = make_batch(set, idx, model);
        auto tape = Tape::no_grad();
        auto shared = extract_shared(model.net, tape, batch.x, RunMode::infer, unused);
        if (model.method == Method::baseline) {
            auto z = linear(tape, shared, model.head.weight, model.head.bias);
            e.logits.insert(e.logits.end(), z->data().begin(), z->data().end());
            continue;
        }
        auto sem = encode_semantic(model.net, tape, shared);
        e.semantic.insert(e.semantic.end(), sem->data().begin(), sem->data().end());
        if (model.method == Method::proposed) {
            auto sty = encode_style(model.net, tape, shared);
            e.style.insert(e.style.end(), sty->data().begin(), sty->data().end());
        }
    }
    return e;
}

struct Evaluation {
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    std::vector<int> truth;
    std::vector<int> predicted;
    std::vector<std::uint16_t> subjects;
    std::vector<double> openset;  // NaN for the baseline
};

// Nearest class prototype on the semantic head (softmax argmax for the
// baseline). The open-set score is the style-to-subject-prototype distance
// for the proposed method and the semantic-to-class distance for cpl.
inline Evaluation evaluate(Model& model, const TrialSet& trials, std::size_t eval_batch = 64) {
    Evaluation ev;
    auto e = embed(model, trials, eval_batch);
    const std::size_t n = trials.n_trials();
    const std::size_t d = model.net.config.encoder_dim;
    if (model.method == Method::baseline) {
        if (n) ev.predicted = argmax_rows(Tensor({n, model.n_classes()}, e.logits));
        ev.openset.assign(n, std::numeric_limits<double>::quiet_NaN());
    } else if (n) {
        Tensor sem({n, d}, e.semantic);
        ev.predicted = classify(sem, model.class_protos);
        if (model.method == Method::proposed)
            ev.openset = openset_score(Tensor({n, d}, e.style), model.subject_protos);
        else
            ev.openset = openset_score(sem, model.class_protos);
    }
    ev.truth.assign(trials.class_ids.begin(), trials.class_ids.end());
    ev.subjects = trials.subject_ids;
    if (n) ev.accuracy = static_cast<double>(detail::count_correct(ev.predicted, ev.truth)) / static_cast<double>(n);
    return ev;
}

struct LosoOutcome {
    FitOutcome fit;
    Evaluation test;
};

// Trains on every subject except the target (or on the given source subjects)
// and evaluates on the target's trials, optionally restricted to one session.
inline LosoOutcome loso_run(const TrialSet& dataset, std::uint16_t target, TrainConfig cfg,
                            const std::optional<std::vector<std::uint16_t>>& sources = std::nullopt,
                            std::optional<std::uint16_t> eval_session = std::nullopt,
                            const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    const auto known = dataset.subjects();
    if (!std::binary_search(known.begin(), known.end(), target))
        throw DataError("unknown target subject " + std::to_string(target) + "; known subjects: " +
                        detail::id_list(known));
    TrialSet source;
    if (sources) {
        if (std::find(sources->begin(), sources->end(), target) != sources->end())
            throw DataError("target subject " + std::to_string(target) + " listed as a source");
        source = select_subjects(dataset, *sources);
    } else {
        source = exclude_subject(dataset, target);
    }
    cfg.excluded_subject = target;
    LosoOutcome out{fit(source, cfg, on_epoch), {}};

    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < dataset.n_trials(); ++i)
        if (dataset.subject_ids[i] == target && (!eval_session || dataset.session_ids[i] == *eval_session))
            idx.push_back(i);
    if (idx.empty()) throw DataError("target subject " + std::to_string(target) + " has no evaluation trials");
    out.test = evaluate(out.fit.model, subset(dataset, idx), cfg.eval_batch);
    auto& r = out.fit.result;
    r.test_acc = out.test.accuracy;
    if (out.fit.model.method != Method::baseline) {
        r.openset_target_mean = mean_of(out.test.openset);
        r.openset_val_mean = mean_of(evaluate(out.fit.model, out.fit.val, cfg.eval_batch).openset);
    }
    return out;
}

struct SweepSpec {
    std::vector<Method> methods{Method::baseline, Method::proposed};
    std::vector<std::uint64_t> seeds{0};
    std::vector<std::uint16_t> targets;  // empty: every subject
    // Number of source subjects per fold; 0 uses every non-target subject.
    std::size_t n_source = 0;
    std::optional<std::uint16_t> eval_session;
};

struct SweepRow {
    Method method = Method::proposed;
    std::size_t n_source_subjects = 0;
    std::uint64_t seed = 0;
    std::uint16_t target_subject = 0;
    double test_acc = 0.0;
    std::size_t best_epoch = 0;
    FoldResult fold;
};

// Source subjects for one (target, seed) fold. A random subset when n_source
// is smaller than the pool, identical for every method.
inline std::vector<std::uint16_t> choose_sources(const std::vector<std::uint16_t>& subjects, std::uint16_t target,
                                                 std::size_t n_source, std::uint64_t seed) {
    std::vector<std::uint16_t> pool;
    for (auto s : subjects)
        if (s != target) pool.push_back(s);
    if (n_source == 0 || n_source >= pool.size()) return pool;
    Rng rng(seed * 1000003ULL + target);
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(n_source);
    std::sort(pool.begin(), pool.end());
    return pool;
}

inline std::vector<SweepRow> loso_sweep(const TrialSet& dataset, const SweepSpec& spec, const TrainConfig& base,
                                        const std::function<void(const SweepRow&)>& on_row = {}) {
    const auto subjects = dataset.subjects();
    auto targets = spec.targets.empty() ? subjects : spec.targets;
    for (auto t : targets)
        if (!std::binary_search(subjects.begin(), subjects.end(), t))
            throw DataError("unknown target subject " + std::to_string(t) + "; known subjects: " +
                            detail::id_list(subjects));
    std::vector<SweepRow> rows;
    for (auto method : spec.methods)
        for (auto target : targets)
            for (auto seed : spec.seeds) {
                TrainConfig cfg = base;
                cfg.method = method;
                cfg.seed = seed;
                const auto sources = choose_sources(subjects, target, spec.n_source, seed);
                auto out = loso_run(dataset, target, cfg, sources, spec.eval_session);
                SweepRow row{method, sources.size(), seed, target, out.fit.result.test_acc,
                             out.fit.result.best_epoch, out.fit.result};
                if (on_row) on_row(row);
                rows.push_back(std::move(row));
            }
    return rows;
}

struct SweepSummary {
    Method method = Method::proposed;
    std::size_t n_source_subjects = 0;
    double mean_acc = 0.0;
    double std_acc = 0.0;
    std::size_t runs = 0;
};

// Mean and sample standard deviation of test accuracy per (method, source count).
inline std::vector<SweepSummary> summarize(const std::vector<SweepRow>& rows) {
    std::map<std::pair<int, std::size_t>, std::vector<double>> groups;
    for (const auto& r : rows) groups[{static_cast<int>(r.method), r.n_source_subjects}].push_back(r.test_acc);
    std::vector<SweepSummary> out;
    for (const auto& [key, accs] : groups)
        out.push_back({static_cast<Method>(key.first), key.second, mean_of(accs), stddev_of(accs), accs.size()});
    return out;
}

// ---- CSV output ----

namespace detail {

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace detail

inline void write_metrics_csv(std::ostream& os, const std::vector<EpochMetrics>& history) {
    using detail::fmt_double;
    os << "epoch,lr,train_loss,train_acc,val_loss,val_acc,l_c,l_cp,l_d,l_dp\n";
    for (const auto& m : history)
        os << m.epoch << ',' << fmt_double(m.lr) << ',' << fmt_double(m.train_loss) << ',' << fmt_double(m.train_acc)
           << ',' << fmt_double(m.val_loss) << ',' << fmt_double(m.val_acc) << ',' << fmt_double(m.l_c) << ','
           << fmt_double(m.l_cp) << ',' << fmt_double(m.l_d) << ',' << fmt_double(m.l_dp) << '\n';
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
    os << "method,n_source_subjects,seed,target_subject,test_acc,best_epoch\n";
    for (const auto& r : rows)
        os << method_name(r.method) << ',' << r.n_source_subjects << ',' << r.seed << ',' << r.target_subject << ','
           << detail::fmt_double(r.test_acc) << ',' << r.best_epoch << '\n';
}

inline void write_summary_csv(std::ostream& os, const std::vector<SweepSummary>& rows) {
    os << "method,n_source_subjects,mean_acc,std_acc,runs\n";
    for (const auto& r : rows)
        os << method_name(r.method) << ',' << r.n_source_subjects << ',' << detail::fmt_double(r.mean_acc) << ','
           << detail::fmt_double(r.std_acc) << ',' << r.runs << '\n';
}

inline void write_predictions_csv(std::ostream& os, const Evaluation& ev) {
    os << "trial,subject_id,true_class,predicted_class,openset_score\n";
    for (std::size_t i = 0; i < ev.truth.size(); ++i)
        os << i << ',' << ev.subjects[i] << ',' << ev.truth[i] << ',' << ev.predicted[i] << ','
           << detail::fmt_double(ev.openset[i]) << '\n';
}

}  // namespace protodg
