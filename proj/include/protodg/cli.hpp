#pragma once

// The `pdg` command-line tool: generate, train, eval, loso, gradcheck.
// Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "protodg/checkpoint.hpp"
#include "protodg/data_io.hpp"
#include "protodg/gradcheck_suite.hpp"
#include "protodg/synthetic.hpp"
#include "protodg/trainer.hpp"

namespace protodg {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitNumeric = 4 };

struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

inline std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

// ---- config <-> JSON ----

inline nlohmann::json to_json(const TrainConfig& c) {
    const auto& n = c.network;
    return {{"method", method_name(c.method)},
            {"lr", c.lr},
            {"epochs", c.epochs},
            {"batch", c.batch},
            {"alpha", c.alpha},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"gamma", c.gamma},
            {"seed", c.seed},
            {"val_fraction", c.val_fraction},
            {"eta_min", c.eta_min},
            {"eval_batch", c.eval_batch},
            {"network",
             {{"n_channels", n.n_channels},
              {"n_samples", n.n_samples},
              {"temporal_kernel", n.temporal_kernel},
              {"pool", n.pool},
              {"block_filters", n.block_filters},
              {"dropout_p", n.dropout_p},
              {"encoder_dim", n.encoder_dim}}}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.method = parse_method(j.at("method").get<std::string>());
    j.at("lr").get_to(c.lr);
    j.at("epochs").get_to(c.epochs);
    j.at("batch").get_to(c.batch);
    j.at("alpha").get_to(c.alpha);
    j.at("beta1").get_to(c.beta1);
    j.at("beta2").get_to(c.beta2);
    j.at("gamma").get_to(c.gamma);
    j.at("seed").get_to(c.seed);
    j.at("val_fraction").get_to(c.val_fraction);
    j.at("eta_min").get_to(c.eta_min);
    j.at("eval_batch").get_to(c.eval_batch);
    const auto& n = j.at("network");
    n.at("n_channels").get_to(c.network.n_channels);
    n.at("n_samples").get_to(c.network.n_samples);
    n.at("temporal_kernel").get_to(c.network.temporal_kernel);
    n.at("pool").get_to(c.network.pool);
    n.at("block_filters").get_to(c.network.block_filters);
    n.at("dropout_p").get_to(c.network.dropout_p);
    n.at("encoder_dim").get_to(c.network.encoder_dim);
    return c;
}

// Everything a train or loso run depends on.
struct RunSpec {
    std::string command;  // "train" or "loso"
    std::string data_path;
    std::string out_dir;
    TrainConfig config;
    std::optional<std::uint16_t> target;
    std::optional<std::uint16_t> eval_session;
    SweepSpec sweep;  // loso only
};

inline nlohmann::json manifest_json(const RunSpec& r, const std::string& data_digest, std::size_t data_bytes,
                                    const std::vector<std::string>& outputs) {
    nlohmann::json j;
    j["tool"] = "pdg";
    j["tool_version"] = kToolVersion;
    j["command"] = r.command;
    j["config"] = to_json(r.config);
    j["seed"] = r.config.seed;
    j["target_subject"] = r.target ? nlohmann::json(*r.target) : nlohmann::json(nullptr);
    j["eval_session"] = r.eval_session ? nlohmann::json(*r.eval_session) : nlohmann::json(nullptr);
    if (r.command == "loso") {
        std::vector<std::string> methods;
        for (auto m : r.sweep.methods) methods.push_back(method_name(m));
        j["sweep"] = {{"methods", methods},
                      {"seeds", r.sweep.seeds},
                      {"targets", r.sweep.targets},
                      {"n_source", r.sweep.n_source}};
    }
    j["inputs"] = {{{"path", r.data_path}, {"fnv1a64", data_digest}, {"bytes", data_bytes}}};
    j["outputs"] = outputs;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::ostringstream ts;
    ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
    j["created_at"] = ts.str();
    return j;
}

inline RunSpec run_spec_from_manifest(const nlohmann::json& j) {
    RunSpec r;
    r.command = j.at("command").get<std::string>();
    r.config = train_config_from_json(j.at("config"));
    if (!j.at("target_subject").is_null()) r.target = j.at("target_subject").get<std::uint16_t>();
    if (!j.at("eval_session").is_null()) r.eval_session = j.at("eval_session").get<std::uint16_t>();
    r.data_path = j.at("inputs").at(0).at("path").get<std::string>();
    if (r.command == "loso") {
        const auto& s = j.at("sweep");
        r.sweep.methods.clear();
        for (const auto& m : s.at("methods")) r.sweep.methods.push_back(parse_method(m.get<std::string>()));
        s.at("seeds").get_to(r.sweep.seeds);
        s.at("targets").get_to(r.sweep.targets);
        s.at("n_source").get_to(r.sweep.n_source);
    }
    return r;
}

namespace detail {

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
    std::vector<T> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            const auto v = std::stoull(item, &used);
            if (used != item.size() || v > std::numeric_limits<T>::max()) throw std::out_of_range(item);
            out.push_back(static_cast<T>(v));
        } catch (const std::exception&) {
            throw UsageError(std::string("invalid ") + what + " '" + item + "'");
        }
    }
    if (out.empty()) throw UsageError(std::string("empty ") + what + " list");
    return out;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
    out << text;
}

struct TrainFlags {
    std::string method = "proposed";
    std::string filters;
};

inline void add_hyperparameter_flags(CLI::App* cmd, TrainConfig& c, TrainFlags& f) {
    cmd->add_option("--lr", c.lr, "learning rate")->capture_default_str();
    cmd->add_option("--epochs", c.epochs, "training epochs")->capture_default_str();
    cmd->add_option("--batch", c.batch, "mini-batch size")->capture_default_str();
    cmd->add_option("--alpha", c.alpha, "weight of the style objective")->capture_default_str();
    cmd->add_option("--beta1", c.beta1, "class prototype-loss weight")->capture_default_str();
    cmd->add_option("--beta2", c.beta2, "subject prototype-loss weight")->capture_default_str();
    cmd->add_option("--gamma", c.gamma, "distance temperature")->capture_default_str();
    cmd->add_option("--val-fraction", c.val_fraction, "validation share of source trials")->capture_default_str();
    cmd->add_option("--eta-min", c.eta_min, "cosine schedule floor")->capture_default_str();
    cmd->add_option("--temporal-kernel", c.network.temporal_kernel, "temporal kernel length")->capture_default_str();
    cmd->add_option("--pool", c.network.pool, "pooling window")->capture_default_str();
    cmd->add_option("--filters", f.filters, "five comma-separated filter counts");
    cmd->add_option("--dropout", c.network.dropout_p, "dropout probability")->capture_default_str();
}

inline void finish_config(TrainConfig& c, const TrainFlags& f, const TrialSet& data) {
    if (!f.filters.empty()) {
        auto v = parse_list<std::size_t>(f.filters, "filter count");
        if (v.size() != 5) throw UsageError("--filters needs 5 values, got " + std::to_string(v.size()));
        std::copy(v.begin(), v.end(), c.network.block_filters.begin());
    }
    c.network.n_channels = data.n_channels;
    c.network.n_samples = data.n_samples;
}

struct LoadedData {
    TrialSet set;
    std::string digest;
    std::size_t bytes = 0;
};

inline LoadedData load_data(const std::string& path) {
    auto bytes = read_file(path);
    LoadedData d{decode_trialset(bytes), fnv1a_hex(bytes), bytes.size()};
    return d;
}

inline std::string report_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline int execute_train(RunSpec r, std::ostream& out) {
    const auto data = load_data(r.data_path);
    namespace fs = std::filesystem;
    const fs::path dir(r.out_dir);
    fs::create_directories(dir);
    std::vector<std::string> outputs{"manifest.json", "metrics.csv", "model.pdgm"};
    if (r.target) outputs.insert(outputs.end(), {"predictions.csv", "report.json"});
    r.config.validate();
    write_text(dir / "manifest.json", manifest_json(r, data.digest, data.bytes, outputs).dump(2) + "\n");

    FitOutcome fitted;
    std::optional<Evaluation> test;
    if (r.target) {
        auto o = loso_run(data.set, *r.target, r.config, std::nullopt, r.eval_session);
        fitted = std::move(o.fit);
        test = std::move(o.test);
    } else {
        fitted = fit(data.set, r.config);
    }
    std::ostringstream metrics;
    write_metrics_csv(metrics, fitted.result.history);
    write_text(dir / "metrics.csv", metrics.str());
    save_checkpoint(fitted.model, (dir / "model.pdgm").string());
    out << "method " << method_name(r.config.method) << ", best epoch " << fitted.result.best_epoch
        << ", best val loss " << report_double(fitted.result.best_val_loss) << "\n";
    if (test) {
        std::ostringstream preds;
        write_predictions_csv(preds, *test);
        write_text(dir / "predictions.csv", preds.str());
        nlohmann::json rep = {{"target_subject", *r.target},
                              {"test_acc", test->accuracy},
                              {"best_epoch", fitted.result.best_epoch},
                              {"n_trials", test->truth.size()}};
        write_text(dir / "report.json", rep.dump(2) + "\n");
        out << "target subject " << *r.target << " accuracy " << report_double(test->accuracy) << "\n";
    }
    return kExitOk;
}

inline int execute_loso(RunSpec r, std::ostream& out) {
    const auto data = load_data(r.data_path);
    namespace fs = std::filesystem;
    const fs::path dir(r.out_dir);
    fs::create_directories(dir);
    r.config.validate();
    r.sweep.eval_session = r.eval_session;
    write_text(dir / "manifest.json",
               manifest_json(r, data.digest, data.bytes, {"manifest.json", "sweep.csv", "summary.csv"}).dump(2) + "\n");
    auto rows = loso_sweep(data.set, r.sweep, r.config, [&](const SweepRow& row) {
        out << method_name(row.method) << " target " << row.target_subject << " seed " << row.seed << " acc "
            << report_double(row.test_acc) << "\n";
    });
    std::ostringstream sweep, summary;
    write_sweep_csv(sweep, rows);
    const auto agg = summarize(rows);
    write_summary_csv(summary, agg);
    write_text(dir / "sweep.csv", sweep.str());
    write_text(dir / "summary.csv", summary.str());
    for (const auto& s : agg)
        out << method_name(s.method) << " (" << s.n_source_subjects << " sources): mean " << report_double(s.mean_acc)
            << " std " << report_double(s.std_acc) << " over " << s.runs << " runs\n";
    return kExitOk;
}

}  // namespace detail

// args excludes the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
    CLI::App app{"protodg: prototype-based domain generalization for EEG"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    // generate
    SynthConfig synth;
    std::string gen_out;
    auto* gen = app.add_subcommand("generate", "write a synthetic EBD1 trial file");
    gen->add_option("--subjects", synth.n_subjects)->capture_default_str();
    gen->add_option("--trials-per-class", synth.trials_per_class_per_subject)->capture_default_str();
    gen->add_option("--channels", synth.n_channels)->capture_default_str();
    gen->add_option("--samples", synth.n_samples)->capture_default_str();
    gen->add_option("--rate", synth.sample_rate_hz)->capture_default_str();
    gen->add_option("--noise", synth.noise_scale)->capture_default_str();
    gen->add_option("--seed", synth.seed)->capture_default_str();
    gen->add_option("--out", gen_out, "output file")->required();

    // train
    RunSpec train_spec;
    train_spec.command = "train";
    detail::TrainFlags train_flags;
    std::string train_manifest;
    std::optional<std::uint16_t> train_target, train_session;
    auto* train = app.add_subcommand("train", "fit one model; with --target-subject, evaluate it held out");
    train->add_option("--data", train_spec.data_path, "EBD1 trial file");
    train->add_option("--method", train_flags.method, "baseline|cpl|proposed")->capture_default_str();
    train->add_option("--target-subject", train_target, "held-out subject");
    train->add_option("--eval-session", train_session, "evaluate only this session of the target");
    train->add_option("--seed", train_spec.config.seed)->capture_default_str();
    train->add_option("--out-dir", train_spec.out_dir)->required();
    train->add_option("--from-manifest", train_manifest, "rerun from a manifest.json");
    detail::add_hyperparameter_flags(train, train_spec.config, train_flags);

    // eval
    std::string eval_model, eval_data, eval_dir;
    std::optional<std::uint16_t> eval_target, eval_session;
    std::size_t eval_batch = 64;
    auto* eval = app.add_subcommand("eval", "evaluate a saved checkpoint");
    eval->add_option("--model", eval_model, "model.pdgm")->required();
    eval->add_option("--data", eval_data, "EBD1 trial file")->required();
    eval->add_option("--target-subject", eval_target, "restrict to one subject");
    eval->add_option("--eval-session", eval_session, "restrict to one session");
    eval->add_option("--eval-batch", eval_batch)->capture_default_str();
    eval->add_option("--out-dir", eval_dir, "write predictions.csv here");

    // loso
    RunSpec loso_spec;
    loso_spec.command = "loso";
    detail::TrainFlags loso_flags;
    std::string loso_methods = "baseline,proposed", loso_seeds = "0", loso_targets, loso_manifest;
    std::optional<std::uint16_t> loso_session;
    auto* loso = app.add_subcommand("loso", "leave-one-subject-out sweep");
    loso->add_option("--data", loso_spec.data_path, "EBD1 trial file");
    loso->add_option("--methods", loso_methods, "comma-separated methods")->capture_default_str();
    loso->add_option("--seeds", loso_seeds, "comma-separated seeds")->capture_default_str();
    loso->add_option("--targets", loso_targets, "comma-separated target subjects (default: all)");
    loso->add_option("--n-source", loso_spec.sweep.n_source, "source subjects per fold (0: all)")->capture_default_str();
    loso->add_option("--eval-session", loso_session, "evaluate only this session of each target");
    loso->add_option("--out-dir", loso_spec.out_dir)->required();
    loso->add_option("--from-manifest", loso_manifest, "rerun from a manifest.json");
    detail::add_hyperparameter_flags(loso, loso_spec.config, loso_flags);

    // gradcheck
    std::string corrupt;
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every layer and loss");
    grad->add_option("--corrupt", corrupt, "break one op's backward (negative control)")->group("");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*gen) {
            const auto set = generate_synthetic(synth);
            const auto bytes = encode_trialset(set);
            detail::write_file(gen_out, bytes);
            out << "wrote " << gen_out << ": " << set.n_trials() << " trials, " << set.subjects().size()
                << " subjects, " << bytes.size() << " bytes\n";
            return kExitOk;
        }
        if (*train || *loso) {
            const bool is_train = static_cast<bool>(*train);
            RunSpec spec = is_train ? train_spec : loso_spec;
            const std::string& manifest = is_train ? train_manifest : loso_manifest;
            if (!manifest.empty()) {
                nlohmann::json j;
                try {
                    j = nlohmann::json::parse(detail::read_file(manifest));
                    const auto out_dir = spec.out_dir;
                    const auto data_override = spec.data_path;
                    spec = run_spec_from_manifest(j);
                    spec.out_dir = out_dir;
                    if (!data_override.empty()) spec.data_path = data_override;
                } catch (const nlohmann::json::exception& e) {
                    throw UsageError("unreadable manifest " + manifest + ": " + e.what());
                }
                if (spec.command != (is_train ? "train" : "loso"))
                    throw UsageError("manifest is for '" + spec.command + "'");
                const auto digest = fnv1a_hex(detail::read_file(spec.data_path));
                if (digest != j.at("inputs").at(0).at("fnv1a64").get<std::string>())
                    throw DataError("input " + spec.data_path + " does not match the manifest digest");
                return is_train ? detail::execute_train(spec, out) : detail::execute_loso(spec, out);
            }
            if (spec.data_path.empty()) throw UsageError("--data is required");
            const auto& flags = is_train ? train_flags : loso_flags;
            const auto header = read_trialset(spec.data_path);
            detail::finish_config(spec.config, flags, header);
            if (is_train) {
                spec.config.method = parse_method(flags.method);
                spec.target = train_target;
                spec.eval_session = train_session;
                return detail::execute_train(spec, out);
            }
            spec.eval_session = loso_session;
            spec.sweep.methods.clear();
            std::stringstream ms(loso_methods);
            std::string m;
            while (std::getline(ms, m, ','))
                if (!m.empty()) spec.sweep.methods.push_back(parse_method(m));
            if (spec.sweep.methods.empty()) throw UsageError("empty --methods list");
            spec.sweep.seeds = detail::parse_list<std::uint64_t>(loso_seeds, "seed");
            if (!loso_targets.empty()) spec.sweep.targets = detail::parse_list<std::uint16_t>(loso_targets, "target");
            return detail::execute_loso(spec, out);
        }
        if (*eval) {
            auto model = load_checkpoint(eval_model);
            const auto data = read_trialset(eval_data);
            std::vector<std::size_t> idx;
            for (std::size_t i = 0; i < data.n_trials(); ++i)
                if ((!eval_target || data.subject_ids[i] == *eval_target) &&
                    (!eval_session || data.session_ids[i] == *eval_session))
                    idx.push_back(i);
            if (eval_target) {
                const auto known = data.subjects();
                if (!std::binary_search(known.begin(), known.end(), *eval_target))
                    throw DataError("unknown target subject " + std::to_string(*eval_target) +
                                    "; known subjects: " + detail::id_list(known));
            }
            if (idx.empty()) throw DataError("no trials selected for evaluation");
            const auto ev = evaluate(model, subset(data, idx), eval_batch);
            out << "accuracy " << detail::report_double(ev.accuracy) << " on " << idx.size() << " trials\n";
            if (!eval_dir.empty()) {
                std::filesystem::create_directories(eval_dir);
                std::ostringstream preds;
                write_predictions_csv(preds, ev);
                detail::write_text(std::filesystem::path(eval_dir) / "predictions.csv", preds.str());
            }
            return kExitOk;
        }
        if (*grad) {
            const auto report = run_gradcheck_suite(corrupt);
            for (const auto& r : report.rows)
                out << std::left << std::setw(26) << r.name << " max_rel_err " << std::scientific
                    << std::setprecision(3) << r.max_rel_error << " tol " << r.tolerance << "  "
                    << (r.passed ? "pass" : "FAIL") << "\n"
                    << std::defaultfloat;
            out << (report.all_passed() ? "all ops pass" : "gradient check FAILED") << " (" << report.seconds
                << " s)\n";
            return report.all_passed() ? kExitOk : kExitNumeric;
        }
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ParameterError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace protodg
