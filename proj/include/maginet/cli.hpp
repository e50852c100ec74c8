// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: generate | mask | train | impute | eval | sweep |
// ablate. Exit codes: 0 success, 1 usage, 2 input error, 3 numeric failure.
#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "maginet/data.hpp"
#include "maginet/evaluation.hpp"
#include "maginet/graph.hpp"
#include "maginet/serialization.hpp"
#include "maginet/training.hpp"

#ifndef MAGINET_VERSION
#define MAGINET_VERSION "0.0.0"
#endif

namespace maginet::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kInput = 2, kNumeric = 3 };

/// Bad flag values detected after parsing.
class UsageError : public Error {
public:
    using Error::Error;
};

namespace detail {

/// Binds flags to a scratch RunConfig and remembers how to copy each one
/// that was given on the command line onto the effective configuration,
/// so that explicit flags override a --config file.
class Binder {
public:
    template <typename Get>
    CLI::Option* bind(CLI::App* app, const std::string& name, Get get, const std::string& help) {
        auto* opt = app->add_option(name, get(flags_), help);
        copies_.emplace_back(opt, [this, get](RunConfig& dst) { get(dst) = get(flags_); });
        describe(opt, [get](const RunConfig& c) { return format_value(get(c)); });
        return opt;
    }

    void apply(RunConfig& dst) const {
        for (const auto& [opt, copy] : copies_)
            if (opt->count() > 0) copy(dst);
    }

    /// Registers how to print an option's effective value.
    void describe(const CLI::Option* opt, std::function<std::string(const RunConfig&)> fn) {
        effective_[opt] = std::move(fn);
    }

    std::optional<std::string> effective(const CLI::Option* opt, const RunConfig& cfg) const {
        auto it = effective_.find(opt);
        if (it == effective_.end()) return std::nullopt;
        return it->second(cfg);
    }

    static std::string format_value(const std::string& v) { return v.empty() ? "\"\"" : v; }
    template <typename T>
    static std::string format_value(const T& v) {
        if constexpr (requires { v.begin(); }) {
            std::string out;
            for (const auto& e : v) out += (out.empty() ? "" : ",") + format_value(e);
            return out.empty() ? "\"\"" : out;
        } else {
            return Json(v).dump();
        }
    }

private:
    RunConfig flags_;
    std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> copies_;
    std::map<const CLI::Option*, std::function<std::string(const RunConfig&)>> effective_;
};

struct Extras {
    std::string config;
    std::string tag;
    std::string checkpoint;
    std::vector<std::string> ablate;
    std::string mask_mode;
    std::vector<double> split;
    // generate
    std::size_t nodes = 16;
    std::size_t steps = 2016;
    double chord_prob = 0.1;
    double noise = 0.05;
    double native_missing = 0.0;
    // eval / sweep / ablate
    std::string method = "mean";
    std::string eval_split = "test";
    std::vector<double> ratios{0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
    std::vector<std::string> methods{"mean", "knn", "maginet"};
    std::vector<std::string> variants;
    // impute
    std::string trace;
    std::size_t trace_node = 0;
};

/// "# maginet <version> <command> --flag=value ..." with every flag of the
/// command in name order at its effective value, plus the seeds in use.
inline std::string provenance(const CLI::App& sub, const Binder& binder, const RunConfig& cfg, bool uses_mask_seed,
                              bool uses_train_seed, const std::map<std::string, std::string>& resolved = {}) {
    std::map<std::string, std::string> flags;
    for (const CLI::Option* opt : sub.get_options()) {
        if (opt->get_name() == "--help") continue;
        std::string value;
        if (auto it = resolved.find(opt->get_name()); it != resolved.end()) {
            value = it->second;
        } else if (auto eff = binder.effective(opt, cfg)) {
            value = *eff;
        } else if (opt->count() > 0) {
            for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
        } else {
            value = opt->get_default_str();
            if (value == "{}" || value == "[]") value.clear();
        }
        flags[opt->get_name()] = value.empty() ? "\"\"" : value;
    }
    std::ostringstream line;
    line << "# maginet " << MAGINET_VERSION << ' ' << sub.get_name();
    for (const auto& [name, value] : flags) line << ' ' << name << '=' << value;
    if (uses_mask_seed) line << " mask_seed=" << cfg.seed;
    if (uses_train_seed) line << " train_seed=" << cfg.train.seed;
    return line.str();
}

inline void ensure_parent(const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (parent.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(parent, ec);
    if (ec) throw IoError("cannot create directory " + parent.string() + ": " + ec.message());
}

inline void write_file(const std::string& path, const std::string& header,
                       const std::function<void(std::ostream&)>& body) {
    ensure_parent(path);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << header << '\n';
    body(out);
    out.flush();
    if (!out) throw IoError("error while writing " + path);
}

inline std::string join_path(const std::string& dir, const std::string& file) {
    return (std::filesystem::path(dir.empty() ? "." : dir) / file).string();
}

inline std::string require(const std::string& value, const char* flag) {
    if (value.empty()) throw UsageError(std::string(flag) + " is required");
    return value;
}

inline std::string dataset_tag(const std::string& tag, const std::string& series_path) {
    return tag.empty() ? std::filesystem::path(series_path).stem().string() : tag;
}

struct LoadedData {
    SeriesMatrix series;
    TrafficGraph graph;
    EvalMask mask;
    bool mask_generated = false;
};

inline LoadedData load_data(const RunConfig& cfg, bool need_graph, bool need_mask) {
    LoadedData d;
    d.series = load_series_csv(require(cfg.series, "--series"));
    d.series.validate();
    if (need_graph) d.graph = load_adjacency(require(cfg.adj, "--adj"), d.series.n_nodes);
    if (!cfg.mask.empty()) {
        d.mask = load_mask_csv(cfg.mask);
        check_mask_against_series(d.mask, d.series);
    } else if (need_mask) {
        d.mask = make_eval_mask(d.series, cfg.ratio, cfg.seed);
        d.mask_generated = true;
    } else {
        d.mask = EvalMask{d.series.n_nodes, d.series.n_steps, 0, 0.0,
                          std::vector<std::uint8_t>(d.series.n_nodes * d.series.n_steps, 0)};
    }
    return d;
}

inline void print_rows(std::ostream& out, const std::vector<EvalRow>& rows) {
    out << std::left << std::setw(16) << "method" << std::setw(8) << "ratio" << std::setw(14) << "rmse"
        << std::setw(14) << "mape" << "runtime_s\n";
    for (const auto& r : rows) {
        out << std::setw(16) << r.method << std::setw(8) << r.ratio << std::setw(14) << r.rmse << std::setw(14) << r.mape
            << r.runtime_s << '\n';
    }
}

inline double observed_stats(const SeriesMatrix& s, double& stddev) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (double v : s.values)
        if (!std::isnan(v)) {
            sum += v;
            ++n;
        }
    const double mean = n ? sum / static_cast<double>(n) : 0.0;
    for (double v : s.values)
        if (!std::isnan(v)) sq += (v - mean) * (v - mean);
    stddev = n ? std::sqrt(sq / static_cast<double>(n)) : 0.0;
    return mean;
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_generate(const CLI::App& sub, const Binder& binder, RunConfig cfg, const Extras& x, std::ostream& out) {
    if (x.nodes < 2) throw UsageError("--nodes must be at least 2");
    if (x.steps < cfg.width) throw UsageError("--steps must be at least the window width " + std::to_string(cfg.width));
    if (!(x.native_missing >= 0.0 && x.native_missing < 1.0)) throw UsageError("--native-missing must lie in [0, 1)");
    SyntheticOptions opts;
    opts.noise_fraction = x.noise;
    auto [tag, series, graph] = synthetic_dataset(x.nodes, x.steps, cfg.seed, x.chord_prob, opts);
    if (x.native_missing > 0.0) {
        const auto keep = mcar_mask(x.nodes * x.steps, x.native_missing, derive_seed(cfg.seed, std::uint64_t{2}));
        for (std::size_t p = 0; p < keep.size(); ++p)
            if (!keep[p]) series.values[p] = kMissing;
    }
    const std::string series_path = cfg.series.empty() ? join_path(cfg.out, "series.csv") : cfg.series;
    const std::string adj_path = cfg.adj.empty() ? join_path(cfg.out, "adj.csv") : cfg.adj;
    const std::string header = provenance(sub, binder, cfg, false, false);
    write_file(series_path, header, [&](std::ostream& o) { write_series_csv(o, series); });
    write_file(adj_path, header, [&](std::ostream& o) { write_adjacency(o, graph); });
    double sd = 0.0;
    const double mean = observed_stats(series, sd);
    out << "nodes=" << x.nodes << " steps=" << x.steps << " mean=" << mean << " std=" << sd << '\n';
    out << "wrote " << series_path << " and " << adj_path << '\n';
    return kOk;
}

inline int cmd_mask(const CLI::App& sub, const Binder& binder, RunConfig cfg, std::ostream& out) {
    const SeriesMatrix series = load_series_csv(require(cfg.series, "--series"));
    series.validate();
    const EvalMask mask = make_eval_mask(series, cfg.ratio, cfg.seed);
    const std::string path = cfg.out.empty() ? "mask.csv" : cfg.out;
    write_file(path, provenance(sub, binder, cfg, true, false), [&](std::ostream& o) { write_mask_csv(o, mask); });
    out << "held out " << mask.count() << " positions (ratio " << cfg.ratio << ", seed " << cfg.seed << ") -> " << path
        << '\n';
    return kOk;
}

inline int cmd_train(const CLI::App& sub, const Binder& binder, RunConfig cfg, std::ostream& out) {
    auto data = load_data(cfg, true, true);
    const std::string header = provenance(sub, binder, cfg, true, true);
    if (data.mask_generated) {
        write_file(join_path(cfg.out, "mask.csv"), header, [&](std::ostream& o) { write_mask_csv(o, data.mask); });
    }
    const auto s = cfg.settings();
    auto splits = split_windows(make_windows(data.series, data.mask, s.width, s.stride), s.split);
    if (splits.train.empty() || splits.valid.empty()) {
        throw InputError("series yields " + std::to_string(splits.train.size()) + " train and " +
                         std::to_string(splits.valid.size()) + " validation windows; both must be nonempty");
    }
    const ModelDims dims{data.series.n_nodes, s.width, data.series.n_features};
    const Normalizer norm = Normalizer::fit(splits.train);
    MagiNet model(cfg.model, dims, data.graph, cfg.train.seed);
    out << "parameters: " << model.params().scalar_count() << ", windows: " << splits.train.size() << " train / "
        << splits.valid.size() << " valid / " << splits.test.size() << " test\n";
    const auto result = train(model, norm, splits.train, splits.valid, cfg.train, [&](const EpochRecord& r) {
        out << "epoch " << r.epoch << " loss " << r.train_loss << " val_rmse " << r.val_rmse << " val_mape "
            << r.val_mape << '\n';
    });
    write_file(join_path(cfg.out, "checkpoint.json"), header,
               [&](std::ostream& o) { write_checkpoint(o, model, norm, cfg.train.seed); });
    write_file(join_path(cfg.out, "history.csv"), header, [&](std::ostream& o) { write_history_csv(o, result.history); });
    if (result.diverged) {
        out << "training diverged: " << result.divergence_reason << " (kept epoch " << result.best_epoch << ")\n";
        return kNumeric;
    }
    out << "best epoch " << result.best_epoch << " val_rmse " << result.best_val_rmse << " val_mape "
        << result.best_val_mape << '\n';
    if (!splits.test.empty()) {
        MetricAccumulator acc = score_model(model, norm, splits.test);
        if (acc.count() > 0) out << "test_rmse " << acc.rmse() << " test_mape " << acc.mape() << '\n';
    }
    return kOk;
}

inline int cmd_impute(const CLI::App& sub, const Binder& binder, RunConfig cfg, const Extras& x, std::ostream& out) {
    auto data = load_data(cfg, true, false);
    const Checkpoint ck = load_checkpoint(require(x.checkpoint, "--checkpoint"));
    const ModelDims dims{data.series.n_nodes, ck.dims.width, data.series.n_features};
    const MagiNet model = model_from_checkpoint(ck, data.graph, dims);
    const SeriesMatrix imputed = impute_series(data.series, data.mask, dims.width, [&](const IncompleteWindow& w) {
        return predict_window(model, ck.normalizer, w);
    });
    const std::string path = cfg.out.empty() ? "imputed.csv" : cfg.out;
    const std::string header = provenance(sub, binder, cfg, !cfg.mask.empty(), false);
    write_file(path, header, [&](std::ostream& o) { write_series_csv(o, imputed); });
    if (!x.trace.empty()) {
        write_file(x.trace, header,
                   [&](std::ostream& o) { write_trace_csv(o, data.series, imputed, data.mask, x.trace_node); });
    }
    std::size_t filled = 0;
    for (std::size_t i = 0; i < data.series.n_nodes; ++i)
        for (std::size_t t = 0; t < data.series.n_steps; ++t)
            filled += !data.series.observed(i, t) || data.mask.at(i, t);
    out << "filled " << filled << " positions -> " << path << '\n';
    return kOk;
}

inline int cmd_eval(const CLI::App& sub, const Binder& binder, RunConfig cfg, const Extras& x, std::ostream& out) {
    const Method method = parse_method(x.method);
    auto data = load_data(cfg, method == Method::maginet, true);
    if (data.mask.count() == 0) throw InputError("evaluation mask holds out no positions");

    std::optional<Checkpoint> ck;
    std::optional<MagiNet> model;
    std::size_t width = cfg.width;
    if (method == Method::maginet) {
        ck = load_checkpoint(require(x.checkpoint, "--checkpoint"));
        width = ck->dims.width;
        model.emplace(model_from_checkpoint(*ck, data.graph, {data.series.n_nodes, width, data.series.n_features}));
    }
    std::vector<IncompleteWindow> windows;
    auto all = make_windows(data.series, data.mask, width, cfg.stride);
    if (x.eval_split == "all") {
        windows = std::move(all);
    } else if (x.eval_split == "test") {
        windows = split_windows(std::move(all), cfg.split).test;
    } else {
        throw UsageError("--split must be 'test' or 'all'");
    }
    if (windows.empty()) throw InputError("no windows in the '" + x.eval_split + "' split");

    const auto start = std::chrono::steady_clock::now();
    WindowImputer impute;
    switch (method) {
        case Method::mean: impute = [](const IncompleteWindow& w) { return mean_baseline(w); }; break;
        case Method::knn: impute = [&](const IncompleteWindow& w) { return knn_baseline(w, cfg.knn_k); }; break;
        case Method::maginet:
            impute = [&](const IncompleteWindow& w) { return predict_window(*model, ck->normalizer, w); };
            break;
    }
    const auto acc = score_windows(windows, impute);
    const double runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::vector<EvalRow> rows{{method_name(method), dataset_tag(x.tag, cfg.series), data.mask.ratio,
                                     data.mask.seed, acc.rmse(), acc.mape(), runtime}};
    const std::string path = cfg.out.empty() ? "report.csv" : cfg.out;
    write_file(path, provenance(sub, binder, cfg, true, false), [&](std::ostream& o) { write_report_csv(o, rows); });
    print_rows(out, rows);
    return kOk;
}

inline Dataset load_dataset(const RunConfig& cfg, const Extras& x) {
    auto data = load_data(cfg, true, false);
    return {dataset_tag(x.tag, cfg.series), std::move(data.series), std::move(data.graph)};
}

inline int cmd_sweep(const CLI::App& sub, const Binder& binder, RunConfig cfg, const Extras& x, std::ostream& out) {
    std::vector<Method> methods;
    for (const auto& m : x.methods) methods.push_back(parse_method(m));
    const Dataset ds = load_dataset(cfg, x);
    const auto rows = sensitivity_sweep(ds, x.ratios, methods, cfg.seed, cfg.settings());
    const std::string header = provenance(sub, binder, cfg, true, true);
    write_file(join_path(cfg.out, "report.csv"), header, [&](std::ostream& o) { write_report_csv(o, rows); });
    write_file(join_path(cfg.out, "plot.csv"), header, [&](std::ostream& o) { write_sweep_plot_csv(o, rows); });
    print_rows(out, rows);
    return kOk;
}

inline int cmd_ablate(const CLI::App& sub, const Binder& binder, RunConfig cfg, const Extras& x, std::ostream& out) {
    std::vector<std::string> variants = x.variants;
    if (variants.empty())
        for (const auto& [label, a] : ablation_variants()) variants.push_back(label);
    for (const auto& v : variants) parse_ablation(v);  // fail before loading data
    const Dataset ds = load_dataset(cfg, x);
    const auto rows = ablation_run(ds, variants, cfg.ratio, cfg.seed, cfg.settings());
    const std::string path = cfg.out.empty() ? "ablation.csv" : cfg.out;
    std::string listed;
    for (const auto& v : variants) listed += (listed.empty() ? "" : ",") + Json(v).dump();
    const auto header = provenance(sub, binder, cfg, true, true, {{"--variants", listed}});
    write_file(path, header, [&](std::ostream& o) { write_report_csv(o, rows); });
    print_rows(out, rows);
    return kOk;
}

}  // namespace detail

/// Runs one command. args excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    using detail::Binder;
    CLI::App app{"MagiNet: mask-aware graph imputation for traffic time series", "maginet"};
    app.set_version_flag("--version", MAGINET_VERSION);
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    Binder b;
    detail::Extras x;
    auto* generate = app.add_subcommand("generate", "Write a synthetic corridor dataset (series + adjacency)");
    auto* mask = app.add_subcommand("mask", "Draw and save an MCAR evaluation mask");
    auto* train_cmd = app.add_subcommand("train", "Train MagiNet and save a checkpoint");
    auto* impute = app.add_subcommand("impute", "Fill missing values with a trained checkpoint");
    auto* eval = app.add_subcommand("eval", "Score one method on held-out positions");
    auto* sweep = app.add_subcommand("sweep", "Missing-ratio sensitivity sweep");
    auto* ablate = app.add_subcommand("ablate", "Ablation study under one mask");
    for (auto* sub : {generate, mask, train_cmd, impute, eval, sweep, ablate}) sub->option_defaults()->always_capture_default();

    auto add_config = [&](CLI::App* sub) { sub->add_option("--config", x.config, "JSON run configuration (flags win)"); };
    auto add_data = [&](CLI::App* sub, bool with_mask) {
        b.bind(sub, "--series", [](auto& c) -> auto& { return c.series; }, "Series CSV");
        b.bind(sub, "--adj", [](auto& c) -> auto& { return c.adj; }, "Adjacency edge list CSV");
        if (with_mask) b.bind(sub, "--mask", [](auto& c) -> auto& { return c.mask; }, "Evaluation mask CSV");
        b.bind(sub, "--ratio", [](auto& c) -> auto& { return c.ratio; }, "Held-out ratio when drawing a mask")
            ->check(CLI::Range(0.0, 1.0));
        b.bind(sub, "--seed", [](auto& c) -> auto& { return c.seed; }, "Mask seed");
        b.bind(sub, "--width", [](auto& c) -> auto& { return c.width; }, "Window width W")
            ->check(CLI::PositiveNumber);
        b.bind(sub, "--stride", [](auto& c) -> auto& { return c.stride; }, "Window stride")
            ->check(CLI::PositiveNumber);
        auto* split = sub->add_option("--split-fractions", x.split, "train,valid,test fractions")->delimiter(',')->expected(3);
        b.describe(split, [](const RunConfig& c) {
            return Binder::format_value(std::vector<double>{c.split.train, c.split.valid, c.split.test});
        });
        sub->add_option("--tag", x.tag, "Dataset label for reports (default: series file stem)");
    };
    auto add_model = [&](CLI::App* sub) {
        b.bind(sub, "--d", [](auto& c) -> auto& { return c.model.d; }, "Hidden size d");
        b.bind(sub, "--heads", [](auto& c) -> auto& { return c.model.heads; }, "Attention heads");
        b.bind(sub, "--d-head", [](auto& c) -> auto& { return c.model.d_head; }, "Per-head size");
        b.bind(sub, "--node-embed", [](auto& c) -> auto& { return c.model.node_embed; }, "Spatial embedding size F");
        b.bind(sub, "--cheb-order", [](auto& c) -> auto& { return c.model.cheb_order; }, "Chebyshev order K");
        b.bind(sub, "--kernels", [](auto& c) -> auto& { return c.model.kernel_sizes; }, "Temporal kernel sizes")
            ->delimiter(',');
        b.bind(sub, "--blocks", [](auto& c) -> auto& { return c.model.blocks; }, "Spatio-temporal blocks L");
        b.describe(sub->add_option("--mask-mode", x.mask_mode, "Attention masking: neg_inf or multiply"),
                   [](const RunConfig& c) { return maginet::detail::mask_mode_name(c.model.mask_mode); });
        b.describe(sub->add_option("--ablate", x.ablate, "Ablation toggles for this model")->delimiter(','),
                   [](const RunConfig& c) {
                       std::vector<std::string> names;
                       for (auto a : c.model.ablations) names.push_back(ablation_toggle_name(a));
                       return Binder::format_value(names);
                   });
    };
    auto add_train = [&](CLI::App* sub) {
        b.bind(sub, "--lr", [](auto& c) -> auto& { return c.train.learning_rate; }, "Adam learning rate");
        b.bind(sub, "--epochs", [](auto& c) -> auto& { return c.train.epochs; }, "Maximum epochs");
        b.bind(sub, "--batch-size", [](auto& c) -> auto& { return c.train.batch_size; }, "Windows per step");
        b.bind(sub, "--patience", [](auto& c) -> auto& { return c.train.patience; }, "Early-stopping patience");
        b.bind(sub, "--clip", [](auto& c) -> auto& { return c.train.clip_norm; }, "Gradient clip norm (0 = off)");
        b.bind(sub, "--train-seed", [](auto& c) -> auto& { return c.train.seed; }, "Init and shuffle seed");
    };
    auto add_out = [&](CLI::App* sub, const std::string& help) {
        b.bind(sub, "--out", [](auto& c) -> auto& { return c.out; }, help);
    };
    auto add_jobs = [&](CLI::App* sub) {
        b.bind(sub, "--jobs", [](auto& c) -> auto& { return c.jobs; }, "Parallel cells")->check(CLI::PositiveNumber);
    };
    auto add_k = [&](CLI::App* sub) {
        b.bind(sub, "--k", [](auto& c) -> auto& { return c.knn_k; }, "Neighbours for the KNN baseline");
    };

    // generate
    b.bind(generate, "--series", [](auto& c) -> auto& { return c.series; }, "Output series path");
    b.bind(generate, "--adj", [](auto& c) -> auto& { return c.adj; }, "Output adjacency path");
    b.bind(generate, "--seed", [](auto& c) -> auto& { return c.seed; }, "Generator seed");
    b.bind(generate, "--width", [](auto& c) -> auto& { return c.width; }, "Window width the data must cover");
    generate->add_option("--nodes", x.nodes, "Number of sensors");
    generate->add_option("--steps", x.steps, "Number of time steps");
    generate->add_option("--chord-prob", x.chord_prob, "Probability of a shortcut edge per node pair")
        ->check(CLI::Range(0.0, 1.0));
    generate->add_option("--noise", x.noise, "Noise sigma as a fraction of the daily amplitude")
        ->check(CLI::NonNegativeNumber);
    generate->add_option("--native-missing", x.native_missing, "Fraction of values left empty in the file");
    add_out(generate, "Output directory");
    add_config(generate);

    // mask
    add_data(mask, false);
    add_out(mask, "Output mask path");
    add_config(mask);

    // train
    add_data(train_cmd, true);
    add_model(train_cmd);
    add_train(train_cmd);
    add_out(train_cmd, "Output directory (checkpoint.json, history.csv)");
    add_config(train_cmd);

    // impute
    add_data(impute, true);
    impute->add_option("--checkpoint", x.checkpoint, "Trained checkpoint");
    impute->add_option("--trace", x.trace, "Also write a per-step trace CSV for one node");
    impute->add_option("--trace-node", x.trace_node, "Node for --trace");
    add_out(impute, "Output series path");
    add_config(impute);

    // eval
    add_data(eval, true);
    add_k(eval);
    eval->add_option("--method", x.method, "mean, knn or maginet");
    eval->add_option("--checkpoint", x.checkpoint, "Checkpoint for --method maginet");
    eval->add_option("--split", x.eval_split, "Windows to score: test or all");
    add_out(eval, "Output report path");
    add_config(eval);

    // sweep
    add_data(sweep, false);
    add_model(sweep);
    add_train(sweep);
    add_k(sweep);
    add_jobs(sweep);
    sweep->add_option("--ratios", x.ratios, "Missing ratios")->delimiter(',');
    sweep->add_option("--methods", x.methods, "Methods to compare")->delimiter(',');
    add_out(sweep, "Output directory (report.csv, plot.csv)");
    add_config(sweep);

    // ablate
    add_data(ablate, false);
    add_model(ablate);
    add_train(ablate);
    add_jobs(ablate);
    ablate->add_option("--variants", x.variants, "Variant names, e.g. \"w/o MASTdec\"")->delimiter(',');
    add_out(ablate, "Output report path");
    add_config(ablate);

    std::vector<const char*> argv{"maginet"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    CLI::App* sub = app.get_subcommands().front();
    try {
        RunConfig cfg = x.config.empty() ? RunConfig{} : load_run_config(x.config);
        b.apply(cfg);
        if (!x.mask_mode.empty()) cfg.model.mask_mode = maginet::detail::parse_mask_mode(x.mask_mode);
        for (const auto& a : x.ablate) cfg.model.ablations.insert(parse_ablation(a));
        if (!x.split.empty()) cfg.split = {x.split[0], x.split[1], x.split[2]};
        cfg.model.validate();
        cfg.train.validate();

        const std::string name = sub->get_name();
        if (name == "generate") return detail::cmd_generate(*sub, b, cfg, x, out);
        if (name == "mask") return detail::cmd_mask(*sub, b, cfg, out);
        if (name == "train") return detail::cmd_train(*sub, b, cfg, out);
        if (name == "impute") return detail::cmd_impute(*sub, b, cfg, x, out);
        if (name == "eval") return detail::cmd_eval(*sub, b, cfg, x, out);
        if (name == "sweep") return detail::cmd_sweep(*sub, b, cfg, x, out);
        if (name == "ablate") return detail::cmd_ablate(*sub, b, cfg, x, out);
        err << "unknown command " << name << '\n';
        return kUsage;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const ContractError& e) {
        err << "invalid configuration: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << '\n';
        return kNumeric;
    } catch (const Error& e) {
        err << "input error: " << e.what() << '\n';
        return kInput;
    }
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace maginet::cli
