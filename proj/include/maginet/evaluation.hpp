// SPDX-License-Identifier: Apache-2.0
//
// Mean and KNN baselines, series-level imputation, missing-ratio sweeps,
// ablation runs and report emission.
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "maginet/data.hpp"
#include "maginet/graph.hpp"
#include "maginet/metrics.hpp"
#include "maginet/model.hpp"
#include "maginet/rng.hpp"
#include "maginet/training.hpp"

namespace maginet {

// ---------------------------------------------------------------------------
// Baselines. Both return a full N×W×C prediction: observed entries are
// copied from x, every m = 0 entry is filled. Neither reads ground_truth.

inline std::vector<double> mean_baseline(const IncompleteWindow& w) {
    const std::size_t n = w.n_nodes, width = w.width, c = w.n_features;
    bool any = false;
    for (double v : w.m) any = any || v != 0.0;
    if (!any) throw InputError("mean baseline: window has no observed entries");
    return mean_prefilled(w.x, w.m, n, width, c);
}

/// Root-mean-square distance between two nodes over the steps where both
/// are observed; infinite when they share no observed step.
inline double knn_distance(const IncompleteWindow& w, std::size_t a, std::size_t b) {
    const std::size_t c = w.n_features;
    double sq = 0.0;
    std::size_t terms = 0;
    for (std::size_t t = 0; t < w.width; ++t) {
        if (w.m[w.pos(a, t)] == 0.0 || w.m[w.pos(b, t)] == 0.0) continue;
        for (std::size_t f = 0; f < c; ++f) {
            const double d = w.x[w.pos(a, t) * c + f] - w.x[w.pos(b, t) * c + f];
            sq += d * d;
        }
        terms += c;
    }
    return terms ? std::sqrt(sq / static_cast<double>(terms)) : std::numeric_limits<double>::infinity();
}

/// Each m = 0 entry (i, t) takes the mean of the k nearest nodes (finite
/// distance, ties by index) that are observed at t; the mean baseline
/// covers entries with no such neighbour.
inline std::vector<double> knn_baseline(const IncompleteWindow& w, std::size_t k) {
    const std::size_t n = w.n_nodes, c = w.n_features;
    if (k < 1 || k >= n) {
        throw ContractError("knn baseline: k must lie in [1, N), got k=" + std::to_string(k) + " with N=" +
                            std::to_string(n));
    }
    const auto fallback = mean_baseline(w);
    std::vector<double> out = fallback;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::size_t>> ranked;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double d = knn_distance(w, i, j);
            if (std::isfinite(d)) ranked.emplace_back(d, j);
        }
        std::sort(ranked.begin(), ranked.end());
        for (std::size_t t = 0; t < w.width; ++t) {
            if (w.m[w.pos(i, t)] != 0.0) continue;
            std::vector<double> acc(c, 0.0);
            std::size_t used = 0;
            for (const auto& [d, j] : ranked) {
                if (used == k) break;
                if (w.m[w.pos(j, t)] == 0.0) continue;
                for (std::size_t f = 0; f < c; ++f) acc[f] += w.x[w.pos(j, t) * c + f];
                ++used;
            }
            if (used == 0) continue;
            for (std::size_t f = 0; f < c; ++f) out[w.pos(i, t) * c + f] = acc[f] / static_cast<double>(used);
        }
    }
    return out;
}

enum class Method { mean, knn, maginet };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::mean: return "mean";
        case Method::knn: return "knn";
        case Method::maginet: return "maginet";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "mean") return Method::mean;
    if (s == "knn") return Method::knn;
    if (s == "maginet") return Method::maginet;
    throw InputError("unknown method '" + s + "' (expected mean, knn or maginet)");
}

/// Full prediction for one window.
using WindowImputer = std::function<std::vector<double>(const IncompleteWindow&)>;

inline MetricAccumulator score_windows(const std::vector<IncompleteWindow>& windows, const WindowImputer& impute) {
    MetricAccumulator acc;
    for (const auto& w : windows) acc.add(impute(w), w.ground_truth, expand_mask(w.eval_mask, w.n_features));
    return acc;
}

/// Fills every position hidden from the model (native gaps and held-out
/// entries) from window predictions; observed values pass through
/// unchanged. Windows tile the series with stride = width, and one more
/// window aligned to the end covers any remainder.
inline SeriesMatrix impute_series(const SeriesMatrix& series, const EvalMask& mask, std::size_t width,
                                  const WindowImputer& impute) {
    auto windows = make_windows(series, mask, width, width);
    const std::size_t covered = windows.size() * width;
    if (covered < series.n_steps) {
        auto tail = make_windows(series, mask, width, 1);
        windows.push_back(std::move(tail.back()));
    }
    SeriesMatrix out = series;
    const std::size_t c = series.n_features;
    std::vector<std::uint8_t> filled(series.n_nodes * series.n_steps, 0);
    for (const auto& w : windows) {
        const auto pred = impute(w);
        for (std::size_t i = 0; i < w.n_nodes; ++i)
            for (std::size_t t = 0; t < w.width; ++t) {
                const std::size_t st = w.window_start + t;
                if (w.m[w.pos(i, t)] != 0.0 || filled[i * series.n_steps + st]) continue;
                for (std::size_t f = 0; f < c; ++f) out.at(i, st, f) = pred[w.pos(i, t) * c + f];
                filled[i * series.n_steps + st] = 1;
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Experiments

struct Dataset {
    std::string tag;
    SeriesMatrix series;
    TrafficGraph graph;
};

/// Corridor graph and synthetic series derived from one seed; the dataset
/// written by `maginet generate`.
inline Dataset synthetic_dataset(std::size_t nodes, std::size_t steps, std::uint64_t seed, double chord_prob = 0.1,
                                 const SyntheticOptions& opts = {}) {
    TrafficGraph g = corridor_graph(nodes, chord_prob, derive_seed(seed, std::uint64_t{1}));
    SeriesMatrix s = generate_synthetic(nodes, steps, g, seed, opts);
    return {"synthetic", std::move(s), std::move(g)};
}

struct ExperimentSettings {
    std::size_t width = 12;
    std::size_t stride = 12;
    SplitFractions split;
    ModelConfig model;
    TrainConfig train;
    std::size_t knn_k = 3;
    std::size_t jobs = 1;
};

struct EvalRow {
    std::string method;
    std::string dataset;
    double ratio = 0.0;
    std::uint64_t seed = 0;
    double rmse = 0.0;
    double mape = 0.0;
    double runtime_s = 0.0;
};

struct MethodOutcome {
    double rmse = 0.0;
    double mape = 0.0;
    double runtime_s = 0.0;
    TrainResult training;  // empty for baselines
};

inline WindowSplits dataset_splits(const Dataset& ds, const EvalMask& mask, const ExperimentSettings& s) {
    check_mask_against_series(mask, ds.series);
    return split_windows(make_windows(ds.series, mask, s.width, s.stride), s.split);
}

/// Runs one method on the test split of a dataset under a given mask. For
/// MagiNet the model is trained on the train split and selected on the
/// validation split.
inline MethodOutcome run_method(const Dataset& ds, const EvalMask& mask, Method method, const ModelConfig& model_cfg,
                                const ExperimentSettings& s) {
    const auto start = std::chrono::steady_clock::now();
    const auto splits = dataset_splits(ds, mask, s);
    if (splits.test.empty()) throw InputError("dataset '" + ds.tag + "' yields no test windows");
    MethodOutcome out;
    MetricAccumulator acc;
    switch (method) {
        case Method::mean:
            acc = score_windows(splits.test, [](const IncompleteWindow& w) { return mean_baseline(w); });
            break;
        case Method::knn:
            acc = score_windows(splits.test, [&](const IncompleteWindow& w) { return knn_baseline(w, s.knn_k); });
            break;
        case Method::maginet: {
            if (splits.train.empty() || splits.valid.empty()) {
                throw InputError("dataset '" + ds.tag + "' yields no train or validation windows");
            }
            const ModelDims dims{ds.series.n_nodes, s.width, ds.series.n_features};
            const Normalizer norm = Normalizer::fit(splits.train);
            MagiNet model(model_cfg, dims, ds.graph, s.train.seed);
            out.training = train(model, norm, splits.train, splits.valid, s.train);
            acc = score_model(model, norm, splits.test);
            break;
        }
    }
    out.rmse = acc.rmse();
    out.mape = acc.mape();
    out.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

/// Runs fn(0..count-1) on up to `jobs` threads. The first exception is
/// rethrown after all workers finish.
inline void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, count));
    if (jobs == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> workers;
    for (std::size_t j = 0; j < jobs; ++j) {
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& w : workers) w.join();
    if (error) std::rethrow_exception(error);
}

/// Mask seed for one ratio of a sweep.
inline std::uint64_t sweep_mask_seed(std::uint64_t seed, double ratio) { return derive_seed(seed, ratio); }

/// One row per (ratio, method), ordered by ratio then method. Each ratio
/// draws a fresh mask from sweep_mask_seed(seed, ratio).
inline std::vector<EvalRow> sensitivity_sweep(const Dataset& ds, const std::vector<double>& ratios,
                                              const std::vector<Method>& methods, std::uint64_t seed,
                                              const ExperimentSettings& s) {
    for (double r : ratios)
        if (!(r > 0.0 && r < 1.0)) throw InputError("sweep ratios must lie in (0, 1), got " + std::to_string(r));
    std::vector<EvalMask> masks;
    for (double r : ratios) masks.push_back(make_eval_mask(ds.series, r, sweep_mask_seed(seed, r)));
    std::vector<EvalRow> rows(ratios.size() * methods.size());
    parallel_for(rows.size(), s.jobs, [&](std::size_t cell) {
        const std::size_t ri = cell / methods.size();
        const Method method = methods[cell % methods.size()];
        const auto res = run_method(ds, masks[ri], method, s.model, s);
        rows[cell] = {method_name(method), ds.tag, ratios[ri], masks[ri].seed, res.rmse, res.mape, res.runtime_s};
    });
    return rows;
}

/// Ablation variants by their table name or toggle name.
inline const std::vector<std::pair<std::string, Ablation>>& ablation_variants() {
    static const std::vector<std::pair<std::string, Ablation>> table{
        {"zero prefill", Ablation::zero_prefill}, {"mean prefill", Ablation::mean_prefill},
        {"w/o AMSTenc", Ablation::no_amstenc},    {"w/o MASTatt", Ablation::no_mastatt},
        {"w/o Graphconv", Ablation::no_graphconv}, {"w/o GTconv", Ablation::no_gtconv},
        {"w/o MASTdec", Ablation::no_mastdec}};
    return table;
}

inline std::string ablation_toggle_name(Ablation a) {
    switch (a) {
        case Ablation::no_amstenc: return "no_amstenc";
        case Ablation::no_mastatt: return "no_mastatt";
        case Ablation::no_graphconv: return "no_graphconv";
        case Ablation::no_gtconv: return "no_gtconv";
        case Ablation::no_mastdec: return "no_mastdec";
        case Ablation::zero_prefill: return "zero_prefill";
        case Ablation::mean_prefill: return "mean_prefill";
    }
    return "?";
}

inline Ablation parse_ablation(const std::string& name) {
    for (const auto& [label, a] : ablation_variants())
        if (name == label || name == ablation_toggle_name(a)) return a;
    throw InputError("unknown ablation variant '" + name + "'");
}

inline std::string ablation_label(Ablation a) {
    for (const auto& [label, v] : ablation_variants())
        if (v == a) return label;
    return ablation_toggle_name(a);
}

inline constexpr const char* kFullModelLabel = "MagiNet";

/// Trains the full model and each variant under one mask, seed and budget.
/// The full model row comes first.
inline std::vector<EvalRow> ablation_run(const Dataset& ds, const std::vector<std::string>& variants, double ratio,
                                         std::uint64_t seed, const ExperimentSettings& s) {
    std::vector<std::pair<std::string, ModelConfig>> configs{{kFullModelLabel, s.model}};
    for (const auto& v : variants) {
        const Ablation a = parse_ablation(v);
        ModelConfig cfg = s.model;
        cfg.ablations.insert(a);
        configs.emplace_back(ablation_label(a), cfg);
    }
    const EvalMask mask = make_eval_mask(ds.series, ratio, seed);
    std::vector<EvalRow> rows(configs.size());
    parallel_for(rows.size(), s.jobs, [&](std::size_t i) {
        const auto res = run_method(ds, mask, Method::maginet, configs[i].second, s);
        rows[i] = {configs[i].first, ds.tag, ratio, seed, res.rmse, res.mape, res.runtime_s};
    });
    return rows;
}

// ---------------------------------------------------------------------------
// Reports

inline void write_report_csv(std::ostream& out, const std::vector<EvalRow>& rows) {
    out << "method,dataset,ratio,seed,rmse,mape,runtime_s\n";
    out.precision(17);
    for (const auto& r : rows) {
        const bool quote = r.method.find_first_of(",\" ") != std::string::npos;
        out << (quote ? "\"" + r.method + "\"" : r.method) << ',' << r.dataset << ',' << r.ratio << ',' << r.seed << ','
            << r.rmse << ',' << r.mape << ',' << r.runtime_s << '\n';
    }
}

/// Ratio against RMSE, one column per method.
inline void write_sweep_plot_csv(std::ostream& out, const std::vector<EvalRow>& rows) {
    std::vector<std::string> methods;
    std::vector<double> ratios;
    std::map<std::pair<double, std::string>, double> cell;
    for (const auto& r : rows) {
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
        if (std::find(ratios.begin(), ratios.end(), r.ratio) == ratios.end()) ratios.push_back(r.ratio);
        cell[{r.ratio, r.method}] = r.rmse;
    }
    out << "ratio";
    for (const auto& m : methods) out << ",rmse_" << m;
    out << '\n';
    out.precision(17);
    for (double ratio : ratios) {
        out << ratio;
        for (const auto& m : methods) {
            out << ',';
            auto it = cell.find({ratio, m});
            if (it != cell.end()) out << it->second;
        }
        out << '\n';
    }
}

/// Per-step trace for one node and feature: ground truth (empty where
/// natively missing), imputed value, and whether the model saw the value.
inline void write_trace_csv(std::ostream& out, const SeriesMatrix& truth, const SeriesMatrix& imputed,
                            const EvalMask& mask, std::size_t node, std::size_t feature = 0) {
    if (node >= truth.n_nodes || feature >= truth.n_features) throw InputError("trace: node or feature out of range");
    out << "t,ground_truth,imputed,observed\n";
    out.precision(17);
    for (std::size_t t = 0; t < truth.n_steps; ++t) {
        const double g = truth.at(node, t, feature);
        const bool observed = truth.observed(node, t) && !mask.at(node, t);
        out << t << ',';
        if (!std::isnan(g)) out << g;
        out << ',' << imputed.at(node, t, feature) << ',' << (observed ? 1 : 0) << '\n';
    }
}

}  // namespace maginet
