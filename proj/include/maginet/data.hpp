// SPDX-License-Identifier: Apache-2.0
//
// Data pipeline: series containers and CSV formats, MCAR evaluation masks,
// windowing into incomplete samples, chronological splits, z-score
// normalization and the synthetic traffic generator.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "maginet/errors.hpp"
#include "maginet/graph.hpp"
#include "maginet/rng.hpp"

namespace maginet {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

/// N nodes × steps × C features; NaN marks a natively missing value.
struct SeriesMatrix {
    std::size_t n_nodes = 0;
    std::size_t n_steps = 0;
    std::size_t n_features = 1;
    std::vector<double> values;

    SeriesMatrix() = default;
    SeriesMatrix(std::size_t nodes, std::size_t steps, std::size_t features, double fill = 0.0)
        : n_nodes(nodes), n_steps(steps), n_features(features), values(nodes * steps * features, fill) {}

    std::size_t index(std::size_t node, std::size_t t, std::size_t c = 0) const {
        return (node * n_steps + t) * n_features + c;
    }
    double& at(std::size_t node, std::size_t t, std::size_t c = 0) { return values[index(node, t, c)]; }
    double at(std::size_t node, std::size_t t, std::size_t c = 0) const { return values[index(node, t, c)]; }

    /// A (node, step) position is observed when all of its features are.
    bool observed(std::size_t node, std::size_t t) const {
        for (std::size_t c = 0; c < n_features; ++c)
            if (std::isnan(at(node, t, c))) return false;
        return true;
    }

    void validate() const {
        if (values.size() != n_nodes * n_steps * n_features) throw InputError("series size does not match geometry");
        for (double v : values)
            if (std::isinf(v)) throw InputError("series contains an infinite value");
    }
};

/// Per-(node, step) evaluation mask over a whole series; 1 marks an
/// observed value that is hidden from the model and kept for scoring.
struct EvalMask {
    std::size_t n_nodes = 0;
    std::size_t n_steps = 0;
    std::uint64_t seed = 0;
    double ratio = 0.0;
    std::vector<std::uint8_t> held_out;  // [node][step]

    std::uint8_t at(std::size_t node, std::size_t t) const { return held_out[node * n_steps + t]; }
    std::size_t count() const { return static_cast<std::size_t>(std::accumulate(held_out.begin(), held_out.end(), 0ULL)); }
};

/// 0/1 keep-vector with exactly floor(ratio * n) zeros at positions chosen
/// by a seeded uniform permutation.
inline std::vector<std::uint8_t> mcar_mask(std::size_t n_entries, double ratio, std::uint64_t seed) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ContractError("mcar_mask: ratio must lie in [0, 1]");
    std::vector<std::uint8_t> keep(n_entries, 1);
    const auto hidden = std::min(n_entries, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n_entries) + 1e-9)));
    std::vector<std::size_t> order(n_entries);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    shuffle(order, rng);
    for (std::size_t i = 0; i < hidden; ++i) keep[order[i]] = 0;
    return keep;
}

/// Draws the evaluation mask for a series: MCAR over its natively observed
/// positions only.
inline EvalMask make_eval_mask(const SeriesMatrix& series, double ratio, std::uint64_t seed) {
    std::vector<std::size_t> observed;
    for (std::size_t i = 0; i < series.n_nodes; ++i)
        for (std::size_t t = 0; t < series.n_steps; ++t)
            if (series.observed(i, t)) observed.push_back(i * series.n_steps + t);
    const auto keep = mcar_mask(observed.size(), ratio, seed);
    EvalMask mask{series.n_nodes, series.n_steps, seed, ratio,
                  std::vector<std::uint8_t>(series.n_nodes * series.n_steps, 0)};
    for (std::size_t k = 0; k < observed.size(); ++k)
        if (!keep[k]) mask.held_out[observed[k]] = 1;
    return mask;
}

/// One training/evaluation sample. Tensors are laid out [node][step](feature).
struct IncompleteWindow {
    std::size_t n_nodes = 0;
    std::size_t width = 0;
    std::size_t n_features = 1;
    std::size_t window_start = 0;
    std::vector<double> x;             // N×W×C, 0 wherever m = 0
    std::vector<double> m;             // N×W, 1 = observed
    std::vector<double> eval_mask;     // N×W, 1 = held out with known truth
    std::vector<double> ground_truth;  // N×W×C, valid where eval_mask = 1

    std::size_t pos(std::size_t node, std::size_t t) const { return node * width + t; }
    std::size_t held_out_count() const {
        return static_cast<std::size_t>(std::accumulate(eval_mask.begin(), eval_mask.end(), 0.0));
    }
};

/// Cuts the series into windows [start, start + width) for start = 0,
/// stride, ...; a trailing partial window is dropped.
inline std::vector<IncompleteWindow> make_windows(const SeriesMatrix& series, const EvalMask& mask, std::size_t width,
                                                  std::size_t stride) {
    if (stride < 1) throw ContractError("window stride must be at least 1");
    if (width < 1 || width > series.n_steps) {
        throw InputError("window width " + std::to_string(width) + " exceeds series length " +
                         std::to_string(series.n_steps));
    }
    if (mask.n_nodes != series.n_nodes || mask.n_steps != series.n_steps) {
        throw InputError("mask geometry does not match series");
    }
    const std::size_t n = series.n_nodes;
    const std::size_t c = series.n_features;
    std::vector<IncompleteWindow> out;
    for (std::size_t start = 0; start + width <= series.n_steps; start += stride) {
        IncompleteWindow w;
        w.n_nodes = n;
        w.width = width;
        w.n_features = c;
        w.window_start = start;
        w.x.assign(n * width * c, 0.0);
        w.m.assign(n * width, 0.0);
        w.eval_mask.assign(n * width, 0.0);
        w.ground_truth.assign(n * width * c, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t t = 0; t < width; ++t) {
                const std::size_t st = start + t;
                if (!series.observed(i, st)) continue;
                const std::size_t p = w.pos(i, t);
                const bool hidden = mask.at(i, st) != 0;
                for (std::size_t f = 0; f < c; ++f) {
                    w.ground_truth[p * c + f] = series.at(i, st, f);
                    if (!hidden) w.x[p * c + f] = series.at(i, st, f);
                }
                (hidden ? w.eval_mask : w.m)[p] = 1.0;
            }
        }
        out.push_back(std::move(w));
    }
    return out;
}

struct SplitFractions {
    double train = 0.7;
    double valid = 0.1;
    double test = 0.2;
};

struct WindowSplits {
    std::vector<IncompleteWindow> train;
    std::vector<IncompleteWindow> valid;
    std::vector<IncompleteWindow> test;
};

/// Contiguous chronological split; valid and test get floor(f * n) windows
/// and the remainder goes to train, less any window overlapping a later
/// split.
inline WindowSplits split_windows(std::vector<IncompleteWindow> windows, const SplitFractions& f) {
    if (f.train < 0.0 || f.valid < 0.0 || f.test < 0.0) throw ContractError("split fractions must be nonnegative");
    if (std::fabs(f.train + f.valid + f.test - 1.0) > 1e-9) throw ContractError("split fractions must sum to 1");
    const std::size_t n = windows.size();
    auto count = [n](double frac) { return static_cast<std::size_t>(std::floor(frac * static_cast<double>(n) + 1e-9)); };
    const std::size_t n_valid = count(f.valid);
    const std::size_t n_test = count(f.test);
    const std::size_t n_train = n - n_valid - n_test;
    WindowSplits s;
    auto it = std::make_move_iterator(windows.begin());
    s.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
    s.valid.assign(it + static_cast<std::ptrdiff_t>(n_train), it + static_cast<std::ptrdiff_t>(n_train + n_valid));
    s.test.assign(it + static_cast<std::ptrdiff_t>(n_train + n_valid), std::make_move_iterator(windows.end()));
    // Overlapping windows (stride < width) that reach into a later split
    // would share held-out steps with it; drop them.
    auto drop_reaching = [](std::vector<IncompleteWindow>& part, const std::vector<IncompleteWindow>& later) {
        if (later.empty()) return;
        const std::size_t boundary = later.front().window_start;
        std::erase_if(part, [boundary](const IncompleteWindow& w) { return w.window_start + w.width > boundary; });
    };
    drop_reaching(s.valid, s.test);
    drop_reaching(s.train, s.valid.empty() ? s.test : s.valid);
    if (!s.valid.empty()) drop_reaching(s.train, s.test);
    return s;
}

/// Per-feature z-score fitted on observed (m = 1) entries.
class Normalizer {
public:
    static constexpr double kMinStd = 1e-8;

    Normalizer() = default;
    Normalizer(std::vector<double> mean, std::vector<double> stddev) : mean_(std::move(mean)), std_(std::move(stddev)) {
        for (double& s : std_) s = std::max(s, kMinStd);
    }

    static Normalizer fit(const std::vector<IncompleteWindow>& windows) {
        if (windows.empty()) throw InputError("cannot fit normalizer on zero windows");
        const std::size_t c = windows.front().n_features;
        std::vector<double> sum(c, 0.0), sum_sq(c, 0.0);
        std::vector<std::size_t> count(c, 0);
        for (const auto& w : windows) {
            for (std::size_t p = 0; p < w.m.size(); ++p) {
                if (w.m[p] == 0.0) continue;
                for (std::size_t f = 0; f < c; ++f) {
                    const double v = w.x[p * c + f];
                    sum[f] += v;
                    sum_sq[f] += v * v;
                    ++count[f];
                }
            }
        }
        std::vector<double> mean(c), sd(c);
        for (std::size_t f = 0; f < c; ++f) {
            if (count[f] == 0) throw InputError("no observed training entries for feature " + std::to_string(f));
            mean[f] = sum[f] / static_cast<double>(count[f]);
            double var = 0.0;
            // Second pass for a numerically stable variance.
            for (const auto& w : windows)
                for (std::size_t p = 0; p < w.m.size(); ++p)
                    if (w.m[p] != 0.0) var += (w.x[p * c + f] - mean[f]) * (w.x[p * c + f] - mean[f]);
            sd[f] = std::sqrt(var / static_cast<double>(count[f]));
        }
        return Normalizer(std::move(mean), std::move(sd));
    }

    std::size_t n_features() const { return mean_.size(); }
    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& stddev() const { return std_; }

    double normalize(double v, std::size_t feature) const { return (v - mean_[feature]) / std_[feature]; }
    double inverse(double v, std::size_t feature) const { return v * std_[feature] + mean_[feature]; }

    /// Copy of a window in normalized units (masked entries stay 0).
    IncompleteWindow apply(const IncompleteWindow& w) const {
        IncompleteWindow out = w;
        const std::size_t c = w.n_features;
        for (std::size_t p = 0; p < w.m.size(); ++p) {
            for (std::size_t f = 0; f < c; ++f) {
                if (w.m[p] != 0.0) out.x[p * c + f] = normalize(w.x[p * c + f], f);
                if (w.eval_mask[p] != 0.0) out.ground_truth[p * c + f] = normalize(w.ground_truth[p * c + f], f);
            }
        }
        return out;
    }

private:
    std::vector<double> mean_;
    std::vector<double> std_;
};

struct SyntheticOptions {
    double period = 288.0;     // steps per day at 5-minute sampling
    double amplitude = 20.0;
    double offset = 60.0;
    double noise_fraction = 0.05;  // noise sigma as a fraction of amplitude
    double diffusion = 0.3;
    std::vector<double> phases;    // per node; drawn from the seed when empty
};

/// Daily sinusoid per node with a node-specific phase, one step of graph
/// diffusion x <- (1 - a) x + a Â x, then Gaussian noise. Values are kept
/// strictly positive.
inline SeriesMatrix generate_synthetic(std::size_t n_nodes, std::size_t n_steps, const TrafficGraph& graph,
                                       std::uint64_t seed, const SyntheticOptions& opts = {}) {
    if (graph.n_nodes() != n_nodes) throw ContractError("generate_synthetic: graph size does not match n_nodes");
    Rng rng(seed);
    std::vector<double> phases = opts.phases;
    if (phases.empty()) {
        std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < n_nodes; ++i) phases.push_back(u(rng));
    }
    if (phases.size() != n_nodes) throw ContractError("generate_synthetic: one phase per node required");

    const DenseMatrix a_hat = graph.row_normalized();
    SeriesMatrix s(n_nodes, n_steps, 1);
    std::vector<double> base(n_nodes);
    std::normal_distribution<double> noise(0.0, opts.noise_fraction * opts.amplitude);
    const double floor_value = 1e-3 * std::max(1.0, opts.offset);
    for (std::size_t t = 0; t < n_steps; ++t) {
        for (std::size_t i = 0; i < n_nodes; ++i) {
            base[i] = opts.offset +
                      opts.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / opts.period + phases[i]);
        }
        for (std::size_t i = 0; i < n_nodes; ++i) {
            double neighbour = base[i];  // isolated nodes diffuse into themselves
            if (graph.degree()[i] > 0.0) {
                neighbour = 0.0;
                for (std::size_t j = 0; j < n_nodes; ++j) neighbour += a_hat(i, j) * base[j];
            }
            s.at(i, t) = (1.0 - opts.diffusion) * base[i] + opts.diffusion * neighbour;
        }
    }
    if (opts.noise_fraction > 0.0) {
        for (double& v : s.values) v += noise(rng);
    }
    for (double& v : s.values) v = std::max(v, floor_value);
    return s;
}

// ---------------------------------------------------------------------------
// CSV formats. Lines beginning with '#' are comments and are skipped.

inline std::string series_column_name(std::size_t node, std::size_t feature) {
    return "node" + std::to_string(node) + "_f" + std::to_string(feature);
}

/// Header "node0_f0,node0_f1,...,node1_f0,..."; one row per step; empty
/// cell for missing values.
inline void write_series_csv(std::ostream& out, const SeriesMatrix& s) {
    for (std::size_t i = 0; i < s.n_nodes; ++i)
        for (std::size_t c = 0; c < s.n_features; ++c) out << (i || c ? "," : "") << series_column_name(i, c);
    out << '\n';
    out << std::setprecision(17);
    for (std::size_t t = 0; t < s.n_steps; ++t) {
        for (std::size_t i = 0; i < s.n_nodes; ++i) {
            for (std::size_t c = 0; c < s.n_features; ++c) {
                if (i || c) out << ',';
                const double v = s.at(i, t, c);
                if (!std::isnan(v)) {
                    out << v;
                } else if (s.n_nodes * s.n_features == 1) {
                    out << "NaN";  // an empty single-cell row would read as a blank line
                }
            }
        }
        out << '\n';
    }
}

namespace detail {

inline bool next_data_line(std::istream& in, std::string& line, std::size_t& line_no) {
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        return true;
    }
    return false;
}

inline double parse_cell(const std::string& cell, std::size_t row, std::size_t col, const std::string& source) {
    if (cell.empty() || cell == "NaN" || cell == "nan") return kMissing;
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(cell, &pos);
    } catch (const std::logic_error&) {
        pos = 0;
    }
    if (pos != cell.size() || pos == 0 || std::isinf(v) || std::isnan(v)) {
        throw InputError(source + ": row " + std::to_string(row) + ", column " + std::to_string(col) +
                         ": invalid value '" + cell + "'");
    }
    return v;
}

}  // namespace detail

inline SeriesMatrix parse_series_csv(std::istream& in, const std::string& source = "<stream>") {
    std::string line;
    std::size_t line_no = 0;
    if (!detail::next_data_line(in, line, line_no)) throw InputError(source + ": missing header row");
    const auto header = detail::split_csv_line(line);
    // Header must enumerate node-major (node, feature) pairs.
    std::size_t n_features = 0;
    for (const auto& name : header) {
        if (name.rfind("node0_f", 0) == 0) ++n_features;
    }
    if (n_features == 0 || header.size() % n_features != 0) {
        throw InputError(source + ": header must list columns node<i>_f<c>");
    }
    const std::size_t n_nodes = header.size() / n_features;
    for (std::size_t k = 0; k < header.size(); ++k) {
        if (header[k] != series_column_name(k / n_features, k % n_features)) {
            throw InputError(source + ": unexpected header column '" + header[k] + "' at position " + std::to_string(k));
        }
    }
    std::vector<std::vector<double>> rows;
    while (detail::next_data_line(in, line, line_no)) {
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size()) {
            throw InputError(source + ": row " + std::to_string(rows.size() + 1) + " has " + std::to_string(cells.size()) +
                             " cells, expected " + std::to_string(header.size()));
        }
        std::vector<double> row(cells.size());
        for (std::size_t k = 0; k < cells.size(); ++k) row[k] = detail::parse_cell(cells[k], rows.size() + 1, k + 1, source);
        rows.push_back(std::move(row));
    }
    SeriesMatrix s(n_nodes, rows.size(), n_features);
    for (std::size_t t = 0; t < rows.size(); ++t)
        for (std::size_t k = 0; k < header.size(); ++k) s.at(k / n_features, t, k % n_features) = rows[t][k];
    return s;
}

inline SeriesMatrix load_series_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open series file " + path);
    return parse_series_csv(in, path);
}

/// "seed=<s>,ratio=<r>" line, then one row per step with one 0/1 column
/// per node (same geometry as the series file).
inline void write_mask_csv(std::ostream& out, const EvalMask& mask) {
    out << "seed=" << mask.seed << ",ratio=" << std::setprecision(17) << mask.ratio << '\n';
    for (std::size_t t = 0; t < mask.n_steps; ++t) {
        for (std::size_t i = 0; i < mask.n_nodes; ++i) out << (i ? "," : "") << static_cast<int>(mask.at(i, t));
        out << '\n';
    }
}

inline EvalMask parse_mask_csv(std::istream& in, const std::string& source = "<stream>") {
    std::string line;
    std::size_t line_no = 0;
    if (!detail::next_data_line(in, line, line_no)) throw InputError(source + ": missing mask header");
    EvalMask mask;
    {
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != 2 || cells[0].rfind("seed=", 0) != 0 || cells[1].rfind("ratio=", 0) != 0) {
            throw InputError(source + ": mask header must read 'seed=<s>,ratio=<r>'");
        }
        try {
            mask.seed = std::stoull(cells[0].substr(5));
            mask.ratio = std::stod(cells[1].substr(6));
        } catch (const std::logic_error&) {
            throw InputError(source + ": malformed mask header");
        }
    }
    std::vector<std::vector<std::uint8_t>> rows;
    while (detail::next_data_line(in, line, line_no)) {
        const auto cells = detail::split_csv_line(line);
        if (!rows.empty() && cells.size() != rows.front().size()) {
            throw InputError(source + ":" + std::to_string(line_no) + ": ragged mask row");
        }
        std::vector<std::uint8_t> row;
        for (std::size_t k = 0; k < cells.size(); ++k) {
            if (cells[k] != "0" && cells[k] != "1") {
                throw InputError(source + ":" + std::to_string(line_no) + ", column " + std::to_string(k + 1) +
                                 ": mask entries must be 0 or 1");
            }
            row.push_back(cells[k] == "1" ? 1 : 0);
        }
        rows.push_back(std::move(row));
    }
    mask.n_steps = rows.size();
    mask.n_nodes = rows.empty() ? 0 : rows.front().size();
    mask.held_out.assign(mask.n_nodes * mask.n_steps, 0);
    for (std::size_t t = 0; t < mask.n_steps; ++t)
        for (std::size_t i = 0; i < mask.n_nodes; ++i) mask.held_out[i * mask.n_steps + t] = rows[t][i];
    return mask;
}

inline EvalMask load_mask_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open mask file " + path);
    return parse_mask_csv(in, path);
}

/// Checks that a mask only holds out natively observed positions.
inline void check_mask_against_series(const EvalMask& mask, const SeriesMatrix& s) {
    if (mask.n_nodes != s.n_nodes || mask.n_steps != s.n_steps) {
        throw InputError("mask geometry " + std::to_string(mask.n_steps) + "x" + std::to_string(mask.n_nodes) +
                         " does not match series " + std::to_string(s.n_steps) + "x" + std::to_string(s.n_nodes));
    }
    for (std::size_t i = 0; i < s.n_nodes; ++i)
        for (std::size_t t = 0; t < s.n_steps; ++t)
            if (mask.at(i, t) && !s.observed(i, t)) {
                throw InputError("mask holds out natively missing position (node " + std::to_string(i) + ", step " +
                                 std::to_string(t) + ")");
            }
}

}  // namespace maginet
