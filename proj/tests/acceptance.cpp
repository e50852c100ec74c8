// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "maginet/cli.hpp"
#include "maginet/evaluation.hpp"
#include "maginet/graph.hpp"
#include "maginet/model.hpp"
#include "maginet/training.hpp"

using namespace maginet;
namespace mt = maginet::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 6) {
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

struct Inputs {
    std::vector<double> x, m;
};

Inputs random_inputs(const ModelDims& dims, std::uint64_t seed, double missing) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Inputs in;
    for (std::size_t p = 0; p < dims.n_nodes * dims.width; ++p) {
        const bool observed = u(rng) >= missing;
        in.m.push_back(observed ? 1.0 : 0.0);
        for (std::size_t c = 0; c < dims.n_features; ++c) in.x.push_back(observed ? 4.0 * u(rng) - 2.0 : 0.0);
    }
    return in;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// ---------------------------------------------------------------------------
// 1. Gradients

Outcome gradient_suite() {
    const auto start = Clock::now();
    std::mt19937_64 rng(2024);
    using Fn = std::function<Tensor(const std::vector<Tensor>&)>;
    std::vector<std::pair<std::string, std::pair<Fn, std::vector<Tensor>>>> cases;
    auto add_case = [&](std::string name, Fn f, std::vector<Tensor> leaves) {
        cases.push_back({std::move(name), {std::move(f), std::move(leaves)}});
    };
    auto r = [&](Shape s, double lo = -1.0, double hi = 1.0) { return mt::random_tensor(std::move(s), rng, lo, hi); };
    using V = std::vector<Tensor>;
    add_case("add", [](const V& v) { return mt::weighted_sum(add(v[0], v[1])); }, {r({3, 2, 4}), r({2, 4})});
    add_case("sub", [](const V& v) { return mt::weighted_sum(sub(v[0], v[1])); }, {r({3, 2, 4}), r({2, 4})});
    add_case("mul", [](const V& v) { return mt::weighted_sum(mul(v[0], v[1])); }, {r({3, 2, 4}), r({2, 4})});
    add_case("scale", [](const V& v) { return mt::weighted_sum(scale(v[0], -1.7)); }, {r({4, 3})});
    add_case("add_scalar", [](const V& v) { return mt::weighted_sum(square(add_scalar(v[0], 0.3))); }, {r({4, 3})});
    add_case("tanh", [](const V& v) { return mt::weighted_sum(tanh(v[0])); }, {r({4, 5}, -2, 2)});
    add_case("sigmoid", [](const V& v) { return mt::weighted_sum(sigmoid(v[0])); }, {r({4, 5}, -2, 2)});
    add_case("relu", [](const V& v) { return mt::weighted_sum(relu(v[0])); }, {r({4, 5}, -2, 2)});
    add_case("abs", [](const V& v) { return mt::weighted_sum(abs(v[0])); }, {r({4, 5}, -2, 2)});
    add_case("square", [](const V& v) { return mt::weighted_sum(square(v[0])); }, {r({4, 5})});
    add_case("matmul", [](const V& v) { return mt::weighted_sum(matmul(v[0], v[1])); }, {r({2, 3, 3, 4}), r({3, 4, 2})});
    add_case("matmul_tall", [](const V& v) { return mt::weighted_sum(matmul(v[0], v[1])); }, {r({2, 5, 3}), r({3, 2})});
    add_case("matmul_shared_left", [](const V& v) { return mt::weighted_sum(matmul(v[0], v[1])); },
             {r({3, 3}), r({5, 3, 2})});
    add_case("reshape", [](const V& v) { return mt::weighted_sum(reshape(v[0], {6, 4})); }, {r({2, 3, 4})});
    add_case("permute", [](const V& v) { return mt::weighted_sum(permute(v[0], {2, 0, 1})); }, {r({2, 3, 4})});
    add_case("transpose", [](const V& v) { return mt::weighted_sum(transpose_last2(v[0])); }, {r({2, 3, 4})});
    add_case("slice", [](const V& v) { return mt::weighted_sum(slice(v[0], 2, 1, 2)); }, {r({2, 3, 4})});
    add_case("concat", [](const V& v) { return mt::weighted_sum(concat({v[0], v[1]}, 1)); }, {r({2, 3, 4}), r({2, 2, 4})});
    add_case("sum", [](const V& v) { return sum(v[0]); }, {r({3, 4})});
    add_case("mean", [](const V& v) { return mean(square(v[0])); }, {r({3, 4})});
    add_case("sum_axis", [](const V& v) { return mt::weighted_sum(sum_axis(v[0], 1)); }, {r({3, 4, 2})});
    add_case("mean_axis", [](const V& v) { return mt::weighted_sum(mean_axis(v[0], 0)); }, {r({3, 4, 2})});
    {
        std::vector<double> mask(15, 0.0);
        const double inf = std::numeric_limits<double>::infinity();
        mask[2] = mask[7] = -inf;
        for (std::size_t c = 0; c < 5; ++c) mask[10 + c] = -inf;
        const Tensor m = Tensor::from_data({3, 5}, mask);
        add_case("softmax", [m](const V& v) { return mt::weighted_sum(softmax_lastdim(add(v[0], m))); }, {r({3, 5}, -2, 2)});
    }
    add_case("layer_norm", [](const V& v) { return mt::weighted_sum(layer_norm(v[0], v[1], v[2])); },
             {r({4, 5}, -3, 3), r({5}), r({5})});
    add_case("conv1d_same", [](const V& v) { return mt::weighted_sum(conv1d_time(v[0], v[1], Padding::same_zero)); },
             {r({2, 6, 3}), r({3, 3, 4})});
    add_case("conv1d_valid", [](const V& v) { return mt::weighted_sum(conv1d_time(v[0], v[1], Padding::valid)); },
             {r({2, 6, 2}), r({4, 2, 3})});
    {
        const Tensor cond = Tensor::from_data({2, 3}, {1, 0, 1, 0, 0, 1});
        add_case("where", [cond](const V& v) { return mt::weighted_sum(where(cond, v[0], v[1])); }, {r({2, 3}), r({2, 3})});
        add_case("masked_select", [cond](const V& v) { return mt::weighted_sum(masked_select(v[0], cond)); },
                 {r({2, 3})});
    }
    add_case("masked_l1", [](const V& v) { return masked_l1_loss(v[0], {0.5, -1, 2, 0.1, 0, 0}, {1, 1, 0, 1, 0, 1}); },
             {r({1, 6, 1}, -2, 2)});

    double worst = 0.0;
    std::string worst_name;
    for (auto& [name, c] : cases) {
        const auto res = mt::check_gradients(c.first, c.second);
        if (res.max_rel_error > worst) {
            worst = res.max_rel_error;
            worst_name = name + " " + res.worst;
        }
    }

    // Full model: N=4, W=8, C=1, d=4, m=2, K=2, L=1.
    ModelConfig cfg;
    cfg.d = 4;
    cfg.heads = 2;
    cfg.d_head = 2;
    cfg.node_embed = 4;
    cfg.cheb_order = 2;
    cfg.kernel_sizes = {3, 5};
    cfg.blocks = 1;
    const ModelDims dims{4, 8, 1};
    const MagiNet model(cfg, dims, corridor_graph(4, 0.5, 1), 21);
    const auto in = random_inputs(dims, 4, 0.25);
    std::vector<double> eval(32, 0.0), truth(32, 0.0);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (std::size_t p = 0; p < 32; ++p)
        if (in.m[p] == 0.0) {
            eval[p] = 1.0;
            truth[p] = u(rng);
        }
    std::vector<Tensor> leaves;
    for (const auto& [name, t] : model.params().tensors()) leaves.push_back(t);
    const auto full = mt::check_gradients(
        [&](const std::vector<Tensor>&) { return masked_l1_loss(model.forward(in.x, in.m), truth, eval); }, leaves);
    if (full.max_rel_error > worst) {
        worst = full.max_rel_error;
        worst_name = "MagiNet loss " + full.worst;
    }

    const double elapsed = seconds_since(start);
    return {worst < 1e-4 && elapsed < 30.0 && full.checked == model.params().scalar_count(),
            std::to_string(cases.size()) + " primitives + full loss (" + std::to_string(full.checked) +
                " params), max rel err " + fmt(worst, 3) + (worst_name.empty() ? "" : " at " + worst_name) + ", " +
                fmt(elapsed, 3) + " s"};
}

// ---------------------------------------------------------------------------
// 2. Masked-input invariance

Outcome masked_invariance() {
    const ModelConfig cfg;
    const ModelDims dims{6, 12, 1};
    const MagiNet model(cfg, dims, corridor_graph(6, 0.3, 2), 7);
    auto in = random_inputs(dims, 11, 0.4);
    NoGradGuard no_grad;
    const auto ref = values(model.forward(in.x, in.m));
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 100.0);
    for (int trial = 0; trial < 100; ++trial) {
        for (std::size_t i = 0; i < in.m.size(); ++i)
            if (in.m[i] == 0.0) in.x[i] = g(rng);
        if (values(model.forward(in.x, in.m)) != ref) return {false, "trial " + std::to_string(trial) + " changed X̂"};
    }
    return {true, "100 trials bit-identical"};
}

// ---------------------------------------------------------------------------
// 3. Spectral oracles

Outcome spectral_oracles() {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> weight(1, 5);
    std::bernoulli_distribution edge(0.5);
    // Row sums of L = D - A are exactly zero for integer weights.
    for (std::size_t n = 2; n <= 10; ++n) {
        DenseMatrix a(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (edge(rng)) a(i, j) = a(j, i) = weight(rng);
        const DenseMatrix l = TrafficGraph(a).laplacian();
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += l(i, j);
            if (s != 0.0) return {false, "Laplacian row sum " + fmt(s) + " for n=" + std::to_string(n)};
        }
    }
    DenseMatrix p2(2);
    p2(0, 1) = p2(1, 0) = 1.0;
    const auto s2 = scaled_laplacian(TrafficGraph(p2)).matrix;
    const std::vector<double> e2{0, -1, -1, 0};
    for (std::size_t i = 0; i < 4; ++i)
        if (std::fabs(s2.values[i] - e2[i]) > 1e-12) return {false, "2-node path L~ mismatch"};
    DenseMatrix k3(3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) k3(i, j) = i == j ? 0.0 : 1.0;
    const auto s3 = scaled_laplacian(TrafficGraph(k3)).matrix;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            if (std::fabs(s3(i, j) - (i == j ? 1.0 / 3.0 : -2.0 / 3.0)) > 1e-12) return {false, "K3 L~ mismatch"};
    double worst = 0.0;
    for (std::size_t n = 2; n <= 10; ++n) {
        DenseMatrix a(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                if (edge(rng)) a(i, j) = a(j, i) = weight(rng);
        const auto s = scaled_laplacian(TrafficGraph(a)).matrix;
        const auto basis = chebyshev_basis(s, 5);
        for (std::size_t k = 2; k < 5; ++k)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    double prod = 0.0;
                    for (std::size_t q = 0; q < n; ++q) prod += s(i, q) * basis.matrices[k - 1](q, j);
                    worst = std::max(worst, std::fabs(basis.matrices[k](i, j) - (2.0 * prod - basis.matrices[k - 2](i, j))));
                }
    }
    return {worst <= 1e-12, "row sums exact, path and K3 oracles, recurrence error " + fmt(worst, 3)};
}

// ---------------------------------------------------------------------------
// 4. Attention stochasticity

Outcome attention_stochasticity() {
    ModelConfig cfg;
    cfg.blocks = 2;
    const std::size_t n = 6, w = 12, heads = cfg.heads;
    const ModelDims dims{n, w, 1};
    const MagiNet model(cfg, dims, corridor_graph(n, 0.3, 2), 7);
    auto in = random_inputs(dims, 12, 0.5);
    std::fill_n(in.m.begin() + 2 * w, w, 0.0);  // node 2 never observed
    std::fill_n(in.x.begin() + 2 * w, w, 0.0);
    ForwardTrace trace;
    model.forward(in.x, in.m, &trace);
    double worst = 0.0;
    for (const auto& bt : trace.blocks) {
        for (std::size_t i = 0; i < n; ++i) {
            bool any = false;
            for (std::size_t t = 0; t < w; ++t) any |= in.m[i * w + t] != 0.0;
            for (std::size_t hh = 0; hh < heads; ++hh)
                for (std::size_t q = 0; q < w; ++q) {
                    double row = 0.0;
                    for (std::size_t k = 0; k < w; ++k) {
                        const double a = bt.temporal_weights[((i * heads + hh) * w + q) * w + k];
                        if (in.m[i * w + k] == 0.0 && a != 0.0) return {false, "masked key has weight " + fmt(a)};
                        row += a;
                    }
                    worst = std::max(worst, std::fabs(row - (any ? 1.0 : 0.0)));
                }
        }
        for (std::size_t hh = 0; hh < heads; ++hh)
            for (std::size_t i = 0; i < n; ++i) {
                double row = 0.0;
                for (std::size_t j = 0; j < n; ++j) row += bt.spatial[(hh * n + i) * n + j];
                worst = std::max(worst, std::fabs(row - 1.0));
            }
    }
    if (worst > 1e-12) return {false, "row sum deviation " + fmt(worst, 3)};
    // All-masked node: zero context, so H_matt = LN(b_c + H).
    const auto& p = model.params();
    const Tensor expected =
        layer_norm(add(trace.h, p["block0.attn.b_c"]), p["block0.attn.ln_gain"], p["block0.attn.ln_bias"]);
    for (std::size_t k = 2 * w * cfg.d; k < 3 * w * cfg.d; ++k)
        if (trace.blocks[0].h_matt[k] != expected[k]) return {false, "all-masked row is not a residual pass-through"};
    return {true, "max row-sum deviation " + fmt(worst, 3) + ", masked keys exactly 0, all-masked row passes through"};
}

// ---------------------------------------------------------------------------
// 5. Metric and loss oracles

Outcome metric_oracles() {
    auto pred = [](Shape s, std::vector<double> v) { return Tensor::from_data(std::move(s), std::move(v), true); };
    std::vector<std::string> bad;
    auto check = [&](bool ok, const std::string& what) {
        if (!ok) bad.push_back(what);
    };
    const std::vector<double> y3{1, 2, 3}, m3{1, 1, 1};
    check(rmse(y3, y3, m3) == 0.0 && mape(y3, y3, m3) == 0.0, "perfect prediction");
    using D = std::vector<double>;
    check(rmse(D{3}, D{1}, D{1}) == 2.0 && mape(D{3}, D{1}, D{1}) == 200.0, "single element");
    check(rmse(D{0, 4}, D{2, 2}, D{1, 1}) == 2.0 && mape(D{0, 4}, D{2, 2}, D{1, 1}) == 100.0, "two elements");
    check(rmse(D{0, 4, 5}, D{2, 2, 5}, D{1, 1, 0}) == rmse(D{0, 4, -1e9}, D{2, 2, 5}, D{1, 1, 0}), "rmse invariance");
    check(mape(D{0, 4, 5}, D{2, 2, 5}, D{1, 1, 0}) == mape(D{0, 4, -1e9}, D{2, 2, 5}, D{1, 1, 0}), "mape invariance");
    check(masked_l1_loss(pred({1, 3, 1}, {1, 2, 3}), {1, 2, 3}, {1, 1, 1}).item() == 0.0, "l1 zero");
    check(masked_l1_loss(pred({1, 2, 1}, {5, 9}), {3, 0}, {1, 0}).item() == 2.0, "l1 single");
    check(masked_l1_loss(pred({1, 3, 1}, {2, 1, 7}), {1, -2, 4}, {1, 0, 1}).item() == 2.0, "l1 pair");
    check(masked_l1_loss(pred({1, 3, 1}, {2, 1e9, 7}), {1, -2, 4}, {1, 0, 1}).item() == 2.0, "l1 invariance");
    std::string detail = "12 oracles exact";
    if (!bad.empty()) {
        detail = "failed:";
        for (const auto& b : bad) detail += " " + b;
    }
    return {bad.empty(), detail};
}

// ---------------------------------------------------------------------------
// 6 and 8. Learning on the synthetic corridor

constexpr std::size_t kNodes = 16, kSteps = 2016, kWidth = 12;
constexpr double kRatio = 0.5;
constexpr std::uint64_t kSeed = 1;
// Training budget, pinned after the reference run.
constexpr std::size_t kStride = 4;
constexpr std::size_t kEpochs = 60;
constexpr std::size_t kPatience = 12;
constexpr double kLearningRate = 2e-3;
// Reference run: 1.3127 vs mean 1.3859 (5.3% under). Required margin below the best baseline:
constexpr double kRequiredMargin = 0.03;

ExperimentSettings learning_settings() {
    ExperimentSettings s;
    s.width = kWidth;
    s.stride = kStride;
    s.model.d = 16;
    s.model.heads = 3;
    s.model.cheb_order = 3;
    s.model.blocks = 2;
    s.model.kernel_sizes = {3, 5};
    s.train.epochs = kEpochs;
    s.train.patience = kPatience;
    s.train.learning_rate = kLearningRate;
    s.train.seed = kSeed;
    s.knn_k = 3;
    return s;
}

struct Reference {
    Dataset ds;
    EvalMask mask;
    ExperimentSettings settings;
    MethodOutcome maginet;
    double mean_rmse = 0.0;
    double knn_rmse = 0.0;
    double seconds = 0.0;
};

const Reference& reference_run() {
    static std::optional<Reference> ref;
    if (ref) return *ref;
    const auto start = Clock::now();
    Reference r{synthetic_dataset(kNodes, kSteps, kSeed), {}, learning_settings(), {}, 0.0, 0.0, 0.0};
    r.mask = make_eval_mask(r.ds.series, kRatio, kSeed);
    r.mean_rmse = run_method(r.ds, r.mask, Method::mean, r.settings.model, r.settings).rmse;
    r.knn_rmse = run_method(r.ds, r.mask, Method::knn, r.settings.model, r.settings).rmse;
    r.maginet = run_method(r.ds, r.mask, Method::maginet, r.settings.model, r.settings);
    r.seconds = seconds_since(start);
    ref = std::move(r);
    return *ref;
}

Outcome end_to_end_learning() {
    const Reference& r = reference_run();
    const double best_baseline = std::min(r.mean_rmse, r.knn_rmse);
    const bool ok = !r.maginet.training.diverged && r.maginet.rmse < r.mean_rmse && r.maginet.rmse < r.knn_rmse &&
                    r.maginet.rmse <= (1.0 - kRequiredMargin) * best_baseline && r.seconds < 600.0;
    return {ok, "test RMSE MagiNet " + fmt(r.maginet.rmse) + " vs mean " + fmt(r.mean_rmse) + ", knn " +
                    fmt(r.knn_rmse) + " (margin " + fmt(100.0 * (1.0 - r.maginet.rmse / best_baseline), 3) +
                    "%, required " + fmt(100.0 * kRequiredMargin, 3) + "%), best epoch " + std::to_string(r.maginet.training.best_epoch) + "/" +
                    std::to_string(r.maginet.training.history.size()) + ", " + fmt(r.seconds, 4) + " s"};
}

Outcome ablation_direction() {
    const Reference& r = reference_run();
    ModelConfig variant = r.settings.model;
    variant.ablations.insert(Ablation::no_mastdec);
    const auto res = run_method(r.ds, r.mask, Method::maginet, variant, r.settings);
    return {r.maginet.rmse <= 1.02 * res.rmse,
            "MagiNet " + fmt(r.maginet.rmse) + " vs w/o MASTdec " + fmt(res.rmse) + " (limit x1.02)"};
}

// ---------------------------------------------------------------------------
// 7. Determinism

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Report rows without the wall-clock runtime column.
std::string report_without_runtime(const std::string& text) {
    std::istringstream in(text);
    std::string line, out;
    while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
    return out;
}

Outcome determinism() {
    const fs::path dir = fs::temp_directory_path() / "maginet_acceptance_determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto p = [&](const std::string& f) { return (dir / f).string(); };
    const std::vector<std::vector<std::string>> pipeline{
        {"generate", "--nodes", "8", "--steps", "288", "--seed", "3", "--out", p("data")},
        {"train", "--series", p("data/series.csv"), "--adj", p("data/adj.csv"), "--ratio", "0.4", "--seed", "5",
         "--epochs", "3", "--d", "8", "--heads", "2", "--d-head", "4", "--node-embed", "4", "--blocks", "1", "--out",
         p("run")},
        {"eval", "--series", p("data/series.csv"), "--adj", p("data/adj.csv"), "--mask", p("run/mask.csv"), "--method",
         "maginet", "--checkpoint", p("run/checkpoint.json"), "--out", p("report.csv")},
        {"sweep", "--series", p("data/series.csv"), "--adj", p("data/adj.csv"), "--ratios", "0.3,0.6", "--methods",
         "mean,knn", "--out", p("sweep")}};
    struct Snapshot {
        std::string mask, history, checkpoint, report, sweep;
    };
    auto run_once = [&]() -> std::optional<Snapshot> {
        std::ostringstream sink;
        for (const auto& args : pipeline)
            if (cli::run(args, sink, sink) != 0) return std::nullopt;
        return Snapshot{slurp(p("run/mask.csv")), slurp(p("run/history.csv")), slurp(p("run/checkpoint.json")),
                        report_without_runtime(slurp(p("report.csv"))),
                        report_without_runtime(slurp(p("sweep/report.csv")))};
    };
    const auto a = run_once();
    const auto b = run_once();
    fs::remove_all(dir);
    if (!a || !b) return {false, "pipeline command failed"};
    auto epoch1 = [](const std::string& history) {
        std::istringstream in(history);
        std::string line;
        for (int i = 0; i < 3; ++i) std::getline(in, line);  // provenance, header, epoch 1
        return line;
    };
    std::vector<std::string> diffs;
    if (a->mask != b->mask) diffs.push_back("mask");
    if (epoch1(a->history) != epoch1(b->history)) diffs.push_back("epoch-1 loss");
    if (a->checkpoint != b->checkpoint) diffs.push_back("checkpoint");
    if (a->report != b->report) diffs.push_back("eval report");
    if (a->sweep != b->sweep) diffs.push_back("sweep report");
    std::string detail = "mask, epoch-1 loss (" + epoch1(a->history) + "), checkpoint and reports identical";
    if (!diffs.empty()) {
        detail = "differs:";
        for (const auto& d : diffs) detail += " " + d;
    }
    return {diffs.empty(), detail};
}

// ---------------------------------------------------------------------------
// 9. Permutation equivariance

Tensor permute_leading(const Tensor& t, const std::vector<std::size_t>& perm) {
    const std::size_t row = t.numel() / t.dim(0);
    std::vector<double> out(t.numel());
    for (std::size_t i = 0; i < perm.size(); ++i)
        std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(perm[i] * row), row,
                    out.begin() + static_cast<std::ptrdiff_t>(i * row));
    return Tensor::from_data(t.shape(), std::move(out), true);
}

Outcome permutation_equivariance() {
    ModelConfig cfg;
    cfg.blocks = 2;
    const std::size_t n = 8, w = 12;
    const ModelDims dims{n, w, 1};
    const auto graph = corridor_graph(n, 0.4, 8);
    const MagiNet model(cfg, dims, graph, 13);
    const auto in = random_inputs(dims, 14, 0.3);
    double worst = 0.0;
    std::mt19937_64 rng(15);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        ModelParams permuted = model.params().snapshot();
        permuted.set("enc.z_u", permute_leading(model.params()["enc.z_u"], perm));
        for (std::size_t l = 0; l < cfg.blocks; ++l) {
            const std::string name = block_prefix(l) + "spatial.p_s";
            permuted.set(name, permute_leading(model.params()[name], perm));
        }
        const MagiNet relabelled(cfg, dims, chebyshev_basis(graph.permuted(perm), cfg.cheb_order), permuted);
        Inputs pin;
        for (std::size_t i = 0; i < n; ++i) {
            const auto off = static_cast<std::ptrdiff_t>(perm[i] * w);
            pin.x.insert(pin.x.end(), in.x.begin() + off, in.x.begin() + off + static_cast<std::ptrdiff_t>(w));
            pin.m.insert(pin.m.end(), in.m.begin() + off, in.m.begin() + off + static_cast<std::ptrdiff_t>(w));
        }
        NoGradGuard no_grad;
        const Tensor a = model.forward(in.x, in.m);
        const Tensor b = relabelled.forward(pin.x, pin.m);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t t = 0; t < w; ++t) worst = std::max(worst, std::fabs(b[i * w + t] - a[perm[i] * w + t]));
    }
    return {worst <= 1e-10, "5 relabelings, max deviation " + fmt(worst, 3)};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient suite", gradient_suite},
        {"masked-input invariance", masked_invariance},
        {"spectral oracles", spectral_oracles},
        {"attention stochasticity", attention_stochasticity},
        {"metric/loss oracles", metric_oracles},
        {"end-to-end learning", end_to_end_learning},
        {"determinism", determinism},
        {"ablation direction", ablation_direction},
        {"permutation equivariance", permutation_equivariance},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first
                  << "): " << o.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
