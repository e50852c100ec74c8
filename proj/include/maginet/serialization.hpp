// SPDX-License-Identifier: Apache-2.0
//
// JSON forms of the model/training/run configuration and the checkpoint
// container. Unknown keys are rejected everywhere.
#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "maginet/data.hpp"
#include "maginet/evaluation.hpp"
#include "maginet/model.hpp"
#include "maginet/training.hpp"

namespace maginet {

using Json = nlohmann::json;

namespace detail {

inline void reject_unknown_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw InputError(where + ": expected a JSON object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw InputError(where + ": unknown key '" + key + "'");
}

template <typename T>
void read_key(const Json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw InputError(where + "." + key + ": " + e.what());
    }
}

inline std::string mask_mode_name(MaskMode m) { return m == MaskMode::neg_inf ? "neg_inf" : "multiply"; }

inline MaskMode parse_mask_mode(const std::string& s) {
    if (s == "neg_inf") return MaskMode::neg_inf;
    if (s == "multiply") return MaskMode::multiply;
    throw InputError("unknown mask mode '" + s + "' (expected neg_inf or multiply)");
}

}  // namespace detail

inline Json to_json(const ModelConfig& c) {
    Json ablations = Json::array();
    for (auto a : c.ablations) ablations.push_back(ablation_toggle_name(a));
    return {{"d", c.d},
            {"heads", c.heads},
            {"d_head", c.d_head},
            {"node_embed", c.node_embed},
            {"cheb_order", c.cheb_order},
            {"kernel_sizes", c.kernel_sizes},
            {"blocks", c.blocks},
            {"collapse_kernel", c.collapse_kernel},
            {"mask_mode", detail::mask_mode_name(c.mask_mode)},
            {"ablations", ablations}};
}

inline ModelConfig model_config_from_json(const Json& j, ModelConfig c = {}) {
    const std::string where = "model";
    detail::reject_unknown_keys(j, {"d", "heads", "d_head", "node_embed", "cheb_order", "kernel_sizes", "blocks",
                                    "collapse_kernel", "mask_mode", "ablations"},
                                where);
    detail::read_key(j, "d", c.d, where);
    detail::read_key(j, "heads", c.heads, where);
    detail::read_key(j, "d_head", c.d_head, where);
    detail::read_key(j, "node_embed", c.node_embed, where);
    detail::read_key(j, "cheb_order", c.cheb_order, where);
    detail::read_key(j, "kernel_sizes", c.kernel_sizes, where);
    detail::read_key(j, "blocks", c.blocks, where);
    detail::read_key(j, "collapse_kernel", c.collapse_kernel, where);
    if (j.contains("mask_mode")) {
        std::string s;
        detail::read_key(j, "mask_mode", s, where);
        c.mask_mode = detail::parse_mask_mode(s);
    }
    if (j.contains("ablations")) {
        std::vector<std::string> names;
        detail::read_key(j, "ablations", names, where);
        c.ablations.clear();
        for (const auto& n : names) c.ablations.insert(parse_ablation(n));
    }
    return c;
}

inline Json to_json(const TrainConfig& t) {
    return {{"learning_rate", t.learning_rate}, {"epochs", t.epochs},   {"batch_size", t.batch_size},
            {"patience", t.patience},           {"seed", t.seed},       {"clip_norm", t.clip_norm}};
}

inline TrainConfig train_config_from_json(const Json& j, TrainConfig t = {}) {
    const std::string where = "train";
    detail::reject_unknown_keys(j, {"learning_rate", "epochs", "batch_size", "patience", "seed", "clip_norm"}, where);
    detail::read_key(j, "learning_rate", t.learning_rate, where);
    detail::read_key(j, "epochs", t.epochs, where);
    detail::read_key(j, "batch_size", t.batch_size, where);
    detail::read_key(j, "patience", t.patience, where);
    detail::read_key(j, "seed", t.seed, where);
    detail::read_key(j, "clip_norm", t.clip_norm, where);
    return t;
}

/// Everything a command needs beyond its subcommand-specific flags.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string series;
    std::string adj;
    std::string mask;
    std::string out;
    std::size_t width = 12;
    std::size_t stride = 12;
    double ratio = 0.5;
    std::uint64_t seed = 1;
    SplitFractions split;
    std::size_t knn_k = 3;
    std::size_t jobs = 1;

    ExperimentSettings settings() const {
        ExperimentSettings s;
        s.width = width;
        s.stride = stride;
        s.split = split;
        s.model = model;
        s.train = train;
        s.knn_k = knn_k;
        s.jobs = jobs;
        return s;
    }
};

inline Json to_json(const RunConfig& r) {
    return {{"model", to_json(r.model)},
            {"train", to_json(r.train)},
            {"series", r.series},
            {"adj", r.adj},
            {"mask", r.mask},
            {"out", r.out},
            {"width", r.width},
            {"stride", r.stride},
            {"ratio", r.ratio},
            {"seed", r.seed},
            {"split", {r.split.train, r.split.valid, r.split.test}},
            {"knn_k", r.knn_k},
            {"jobs", r.jobs}};
}

inline RunConfig run_config_from_json(const Json& j, RunConfig r = {}) {
    const std::string where = "config";
    detail::reject_unknown_keys(j, {"model", "train", "series", "adj", "mask", "out", "width", "stride", "ratio", "seed",
                                    "split", "knn_k", "jobs"},
                                where);
    if (j.contains("model")) r.model = model_config_from_json(j.at("model"), r.model);
    if (j.contains("train")) r.train = train_config_from_json(j.at("train"), r.train);
    detail::read_key(j, "series", r.series, where);
    detail::read_key(j, "adj", r.adj, where);
    detail::read_key(j, "mask", r.mask, where);
    detail::read_key(j, "out", r.out, where);
    detail::read_key(j, "width", r.width, where);
    detail::read_key(j, "stride", r.stride, where);
    detail::read_key(j, "ratio", r.ratio, where);
    detail::read_key(j, "seed", r.seed, where);
    if (j.contains("split")) {
        std::vector<double> f;
        detail::read_key(j, "split", f, where);
        if (f.size() != 3) throw InputError("config.split must list train, valid and test fractions");
        r.split = {f[0], f[1], f[2]};
    }
    detail::read_key(j, "knn_k", r.knn_k, where);
    detail::read_key(j, "jobs", r.jobs, where);
    return r;
}

/// Parses JSON, skipping leading '#' comment lines.
inline Json parse_json_document(std::istream& in, const std::string& source) {
    std::string line, body;
    bool header = true;
    while (std::getline(in, line)) {
        if (header && !line.empty() && line[0] == '#') continue;
        header = false;
        body += line;
        body += '\n';
    }
    try {
        return Json::parse(body);
    } catch (const Json::parse_error& e) {
        throw InputError(source + ": " + e.what());
    }
}

inline Json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return parse_json_document(in, path);
}

inline RunConfig load_run_config(const std::string& path, RunConfig base = {}) {
    return run_config_from_json(load_json_file(path), std::move(base));
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kCheckpointFormat = "maginet-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    ModelConfig config;
    ModelDims dims;
    std::uint64_t seed = 0;
    Normalizer normalizer;
    ModelParams params;
};

inline Json checkpoint_to_json(const MagiNet& model, const Normalizer& norm, std::uint64_t seed) {
    Json params = Json::object();
    for (const auto& [name, t] : model.params().tensors()) {
        params[name] = {{"shape", t.shape()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
    }
    const auto& d = model.dims();
    return {{"format", kCheckpointFormat},
            {"version", kCheckpointVersion},
            {"config", to_json(model.config())},
            {"dims", {{"n_nodes", d.n_nodes}, {"width", d.width}, {"n_features", d.n_features}}},
            {"seed", seed},
            {"normalizer", {{"mean", norm.mean()}, {"std", norm.stddev()}}},
            {"params", params}};
}

inline Checkpoint checkpoint_from_json(const Json& j) {
    detail::reject_unknown_keys(j, {"format", "version", "config", "dims", "seed", "normalizer", "params"}, "checkpoint");
    if (j.value("format", std::string()) != kCheckpointFormat) throw InputError("not a maginet checkpoint");
    if (j.value("version", 0) != kCheckpointVersion) {
        throw InputError("unsupported checkpoint version " + j.value("version", Json()).dump());
    }
    Checkpoint c;
    try {
        c.config = model_config_from_json(j.at("config"));
        const Json& d = j.at("dims");
        c.dims = {d.at("n_nodes").get<std::size_t>(), d.at("width").get<std::size_t>(),
                  d.at("n_features").get<std::size_t>()};
        c.seed = j.at("seed").get<std::uint64_t>();
        c.normalizer = Normalizer(j.at("normalizer").at("mean").get<std::vector<double>>(),
                                  j.at("normalizer").at("std").get<std::vector<double>>());
        for (const auto& [name, entry] : j.at("params").items()) {
            Shape shape = entry.at("shape").get<Shape>();
            std::vector<double> data = entry.at("data").get<std::vector<double>>();
            if (data.size() != shape_numel(shape)) {
                throw InputError("checkpoint tensor '" + name + "' has " + std::to_string(data.size()) +
                                 " values for shape " + shape_str(shape));
            }
            c.params.set(name, Tensor::from_data(std::move(shape), std::move(data), true));
        }
    } catch (const Json::exception& e) {
        throw InputError(std::string("malformed checkpoint: ") + e.what());
    }
    return c;
}

inline void write_checkpoint(std::ostream& out, const MagiNet& model, const Normalizer& norm, std::uint64_t seed) {
    out << checkpoint_to_json(model, norm, seed).dump(1) << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) { return checkpoint_from_json(load_json_file(path)); }

/// Rebuilds the model for a dataset. Any parameter that is missing,
/// unexpected or misshaped for (config, dims) is reported by name.
inline MagiNet model_from_checkpoint(const Checkpoint& c, const TrafficGraph& graph, const ModelDims& data_dims) {
    if (!(c.dims == data_dims)) {
        throw InputError("checkpoint was trained for N=" + std::to_string(c.dims.n_nodes) + ", W=" +
                         std::to_string(c.dims.width) + ", C=" + std::to_string(c.dims.n_features) +
                         " but the data has N=" + std::to_string(data_dims.n_nodes) + ", W=" +
                         std::to_string(data_dims.width) + ", C=" + std::to_string(data_dims.n_features));
    }
    const auto bad = c.params.mismatches(param_specs(c.config, c.dims));
    if (!bad.empty()) {
        std::string names;
        for (const auto& b : bad) names += (names.empty() ? "" : ", ") + b;
        throw InputError("checkpoint tensors do not match the configuration: " + names);
    }
    if (graph.n_nodes() != c.dims.n_nodes) {
        throw InputError("adjacency has " + std::to_string(graph.n_nodes()) + " nodes, checkpoint expects " +
                         std::to_string(c.dims.n_nodes));
    }
    return MagiNet(c.config, c.dims, chebyshev_basis(graph, c.config.cheb_order), c.params);
}

}  // namespace maginet
