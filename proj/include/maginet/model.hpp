// SPDX-License-Identifier: Apache-2.0
//
// The MagiNet imputation network.
//
//   encoder:  H = select(M, X W_o + b_o, Z_u) + P_t
//   block l:  temporal attention over time with masked keys and residual
//             score chaining A^(l) = T_att + A^(l-1); node-level spatial
//             attention S_att; Chebyshev graph convolution weighted by
//             S_att; multi-scale gated temporal convolution.
//   head:     X^ = FC2(ReLU(FC1(sum_l H_out^(l))))
//
// Tensor layouts: x [N, W, C], hidden states [N, W, d], temporal scores
// [N, heads, W, W], spatial attention [heads, N, N].
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "maginet/data.hpp"
#include "maginet/graph.hpp"
#include "maginet/ops.hpp"
#include "maginet/rng.hpp"

namespace maginet {

enum class MaskMode { neg_inf, multiply };

enum class Ablation { no_amstenc, no_mastatt, no_graphconv, no_gtconv, no_mastdec, zero_prefill, mean_prefill };

struct ModelConfig {
    std::size_t d = 16;               // hidden size
    std::size_t heads = 3;            // attention heads m
    std::size_t d_head = 8;           // per-head size d_h
    std::size_t node_embed = 16;      // spatial node-embedding size F
    std::size_t cheb_order = 3;       // K
    std::vector<std::size_t> kernel_sizes{3, 5};
    std::size_t blocks = 2;           // L
    std::size_t collapse_kernel = 3;  // temporal collapse before spatial attention
    MaskMode mask_mode = MaskMode::neg_inf;
    std::set<Ablation> ablations;

    bool has(Ablation a) const { return ablations.count(a) != 0; }

    void validate() const {
        if (d < 1 || heads < 1 || d_head < 1 || node_embed < 1 || cheb_order < 1 || blocks < 1) {
            throw ContractError("model sizes d, heads, d_head, node_embed, cheb_order, blocks must all be >= 1");
        }
        if (kernel_sizes.empty()) throw ContractError("at least one temporal kernel size is required");
        for (auto k : kernel_sizes)
            if (k % 2 == 0) throw ContractError("temporal kernel sizes must be odd, got " + std::to_string(k));
        if (collapse_kernel % 2 == 0) throw ContractError("collapse kernel size must be odd");
        if (has(Ablation::zero_prefill) && has(Ablation::mean_prefill)) {
            throw ContractError("zero_prefill and mean_prefill are mutually exclusive");
        }
    }

    /// Attention (temporal + spatial) is computed only when it feeds the
    /// graph convolution.
    bool uses_attention() const { return !has(Ablation::no_graphconv) && !has(Ablation::no_mastatt); }
};

struct ModelDims {
    std::size_t n_nodes = 0;
    std::size_t width = 0;
    std::size_t n_features = 1;

    bool operator==(const ModelDims&) const = default;
};

enum class InitKind { weight, bias, embedding, gain };

struct ParamSpec {
    std::string name;
    Shape shape;
    InitKind init;
    std::size_t fan_in = 1;
};

inline std::string block_prefix(std::size_t l) { return "block" + std::to_string(l) + "."; }

/// Every learnable tensor for a configuration, in initialization order.
inline std::vector<ParamSpec> param_specs(const ModelConfig& cfg, const ModelDims& dims) {
    cfg.validate();
    const std::size_t d = cfg.d, n = dims.n_nodes, w = dims.width, c = dims.n_features;
    const std::size_t hd = cfg.heads * cfg.d_head;
    const std::size_t f = cfg.node_embed;
    std::vector<ParamSpec> specs;
    auto weight = [&](std::string name, Shape s, std::size_t fan_in) {
        specs.push_back({std::move(name), std::move(s), InitKind::weight, fan_in});
    };
    auto bias = [&](std::string name, std::size_t len) { specs.push_back({std::move(name), {len}, InitKind::bias, 1}); };
    auto embed = [&](std::string name, Shape s) { specs.push_back({std::move(name), std::move(s), InitKind::embedding, 1}); };
    auto gain = [&](std::string name, std::size_t len) { specs.push_back({std::move(name), {len}, InitKind::gain, 1}); };

    weight("enc.w_o", {c, d}, c);
    bias("enc.b_o", d);
    const bool prefill = cfg.has(Ablation::zero_prefill) || cfg.has(Ablation::mean_prefill) || cfg.has(Ablation::no_amstenc);
    if (!prefill) embed("enc.z_u", {n, w, d});
    if (!cfg.has(Ablation::no_amstenc)) embed("enc.p_t", {w, d});

    if (cfg.has(Ablation::no_mastdec)) {
        weight("head.lin_w", {d, c}, d);
        bias("head.lin_b", c);
        return specs;
    }
    for (std::size_t l = 0; l < cfg.blocks; ++l) {
        const std::string p = block_prefix(l);
        if (cfg.uses_attention()) {
            weight(p + "attn.w_q", {d, hd}, d);
            weight(p + "attn.w_k", {d, hd}, d);
            weight(p + "attn.w_v", {d, hd}, d);
            weight(p + "attn.w_c", {hd, d}, hd);
            bias(p + "attn.b_c", d);
            gain(p + "attn.ln_gain", d);
            bias(p + "attn.ln_bias", d);
            weight(p + "spatial.conv", {cfg.collapse_kernel, d, d}, cfg.collapse_kernel * d);
            bias(p + "spatial.conv_b", d);
            weight(p + "spatial.w_f", {d, f}, d);
            bias(p + "spatial.b_f", f);
            embed(p + "spatial.p_s", {n, f});
            weight(p + "spatial.w_q", {f, hd}, f);
            weight(p + "spatial.w_k", {f, hd}, f);
        }
        if (!cfg.has(Ablation::no_graphconv)) {
            for (std::size_t k = 0; k < cfg.cheb_order; ++k) weight(p + "gconv.theta" + std::to_string(k), {d, d}, d);
        }
        if (!cfg.has(Ablation::no_gtconv)) {
            for (std::size_t i = 0; i < cfg.kernel_sizes.size(); ++i) {
                const std::size_t k = cfg.kernel_sizes[i];
                weight(p + "tconv.gamma" + std::to_string(i), {k, d, 2 * d}, k * d);
                bias(p + "tconv.gamma" + std::to_string(i) + "_b", 2 * d);
            }
            const std::size_t kd = cfg.kernel_sizes.size() * d;
            weight(p + "tconv.merge_w", {kd, d}, kd);
            bias(p + "tconv.merge_b", d);
        }
        weight(p + "tconv.out_w", {2 * d, d}, 2 * d);
        bias(p + "tconv.out_b", d);
        gain(p + "tconv.ln_gain", d);
        bias(p + "tconv.ln_bias", d);
    }
    weight("head.w1", {d, d}, d);
    bias("head.b1", d);
    weight("head.w2", {d, c}, d);
    bias("head.b2", c);
    return specs;
}

/// Named learnable tensors. Copies share storage; use snapshot() for an
/// independent copy.
class ModelParams {
public:
    const Tensor& operator[](const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }
    Tensor& operator[](const std::string& name) {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    void set(const std::string& name, Tensor t) { tensors_[name] = std::move(t); }

    std::map<std::string, Tensor>& tensors() { return tensors_; }
    const std::map<std::string, Tensor>& tensors() const { return tensors_; }

    std::size_t scalar_count() const {
        std::size_t total = 0;
        for (const auto& [_, t] : tensors_) total += t.numel();
        return total;
    }

    void zero_grad() {
        for (auto& [_, t] : tensors_) t.zero_grad();
    }

    ModelParams snapshot() const {
        ModelParams out;
        for (const auto& [name, t] : tensors_) out.tensors_[name] = t.clone(true);
        return out;
    }

    /// Overwrites values in place from a structurally identical set.
    void assign_values(const ModelParams& other) {
        for (auto& [name, t] : tensors_) {
            const Tensor& src = other[name];
            std::copy(src.data().begin(), src.data().end(), t.mutable_data().begin());
        }
    }

    /// Names whose tensors are missing or shaped differently from specs,
    /// plus names not in specs.
    std::vector<std::string> mismatches(const std::vector<ParamSpec>& specs) const {
        std::vector<std::string> bad;
        std::set<std::string> expected;
        for (const auto& s : specs) {
            expected.insert(s.name);
            auto it = tensors_.find(s.name);
            if (it == tensors_.end() || it->second.shape() != s.shape) bad.push_back(s.name);
        }
        for (const auto& [name, _] : tensors_)
            if (!expected.count(name)) bad.push_back(name);
        return bad;
    }

private:
    std::map<std::string, Tensor> tensors_;
};

/// Weights uniform in ±1/sqrt(fan_in), biases zero, layer-norm gains one,
/// embeddings N(0, 0.02²).
inline ModelParams init_params(const ModelConfig& cfg, const ModelDims& dims, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 0.02);
    ModelParams params;
    for (const auto& spec : param_specs(cfg, dims)) {
        std::vector<double> v(shape_numel(spec.shape), 0.0);
        switch (spec.init) {
            case InitKind::weight: {
                const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
                std::uniform_real_distribution<double> u(-bound, bound);
                for (double& x : v) x = u(rng);
                break;
            }
            case InitKind::embedding:
                for (double& x : v) x = gauss(rng);
                break;
            case InitKind::gain:
                std::fill(v.begin(), v.end(), 1.0);
                break;
            case InitKind::bias:
                break;
        }
        params.set(spec.name, Tensor::from_data(spec.shape, std::move(v), true));
    }
    return params;
}

// ---------------------------------------------------------------------------
// Building blocks. Each takes the parameter set and the prefix of its block.

namespace detail {

/// Constant [N, W, d] copy of an [N, W] 0/1 mask.
inline Tensor broadcast_mask(const std::vector<double>& m, std::size_t n, std::size_t w, std::size_t d) {
    std::vector<double> out(n * w * d);
    for (std::size_t p = 0; p < n * w; ++p) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(p * d), d, m[p]);
    return Tensor::from_data({n, w, d}, std::move(out));
}

inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

}  // namespace detail

/// Per-node observed means of a window's features; nodes without
/// observations take the window-global observed mean (0 if none).
inline std::vector<double> mean_prefilled(const std::vector<double>& x, const std::vector<double>& m, std::size_t n,
                                          std::size_t w, std::size_t c) {
    std::vector<double> out = x;
    std::vector<double> global(c, 0.0);
    std::size_t global_count = 0;
    for (std::size_t p = 0; p < n * w; ++p) {
        if (m[p] == 0.0) continue;
        ++global_count;
        for (std::size_t f = 0; f < c; ++f) global[f] += x[p * c + f];
    }
    for (double& g : global) g = global_count ? g / static_cast<double>(global_count) : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> node_mean(c, 0.0);
        std::size_t count = 0;
        for (std::size_t t = 0; t < w; ++t) {
            if (m[i * w + t] == 0.0) continue;
            ++count;
            for (std::size_t f = 0; f < c; ++f) node_mean[f] += x[(i * w + t) * c + f];
        }
        for (std::size_t f = 0; f < c; ++f) node_mean[f] = count ? node_mean[f] / static_cast<double>(count) : global[f];
        for (std::size_t t = 0; t < w; ++t) {
            if (m[i * w + t] != 0.0) continue;
            for (std::size_t f = 0; f < c; ++f) out[(i * w + t) * c + f] = node_mean[f];
        }
    }
    return out;
}

/// Adaptive mask encoder. Observed positions are embedded linearly,
/// missing positions take the learnable missing embedding Z_u, and the
/// learnable temporal positional embedding P_t is added. Values of x at
/// m = 0 are never read.
inline Tensor amst_encode(const std::vector<double>& x, const std::vector<double>& m, const ModelDims& dims,
                          const ModelParams& params, const ModelConfig& cfg) {
    const std::size_t n = dims.n_nodes, w = dims.width, c = dims.n_features, d = cfg.d;
    if (x.size() != n * w * c || m.size() != n * w) throw DimensionError("amst_encode: window does not match model dims");
    std::vector<double> clean(x.size(), 0.0);
    for (std::size_t p = 0; p < n * w; ++p) {
        if (m[p] == 0.0) continue;
        for (std::size_t f = 0; f < c; ++f) {
            const double v = x[p * c + f];
            if (std::isnan(v)) {
                throw InputError("NaN at observed position (node " + std::to_string(p / w) + ", step " +
                                 std::to_string(p % w) + ")");
            }
            clean[p * c + f] = v;
        }
    }
    if (cfg.has(Ablation::mean_prefill)) clean = mean_prefilled(clean, m, n, w, c);

    const Tensor xt = Tensor::from_data({n, w, c}, std::move(clean));
    Tensor xo = detail::affine(xt, params["enc.w_o"], params["enc.b_o"]);
    if (cfg.has(Ablation::no_amstenc)) return xo;
    if (!(cfg.has(Ablation::zero_prefill) || cfg.has(Ablation::mean_prefill))) {
        xo = where(detail::broadcast_mask(m, n, w, d), xo, params["enc.z_u"]);
    }
    return add(xo, params["enc.p_t"]);
}

struct TemporalAttentionResult {
    Tensor h_matt;   // [N, W, d]
    Tensor scores;   // A^(l), [N, heads, W, W], before masking
    Tensor weights;  // softmax weights after masking
};

/// Mask-aware multi-head temporal self-attention with residual score
/// chaining. prev_scores is A^(l-1) (undefined for the first block).
inline TemporalAttentionResult mast_temporal_attention(const Tensor& h, const std::vector<double>& m,
                                                       const Tensor& prev_scores, const ModelParams& params,
                                                       const ModelConfig& cfg, const std::string& prefix) {
    const std::size_t n = h.dim(0), w = h.dim(1);
    const std::size_t heads = cfg.heads, dh = cfg.d_head;
    auto split_heads = [&](const Tensor& t) { return permute(reshape(t, {n, w, heads, dh}), {0, 2, 1, 3}); };
    const Tensor q = split_heads(matmul(h, params[prefix + "attn.w_q"]));
    const Tensor k = split_heads(matmul(h, params[prefix + "attn.w_k"]));
    const Tensor v = split_heads(matmul(h, params[prefix + "attn.w_v"]));

    const Tensor t_att = scale(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
    const Tensor a = prev_scores.defined() ? add(t_att, prev_scores) : t_att;

    // Key j of node i is masked for every head and query when m[i, j] = 0.
    std::vector<double> key_mask(n * heads * w * w);
    const bool neg_inf = cfg.mask_mode == MaskMode::neg_inf;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t hh = 0; hh < heads; ++hh)
            for (std::size_t qi = 0; qi < w; ++qi)
                for (std::size_t kj = 0; kj < w; ++kj) {
                    const bool observed = m[i * w + kj] != 0.0;
                    key_mask[((i * heads + hh) * w + qi) * w + kj] =
                        neg_inf ? (observed ? 0.0 : -std::numeric_limits<double>::infinity()) : (observed ? 1.0 : 0.0);
                }
    const Tensor mask_t = Tensor::from_data({n, heads, w, w}, std::move(key_mask));
    const Tensor weights = softmax_lastdim(neg_inf ? add(a, mask_t) : mul(a, mask_t));

    const Tensor context = reshape(permute(matmul(weights, v), {0, 2, 1, 3}), {n, w, heads * dh});
    const Tensor projected = detail::affine(context, params[prefix + "attn.w_c"], params[prefix + "attn.b_c"]);
    Tensor h_matt = layer_norm(add(projected, h), params[prefix + "attn.ln_gain"], params[prefix + "attn.ln_bias"]);
    return {std::move(h_matt), a, weights};
}

/// Row-softmax attention between node embeddings: one [N, N] map per head.
inline Tensor spatial_attention_from_embedding(const Tensor& node_embedding, const Tensor& w_q, const Tensor& w_k,
                                               std::size_t heads, std::size_t dh) {
    const std::size_t n = node_embedding.dim(0);
    auto split_heads = [&](const Tensor& t) { return permute(reshape(t, {n, heads, dh}), {1, 0, 2}); };
    const Tensor q = split_heads(matmul(node_embedding, w_q));
    const Tensor k = split_heads(matmul(node_embedding, w_k));
    return softmax_lastdim(scale(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(dh))));
}

/// Node embedding H'_matt [N, F]: temporal conv, mean over steps, linear
/// map to F, plus the spatial positional embedding.
inline Tensor collapse_time(const Tensor& h_matt, const ModelParams& params, const std::string& prefix) {
    const Tensor conv = add(conv1d_time(h_matt, params[prefix + "spatial.conv"], Padding::same_zero),
                            params[prefix + "spatial.conv_b"]);
    const Tensor pooled = mean_axis(conv, 1);
    const Tensor projected = detail::affine(pooled, params[prefix + "spatial.w_f"], params[prefix + "spatial.b_f"]);
    return add(projected, params[prefix + "spatial.p_s"]);
}

/// Spatial attention S_att [heads, N, N].
inline Tensor spatial_attention(const Tensor& h_matt, const ModelParams& params, const ModelConfig& cfg,
                                const std::string& prefix) {
    return spatial_attention_from_embedding(collapse_time(h_matt, params, prefix), params[prefix + "spatial.w_q"],
                                            params[prefix + "spatial.w_k"], cfg.heads, cfg.d_head);
}

/// E_t = sum_k (T_k ⊙ S_att^(k mod heads)) H_t Θ_k for every step t.
inline Tensor graph_conv(const Tensor& h, const Tensor& s_att, const ChebyshevBasis& basis,
                         const std::vector<Tensor>& thetas) {
    if (thetas.empty()) throw ContractError("graph_conv: Chebyshev order must be at least 1");
    if (thetas.size() > basis.order) throw ContractError("graph_conv: more Chebyshev weights than basis terms");
    const std::size_t n = h.dim(0);
    const std::size_t heads = s_att.dim(0);
    if (s_att.dim(1) != n || s_att.dim(2) != n || basis.matrices.front().n != n) {
        throw DimensionError("graph_conv: node counts of H " + shape_str(h.shape()) + ", S_att " +
                             shape_str(s_att.shape()) + " and basis disagree");
    }
    const Tensor by_step = permute(h, {1, 0, 2});  // [W, N, d]
    Tensor total;
    for (std::size_t k = 0; k < thetas.size(); ++k) {
        const Tensor head = reshape(slice(s_att, 0, k % heads, 1), {n, n});
        const Tensor weighted = mul(head, basis.tensors[k]);
        const Tensor term = matmul(matmul(weighted, by_step), thetas[k]);
        total = total.defined() ? add(total, term) : term;
    }
    return permute(total, {1, 0, 2});
}

struct GatedConvResult {
    Tensor e_out;  // ReLU(merge(gated branches) + E)
    Tensor h_out;  // LN(proj(ReLU(E_out || H)))
};

/// Multi-scale gated temporal convolution followed by the residual merge
/// with the block input.
inline GatedConvResult gated_temporal_conv(const Tensor& e, const Tensor& h, const ModelParams& params,
                                           const ModelConfig& cfg, const std::string& prefix) {
    const std::size_t d = cfg.d;
    const std::size_t w = e.dim(1);
    std::vector<Tensor> branches;
    for (std::size_t i = 0; i < cfg.kernel_sizes.size(); ++i) {
        if (cfg.kernel_sizes[i] > w) {
            throw DimensionError("gated_temporal_conv: kernel size " + std::to_string(cfg.kernel_sizes[i]) +
                                 " exceeds window width " + std::to_string(w));
        }
        const std::string g = prefix + "tconv.gamma" + std::to_string(i);
        const Tensor pre = add(conv1d_time(e, params[g], Padding::same_zero), params[g + "_b"]);
        branches.push_back(mul(tanh(slice(pre, 2, 0, d)), sigmoid(slice(pre, 2, d, d))));
    }
    const Tensor merged =
        detail::affine(concat(branches, 2), params[prefix + "tconv.merge_w"], params[prefix + "tconv.merge_b"]);
    Tensor e_out = relu(add(merged, e));
    const Tensor joined = relu(concat({e_out, h}, 2));
    Tensor h_out = layer_norm(detail::affine(joined, params[prefix + "tconv.out_w"], params[prefix + "tconv.out_b"]),
                              params[prefix + "tconv.ln_gain"], params[prefix + "tconv.ln_bias"]);
    return {std::move(e_out), std::move(h_out)};
}

/// Intermediate tensors of one forward pass, for inspection in tests and
/// diagnostics.
struct BlockTrace {
    Tensor scores;            // A^(l)
    Tensor temporal_weights;  // masked softmax weights
    Tensor h_matt;
    Tensor spatial;           // S_att
    Tensor e;                 // graph convolution output
    Tensor h_out;
};

struct ForwardTrace {
    Tensor h;  // encoder output
    std::vector<BlockTrace> blocks;
};

/// Full network: configuration, graph basis and parameters.
class MagiNet {
public:
    MagiNet(ModelConfig cfg, ModelDims dims, const TrafficGraph& graph, std::uint64_t seed)
        : MagiNet(cfg, dims, chebyshev_basis(graph, cfg.cheb_order), init_params(cfg, dims, seed)) {}

    MagiNet(ModelConfig cfg, ModelDims dims, ChebyshevBasis basis, ModelParams params)
        : cfg_(std::move(cfg)), dims_(dims), basis_(std::move(basis)), params_(std::move(params)) {
        cfg_.validate();
        if (basis_.matrices.empty() || basis_.matrices.front().n != dims_.n_nodes) {
            throw InputError("graph has " + std::to_string(basis_.matrices.empty() ? 0 : basis_.matrices.front().n) +
                             " nodes but the data has " + std::to_string(dims_.n_nodes));
        }
        if (basis_.order < cfg_.cheb_order) throw ContractError("Chebyshev basis order below configured order");
        const auto bad = params_.mismatches(param_specs(cfg_, dims_));
        if (!bad.empty()) {
            std::string names;
            for (const auto& b : bad) names += (names.empty() ? "" : ", ") + b;
            throw ContractError("parameters do not match configuration: " + names);
        }
    }

    const ModelConfig& config() const { return cfg_; }
    const ModelDims& dims() const { return dims_; }
    const ChebyshevBasis& basis() const { return basis_; }
    ModelParams& params() { return params_; }
    const ModelParams& params() const { return params_; }

    /// X^ [N, W, C] for one window (in the units of its x).
    Tensor forward(const IncompleteWindow& window, ForwardTrace* trace = nullptr) const {
        if (window.n_nodes != dims_.n_nodes || window.width != dims_.width || window.n_features != dims_.n_features) {
            throw ContractError("window geometry does not match the model");
        }
        return forward(window.x, window.m, trace);
    }

    Tensor forward(const std::vector<double>& x, const std::vector<double>& m, ForwardTrace* trace = nullptr) const {
        const ModelParams& p = params_;
        const Tensor h = amst_encode(x, m, dims_, p, cfg_);
        if (trace) trace->h = h;
        if (cfg_.has(Ablation::no_mastdec)) return detail::affine(h, p["head.lin_w"], p["head.lin_b"]);

        const std::size_t n = dims_.n_nodes;
        Tensor current = h;
        Tensor prev_scores;
        Tensor block_sum;
        for (std::size_t l = 0; l < cfg_.blocks; ++l) {
            const std::string prefix = block_prefix(l);
            BlockTrace bt;
            Tensor e = current;
            if (!cfg_.has(Ablation::no_graphconv)) {
                Tensor s_att;
                if (cfg_.uses_attention()) {
                    auto att = mast_temporal_attention(current, m, prev_scores, p, cfg_, prefix);
                    prev_scores = att.scores;
                    s_att = spatial_attention(att.h_matt, p, cfg_, prefix);
                    bt.scores = att.scores;
                    bt.temporal_weights = att.weights;
                    bt.h_matt = att.h_matt;
                } else {
                    s_att = Tensor::full({cfg_.heads, n, n}, 1.0 / static_cast<double>(n));
                }
                bt.spatial = s_att;
                std::vector<Tensor> thetas;
                for (std::size_t k = 0; k < cfg_.cheb_order; ++k) thetas.push_back(p[prefix + "gconv.theta" + std::to_string(k)]);
                e = graph_conv(current, s_att, basis_, thetas);
            }
            bt.e = e;
            Tensor h_out;
            if (cfg_.has(Ablation::no_gtconv)) {
                const Tensor joined = relu(concat({e, current}, 2));
                h_out = layer_norm(detail::affine(joined, p[prefix + "tconv.out_w"], p[prefix + "tconv.out_b"]),
                                   p[prefix + "tconv.ln_gain"], p[prefix + "tconv.ln_bias"]);
            } else {
                h_out = gated_temporal_conv(e, current, p, cfg_, prefix).h_out;
            }
            bt.h_out = h_out;
            block_sum = block_sum.defined() ? add(block_sum, h_out) : h_out;
            current = h_out;
            if (trace) trace->blocks.push_back(std::move(bt));
        }
        const Tensor hidden = relu(detail::affine(block_sum, p["head.w1"], p["head.b1"]));
        return detail::affine(hidden, p["head.w2"], p["head.b2"]);
    }

private:
    ModelConfig cfg_;
    ModelDims dims_;
    ChebyshevBasis basis_;
    ModelParams params_;
};

}  // namespace maginet
