// SPDX-License-Identifier: Apache-2.0
//
// Masked L1 objective, Adam, and the epoch loop with validation-based
// checkpoint selection and early stopping.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "maginet/data.hpp"
#include "maginet/metrics.hpp"
#include "maginet/model.hpp"
#include "maginet/ops.hpp"
#include "maginet/rng.hpp"

namespace maginet {

/// Sum of |x^ - x~| over held-out positions and all features, as a
/// differentiable scalar, together with the number of terms.
struct MaskedL1Sum {
    Tensor sum;
    std::size_t terms = 0;
};

inline MaskedL1Sum masked_l1_sum(const Tensor& prediction, const std::vector<double>& ground_truth,
                                 const std::vector<double>& eval_mask) {
    const std::size_t total = prediction.numel();
    if (ground_truth.size() != total || eval_mask.empty() || total % eval_mask.size() != 0) {
        throw DimensionError("masked_l1: prediction " + shape_str(prediction.shape()) +
                             " does not match ground truth / mask sizes");
    }
    const std::size_t c = total / eval_mask.size();
    const Tensor selector = Tensor::from_data(prediction.shape(), expand_mask(eval_mask, c));
    const Tensor truth = Tensor::from_data(prediction.shape(), ground_truth);
    const Tensor diffs = masked_select(sub(prediction, truth), selector);
    return {sum(abs(diffs)), diffs.numel()};
}

/// Global masked mean absolute error: one normalization by the total number
/// of held-out terms.
inline Tensor masked_l1_loss(const Tensor& prediction, const std::vector<double>& ground_truth,
                             const std::vector<double>& eval_mask) {
    auto s = masked_l1_sum(prediction, ground_truth, eval_mask);
    if (s.terms == 0) throw EmptySelectionError("masked_l1_loss: evaluation mask selects nothing");
    return scale(s.sum, 1.0 / static_cast<double>(s.terms));
}

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam over a ModelParams set.
class Adam {
public:
    explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

    std::uint64_t steps() const { return step_; }

    /// Applies one update from the accumulated gradients, then zeroes them.
    /// clip_norm > 0 rescales the gradient to that global L2 norm first.
    void step(ModelParams& params, double lr, double clip_norm = 0.0) {
        double norm_sq = 0.0;
        for (const auto& [name, t] : params.tensors()) {
            if (t.grad().size() != t.numel()) throw ContractError("parameter '" + name + "' has no gradient buffer");
            for (double g : t.grad()) {
                if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
                norm_sq += g * g;
            }
        }
        double factor = 1.0;
        if (clip_norm > 0.0 && norm_sq > clip_norm * clip_norm) factor = clip_norm / std::sqrt(norm_sq);

        ++step_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
        for (auto& [name, t] : params.tensors()) {
            auto& m = first_[name];
            auto& v = second_[name];
            if (m.size() != t.numel()) {
                m.assign(t.numel(), 0.0);
                v.assign(t.numel(), 0.0);
            }
            auto data = t.mutable_data();
            auto grad = t.grad();
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double g = grad[i] * factor;
                m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
                v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g * g;
                const double m_hat = m[i] / bc1;
                const double v_hat = v[i] / bc2;
                data[i] -= lr * m_hat / (std::sqrt(v_hat) + opts_.eps);
            }
            t.zero_grad();
        }
    }

private:
    AdamOptions opts_;
    std::uint64_t step_ = 0;
    std::map<std::string, std::vector<double>> first_;
    std::map<std::string, std::vector<double>> second_;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t epochs = 200;
    std::size_t batch_size = 8;
    std::size_t patience = 20;
    std::uint64_t seed = 1;
    double clip_norm = 0.0;  // 0 disables clipping

    void validate() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
            throw ContractError("learning rate must be finite and nonnegative");
        }
        if (epochs < 1) throw ContractError("epochs must be at least 1");
        if (batch_size < 1) throw ContractError("batch size must be at least 1");
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_rmse = 0.0;
    double val_mape = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_rmse = std::numeric_limits<double>::infinity();
    double best_val_mape = std::numeric_limits<double>::infinity();
    bool diverged = false;
    std::string divergence_reason;
};

/// Model output for a raw window, mapped back to original units.
inline std::vector<double> predict_window(const MagiNet& model, const Normalizer& norm, const IncompleteWindow& raw) {
    NoGradGuard no_grad;
    const IncompleteWindow w = norm.apply(raw);
    const Tensor out = model.forward(w);
    std::vector<double> values(out.data().begin(), out.data().end());
    const std::size_t c = raw.n_features;
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = norm.inverse(values[i], i % c);
    return values;
}

/// RMSE/MAPE over the held-out positions of a set of windows, in original units.
inline MetricAccumulator score_model(const MagiNet& model, const Normalizer& norm,
                                     const std::vector<IncompleteWindow>& windows) {
    MetricAccumulator acc;
    for (const auto& w : windows) {
        const auto pred = predict_window(model, norm, w);
        acc.add(pred, w.ground_truth, expand_mask(w.eval_mask, w.n_features));
    }
    return acc;
}

/// Trains in place. On return the model holds the parameters of the best
/// validation epoch. A non-finite loss or gradient stops training and keeps
/// the last good parameters.
inline TrainResult train(MagiNet& model, const Normalizer& norm, const std::vector<IncompleteWindow>& train_windows,
                         const std::vector<IncompleteWindow>& valid_windows, const TrainConfig& cfg,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    cfg.validate();
    if (train_windows.empty() || valid_windows.empty()) {
        throw ContractError("training needs nonempty train and validation splits");
    }
    std::vector<IncompleteWindow> normalized;
    normalized.reserve(train_windows.size());
    for (const auto& w : train_windows) normalized.push_back(norm.apply(w));

    TrainResult result;
    Adam adam;
    ModelParams& params = model.params();
    ModelParams best = params.snapshot();
    params.zero_grad();
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(normalized.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        shuffle(order, rng);

        double loss_sum = 0.0;
        std::size_t loss_terms = 0;
        try {
            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
                std::size_t batch_terms = 0;
                for (std::size_t b = start; b < stop; ++b) {
                    batch_terms += normalized[order[b]].held_out_count() * normalized[order[b]].n_features;
                }
                if (batch_terms == 0) continue;  // nothing held out in this batch
                for (std::size_t b = start; b < stop; ++b) {
                    const auto& w = normalized[order[b]];
                    if (w.held_out_count() == 0) continue;
                    auto s = masked_l1_sum(model.forward(w), w.ground_truth, w.eval_mask);
                    const double value = s.sum.item();
                    if (!std::isfinite(value)) throw NumericError("training loss is not finite");
                    loss_sum += value;
                    loss_terms += s.terms;
                    backward(scale(s.sum, 1.0 / static_cast<double>(batch_terms)));
                }
                adam.step(params, cfg.learning_rate, cfg.clip_norm);
            }
        } catch (const NumericError& e) {
            result.diverged = true;
            result.divergence_reason = e.what();
            break;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_terms ? loss_sum / static_cast<double>(loss_terms) : 0.0;
        const auto val = score_model(model, norm, valid_windows);
        rec.val_rmse = val.rmse();
        rec.val_mape = val.mape();
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (!std::isfinite(rec.val_rmse)) {
            result.diverged = true;
            result.divergence_reason = "validation RMSE is not finite";
            break;
        }
        if (rec.val_rmse < result.best_val_rmse) {
            result.best_val_rmse = rec.val_rmse;
            result.best_val_mape = rec.val_mape;
            result.best_epoch = epoch;
            best = params.snapshot();
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    params.assign_values(best);
    params.zero_grad();
    return result;
}

inline void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
    out << "epoch,train_loss,val_rmse,val_mape\n";
    out.precision(17);
    for (const auto& r : history) out << r.epoch << ',' << r.train_loss << ',' << r.val_rmse << ',' << r.val_mape << '\n';
}

}  // namespace maginet
