// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "maginet/errors.hpp"

namespace maginet {

/// Ground-truth magnitudes below this are left out of MAPE.
inline constexpr double kMapeMinMagnitude = 1e-6;

/// Running sums for RMSE and MAPE over selected entries, so that several
/// windows can be scored as one population.
class MetricAccumulator {
public:
    void add(double predicted, double truth) {
        const double err = predicted - truth;
        squared_ += err * err;
        ++count_;
        if (std::fabs(truth) >= kMapeMinMagnitude) {
            pct_ += std::fabs(err / truth);
            ++pct_count_;
        }
    }

    void add(std::span<const double> predicted, std::span<const double> truth, std::span<const double> mask) {
        if (predicted.size() != truth.size() || truth.size() != mask.size()) {
            throw DimensionError("metric inputs must have equal lengths");
        }
        for (std::size_t i = 0; i < truth.size(); ++i)
            if (mask[i] != 0.0) add(predicted[i], truth[i]);
    }

    std::size_t count() const { return count_; }

    double rmse() const {
        if (count_ == 0) throw EmptySelectionError("RMSE over an empty mask");
        return std::sqrt(squared_ / static_cast<double>(count_));
    }

    /// Percent.
    double mape() const {
        if (pct_count_ == 0) throw EmptySelectionError("MAPE over an empty mask");
        return 100.0 * pct_ / static_cast<double>(pct_count_);
    }

private:
    double squared_ = 0.0;
    double pct_ = 0.0;
    std::size_t count_ = 0;
    std::size_t pct_count_ = 0;
};

inline double rmse(std::span<const double> predicted, std::span<const double> truth, std::span<const double> mask) {
    MetricAccumulator acc;
    acc.add(predicted, truth, mask);
    return acc.rmse();
}

inline double mape(std::span<const double> predicted, std::span<const double> truth, std::span<const double> mask) {
    MetricAccumulator acc;
    acc.add(predicted, truth, mask);
    return acc.mape();
}

/// Expands an [N, W] position mask over C features.
inline std::vector<double> expand_mask(std::span<const double> position_mask, std::size_t n_features) {
    std::vector<double> out;
    out.reserve(position_mask.size() * n_features);
    for (double v : position_mask)
        for (std::size_t c = 0; c < n_features; ++c) out.push_back(v);
    return out;
}

}  // namespace maginet
