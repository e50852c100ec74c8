// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "maginet/data.hpp"

using namespace maginet;

namespace {

SeriesMatrix ramp(std::size_t nodes, std::size_t steps) {
    SeriesMatrix s(nodes, steps, 1);
    for (std::size_t i = 0; i < nodes; ++i)
        for (std::size_t t = 0; t < steps; ++t) s.at(i, t) = 10.0 * static_cast<double>(i) + static_cast<double>(t) + 1.0;
    return s;
}

EvalMask empty_mask(const SeriesMatrix& s) {
    return EvalMask{s.n_nodes, s.n_steps, 0, 0.0, std::vector<std::uint8_t>(s.n_nodes * s.n_steps, 0)};
}

std::size_t zeros(const std::vector<std::uint8_t>& v) { return static_cast<std::size_t>(std::count(v.begin(), v.end(), 0)); }

}  // namespace

TEST(McarMask, ExtremeRatios) {
    EXPECT_EQ(zeros(mcar_mask(100, 0.0, 3)), 0u);
    EXPECT_EQ(zeros(mcar_mask(100, 1.0, 3)), 100u);
}

TEST(McarMask, ExactCountAndRepeatable) {
    const auto a = mcar_mask(1000, 0.5, 42);
    EXPECT_EQ(zeros(a), 500u);
    EXPECT_EQ(a, mcar_mask(1000, 0.5, 42));
    EXPECT_NE(a, mcar_mask(1000, 0.5, 43));
}

TEST(McarMask, FloorOfFractionalCount) {
    EXPECT_EQ(zeros(mcar_mask(10, 0.25, 1)), 2u);
    EXPECT_EQ(zeros(mcar_mask(10, 0.7, 1)), 7u);
    EXPECT_EQ(zeros(mcar_mask(0, 0.5, 1)), 0u);
}

TEST(McarMask, RatioOutsideUnitIntervalRejected) {
    EXPECT_THROW(mcar_mask(10, -0.1, 1), ContractError);
    EXPECT_THROW(mcar_mask(10, 1.5, 1), ContractError);
}

TEST(EvalMaskTest, OnlyNativelyObservedPositionsHeldOut) {
    SeriesMatrix s = ramp(3, 20);
    for (std::size_t t = 0; t < 20; t += 2) s.at(1, t) = kMissing;
    const auto mask = make_eval_mask(s, 1.0, 5);
    EXPECT_EQ(mask.count(), 50u);
    for (std::size_t t = 0; t < 20; ++t) EXPECT_EQ(mask.at(1, t), t % 2 ? 1 : 0);
    EXPECT_NO_THROW(check_mask_against_series(mask, s));
}

TEST(Windows, StrideTwelveOverTwentyFourSteps) {
    const auto s = ramp(2, 24);
    const auto w = make_windows(s, empty_mask(s), 12, 12);
    ASSERT_EQ(w.size(), 2u);
    EXPECT_EQ(w[0].window_start, 0u);
    EXPECT_EQ(w[1].window_start, 12u);
}

TEST(Windows, TrailingPartialWindowDropped) {
    const auto s = ramp(2, 25);
    EXPECT_EQ(make_windows(s, empty_mask(s), 12, 12).size(), 2u);
}

TEST(Windows, WidthEqualToLengthGivesOneWindow) {
    const auto s = ramp(2, 12);
    EXPECT_EQ(make_windows(s, empty_mask(s), 12, 12).size(), 1u);
}

TEST(Windows, WidthBeyondLengthRejected) {
    const auto s = ramp(2, 10);
    EXPECT_THROW(make_windows(s, empty_mask(s), 12, 12), InputError);
    EXPECT_THROW(make_windows(s, empty_mask(s), 5, 0), ContractError);
}

TEST(Windows, MasksAndValues) {
    SeriesMatrix s = ramp(2, 4);
    s.at(0, 1) = kMissing;
    EvalMask mask = empty_mask(s);
    mask.held_out[1 * 4 + 2] = 1;  // node 1, step 2
    const auto w = make_windows(s, mask, 4, 4).front();
    // Native gap: unobserved, not scored.
    EXPECT_EQ(w.m[w.pos(0, 1)], 0.0);
    EXPECT_EQ(w.eval_mask[w.pos(0, 1)], 0.0);
    EXPECT_EQ(w.x[w.pos(0, 1)], 0.0);
    // Held out: hidden from the model, truth kept.
    EXPECT_EQ(w.m[w.pos(1, 2)], 0.0);
    EXPECT_EQ(w.eval_mask[w.pos(1, 2)], 1.0);
    EXPECT_EQ(w.x[w.pos(1, 2)], 0.0);
    EXPECT_EQ(w.ground_truth[w.pos(1, 2)], 13.0);
    EXPECT_EQ(w.x[w.pos(1, 3)], 14.0);
    EXPECT_EQ(w.held_out_count(), 1u);
}

TEST(Split, SeventyTwentyTen) {
    std::vector<IncompleteWindow> w(10);
    for (std::size_t i = 0; i < 10; ++i) w[i].window_start = i;
    const auto s = split_windows(w, {0.7, 0.2, 0.1});
    EXPECT_EQ(s.train.size(), 7u);
    EXPECT_EQ(s.valid.size(), 2u);
    EXPECT_EQ(s.test.size(), 1u);
    EXPECT_EQ(s.valid.front().window_start, 7u);
    EXPECT_EQ(s.test.front().window_start, 9u);
}

TEST(Split, SixtyTwentyTwenty) {
    const auto s = split_windows(std::vector<IncompleteWindow>(10), {0.6, 0.2, 0.2});
    EXPECT_EQ(s.train.size(), 6u);
    EXPECT_EQ(s.valid.size(), 2u);
    EXPECT_EQ(s.test.size(), 2u);
}

TEST(Split, SingleWindowAllTrain) {
    const auto s = split_windows(std::vector<IncompleteWindow>(1), {1.0, 0.0, 0.0});
    EXPECT_EQ(s.train.size(), 1u);
    EXPECT_TRUE(s.valid.empty());
    EXPECT_TRUE(s.test.empty());
}

TEST(Split, OverlappingWindowsNeverCrossBoundaries) {
    SeriesMatrix s(1, 100, 1, 1.0);
    const auto windows = make_windows(s, make_eval_mask(s, 0.5, 1), 8, 2);  // 47 windows
    const auto sp = split_windows(windows, {0.6, 0.2, 0.2});
    ASSERT_FALSE(sp.train.empty());
    ASSERT_FALSE(sp.valid.empty());
    ASSERT_FALSE(sp.test.empty());
    const std::size_t valid_start = sp.valid.front().window_start;
    const std::size_t test_start = sp.test.front().window_start;
    for (const auto& w : sp.train) EXPECT_LE(w.window_start + w.width, valid_start);
    for (const auto& w : sp.valid) EXPECT_LE(w.window_start + w.width, test_start);
    EXPECT_EQ(sp.test.size(), 9u);  // floor(0.2 * 47); test keeps all of its windows
}

TEST(Split, NegativeFractionRejected) {
    EXPECT_THROW(split_windows(std::vector<IncompleteWindow>(3), {1.2, -0.2, 0.0}), ContractError);
}

TEST(NormalizerTest, FitsObservedEntriesOnly) {
    SeriesMatrix s(1, 4, 1);
    s.values = {1.0, 3.0, 1000.0, kMissing};
    EvalMask mask = empty_mask(s);
    mask.held_out[2] = 1;
    const auto w = make_windows(s, mask, 4, 4);
    const auto n = Normalizer::fit(w);
    EXPECT_DOUBLE_EQ(n.mean()[0], 2.0);
    EXPECT_DOUBLE_EQ(n.stddev()[0], 1.0);
    const auto z = n.apply(w.front());
    EXPECT_DOUBLE_EQ(z.x[0], -1.0);
    EXPECT_DOUBLE_EQ(z.x[1], 1.0);
    EXPECT_EQ(z.x[2], 0.0);
    EXPECT_DOUBLE_EQ(z.ground_truth[2], 998.0);
    EXPECT_DOUBLE_EQ(n.inverse(n.normalize(17.5, 0), 0), 17.5);
}

TEST(NormalizerTest, ConstantFeatureClampsStd) {
    SeriesMatrix s(2, 3, 1, 5.0);
    const auto n = Normalizer::fit(make_windows(s, empty_mask(s), 3, 3));
    EXPECT_EQ(n.stddev()[0], Normalizer::kMinStd);
}

TEST(Synthetic, NoiselessEdgelessIsPureSinusoid) {
    SyntheticOptions opts;
    opts.noise_fraction = 0.0;
    opts.phases = {0.0, 1.0, 2.0};
    const auto s = generate_synthetic(3, 50, TrafficGraph::edgeless(3), 9, opts);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t t = 0; t < 50; ++t) {
            const double expected =
                opts.offset + opts.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / opts.period +
                                                        opts.phases[i]);
            EXPECT_NEAR(s.at(i, t), expected, 1e-12);
        }
}

TEST(Synthetic, IdenticalPhaseConnectedNodesMatch) {
    DenseMatrix a(2);
    a(0, 1) = a(1, 0) = 1.0;
    SyntheticOptions opts;
    opts.noise_fraction = 0.0;
    opts.phases = {0.4, 0.4};
    const auto s = generate_synthetic(2, 100, TrafficGraph(a), 1, opts);
    for (std::size_t t = 0; t < 100; ++t) EXPECT_EQ(s.at(0, t), s.at(1, t));
}

TEST(Synthetic, SeedDeterminesOutput) {
    const auto g = corridor_graph(6, 0.2, 3);
    const auto a = generate_synthetic(6, 300, g, 11);
    EXPECT_EQ(a.values, generate_synthetic(6, 300, g, 11).values);
    EXPECT_NE(a.values, generate_synthetic(6, 300, g, 12).values);
    for (double v : a.values) EXPECT_GT(v, 0.0);
}

TEST(SeriesCsv, EmptyCellIsMissing) {
    std::istringstream in("node0_f0,node1_f0\n1.5,\n,2\n");
    const auto s = parse_series_csv(in);
    EXPECT_EQ(s.n_nodes, 2u);
    EXPECT_EQ(s.n_steps, 2u);
    EXPECT_EQ(s.at(0, 0), 1.5);
    EXPECT_TRUE(std::isnan(s.at(1, 0)));
    EXPECT_TRUE(std::isnan(s.at(0, 1)));
    EXPECT_EQ(s.at(1, 1), 2.0);
}

TEST(SeriesCsv, RoundTripIsIdentity) {
    SeriesMatrix s(2, 2, 1);
    s.values = {0.1, kMissing, 1.0 / 3.0, 2e-300};
    std::stringstream ss;
    write_series_csv(ss, s);
    const auto back = parse_series_csv(ss);
    ASSERT_EQ(back.values.size(), 4u);
    EXPECT_EQ(back.values[0], s.values[0]);
    EXPECT_TRUE(std::isnan(back.values[1]));
    EXPECT_EQ(back.values[2], s.values[2]);
    EXPECT_EQ(back.values[3], s.values[3]);
}

TEST(SeriesCsv, MultiFeatureRoundTrip) {
    SeriesMatrix s(2, 3, 2);
    std::iota(s.values.begin(), s.values.end(), 0.5);
    std::stringstream ss;
    write_series_csv(ss, s);
    const auto back = parse_series_csv(ss);
    EXPECT_EQ(back.n_features, 2u);
    EXPECT_EQ(back.values, s.values);
}

TEST(SeriesCsv, SingleColumnMissingSurvivesRoundTrip) {
    SeriesMatrix s(1, 3, 1);
    s.values = {1.0, kMissing, 3.0};
    std::stringstream ss;
    write_series_csv(ss, s);
    const auto back = parse_series_csv(ss);
    ASSERT_EQ(back.n_steps, 3u);
    EXPECT_TRUE(std::isnan(back.at(0, 1)));
}

TEST(SeriesCsv, NonNumericCellReportsRowAndColumn) {
    std::istringstream in("node0_f0,node1_f0\n1,2\n3,abc\n");
    try {
        parse_series_csv(in, "s.csv");
        FAIL() << "expected InputError";
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("row 2, column 2"), std::string::npos) << e.what();
    }
}

TEST(SeriesCsv, BadHeaderOrRaggedRowRejected) {
    std::istringstream bad_header("a,b\n1,2\n");
    EXPECT_THROW(parse_series_csv(bad_header), InputError);
    std::istringstream ragged("node0_f0,node1_f0\n1\n");
    EXPECT_THROW(parse_series_csv(ragged), InputError);
}

TEST(MaskCsv, RoundTrip) {
    SeriesMatrix s = ramp(3, 7);
    const auto mask = make_eval_mask(s, 0.4, 77);
    std::stringstream ss;
    write_mask_csv(ss, mask);
    const auto back = parse_mask_csv(ss);
    EXPECT_EQ(back.seed, 77u);
    EXPECT_EQ(back.ratio, 0.4);
    EXPECT_EQ(back.n_nodes, 3u);
    EXPECT_EQ(back.n_steps, 7u);
    EXPECT_EQ(back.held_out, mask.held_out);
}

TEST(MaskCsv, RejectsMaskOverMissingValue) {
    SeriesMatrix s = ramp(2, 2);
    s.at(0, 0) = kMissing;
    EvalMask mask = empty_mask(s);
    mask.held_out[0] = 1;
    EXPECT_THROW(check_mask_against_series(mask, s), InputError);
    EvalMask wrong = empty_mask(ramp(3, 2));
    EXPECT_THROW(check_mask_against_series(wrong, s), InputError);
}
