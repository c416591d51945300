#include "havc/head_profiler.hpp"
#include "havc/oracles.hpp"
#include "havc/rng.hpp"
#include "havc/synth_bench.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace havc;

namespace {

SequenceLayout layout_of(std::uint64_t len, std::vector<std::uint32_t> valid, std::vector<std::uint32_t> visual)
{
    SequenceLayout l;
    l.total_len = len;
    l.valid = std::move(valid);
    l.visual = std::move(visual);
    return l;
}

DiagnosticRecord one_head_record(HeadId h, std::vector<float> row, std::vector<std::uint32_t> mask)
{
    DiagnosticRecord r;
    const auto n = static_cast<std::uint32_t>(row.size());
    std::vector<std::uint32_t> all(n);
    for (std::uint32_t j = 0; j < n; ++j) all[j] = j;
    r.layout = layout_of(n, all, all);
    r.mask = std::move(mask);
    r.heads = {h};
    r.attn = Tensor({1, n}, std::move(row));
    return r;
}

} // namespace

TEST(PeakIndex, SpecialTokenExcluded)
{
    const std::vector<float> row = {0.9f, 0.05f, 0.05f};
    EXPECT_EQ(peak_index(row, layout_of(3, {1, 2}, {1, 2})), 1u);
}

TEST(PeakIndex, TiesGoToLowestIndex)
{
    const std::vector<float> row = {0.0f, 0.0f, 0.0f, 1.0f / 3, 1.0f / 3, 1.0f / 3};
    EXPECT_EQ(peak_index(row, layout_of(6, {3, 4, 5}, {3, 4, 5})), 3u);
}

TEST(PeakIndex, MatchesExhaustiveScan)
{
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const std::uint32_t n = 2 + std::uint32_t(rng.below(40));
        std::vector<std::uint32_t> valid;
        for (std::uint32_t j = 0; j < n; ++j)
            if (rng.below(4)) valid.push_back(j);
        if (valid.empty()) valid.push_back(n - 1);
        std::vector<float> row(n);
        for (auto& v : row) v = float(rng.below(5));
        std::uint32_t best = valid[0];
        for (auto j : valid)
            if (row[j] > row[best]) best = j;
        EXPECT_EQ(peak_index(row, layout_of(n, valid, valid)), best);
    }
}

TEST(ProjScore, InAndOutOfMask)
{
    const std::vector<float> row = {0.1f, 0.1f, 0.5f, 0.1f, 0.1f, 0.1f};
    const auto l = layout_of(6, {0, 1, 2, 3, 4, 5}, {0, 1, 2, 3, 4, 5});
    const std::vector<std::uint32_t> in = {1, 2, 3, 4}, out = {3, 4};
    EXPECT_EQ(proj_score(row, in, l), 0.25);
    EXPECT_EQ(proj_score(row, out, l), 0.0);
}

TEST(ProjScore, MatchesPeakVectorOracle)
{
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        const std::uint32_t n = 3 + std::uint32_t(rng.below(30));
        std::vector<std::uint32_t> all(n);
        for (std::uint32_t j = 0; j < n; ++j) all[j] = j;
        const auto l = layout_of(n, all, all);
        std::vector<std::uint32_t> mask;
        for (auto j : all)
            if (rng.below(3) == 0) mask.push_back(j);
        if (mask.empty()) mask.push_back(0);
        std::vector<float> row(n);
        for (auto& v : row) v = float(rng.uniform01());
        EXPECT_EQ(proj_score(row, mask, l), oracle::proj_score(row, mask, l));
    }
}

TEST(HeadScores, SingleAndTwoRecordMeans)
{
    const HeadGeometry g{1, 1};
    const auto hit = one_head_record({0, 0}, {0.1f, 0.9f}, {1});
    const auto miss = one_head_record({0, 0}, {0.9f, 0.1f}, {1});
    std::vector<DiagnosticRecord> recs = {hit};
    EXPECT_EQ(accumulate(recs, g).raw(0), 1.0);
    recs.push_back(miss);
    EXPECT_EQ(accumulate(recs, g).raw(0), 0.5);
}

TEST(HeadScores, MeanOverRecordsCarryingTheHead)
{
    const HeadGeometry g{1, 2};
    std::vector<DiagnosticRecord> recs = {one_head_record({0, 0}, {0.1f, 0.9f}, {1}),
                                          one_head_record({0, 1}, {0.9f, 0.1f}, {1}),
                                          one_head_record({0, 1}, {0.1f, 0.9f}, {0, 1})};
    const auto m = accumulate(recs, g);
    EXPECT_EQ(m.raw({0, 0}), 1.0);
    EXPECT_EQ(m.raw({0, 1}), 0.25);
}

TEST(HeadScores, MatchesNaiveLoopsOnSyntheticCorpus)
{
    ScenarioSpec s;
    s.grid_side = 6;
    s.planted_region = {1, 1, 4, 4};
    s.planted_heads = {{0, 2}, {1, 7}};
    s.seed = 9;
    const auto c = gen_diagnostic_corpus(s, 50);
    const auto m = accumulate(c);
    const auto want = oracle::head_scores(c);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_DOUBLE_EQ(m.raw(i), want[i]) << i;
}

TEST(HeadScores, MergeOfShardsEqualsWhole)
{
    ScenarioSpec s;
    s.grid_side = 5;
    s.planted_region = {1, 1, 3, 3};
    s.planted_heads = {{1, 1}};
    const auto c = gen_diagnostic_corpus(s, 30);
    const auto whole = accumulate(c);
    auto a = accumulate(std::span(c.records).first(11), c.geometry);
    a.merge(accumulate(std::span(c.records).subspan(11), c.geometry));
    for (std::size_t i = 0; i < whole.sums.size(); ++i) {
        EXPECT_DOUBLE_EQ(a.raw(i), whole.raw(i));
        EXPECT_EQ(a.counts[i], whole.counts[i]);
    }
}

TEST(HeadScores, InputErrors)
{
    std::vector<DiagnosticRecord> none;
    EXPECT_HAVC_ERROR(accumulate(none, {2, 2}), empty_input);
    std::vector<DiagnosticRecord> outside = {one_head_record({3, 0}, {0.5f, 0.5f}, {0})};
    EXPECT_HAVC_ERROR(accumulate(outside, {2, 2}), geometry_mismatch);
}

TEST(Normalize, MinMaxArithmeticAndThreshold)
{
    const std::vector<double> raw = {0, 1, 2, 3};
    auto m = HeadScoreMatrix::from_raw({2, 2}, raw);
    const auto e = normalize_and_filter(m, 0.5);
    EXPECT_DOUBLE_EQ(e.normalized[0], 0.0);
    EXPECT_DOUBLE_EQ(e.normalized[1], 1.0 / 3);
    EXPECT_DOUBLE_EQ(e.normalized[2], 2.0 / 3);
    EXPECT_DOUBLE_EQ(e.normalized[3], 1.0);
    EXPECT_EQ(e.heads, (std::vector<HeadId>{{1, 0}, {1, 1}}));
}

TEST(Normalize, ThresholdIsStrict)
{
    const std::vector<double> raw = {0, 0.5, 1};
    auto m = HeadScoreMatrix::from_raw({1, 3}, raw);
    EXPECT_EQ(normalize_and_filter(m, 0.5).heads, (std::vector<HeadId>{{0, 2}}));
}

TEST(Normalize, ConstantMatrixIsDegenerate)
{
    const std::vector<double> raw(6, 0.25);
    auto m = HeadScoreMatrix::from_raw({2, 3}, raw);
    EXPECT_HAVC_ERROR(normalize_and_filter(m), degenerate_matrix);
}

TEST(Normalize, PerLayerScope)
{
    const std::vector<double> raw = {0, 1, 10, 30};
    auto m = HeadScoreMatrix::from_raw({2, 2}, raw);
    const auto e = normalize_and_filter(m, 0.5, NormalizationScope::per_layer);
    EXPECT_EQ(e.normalized, (std::vector<double>{0, 1, 0, 1}));
    EXPECT_EQ(e.heads, (std::vector<HeadId>{{0, 1}, {1, 1}}));
}

TEST(Normalize, HigherThresholdGivesSubset)
{
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> raw(12);
        for (auto& v : raw) v = rng.uniform01();
        auto m = HeadScoreMatrix::from_raw({3, 4}, raw);
        const auto lo = normalize_and_filter(m, 0.3).heads;
        const auto hi = normalize_and_filter(m, 0.8).heads;
        EXPECT_TRUE(std::includes(lo.begin(), lo.end(), hi.begin(), hi.end()));
    }
}

TEST(Stage1, RecoversFivePlantedHeadsIn32x32)
{
    ScenarioSpec s;
    s.geometry = {32, 32};
    s.grid_side = 6;
    s.planted_region = {1, 1, 4, 4};
    s.planted_heads = {{0, 5}, {3, 31}, {12, 0}, {20, 17}, {31, 9}};
    s.seed = 123;
    auto m = accumulate(gen_diagnostic_corpus(s, 120));
    EXPECT_EQ(normalize_and_filter(m).heads, s.planted_heads);
}
