#pragma once

// Stage 1: score every attention head on a corpus of matched OCR tokens by
// whether its attention peak lands inside the token's ground-truth visual
// region, then keep the heads whose min-max normalized score exceeds a
// threshold.

#include "havc/error.hpp"
#include "havc/tensor_store.hpp"
#include "havc/types.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace havc {

/// Argmax of `row` restricted to the layout's valid (non-special) indices.
/// Ties resolve to the lowest index.
inline std::uint32_t peak_index(std::span<const float> row, const SequenceLayout& layout)
{
    if (layout.valid.empty()) throw Error(ErrorCode::invalid_argument, "no valid indices");
    if (row.size() != layout.total_len)
        throw Error(ErrorCode::invalid_argument, "attention row length does not match layout");
    std::uint32_t best = layout.valid.front();
    for (auto j : layout.valid)
        if (row[j] > row[best]) best = j;
    return best;
}

/// 1/|mask| when the peak falls on a masked token, 0 otherwise. `mask` is the
/// sorted support of the binary mask.
inline double proj_score(std::span<const float> row, std::span<const std::uint32_t> mask,
                         const SequenceLayout& layout)
{
    if (mask.empty()) throw Error(ErrorCode::invalid_argument, "mask is empty");
    const auto peak = peak_index(row, layout);
    return std::binary_search(mask.begin(), mask.end(), peak) ? 1.0 / double(mask.size())
                                                              : 0.0;
}

/// Per-head running sums of projection scores. Merging is associative and
/// commutative, so shards of a corpus may be accumulated independently.
struct HeadScoreMatrix {
    HeadGeometry geometry;
    std::vector<double> sums;
    std::vector<std::uint64_t> counts;
    std::optional<std::vector<double>> normalized;

    HeadScoreMatrix() = default;
    explicit HeadScoreMatrix(HeadGeometry g)
      : geometry(g), sums(g.size(), 0.0), counts(g.size(), 0)
    {}

    void add(const DiagnosticRecord& rec)
    {
        for (std::size_t k = 0; k < rec.heads.size(); ++k) {
            const auto i = geometry.flat(rec.heads[k]);
            sums[i] += proj_score(rec.row(k), rec.mask, rec.layout);
            ++counts[i];
        }
        normalized.reset();
    }

    void merge(const HeadScoreMatrix& other)
    {
        if (!(other.geometry == geometry))
            throw Error(ErrorCode::geometry_mismatch, "cannot merge score matrices");
        for (std::size_t i = 0; i < sums.size(); ++i) {
            sums[i] += other.sums[i];
            counts[i] += other.counts[i];
        }
        normalized.reset();
    }

    /// Mean projection score of a head over the records that carry it.
    [[nodiscard]] double raw(std::size_t i) const
    {
        return counts[i] ? sums[i] / double(counts[i]) : 0.0;
    }
    [[nodiscard]] double raw(const HeadId& h) const { return raw(geometry.flat(h)); }

    [[nodiscard]] std::vector<double> raw_values() const
    {
        std::vector<double> out(sums.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = raw(i);
        return out;
    }

    /// Builds a matrix whose raw scores are `values` (count 1 per head).
    static HeadScoreMatrix from_raw(HeadGeometry g, std::span<const double> values)
    {
        if (values.size() != g.size())
            throw Error(ErrorCode::geometry_mismatch, "raw value count != geometry size");
        HeadScoreMatrix m(g);
        std::copy(values.begin(), values.end(), m.sums.begin());
        std::fill(m.counts.begin(), m.counts.end(), 1);
        return m;
    }
};

inline HeadScoreMatrix accumulate(std::span<const DiagnosticRecord> records, HeadGeometry g)
{
    if (records.empty()) throw Error(ErrorCode::empty_input, "corpus has no records");
    HeadScoreMatrix m(g);
    for (std::size_t i = 0; i < records.size(); ++i) {
        for (const auto& h : records[i].heads)
            if (!g.contains(h))
                throw Error(ErrorCode::geometry_mismatch,
                            "record " + std::to_string(i) + " head " + to_string(h) +
                              " outside geometry");
        m.add(records[i]);
    }
    return m;
}

inline HeadScoreMatrix accumulate(const Corpus& corpus)
{
    return accumulate(corpus.records, corpus.geometry);
}

enum class NormalizationScope { global, per_layer };

struct ExpertHeadSet {
    HeadGeometry geometry;
    double threshold = 0.5;
    NormalizationScope scope = NormalizationScope::global;
    std::vector<double> raw;        ///< flat (layer, head) order
    std::vector<double> normalized; ///< flat (layer, head) order
    std::vector<HeadId> heads;      ///< ascending (layer, head)

    [[nodiscard]] bool contains(const HeadId& h) const
    {
        return std::binary_search(heads.begin(), heads.end(), h);
    }
};

namespace detail {

inline void minmax_into(std::span<const double> in, std::span<double> out)
{
    const auto [lo, hi] = std::minmax_element(in.begin(), in.end());
    const double range = *hi - *lo;
    for (std::size_t i = 0; i < in.size(); ++i)
        out[i] = range > 0.0 ? (in[i] - *lo) / range : 0.0;
}

} // namespace detail

/// Min-max normalizes the raw scores (stored back into `m.normalized`).
/// A constant matrix carries no ranking signal and is rejected.
inline const std::vector<double>& normalize(HeadScoreMatrix& m,
                                            NormalizationScope scope = NormalizationScope::global)
{
    const auto raw = m.raw_values();
    if (raw.empty()) throw Error(ErrorCode::empty_input, "score matrix is empty");
    const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
    if (!(*hi > *lo))
        throw Error(ErrorCode::degenerate_matrix,
                    "all heads have the same score; no informative heads");
    std::vector<double> out(raw.size());
    if (scope == NormalizationScope::global) {
        detail::minmax_into(raw, out);
    } else {
        const std::size_t w = m.geometry.n_heads;
        for (std::size_t l = 0; l < m.geometry.n_layers; ++l)
            detail::minmax_into(std::span(raw).subspan(l * w, w),
                                std::span(out).subspan(l * w, w));
    }
    m.normalized = std::move(out);
    return *m.normalized;
}

/// Heads whose normalized score is strictly greater than `threshold`.
inline ExpertHeadSet normalize_and_filter(HeadScoreMatrix& m, double threshold = 0.5,
                                          NormalizationScope scope = NormalizationScope::global)
{
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw Error(ErrorCode::invalid_argument, "threshold must lie in [0, 1]");
    const auto& norm = normalize(m, scope);
    ExpertHeadSet out;
    out.geometry = m.geometry;
    out.threshold = threshold;
    out.scope = scope;
    out.raw = m.raw_values();
    out.normalized = norm;
    for (std::size_t i = 0; i < norm.size(); ++i)
        if (norm[i] > threshold) out.heads.push_back(m.geometry.unflat(i));
    return out;
}

} // namespace havc
