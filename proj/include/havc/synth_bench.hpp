#pragma once

// Synthetic corpora and inference records with planted ground truth.
//
// Diagnostic corpus: every record is one matched OCR token. Planted grounding
// heads put their attention peak on a token of the record's mask; all other
// heads peak uniformly over the valid tokens. A BOS attention sink larger than
// any peak exercises the special-token exclusion.
//
// Inference record: per-head patch maps built from Gaussian blobs (useful
// heads on the planted region, distractor heads on one compact blob elsewhere,
// context heads on two sharp peaks elsewhere, noise heads on several scattered
// blobs) plus uniform background noise, and
// a logistic-linear surrogate
//
//     log p(y*) = log sigmoid( sum_h <readout_h, a_h> + bias )
//     d log p / d a_h = (1 - sigmoid(.)) * readout_h
//
// that supplies exact gradient sensitivities.

#include "havc/error.hpp"
#include "havc/rng.hpp"
#include "havc/tensor_store.hpp"
#include "havc/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <tuple>
#include <vector>

namespace havc {

struct ScenarioSpec {
    std::uint32_t grid_side = 24;
    std::uint32_t patch_size = 14;
    HeadGeometry geometry{2, 8};
    /// Grounding heads of the diagnostic corpus; the expert set at inference.
    std::vector<HeadId> planted_heads;
    /// Inference: compact blob on the planted region, positive readout there.
    std::vector<HeadId> useful_heads;
    /// Inference: compact blob away from the planted region, no readout.
    std::vector<HeadId> distractor_heads;
    /// Inference: two sharp peaks two patches apart away from the planted
    /// region, positive readout over the whole grid.
    std::vector<HeadId> context_heads;
    PatchBox planted_region{9, 9, 13, 13};
    double noise = 0.05;     ///< background amplitude relative to blob peaks
    double jitter = 0.0;     ///< max useful-blob center offset, patches
    double gain_spread = 0.5; ///< useful-head readout gains in 1 +- spread
    std::uint32_t text_tokens = 8;
    double bias = 0.0;
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t n_visual() const noexcept
    {
        return std::size_t(grid_side) * grid_side;
    }

    void validate() const
    {
        if (grid_side == 0) throw Error(ErrorCode::invalid_argument, "grid_side must be positive");
        if (patch_size == 0) throw Error(ErrorCode::invalid_argument, "patch_size must be positive");
        if (geometry.size() == 0) throw Error(ErrorCode::invalid_argument, "geometry is empty");
        const auto& r = planted_region;
        if (r.r0 > r.r1 || r.c0 > r.c1 || r.r1 >= grid_side || r.c1 >= grid_side)
            throw Error(ErrorCode::invalid_argument, "planted region outside grid");
        for (const auto* set : {&planted_heads, &useful_heads, &distractor_heads, &context_heads})
            for (const auto& h : *set)
                if (!geometry.contains(h))
                    throw Error(ErrorCode::invalid_argument,
                                "planted head " + to_string(h) + " outside geometry");
        if (!(noise >= 0.0)) throw Error(ErrorCode::invalid_argument, "noise must be >= 0");
        if (!(jitter >= 0.0)) throw Error(ErrorCode::invalid_argument, "jitter must be >= 0");
        if (!(gain_spread >= 0.0 && gain_spread < 1.0))
            throw Error(ErrorCode::invalid_argument, "gain_spread must lie in [0, 1)");
    }
};

//----------------------------------------------------------------------------
// Diagnostic corpus
//----------------------------------------------------------------------------

namespace detail {

/// Quantizes a nonnegative weight vector to multiples of 2^-24 summing to
/// exactly 1. Such values are exact in binary32, so stored rows sum to 1.
inline void quantize_to_simplex(std::span<const double> w, std::span<float> out)
{
    constexpr std::int64_t one = std::int64_t{1} << 24;
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    std::vector<std::int64_t> q(w.size());
    std::int64_t sum = 0;
    std::size_t largest = 0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        q[j] = std::llround(w[j] / total * double(one));
        sum += q[j];
        if (q[j] > q[largest]) largest = j;
    }
    q[largest] += one - sum;
    for (std::size_t j = 0; j < w.size(); ++j) out[j] = static_cast<float>(double(q[j]) / double(one));
}

} // namespace detail

inline SequenceLayout diagnostic_layout(const ScenarioSpec& spec)
{
    SequenceLayout l;
    const auto nv = static_cast<std::uint32_t>(spec.n_visual());
    l.total_len = 1 + nv + spec.text_tokens;
    for (std::uint32_t j = 1; j < l.total_len; ++j) l.valid.push_back(j);
    for (std::uint32_t j = 1; j <= nv; ++j) l.visual.push_back(j);
    return l;
}

/// Record `index` of the corpus; independent of every other record.
inline DiagnosticRecord gen_diagnostic_record(const ScenarioSpec& spec, std::uint64_t index)
{
    Rng rng = Rng::stream(spec.seed, index);
    DiagnosticRecord rec;
    rec.layout = diagnostic_layout(spec);
    rec.token_index = index;
    rec.heads = all_heads(spec.geometry);

    // word-shaped mask inside the planted region
    const auto& reg = spec.planted_region;
    const std::size_t mh = std::min<std::size_t>(reg.height(), 1 + rng.below(2));
    const std::size_t mw = std::min<std::size_t>(reg.width(), 1 + rng.below(3));
    const std::size_t r0 = reg.r0 + rng.below(reg.height() - mh + 1);
    const std::size_t c0 = reg.c0 + rng.below(reg.width() - mw + 1);
    for (std::size_t r = r0; r < r0 + mh; ++r)
        for (std::size_t c = c0; c < c0 + mw; ++c)
            rec.mask.push_back(static_cast<std::uint32_t>(1 + r * spec.grid_side + c));

    const std::set<HeadId> planted(spec.planted_heads.begin(), spec.planted_heads.end());
    const std::size_t L = rec.layout.total_len;
    rec.attn = Tensor({rec.heads.size(), L});
    std::vector<double> w(L);
    const double top = 1.0 + spec.noise;
    for (std::size_t k = 0; k < rec.heads.size(); ++k) {
        for (std::size_t j = 1; j < L; ++j) w[j] = 1.0 + spec.noise * rng.uniform01();
        w[0] = 12.0 * top; // attention sink on BOS
        const std::uint32_t target =
          planted.count(rec.heads[k]) ? rec.mask[rng.below(rec.mask.size())]
                                      : rec.layout.valid[rng.below(rec.layout.valid.size())];
        w[target] = 3.0 * top;
        detail::quantize_to_simplex(w, rec.attn.row(k));
    }
    return rec;
}

inline Corpus gen_diagnostic_corpus(const ScenarioSpec& spec, std::size_t n_records)
{
    spec.validate();
    if (n_records == 0) throw Error(ErrorCode::invalid_argument, "n_records must be >= 1");
    Corpus c;
    c.geometry = spec.geometry;
    c.records.reserve(n_records);
    for (std::size_t i = 0; i < n_records; ++i) c.records.push_back(gen_diagnostic_record(spec, i));
    return c;
}

//----------------------------------------------------------------------------
// Surrogate model and inference record
//----------------------------------------------------------------------------

inline double log_sigmoid(double z) noexcept
{
    return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

inline double sigmoid(double z) noexcept
{
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

struct SurrogateModel {
    std::vector<HeadId> heads;
    std::size_t n_visual = 0;
    std::vector<double> readout; ///< [heads.size() * n_visual]
    double bias = 0.0;

    [[nodiscard]] std::span<const double> readout_of(std::size_t k) const
    {
        return std::span(readout).subspan(k * n_visual, n_visual);
    }

    /// `attn` is [heads.size() * n_visual], head-major.
    [[nodiscard]] double logit(std::span<const double> attn) const
    {
        if (attn.size() != readout.size())
            throw Error(ErrorCode::invalid_argument, "attention size does not match surrogate");
        double z = bias;
        for (std::size_t i = 0; i < attn.size(); ++i) z += readout[i] * attn[i];
        return z;
    }

    [[nodiscard]] double log_prob(std::span<const double> attn) const
    {
        return log_sigmoid(logit(attn));
    }

    /// Closed-form d log p / d attn, same layout as `attn`.
    [[nodiscard]] std::vector<double> sensitivity(std::span<const double> attn) const
    {
        const double scale = 1.0 - sigmoid(logit(attn));
        std::vector<double> g(readout.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = scale * readout[i];
        return g;
    }
};

namespace detail {

inline void add_blob(GridMap& m, double cr, double cc, double sr, double sc, double amp)
{
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c) {
            const double dr = (double(r) - cr) / sr, dc = (double(c) - cc) / sc;
            m.at(r, c) += amp * std::exp(-0.5 * (dr * dr + dc * dc));
        }
}

inline double region_center(std::size_t lo, std::size_t hi) { return 0.5 * double(lo + hi); }

enum class HeadRole { noise, useful, distractor, context };

} // namespace detail

inline detail::HeadRole role_of(const ScenarioSpec& spec, const HeadId& h)
{
    auto in = [&](const std::vector<HeadId>& v) { return std::find(v.begin(), v.end(), h) != v.end(); };
    if (in(spec.useful_heads)) return detail::HeadRole::useful;
    if (in(spec.distractor_heads)) return detail::HeadRole::distractor;
    if (in(spec.context_heads)) return detail::HeadRole::context;
    return detail::HeadRole::noise;
}

/// Readout weights: a per-head gain in 1 +- gain_spread over the planted
/// region for useful heads, the same gain everywhere for context heads, zero
/// for distractors, small negative values for noise heads.
inline SurrogateModel make_surrogate(const ScenarioSpec& spec)
{
    spec.validate();
    Rng rng = Rng::stream(spec.seed, 0x5a77a);
    SurrogateModel s;
    s.heads = all_heads(spec.geometry);
    s.n_visual = spec.n_visual();
    s.bias = spec.bias;
    s.readout.assign(s.heads.size() * s.n_visual, 0.0);
    const auto& reg = spec.planted_region;
    for (std::size_t k = 0; k < s.heads.size(); ++k) {
        const auto role = role_of(spec, s.heads[k]);
        const double gain = 1.0 + spec.gain_spread * (2.0 * rng.uniform01() - 1.0);
        for (std::size_t j = 0; j < s.n_visual; ++j) {
            const std::size_t r = j / spec.grid_side, c = j % spec.grid_side;
            double v = 0.0;
            if (role == detail::HeadRole::useful)
                v = reg.contains(r, c) ? gain : 0.0;
            else if (role == detail::HeadRole::context)
                v = gain;
            else if (role == detail::HeadRole::noise)
                v = -0.5 * rng.uniform01();
            s.readout[k * s.n_visual + j] = v;
        }
    }
    return s;
}

/// Per-head patch maps of the scenario (before normalization to a
/// distribution), in all_heads() order.
inline std::vector<GridMap> scenario_maps(const ScenarioSpec& spec)
{
    spec.validate();
    Rng rng = Rng::stream(spec.seed, 0x3a95);
    const std::size_t n = spec.grid_side;
    const auto& reg = spec.planted_region;
    const double cr = detail::region_center(reg.r0, reg.r1);
    const double cc = detail::region_center(reg.c0, reg.c1);
    const double sr = std::max(0.6, double(reg.height()) / 4.0);
    const double sc = std::max(0.6, double(reg.width()) / 4.0);

    auto far_from_region = [&](double r, double c, double margin) {
        return r < double(reg.r0) - margin || r > double(reg.r1) + margin ||
               c < double(reg.c0) - margin || c > double(reg.c1) + margin;
    };
    auto rand_cell = [&](double margin) {
        return std::pair{margin + rng.uniform01() * (double(n) - 1.0 - 2.0 * margin),
                         margin + rng.uniform01() * (double(n) - 1.0 - 2.0 * margin)};
    };

    std::vector<GridMap> maps;
    for (const auto& h : all_heads(spec.geometry)) {
        GridMap m(n, n, 0.0);
        for (double& v : m.values) v = spec.noise * rng.uniform01();
        switch (role_of(spec, h)) {
        case detail::HeadRole::useful: {
            const double jr = spec.jitter * (2.0 * rng.uniform01() - 1.0);
            const double jc = spec.jitter * (2.0 * rng.uniform01() - 1.0);
            detail::add_blob(m, cr + jr, cc + jc, sr, sc, 1.0);
            break;
        }
        case detail::HeadRole::distractor: {
            auto [r, c] = rand_cell(1.0);
            for (int tries = 0; tries < 64 && !far_from_region(r, c, 3.0); ++tries)
                std::tie(r, c) = rand_cell(1.0);
            detail::add_blob(m, r, c, sr, sc, 1.0);
            break;
        }
        case detail::HeadRole::context: {
            double r = 0, c = 0;
            for (int tries = 0; tries < 64; ++tries) {
                r = double(1 + rng.below(n - 3));
                c = double(1 + rng.below(n - 3));
                if (far_from_region(r, c, 3.0) && far_from_region(r + 2, c + 2, 3.0)) break;
            }
            const bool vertical = rng.below(2) == 1;
            detail::add_blob(m, r, c, 0.4, 0.4, 1.0);
            detail::add_blob(m, vertical ? r + 2 : r, vertical ? c : c + 2, 0.4, 0.4, 1.0);
            break;
        }
        case detail::HeadRole::noise: {
            const std::size_t blobs = 3 + rng.below(3);
            std::vector<std::pair<double, double>> centers;
            const double min_sep = std::max(4.0, double(n) / 5.0);
            for (int tries = 0; centers.size() < blobs && tries < 512; ++tries) {
                const auto p = rand_cell(0.5);
                const bool ok = std::all_of(centers.begin(), centers.end(), [&](const auto& q) {
                    return std::hypot(p.first - q.first, p.second - q.second) >= min_sep;
                });
                if (ok) centers.push_back(p);
            }
            for (const auto& [r, c] : centers)
                detail::add_blob(m, r, c, 0.8, 0.8, 0.8 + 0.2 * rng.uniform01());
            break;
        }
        }
        maps.push_back(std::move(m));
    }
    return maps;
}

/// Inference record of the scenario; gradients come from `surrogate`.
inline InferenceRecord gen_inference_record(const ScenarioSpec& spec, const SurrogateModel& surrogate)
{
    const auto maps = scenario_maps(spec);
    InferenceRecord rec;
    rec.geometry = spec.geometry;
    rec.grid_side = spec.grid_side;
    rec.heads = all_heads(spec.geometry);
    rec.patch_size = spec.patch_size;
    rec.image_w = rec.image_h = spec.grid_side * spec.patch_size;
    rec.predicted_token = "<synthetic>";
    if (surrogate.heads != rec.heads || surrogate.n_visual != spec.n_visual())
        throw Error(ErrorCode::invalid_argument, "surrogate does not cover the scenario heads");

    const std::size_t nv = spec.n_visual();
    rec.attn = Tensor({rec.heads.size(), nv});
    for (std::size_t k = 0; k < maps.size(); ++k) {
        const double total = std::accumulate(maps[k].values.begin(), maps[k].values.end(), 0.0);
        auto row = rec.attn.row(k);
        for (std::size_t j = 0; j < nv; ++j) row[j] = static_cast<float>(maps[k].values[j] / total);
    }
    const std::vector<double> a(rec.attn.data().begin(), rec.attn.data().end());
    rec.log_prob = surrogate.log_prob(a);
    const auto sens = surrogate.sensitivity(a);
    rec.grad = Tensor({rec.heads.size(), nv}, std::vector<float>(sens.begin(), sens.end()));
    return rec;
}

inline InferenceRecord gen_inference_record(const ScenarioSpec& spec)
{
    return gen_inference_record(spec, make_surrogate(spec));
}

//----------------------------------------------------------------------------
// Seeded scenario families used by the localization tests and sweeps
//----------------------------------------------------------------------------

struct LocalizationSuite {
    std::uint32_t grid_side = 24;
    HeadGeometry geometry{2, 8};
    std::size_t useful = 1;
    std::size_t distractors = 0;
    std::size_t context = 0;
    std::size_t noise_experts = 7; ///< noise heads that are also in the expert set
    std::size_t min_region = 3, max_region = 6;
    double jitter = 0.0;
    double noise = 0.05;
};

/// Random planted region and random head roles for one seed. Experts are the
/// useful, distractor, context and `noise_experts` noise heads.
inline ScenarioSpec make_localization_scenario(std::uint64_t seed, const LocalizationSuite& suite = {})
{
    Rng rng = Rng::stream(seed, 0x10ca1);
    ScenarioSpec s;
    s.seed = seed;
    s.grid_side = suite.grid_side;
    s.geometry = suite.geometry;
    s.noise = suite.noise;
    s.jitter = suite.jitter;
    const auto h = suite.min_region + rng.below(suite.max_region - suite.min_region + 1);
    const auto w = suite.min_region + rng.below(suite.max_region - suite.min_region + 1);
    const auto r0 = 1 + rng.below(suite.grid_side - h - 1);
    const auto c0 = 1 + rng.below(suite.grid_side - w - 1);
    s.planted_region = {r0, c0, r0 + h - 1, c0 + w - 1};

    auto heads = all_heads(s.geometry);
    for (std::size_t i = heads.size(); i > 1; --i) std::swap(heads[i - 1], heads[rng.below(i)]);
    const std::size_t need = suite.useful + suite.distractors + suite.context + suite.noise_experts;
    if (need > heads.size()) throw Error(ErrorCode::invalid_argument, "suite needs more heads than geometry");
    std::size_t k = 0;
    for (std::size_t i = 0; i < suite.useful; ++i) s.useful_heads.push_back(heads[k++]);
    for (std::size_t i = 0; i < suite.distractors; ++i) s.distractor_heads.push_back(heads[k++]);
    for (std::size_t i = 0; i < suite.context; ++i) s.context_heads.push_back(heads[k++]);
    s.planted_heads.assign(heads.begin(), heads.begin() + static_cast<std::ptrdiff_t>(need));
    std::sort(s.planted_heads.begin(), s.planted_heads.end());
    std::sort(s.useful_heads.begin(), s.useful_heads.end());
    std::sort(s.distractor_heads.begin(), s.distractor_heads.end());
    std::sort(s.context_heads.begin(), s.context_heads.end());
    return s;
}

} // namespace havc
