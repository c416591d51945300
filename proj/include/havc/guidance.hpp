#pragma once

// Stage 2: refine expert heads on one decoding step and aggregate them into a
// cropping guidance map.
//
//   reshape -> spatial entropy filter -> gradient score -> fused score
//           -> top-K -> temperature softmax -> weighted map sum -> crop box

#include "havc/error.hpp"
#include "havc/head_profiler.hpp"
#include "havc/spatial_ops.hpp"
#include "havc/tensor_store.hpp"
#include "havc/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace havc {

struct EntropyParams {
    double lambda_c = 0.25;  ///< penalty per extra component
    double lambda_d = 0.75;  ///< weight of normalized centroid dispersion
    double threshold = 0.3;  ///< heads need entropy strictly below this
    std::size_t bins = 256;  ///< Otsu histogram resolution
    Connectivity connectivity = Connectivity::eight;
};

/// Which heads min-max normalization of the fused score ranges over.
enum class FusionScope { survivors, pool };

struct FusionParams {
    double alpha = 0.4;     ///< weight of the concentration branch
    std::size_t k = 8;      ///< heads kept after ranking; 0 keeps all
    double tau = 0.1;       ///< softmax temperature
    FusionScope scope = FusionScope::survivors;
};

enum class HeadPool { experts, all_heads };
enum class Weighting { softmax, uniform };

struct PipelineParams {
    EntropyParams entropy;
    FusionParams fusion;
    BoxParams box;
    HeadPool pool = HeadPool::experts;
    bool entropy_filter = true;
    Weighting weighting = Weighting::softmax;
};

struct HeadAssessment {
    HeadId head;
    double entropy = 1.0;
    std::size_t components = 0;
    double dispersion = 0.0;   ///< mean pairwise centroid distance, patches
    double grad_score = 0.0;
    double fused = 0.0;
    double weight = 0.0;       ///< nonzero for selected heads only
    bool survived = false;     ///< passed the entropy filter
};

struct GuidanceResult {
    std::vector<HeadAssessment> assessed; ///< every pooled head, pool order
    std::vector<HeadAssessment> selected; ///< descending fused score
    GridMap map;
    CropBox crop;
    bool fallback = false;            ///< no head passed the entropy filter
    bool gradient_available = true;
    std::vector<std::string> warnings;
};

//----------------------------------------------------------------------------

inline std::size_t exact_side(std::size_t n)
{
    auto side = static_cast<std::size_t>(std::llround(std::sqrt(double(n))));
    while (side * side > n) --side;
    while ((side + 1) * (side + 1) <= n) ++side;
    if (side == 0 || side * side != n)
        throw Error(ErrorCode::invalid_argument,
                    "visual token count " + std::to_string(n) + " is not a perfect square");
    return side;
}

/// Row-major patch map from a flat visual-attention vector.
inline GridMap reshape_attention(std::span<const float> a)
{
    const auto side = exact_side(a.size());
    return GridMap(side, side, std::vector<double>(a.begin(), a.end()));
}

inline GridMap reshape_attention(std::span<const float> a, std::size_t side)
{
    if (side * side != a.size())
        throw Error(ErrorCode::invalid_argument,
                    "attention length " + std::to_string(a.size()) + " != " +
                      std::to_string(side) + "^2");
    return reshape_attention(a);
}

struct EntropyDetail {
    double entropy = 1.0;
    double unclamped = 1.0;
    std::size_t components = 0;
    double dispersion = 0.0;
    double diagonal = 0.0;
};

/// min(lambda_c * (C - 1) + lambda_d * dbar / d_max, 1) on the Otsu foreground
/// of the normalized map; an empty foreground scores 1.
inline EntropyDetail spatial_entropy_detail(const GridMap& m, const EntropyParams& p = {})
{
    if (!m.square()) throw Error(ErrorCode::invalid_argument, "attention map is not square");
    EntropyDetail d;
    d.diagonal = std::sqrt(2.0) * double(m.side());
    const auto otsu = otsu_threshold(normalize01(m), p.bins);
    const auto comps = connected_components(otsu.mask, p.connectivity);
    d.components = comps.count;
    if (comps.count == 0) return d;
    d.dispersion = mean_pairwise_distance(comps.centroids);
    d.unclamped = p.lambda_c * double(comps.count - 1) + p.lambda_d * d.dispersion / d.diagonal;
    d.entropy = std::min(d.unclamped, 1.0);
    return d;
}

inline double spatial_entropy(const GridMap& m, const EntropyParams& p = {})
{
    return spatial_entropy_detail(m, p).entropy;
}

/// <a, max(0, sens)>
inline double gradient_score(std::span<const float> a, std::span<const float> sens)
{
    if (a.size() != sens.size())
        throw Error(ErrorCode::invalid_argument, "attention and sensitivity lengths differ");
    double g = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j)
        if (sens[j] > 0.0f) g += double(a[j]) * double(sens[j]);
    return g;
}

/// Min-max normalization across heads; a constant axis maps to zeros.
inline std::vector<double> minmax_normalize(std::span<const double> v)
{
    std::vector<double> out(v.size(), 0.0);
    if (v.empty()) return out;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double range = *hi - *lo;
    if (!(range > 0.0)) return out;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / range;
    return out;
}

/// alpha * N(1 - E) + (1 - alpha) * N(G), normalized over the given heads.
inline std::vector<double> fuse_scores(std::span<const double> entropy,
                                       std::span<const double> grad, double alpha)
{
    if (entropy.size() != grad.size())
        throw Error(ErrorCode::invalid_argument, "entropy and gradient counts differ");
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw Error(ErrorCode::invalid_argument, "alpha must lie in [0, 1]");
    std::vector<double> conc(entropy.size());
    for (std::size_t i = 0; i < entropy.size(); ++i) conc[i] = 1.0 - entropy[i];
    const auto nc = minmax_normalize(conc);
    const auto ng = minmax_normalize(grad);
    std::vector<double> s(entropy.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = alpha * nc[i] + (1.0 - alpha) * ng[i];
    return s;
}

/// exp(S/tau) / sum exp(S/tau), evaluated with the maximum subtracted.
inline std::vector<double> softmax_weights(std::span<const double> scores, double tau)
{
    if (!(tau > 0.0)) throw Error(ErrorCode::invalid_argument, "temperature must be positive");
    if (scores.empty()) throw Error(ErrorCode::invalid_argument, "no scores to weight");
    const double top = *std::max_element(scores.begin(), scores.end());
    std::vector<double> w(scores.size());
    double z = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) z += (w[i] = std::exp((scores[i] - top) / tau));
    for (double& x : w) x /= z;
    return w;
}

inline GridMap aggregate_map(std::span<const GridMap> maps, std::span<const double> weights)
{
    if (maps.empty() || maps.size() != weights.size())
        throw Error(ErrorCode::invalid_argument, "need one weight per map");
    GridMap out(maps[0].rows, maps[0].cols, 0.0);
    for (std::size_t h = 0; h < maps.size(); ++h) {
        if (maps[h].rows != out.rows || maps[h].cols != out.cols)
            throw Error(ErrorCode::invalid_argument, "map shapes differ");
        for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += weights[h] * maps[h].values[i];
    }
    return out;
}

//----------------------------------------------------------------------------

struct Selection {
    std::vector<HeadAssessment> assessed;
    std::vector<std::size_t> order;     ///< indices into `assessed`, ranked
    std::vector<std::size_t> rows;      ///< record row of each assessed head
    bool fallback = false;
    bool gradient_available = true;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<std::size_t> rank_desc(const std::vector<HeadAssessment>& as,
                                          std::span<const std::size_t> idx,
                                          std::span<const double> score)
{
    std::vector<std::size_t> pos(idx.size());
    std::iota(pos.begin(), pos.end(), 0);
    std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
        if (score[a] != score[b]) return score[a] > score[b];
        return as[idx[a]].head < as[idx[b]].head;
    });
    std::vector<std::size_t> out;
    for (auto p : pos) out.push_back(idx[p]);
    return out;
}

} // namespace detail

/// Assesses the pooled heads and ranks the ones that enter aggregation.
///
/// Heads failing the entropy cut are dropped; if none pass, every pooled head
/// is ranked by normalized gradient score instead. `order` is truncated to K.
inline Selection select_heads(std::span<const HeadId> pool, const InferenceRecord& rec,
                              const PipelineParams& p)
{
    Selection sel;
    std::vector<HeadId> heads(pool.begin(), pool.end());
    std::sort(heads.begin(), heads.end());
    for (const auto& h : heads) {
        const auto row = rec.find(h);
        if (row == InferenceRecord::npos) continue;
        sel.rows.push_back(row);
        HeadAssessment a;
        a.head = h;
        sel.assessed.push_back(a);
    }
    if (sel.assessed.empty())
        throw Error(ErrorCode::validation, "none of the expert heads appear in the record");
    if (sel.assessed.size() < heads.size())
        sel.warnings.push_back(std::to_string(heads.size() - sel.assessed.size()) +
                               " expert heads missing from the record were skipped");

    sel.gradient_available = rec.grad.has_value();
    if (!sel.gradient_available && p.fusion.alpha < 1.0)
        sel.warnings.push_back("record has no gradient tensors; gradient branch treated as a "
                               "constant axis");

    for (std::size_t i = 0; i < sel.assessed.size(); ++i) {
        auto& a = sel.assessed[i];
        const auto row = rec.attn.row(sel.rows[i]);
        const auto d = spatial_entropy_detail(reshape_attention(row, rec.grid_side), p.entropy);
        a.entropy = d.entropy;
        a.components = d.components;
        a.dispersion = d.dispersion;
        a.grad_score = sel.gradient_available ? gradient_score(row, rec.grad->row(sel.rows[i])) : 0.0;
        a.survived = !p.entropy_filter || a.entropy < p.entropy.threshold;
    }

    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < sel.assessed.size(); ++i)
        if (sel.assessed[i].survived) idx.push_back(i);

    std::vector<double> fused;
    if (idx.empty()) {
        sel.fallback = true;
        sel.warnings.push_back("no head passed the entropy filter; ranking by gradient score");
        std::vector<double> g;
        for (std::size_t i = 0; i < sel.assessed.size(); ++i) {
            idx.push_back(i);
            g.push_back(sel.assessed[i].grad_score);
        }
        fused = minmax_normalize(g);
    } else if (p.fusion.scope == FusionScope::survivors) {
        std::vector<double> e, g;
        for (auto i : idx) {
            e.push_back(sel.assessed[i].entropy);
            g.push_back(sel.assessed[i].grad_score);
        }
        fused = fuse_scores(e, g, p.fusion.alpha);
    } else {
        std::vector<double> e, g;
        for (const auto& a : sel.assessed) {
            e.push_back(a.entropy);
            g.push_back(a.grad_score);
        }
        const auto all = fuse_scores(e, g, p.fusion.alpha);
        for (auto i : idx) fused.push_back(all[i]);
    }
    for (std::size_t k = 0; k < idx.size(); ++k) sel.assessed[idx[k]].fused = fused[k];

    sel.order = detail::rank_desc(sel.assessed, idx, fused);
    if (p.fusion.k > 0 && sel.order.size() > p.fusion.k) sel.order.resize(p.fusion.k);
    return sel;
}

inline std::vector<HeadId> pool_heads(const ExpertHeadSet& experts, const InferenceRecord& rec,
                                      HeadPool pool)
{
    if (pool == HeadPool::all_heads) return rec.heads;
    return experts.heads;
}

/// Full stage-2 composition; errors carry the label of the failing stage.
inline GuidanceResult run_pipeline(std::span<const HeadId> experts, const InferenceRecord& rec,
                                   const PipelineParams& p = {})
{
    GuidanceResult res;
    if (experts.empty()) throw Error(ErrorCode::validation, "[select] expert head set is empty");

    Selection sel;
    try {
        sel = select_heads(experts, rec, p);
    } catch (const Error& e) {
        rethrow_in_stage(e, "select");
    }
    res.assessed = sel.assessed;
    res.fallback = sel.fallback;
    res.gradient_available = sel.gradient_available;
    res.warnings = sel.warnings;

    std::vector<double> scores;
    std::vector<GridMap> maps;
    for (auto i : sel.order) {
        scores.push_back(sel.assessed[i].fused);
        maps.push_back(reshape_attention(rec.attn.row(sel.rows[i]), rec.grid_side));
    }

    std::vector<double> w;
    try {
        if (p.weighting == Weighting::uniform)
            w.assign(scores.size(), 1.0 / double(scores.size()));
        else
            w = softmax_weights(scores, p.fusion.tau);
    } catch (const Error& e) {
        rethrow_in_stage(e, "softmax");
    }

    for (std::size_t k = 0; k < sel.order.size(); ++k) {
        auto a = sel.assessed[sel.order[k]];
        a.weight = w[k];
        res.assessed[sel.order[k]].weight = w[k];
        res.selected.push_back(a);
    }

    try {
        res.map = aggregate_map(maps, w);
    } catch (const Error& e) {
        rethrow_in_stage(e, "aggregate");
    }
    try {
        res.crop = extract_bbox(res.map, {rec.image_w, rec.image_h, rec.patch_size}, p.box);
    } catch (const Error& e) {
        rethrow_in_stage(e, "bbox");
    }
    return res;
}

inline GuidanceResult run_pipeline(const ExpertHeadSet& experts, const InferenceRecord& rec,
                                   const PipelineParams& p = {})
{
    const auto pool = pool_heads(experts, rec, p.pool);
    return run_pipeline(pool, rec, p);
}

} // namespace havc
