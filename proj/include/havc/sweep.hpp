#pragma once

// Localization harness on seeded synthetic scenarios: ablation ladder and
// alpha x K parameter sweeps, scored by patch-space IoU against the planted
// region.

#include "havc/guidance.hpp"
#include "havc/rng.hpp"
#include "havc/synth_bench.hpp"
#include "havc/types.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace havc {

struct SuiteCase {
    ScenarioSpec spec;
    InferenceRecord record;
};

inline std::vector<SuiteCase> build_suite(const LocalizationSuite& suite, std::uint64_t first_seed,
                                          std::size_t n)
{
    std::vector<SuiteCase> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        SuiteCase c;
        c.spec = make_localization_scenario(first_seed + i, suite);
        c.record = gen_inference_record(c.spec);
        out.push_back(std::move(c));
    }
    return out;
}

struct SuiteScore {
    double mean_iou = 0.0;
    std::size_t hits = 0; ///< cases with IoU >= 0.5
    std::size_t cases = 0;
    std::vector<double> iou;
};

inline double case_iou(const SuiteCase& c, const PipelineParams& p)
{
    const auto res = run_pipeline(std::span<const HeadId>(
                                    p.pool == HeadPool::all_heads ? c.record.heads : c.spec.planted_heads),
                                  c.record, p);
    return iou(res.crop.patch, c.spec.planted_region);
}

inline SuiteScore score_suite(std::span<const SuiteCase> cases, const PipelineParams& p)
{
    SuiteScore s;
    s.cases = cases.size();
    for (const auto& c : cases) {
        const double v = case_iou(c, p);
        s.iou.push_back(v);
        s.mean_iou += v;
        if (v >= 0.5) ++s.hits;
    }
    if (s.cases) s.mean_iou /= double(s.cases);
    return s;
}

/// Pipeline configurations of the ablation ladder, weakest first.
enum class Ablation { all_heads, filter_heads, filter_entropy, filter_gradient, full };

inline const char* to_string(Ablation a)
{
    switch (a) {
    case Ablation::all_heads: return "all_heads";
    case Ablation::filter_heads: return "filter_heads";
    case Ablation::filter_entropy: return "filter_heads+entropy";
    case Ablation::filter_gradient: return "filter_heads+gradient";
    case Ablation::full: return "havc";
    }
    return "?";
}

inline PipelineParams ablation_params(Ablation a, PipelineParams base = {})
{
    switch (a) {
    case Ablation::all_heads:
        base.pool = HeadPool::all_heads;
        base.entropy_filter = false;
        base.fusion.k = 0;
        base.weighting = Weighting::uniform;
        break;
    case Ablation::filter_heads:
        base.pool = HeadPool::experts;
        base.entropy_filter = false;
        base.fusion.k = 0;
        base.weighting = Weighting::uniform;
        break;
    case Ablation::filter_entropy:
        base.pool = HeadPool::experts;
        base.fusion.alpha = 1.0;
        break;
    case Ablation::filter_gradient:
        base.pool = HeadPool::experts;
        base.entropy_filter = false;
        base.fusion.alpha = 0.0;
        break;
    case Ablation::full:
        base.pool = HeadPool::experts;
        break;
    }
    return base;
}

struct LadderRow {
    std::string name;
    SuiteScore score;
};

/// No-crop and random-crop baselines followed by every ablation step.
inline std::vector<LadderRow> ablation_ladder(std::span<const SuiteCase> cases,
                                              const PipelineParams& base = {})
{
    std::vector<LadderRow> rows;
    LadderRow none{"no_crop", {}}, random{"random_crop", {}};
    for (const auto& c : cases) {
        const std::size_t n = c.spec.grid_side;
        const PatchBox full{0, 0, n - 1, n - 1};
        Rng rng = Rng::stream(c.spec.seed, 0xc409);
        const std::size_t h = 2 + rng.below(n / 2), w = 2 + rng.below(n / 2);
        const std::size_t r0 = rng.below(n - h + 1), c0 = rng.below(n - w + 1);
        const PatchBox rnd{r0, c0, r0 + h - 1, c0 + w - 1};
        for (auto* row : {&none, &random}) {
            const double v = iou(row == &none ? full : rnd, c.spec.planted_region);
            row->score.iou.push_back(v);
            row->score.mean_iou += v;
            row->score.hits += v >= 0.5;
            ++row->score.cases;
        }
    }
    for (auto* row : {&none, &random}) row->score.mean_iou /= double(std::max<std::size_t>(1, row->score.cases));
    rows.push_back(std::move(none));
    rows.push_back(std::move(random));
    for (auto a : {Ablation::all_heads, Ablation::filter_heads, Ablation::filter_entropy,
                   Ablation::filter_gradient, Ablation::full})
        rows.push_back({to_string(a), score_suite(cases, ablation_params(a, base))});
    return rows;
}

struct SweepTable {
    std::vector<double> alphas;
    std::vector<std::size_t> ks;
    std::vector<std::vector<double>> mean_iou; ///< [alpha][k]
    std::size_t best_alpha = 0, best_k = 0;    ///< first maximum in row-major order

    [[nodiscard]] bool alpha_interior() const
    {
        return best_alpha > 0 && best_alpha + 1 < alphas.size();
    }
    [[nodiscard]] bool k_interior() const { return best_k > 0 && best_k + 1 < ks.size(); }
};

inline SweepTable sweep_alpha_k(std::span<const SuiteCase> cases, std::vector<double> alphas,
                                std::vector<std::size_t> ks, const PipelineParams& base = {})
{
    SweepTable t;
    t.alphas = std::move(alphas);
    t.ks = std::move(ks);
    double best = -1.0;
    for (std::size_t i = 0; i < t.alphas.size(); ++i) {
        t.mean_iou.emplace_back();
        for (std::size_t j = 0; j < t.ks.size(); ++j) {
            auto p = base;
            p.fusion.alpha = t.alphas[i];
            p.fusion.k = t.ks[j];
            const double v = score_suite(cases, p).mean_iou;
            t.mean_iou.back().push_back(v);
            if (v > best) {
                best = v;
                t.best_alpha = i;
                t.best_k = j;
            }
        }
    }
    return t;
}

inline nlohmann::json to_json(const SweepTable& t)
{
    return {
      {"alphas", t.alphas},
      {"ks", t.ks},
      {"mean_iou", t.mean_iou},
      {"best", {{"alpha", t.alphas[t.best_alpha]}, {"k", t.ks[t.best_k]},
                {"mean_iou", t.mean_iou[t.best_alpha][t.best_k]}}},
      {"alpha_interior", t.alpha_interior()},
      {"k_interior", t.k_interior()},
    };
}

inline nlohmann::json to_json(const std::vector<LadderRow>& rows)
{
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows)
        out.push_back({{"config", r.name}, {"mean_iou", r.score.mean_iou}, {"hits", r.score.hits},
                       {"cases", r.score.cases}});
    return out;
}

/// Scenario family of the end-to-end localization check: one focused,
/// useful head among fifteen scattered noise heads; the expert set holds the
/// useful head and seven noise heads.
inline LocalizationSuite e2e_suite()
{
    return {};
}

/// Scenario family of the parameter sweep: useful heads jittered around the
/// target, focused distractors elsewhere (low gradient), context heads with
/// high gradient but a split two-peak map, and scattered noise heads.
inline LocalizationSuite sweep_suite()
{
    LocalizationSuite s;
    s.geometry = {4, 8};
    s.useful = 5;
    s.distractors = 4;
    s.context = 4;
    s.noise_experts = 11;
    s.jitter = 2.0;
    return s;
}

} // namespace havc
