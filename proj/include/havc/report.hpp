#pragma once

// Structured-text (JSON) documents exchanged by the CLI: expert-head sets,
// guidance reports and scenario specs. Schemas live in schemas/.

#include "havc/config.hpp"
#include "havc/error.hpp"
#include "havc/guidance.hpp"
#include "havc/head_profiler.hpp"
#include "havc/synth_bench.hpp"
#include "havc/tensor_store.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace havc {

inline constexpr const char* kExpertsKind = "havc.experts";
inline constexpr const char* kGuidanceKind = "havc.guidance";
inline constexpr const char* kScenarioKind = "havc.scenario";

namespace detail {

inline nlohmann::json matrix_json(const std::vector<double>& flat, const HeadGeometry& g)
{
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t l = 0; l < g.n_layers; ++l)
        rows.push_back(std::vector<double>(flat.begin() + l * g.n_heads,
                                           flat.begin() + (l + 1) * g.n_heads));
    return rows;
}

inline std::vector<double> matrix_from_json(const nlohmann::json& j, const HeadGeometry& g)
{
    std::vector<double> out;
    if (!j.is_array() || j.size() != g.n_layers)
        throw Error(ErrorCode::validation, "score matrix must have one row per layer");
    for (const auto& row : j) {
        if (!row.is_array() || row.size() != g.n_heads)
            throw Error(ErrorCode::validation, "score row must have one entry per head");
        for (const auto& v : row) out.push_back(v.get<double>());
    }
    return out;
}

} // namespace detail

inline nlohmann::json to_json(const ExpertHeadSet& s)
{
    return {
      {"kind", kExpertsKind},
      {"version", kManifestVersion},
      {"geometry", {{"n_layers", s.geometry.n_layers}, {"n_heads", s.geometry.n_heads}}},
      {"threshold", s.threshold},
      {"normalization", to_string(s.scope)},
      {"heads", detail::heads_to_json(s.heads)},
      {"raw", detail::matrix_json(s.raw, s.geometry)},
      {"normalized", detail::matrix_json(s.normalized, s.geometry)},
    };
}

inline ExpertHeadSet experts_from_json(const nlohmann::json& doc)
{
    ExpertHeadSet s;
    try {
        detail::expect_kind(doc, kExpertsKind);
        s.geometry = detail::geometry_from_json(doc.at("geometry"));
        s.threshold = doc.at("threshold").get<double>();
        s.scope = doc.value("normalization", std::string("global")) == "per_layer"
                    ? NormalizationScope::per_layer
                    : NormalizationScope::global;
        s.heads = detail::heads_from_json(doc.at("heads"));
        if (doc.contains("raw")) s.raw = detail::matrix_from_json(doc.at("raw"), s.geometry);
        if (doc.contains("normalized"))
            s.normalized = detail::matrix_from_json(doc.at("normalized"), s.geometry);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::validation, std::string("expert file: ") + e.what());
    }
    detail::check_heads(s.heads, s.geometry, "expert file");
    std::sort(s.heads.begin(), s.heads.end());
    return s;
}

inline void save_experts(const ExpertHeadSet& s, const std::filesystem::path& path)
{
    detail::write_text_file(path, to_json(s).dump(1) + "\n");
}

inline ExpertHeadSet load_experts(const std::filesystem::path& path)
{
    return experts_from_json(detail::read_json_file(path));
}

inline nlohmann::json to_json(const HeadAssessment& a)
{
    return {
      {"head", {a.head.layer, a.head.head}},
      {"entropy", a.entropy},
      {"components", a.components},
      {"dispersion", a.dispersion},
      {"grad_score", a.grad_score},
      {"fused", a.fused},
      {"weight", a.weight},
      {"survived", a.survived},
    };
}

inline nlohmann::json to_json(const CropBox& b)
{
    return {
      {"pixel", {{"x0", b.x0}, {"y0", b.y0}, {"x1", b.x1}, {"y1", b.y1}}},
      {"patch", {{"r0", b.patch.r0}, {"c0", b.patch.c0}, {"r1", b.patch.r1}, {"c1", b.patch.c1}}},
    };
}

inline CropBox crop_from_json(const nlohmann::json& j)
{
    CropBox b;
    try {
        const auto& px = j.at("pixel");
        b.x0 = px.at("x0").get<std::uint32_t>();
        b.y0 = px.at("y0").get<std::uint32_t>();
        b.x1 = px.at("x1").get<std::uint32_t>();
        b.y1 = px.at("y1").get<std::uint32_t>();
        if (j.contains("patch")) {
            const auto& pt = j.at("patch");
            b.patch = {pt.at("r0").get<std::size_t>(), pt.at("c0").get<std::size_t>(),
                       pt.at("r1").get<std::size_t>(), pt.at("c1").get<std::size_t>()};
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::validation, std::string("bbox: ") + e.what());
    }
    return b;
}

inline nlohmann::json to_json(const GuidanceResult& r, const InferenceRecord& rec, const Config& cfg)
{
    nlohmann::json assessed = nlohmann::json::array(), selected = nlohmann::json::array();
    for (const auto& a : r.assessed) assessed.push_back(to_json(a));
    for (const auto& a : r.selected) selected.push_back(to_json(a));
    const double alpha = cfg.pipeline.fusion.alpha;
    return {
      {"kind", kGuidanceKind},
      {"version", kManifestVersion},
      {"config", to_json(cfg)},
      {"branch_weights", {{"entropy", alpha}, {"gradient", 1.0 - alpha}}},
      {"gradient_available", r.gradient_available},
      {"fallback", r.fallback},
      {"warnings", r.warnings},
      {"image", {{"w", rec.image_w}, {"h", rec.image_h}, {"patch_size", rec.patch_size},
                 {"grid_side", rec.grid_side}}},
      {"assessed", std::move(assessed)},
      {"selected", std::move(selected)},
      {"bbox", to_json(r.crop)},
    };
}

//----------------------------------------------------------------------------
// Scenario documents (drive `havc synth`)
//----------------------------------------------------------------------------

struct ScenarioDocument {
    ScenarioSpec spec;
    std::size_t n_records = 200;
    bool corpus = true;
    bool inference = true;
};

inline ScenarioDocument scenario_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) throw Error(ErrorCode::invalid_argument, "scenario must be a JSON object");
    ScenarioDocument d;
    auto& s = d.spec;
    for (const auto& [key, v] : j.items()) {
        try {
            if (key == "kind") {
                if (v.get<std::string>() != kScenarioKind)
                    throw Error(ErrorCode::invalid_argument, "scenario kind mismatch");
            } else if (key == "version") {
                if (v.get<unsigned>() != kManifestVersion)
                    throw Error(ErrorCode::version_mismatch, "scenario version unsupported");
            } else if (key == "grid_side") s.grid_side = v.get<std::uint32_t>();
            else if (key == "patch_size") s.patch_size = v.get<std::uint32_t>();
            else if (key == "n_layers") s.geometry.n_layers = v.get<std::uint32_t>();
            else if (key == "n_heads") s.geometry.n_heads = v.get<std::uint32_t>();
            else if (key == "planted_heads") s.planted_heads = detail::heads_from_json(v);
            else if (key == "useful_heads") s.useful_heads = detail::heads_from_json(v);
            else if (key == "distractor_heads") s.distractor_heads = detail::heads_from_json(v);
            else if (key == "context_heads") s.context_heads = detail::heads_from_json(v);
            else if (key == "planted_region") {
                const auto r = v.get<std::vector<std::size_t>>();
                if (r.size() != 4)
                    throw Error(ErrorCode::invalid_argument, "planted_region is [r0, c0, r1, c1]");
                s.planted_region = {r[0], r[1], r[2], r[3]};
            } else if (key == "noise") s.noise = v.get<double>();
            else if (key == "jitter") s.jitter = v.get<double>();
            else if (key == "gain_spread") s.gain_spread = v.get<double>();
            else if (key == "text_tokens") s.text_tokens = v.get<std::uint32_t>();
            else if (key == "bias") s.bias = v.get<double>();
            else if (key == "seed") s.seed = v.get<std::uint64_t>();
            else if (key == "n_records") d.n_records = v.get<std::size_t>();
            else if (key == "emit_corpus") d.corpus = v.get<bool>();
            else if (key == "emit_inference") d.inference = v.get<bool>();
            else throw Error(ErrorCode::invalid_argument, "unknown scenario key \"" + key + "\"");
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::invalid_argument, "scenario key \"" + key + "\": " + e.what());
        }
    }
    s.validate();
    if (d.n_records == 0) throw Error(ErrorCode::invalid_argument, "n_records must be >= 1");
    return d;
}

inline nlohmann::json to_json(const ScenarioDocument& d)
{
    const auto& s = d.spec;
    const auto& r = s.planted_region;
    return {
      {"kind", kScenarioKind},
      {"version", kManifestVersion},
      {"grid_side", s.grid_side},
      {"patch_size", s.patch_size},
      {"n_layers", s.geometry.n_layers},
      {"n_heads", s.geometry.n_heads},
      {"planted_heads", detail::heads_to_json(s.planted_heads)},
      {"useful_heads", detail::heads_to_json(s.useful_heads)},
      {"distractor_heads", detail::heads_to_json(s.distractor_heads)},
      {"context_heads", detail::heads_to_json(s.context_heads)},
      {"planted_region", {r.r0, r.c0, r.r1, r.c1}},
      {"noise", s.noise},
      {"jitter", s.jitter},
      {"gain_spread", s.gain_spread},
      {"text_tokens", s.text_tokens},
      {"bias", s.bias},
      {"seed", s.seed},
      {"n_records", d.n_records},
      {"emit_corpus", d.corpus},
      {"emit_inference", d.inference},
    };
}

} // namespace havc
