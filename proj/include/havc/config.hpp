#pragma once

// Flat JSON configuration. Every key is optional; unknown keys are rejected.
// Command-line flags are applied on top with the same key names.

#include "havc/error.hpp"
#include "havc/guidance.hpp"
#include "havc/head_profiler.hpp"
#include "havc/tensor_store.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace havc {

inline constexpr const char* kConfigEnvVar = "HAVC_CONFIG";

struct Config {
    PipelineParams pipeline;
    double expert_threshold = 0.5;
    NormalizationScope normalization = NormalizationScope::global;
    std::map<std::string, std::string> paths; ///< corpus, experts, record, out_dir

    void validate() const
    {
        const auto& e = pipeline.entropy;
        const auto& f = pipeline.fusion;
        const auto& b = pipeline.box;
        auto bad = [](const std::string& what) { throw Error(ErrorCode::invalid_argument, what); };
        if (!(expert_threshold >= 0.0 && expert_threshold <= 1.0)) bad("expert_threshold must lie in [0, 1]");
        if (!(e.lambda_c >= 0.0)) bad("lambda_c must be >= 0");
        if (!(e.lambda_d >= 0.0)) bad("lambda_d must be >= 0");
        if (!(e.threshold >= 0.0 && e.threshold <= 1.0)) bad("entropy_threshold must lie in [0, 1]");
        if (e.bins < 2) bad("otsu_bins must be >= 2");
        if (!(f.alpha >= 0.0 && f.alpha <= 1.0)) bad("alpha must lie in [0, 1]");
        if (!(f.tau > 0.0)) bad("tau must be > 0");
        if (!(b.threshold > 0.0 && b.threshold <= 1.0)) bad("box_threshold must lie in (0, 1]");
        if (b.min_side < 1) bad("min_side must be >= 1");
    }
};

namespace detail {

template<typename E>
E parse_enum(const std::string& key, const std::string& v,
             std::initializer_list<std::pair<const char*, E>> table)
{
    for (const auto& [name, value] : table)
        if (v == name) return value;
    throw Error(ErrorCode::invalid_argument, "invalid value \"" + v + "\" for " + key);
}

inline Connectivity parse_connectivity(int v)
{
    if (v == 4) return Connectivity::four;
    if (v == 8) return Connectivity::eight;
    throw Error(ErrorCode::invalid_argument, "connectivity must be 4 or 8");
}

} // namespace detail

inline const char* to_string(NormalizationScope s) { return s == NormalizationScope::global ? "global" : "per_layer"; }
inline const char* to_string(FusionScope s) { return s == FusionScope::survivors ? "survivors" : "pool"; }
inline const char* to_string(HeadPool p) { return p == HeadPool::experts ? "experts" : "all_heads"; }
inline const char* to_string(Weighting w) { return w == Weighting::softmax ? "softmax" : "uniform"; }

/// Applies the keys of `j` onto `cfg`.
inline void apply_config(Config& cfg, const nlohmann::json& j)
{
    if (!j.is_object()) throw Error(ErrorCode::invalid_argument, "config must be a JSON object");
    auto& p = cfg.pipeline;
    for (const auto& [key, v] : j.items()) {
        try {
            if (key == "alpha") p.fusion.alpha = v.get<double>();
            else if (key == "k") p.fusion.k = v.get<std::size_t>();
            else if (key == "tau") p.fusion.tau = v.get<double>();
            else if (key == "fusion_scope")
                p.fusion.scope = detail::parse_enum<FusionScope>(
                  key, v.get<std::string>(), {{"survivors", FusionScope::survivors}, {"pool", FusionScope::pool}});
            else if (key == "lambda_c") p.entropy.lambda_c = v.get<double>();
            else if (key == "lambda_d") p.entropy.lambda_d = v.get<double>();
            else if (key == "entropy_threshold") p.entropy.threshold = v.get<double>();
            else if (key == "otsu_bins") p.entropy.bins = v.get<std::size_t>();
            else if (key == "connectivity") {
                p.entropy.connectivity = detail::parse_connectivity(v.get<int>());
                p.box.connectivity = p.entropy.connectivity;
            } else if (key == "box_threshold") p.box.threshold = v.get<double>();
            else if (key == "pad") p.box.pad = v.get<std::size_t>();
            else if (key == "min_side") p.box.min_side = v.get<std::size_t>();
            else if (key == "pool")
                p.pool = detail::parse_enum<HeadPool>(
                  key, v.get<std::string>(), {{"experts", HeadPool::experts}, {"all_heads", HeadPool::all_heads}});
            else if (key == "entropy_filter") p.entropy_filter = v.get<bool>();
            else if (key == "weighting")
                p.weighting = detail::parse_enum<Weighting>(
                  key, v.get<std::string>(), {{"softmax", Weighting::softmax}, {"uniform", Weighting::uniform}});
            else if (key == "expert_threshold") cfg.expert_threshold = v.get<double>();
            else if (key == "normalization")
                cfg.normalization = detail::parse_enum<NormalizationScope>(
                  key, v.get<std::string>(),
                  {{"global", NormalizationScope::global}, {"per_layer", NormalizationScope::per_layer}});
            else if (key == "corpus" || key == "experts" || key == "record" || key == "out_dir")
                cfg.paths[key] = v.get<std::string>();
            else
                throw Error(ErrorCode::invalid_argument, "unknown config key \"" + key + "\"");
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::invalid_argument, "config key \"" + key + "\": " + e.what());
        }
    }
    cfg.validate();
}

inline Config load_config(const std::filesystem::path& path)
{
    Config cfg;
    apply_config(cfg, detail::read_json_file(path));
    return cfg;
}

/// Config from `explicit_path`, else from $HAVC_CONFIG, else defaults.
inline Config resolve_config(const std::optional<std::filesystem::path>& explicit_path)
{
    if (explicit_path) return load_config(*explicit_path);
    if (const char* env = std::getenv(kConfigEnvVar); env && *env) return load_config(env);
    return {};
}

inline nlohmann::json to_json(const Config& cfg)
{
    const auto& p = cfg.pipeline;
    nlohmann::json j = {
      {"alpha", p.fusion.alpha},
      {"k", p.fusion.k},
      {"tau", p.fusion.tau},
      {"fusion_scope", to_string(p.fusion.scope)},
      {"lambda_c", p.entropy.lambda_c},
      {"lambda_d", p.entropy.lambda_d},
      {"entropy_threshold", p.entropy.threshold},
      {"otsu_bins", p.entropy.bins},
      {"connectivity", int(p.entropy.connectivity)},
      {"box_threshold", p.box.threshold},
      {"pad", p.box.pad},
      {"min_side", p.box.min_side},
      {"pool", to_string(p.pool)},
      {"entropy_filter", p.entropy_filter},
      {"weighting", to_string(p.weighting)},
      {"expert_threshold", cfg.expert_threshold},
      {"normalization", to_string(cfg.normalization)},
    };
    return j;
}

} // namespace havc
