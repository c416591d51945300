// havc: command-line front end for head profiling, guidance maps, crops and
// synthetic scenarios.
//
// Exit status: 0 success, 1 usage, 2 data or validation error, 3 degenerate
// pipeline input (constant score matrix, no salient region).

#include "havc/havc.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

// Pipeline knobs exposed as flags; each maps onto the config key of the same
// name with dashes turned into underscores.
const std::vector<std::string> kTunableKeys = {
  "alpha", "k", "tau", "fusion_scope", "lambda_c", "lambda_d", "entropy_threshold", "otsu_bins",
  "connectivity", "box_threshold", "pad", "min_side", "pool", "entropy_filter", "weighting",
  "normalization",
};

struct ConfigFlags {
    std::optional<std::string> config_path;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;

    void attach(CLI::App* app, bool with_tunables = true)
    {
        app->add_option("--config", config_path, "config file (default: $HAVC_CONFIG)");
        if (!with_tunables) return;
        for (const auto& key : kTunableKeys) {
            std::string flag = "--" + key;
            std::replace(flag.begin(), flag.end(), '_', '-');
            options[key] = app->add_option(flag, values[key], "override config key " + key);
        }
    }

    havc::Config resolve() const
    {
        havc::Config cfg;
        try {
            cfg = havc::resolve_config(config_path ? std::optional<fs::path>(*config_path) : std::nullopt);
            json overrides = json::object();
            for (const auto& [key, opt] : options) {
                if (opt->count() == 0) continue;
                const auto& text = values.at(key);
                json v = json::parse(text, nullptr, false);
                overrides[key] = v.is_discarded() ? json(text) : v;
            }
            havc::apply_config(cfg, overrides);
        } catch (const havc::Error& e) {
            if (e.code() == havc::ErrorCode::invalid_argument) throw UsageError(e.what());
            throw;
        }
        return cfg;
    }
};

std::string path_or(const std::string& flag, const havc::Config& cfg, const char* key)
{
    if (!flag.empty()) return flag;
    if (auto it = cfg.paths.find(key); it != cfg.paths.end()) return it->second;
    throw UsageError(std::string("missing --") + key + " (not set in config either)");
}

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

//----------------------------------------------------------------------------

struct ScoreHeadsCmd {
    ConfigFlags flags;
    std::string corpus, out, table;
    std::optional<double> threshold;

    void attach(CLI::App* app)
    {
        app->add_option("--corpus", corpus, "diagnostic corpus manifest (.hvm)");
        app->add_option("--out", out, "expert-head document to write")->required();
        app->add_option("--table", table, "per-head score table (TSV) to write");
        app->add_option("--threshold", threshold, "expert threshold on normalized scores");
        flags.attach(app);
    }

    int run() const
    {
        auto cfg = flags.resolve();
        if (threshold) {
            if (!(*threshold >= 0.0 && *threshold <= 1.0))
                throw UsageError("--threshold must lie in [0, 1]");
            cfg.expert_threshold = *threshold;
        }
        const auto corpus_path = path_or(corpus, cfg, "corpus");
        const auto c = havc::load_corpus(corpus_path, warn);
        auto m = havc::accumulate(c);
        const auto experts = havc::normalize_and_filter(m, cfg.expert_threshold, cfg.normalization);
        havc::save_experts(experts, out);

        if (!table.empty()) {
            std::ostringstream os;
            os << "layer\thead\traw\tnormalized\texpert\n";
            for (std::size_t i = 0; i < experts.raw.size(); ++i) {
                const auto h = experts.geometry.unflat(i);
                os << h.layer << '\t' << h.head << '\t' << fmt("%.9g", experts.raw[i]) << '\t'
                   << fmt("%.9g", experts.normalized[i]) << '\t' << (experts.contains(h) ? 1 : 0)
                   << '\n';
            }
            havc::detail::write_text_file(table, os.str());
        }

        std::cout << c.records.size() << " records, " << experts.geometry.n_layers << "x"
                  << experts.geometry.n_heads << " heads, " << experts.heads.size()
                  << " experts above " << experts.threshold << '\n';
        for (const auto& h : experts.heads)
            std::cout << "  " << havc::to_string(h) << "  "
                      << fmt("%.4f", experts.normalized[experts.geometry.flat(h)]) << '\n';
        return 0;
    }
};

struct GuideCmd {
    ConfigFlags flags;
    std::string experts, record, out, map_hvt, map_pgm;
    unsigned cell = 8;

    void attach(CLI::App* app)
    {
        app->add_option("--experts", experts, "expert-head document");
        app->add_option("--record", record, "inference record manifest (.hvm)");
        app->add_option("--out", out, "guidance report (JSON) to write");
        app->add_option("--map-hvt", map_hvt, "write the guidance map as a tensor file");
        app->add_option("--map-pgm", map_pgm, "write the guidance map as a grayscale image");
        app->add_option("--cell", cell, "pixels per patch in --map-pgm")->check(CLI::PositiveNumber);
        flags.attach(app);
    }

    int run() const
    {
        const auto cfg = flags.resolve();
        const auto ex = havc::load_experts(path_or(experts, cfg, "experts"));
        const auto rec = havc::load_inference(path_or(record, cfg, "record"));
        if (!(ex.geometry == rec.geometry))
            throw havc::Error(havc::ErrorCode::geometry_mismatch,
                              "expert file and record declare different geometries");
        const auto res = havc::run_pipeline(ex, rec, cfg.pipeline);
        for (const auto& w : res.warnings) warn(w);

        if (!out.empty())
            havc::detail::write_text_file(out, havc::to_json(res, rec, cfg).dump(1) + "\n");
        if (!map_hvt.empty())
            havc::write_tensor_file(
              havc::Tensor({res.map.rows, res.map.cols},
                           std::vector<float>(res.map.values.begin(), res.map.values.end())),
              map_hvt);
        if (!map_pgm.empty()) havc::write_pnm(havc::render_map(res.map, cell), map_pgm);

        const double alpha = cfg.pipeline.fusion.alpha;
        std::cout << "branch weights: entropy " << alpha << ", gradient " << 1.0 - alpha
                  << (res.gradient_available ? "" : " (no gradient in record)") << '\n';
        if (res.fallback) std::cout << "fallback: no head passed the entropy filter\n";
        std::cout << "head        E        G            S        w\n";
        for (const auto& a : res.selected)
            std::cout << std::left << std::setw(10) << havc::to_string(a.head) << std::right
                      << fmt("%7.4f", a.entropy) << "  " << fmt("%11.4e", a.grad_score) << "  "
                      << fmt("%7.4f", a.fused) << "  " << fmt("%7.4f", a.weight) << '\n';
        const auto& b = res.crop;
        std::cout << "bbox pixel [" << b.x0 << ", " << b.y0 << ", " << b.x1 << ", " << b.y1
                  << ")  patch rows " << b.patch.r0 << ".." << b.patch.r1 << " cols "
                  << b.patch.c0 << ".." << b.patch.c1 << '\n';
        return 0;
    }
};

struct CropCmd {
    std::string image, bbox, report, out;

    void attach(CLI::App* app)
    {
        app->add_option("--image", image, "source image (binary PGM/PPM)")->required();
        auto* b = app->add_option("--bbox", bbox, "pixel box x0,y0,x1,y1 (half-open)");
        auto* r = app->add_option("--report", report, "guidance report carrying the box");
        b->excludes(r);
        app->add_option("--out", out, "cropped image to write")->required();
    }

    int run() const
    {
        havc::CropBox box;
        if (!bbox.empty()) {
            std::vector<long long> v;
            std::stringstream ss(bbox);
            for (std::string tok; std::getline(ss, tok, ',');) {
                try {
                    std::size_t used = 0;
                    v.push_back(std::stoll(tok, &used));
                    if (used != tok.size()) throw std::invalid_argument(tok);
                } catch (const std::exception&) {
                    throw UsageError("--bbox expects four integers x0,y0,x1,y1");
                }
            }
            if (v.size() != 4 || std::any_of(v.begin(), v.end(), [](long long x) { return x < 0; }))
                throw UsageError("--bbox expects four nonnegative integers x0,y0,x1,y1");
            box.x0 = std::uint32_t(v[0]);
            box.y0 = std::uint32_t(v[1]);
            box.x1 = std::uint32_t(v[2]);
            box.y1 = std::uint32_t(v[3]);
        } else if (!report.empty()) {
            const auto doc = havc::detail::read_json_file(report);
            if (!doc.contains("bbox"))
                throw havc::Error(havc::ErrorCode::validation, report + ": no bbox in report");
            box = havc::crop_from_json(doc.at("bbox"));
        } else {
            throw UsageError("crop needs --bbox or --report");
        }
        const auto img = havc::read_pnm(image);
        const auto cropped = havc::crop_image(img, box);
        havc::write_pnm(cropped, out);
        std::cout << "cropped " << img.width << "x" << img.height << " -> " << cropped.width << "x"
                  << cropped.height << '\n';
        return 0;
    }
};

/// Grayscale test scene for a scenario: a diagonal texture with the planted
/// region brightened, so crops can be checked pixel by pixel.
havc::Image scene_image(const havc::ScenarioSpec& s)
{
    havc::Image img;
    img.width = img.height = s.grid_side * s.patch_size;
    img.pixels.resize(std::size_t(img.width) * img.height);
    for (std::uint32_t y = 0; y < img.height; ++y)
        for (std::uint32_t x = 0; x < img.width; ++x) {
            const bool hot = s.planted_region.contains(y / s.patch_size, x / s.patch_size);
            img.pixels[std::size_t(y) * img.width + x] =
              static_cast<std::uint8_t>((x * 7 + y * 13) % 160 + (hot ? 95 : 0));
        }
    return img;
}

struct SynthCmd {
    ConfigFlags flags;
    std::string scenario, out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> records;

    void attach(CLI::App* app)
    {
        app->add_option("--scenario", scenario, "scenario file (JSON); defaults if omitted");
        app->add_option("--out-dir", out_dir, "output directory");
        app->add_option("--seed", seed, "override the scenario seed");
        app->add_option("--records", records, "override the corpus record count");
        flags.attach(app, false);
    }

    int run() const
    {
        const auto cfg = flags.resolve();
        const fs::path dir = path_or(out_dir, cfg, "out_dir");
        havc::ScenarioDocument doc;
        if (!scenario.empty()) {
            try {
                doc = havc::scenario_from_json(havc::detail::read_json_file(scenario));
            } catch (const havc::Error& e) {
                if (e.code() == havc::ErrorCode::invalid_argument) throw UsageError(e.what());
                throw;
            }
        } else {
            doc.spec = havc::make_localization_scenario(0);
        }
        if (seed) doc.spec.seed = *seed;
        if (records) {
            if (*records == 0) throw UsageError("--records must be >= 1");
            doc.n_records = *records;
        }
        fs::create_directories(dir);
        if (doc.corpus) havc::save_corpus(havc::gen_diagnostic_corpus(doc.spec, doc.n_records), dir / "corpus.hvm");
        if (doc.inference) {
            havc::save_inference(havc::gen_inference_record(doc.spec), dir / "record.hvm");
            havc::write_pnm(scene_image(doc.spec), dir / "scene.pgm");
        }
        havc::detail::write_text_file(dir / "scenario.json", havc::to_json(doc).dump(1) + "\n");
        std::cout << "wrote scenario seed " << doc.spec.seed << " to " << dir.string() << '\n';
        return 0;
    }
};

struct RenderCmd {
    std::string map, record, head, out;
    unsigned cell = 8;

    void attach(CLI::App* app)
    {
        auto* m = app->add_option("--map", map, "map tensor file ([n, n] or [n*n])");
        auto* r = app->add_option("--record", record, "inference record manifest");
        m->excludes(r);
        app->add_option("--head", head, "head of --record to render, as layer,head");
        app->add_option("--out", out, "grayscale image to write")->required();
        app->add_option("--cell", cell, "pixels per patch")->check(CLI::PositiveNumber);
    }

    int run() const
    {
        havc::GridMap grid;
        if (!map.empty()) {
            const auto t = havc::read_tensor_file(map);
            if (t.rank() == 2 && t.dims()[0] == t.dims()[1])
                grid = havc::GridMap(t.dims()[0], t.dims()[1],
                                     std::vector<double>(t.data().begin(), t.data().end()));
            else if (t.rank() == 1)
                grid = havc::reshape_attention(t.data());
            else
                throw havc::Error(havc::ErrorCode::validation, map + ": expected a square map tensor");
        } else if (!record.empty()) {
            unsigned l = 0, h = 0;
            char comma = 0;
            std::istringstream ss(head);
            if (!(ss >> l >> comma >> h) || comma != ',' || !ss.eof())
                throw UsageError("--head expects layer,head");
            const auto rec = havc::load_inference(record);
            const auto row = rec.find({l, h});
            if (row == havc::InferenceRecord::npos)
                throw havc::Error(havc::ErrorCode::validation,
                                  "head " + havc::to_string({l, h}) + " not in record");
            grid = havc::reshape_attention(rec.attn.row(row), rec.grid_side);
        } else {
            throw UsageError("render needs --map or --record");
        }
        havc::write_pnm(havc::render_map(grid, cell), out);
        return 0;
    }
};

struct SweepCmd {
    std::string suite = "sweep", out;
    std::size_t seeds = 100;
    std::uint64_t first_seed = 0;

    void attach(CLI::App* app)
    {
        app->add_option("--suite", suite, "scenario family")->check(CLI::IsMember({"e2e", "sweep"}));
        app->add_option("--seeds", seeds, "number of scenarios")->check(CLI::PositiveNumber);
        app->add_option("--first-seed", first_seed, "seed of the first scenario");
        app->add_option("--out", out, "sweep report (JSON) to write");
    }

    int run() const
    {
        const auto fam = suite == "e2e" ? havc::e2e_suite() : havc::sweep_suite();
        const auto cases = havc::build_suite(fam, first_seed, seeds);
        const auto table = havc::sweep_alpha_k(cases, {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}, {1, 2, 4, 8, 16});
        const auto ladder = havc::ablation_ladder(cases);
        const json doc = {
          {"kind", "havc.sweep"},
          {"version", havc::kManifestVersion},
          {"suite", suite},
          {"seeds", seeds},
          {"first_seed", first_seed},
          {"table", havc::to_json(table)},
          {"ladder", havc::to_json(ladder)},
        };
        if (!out.empty()) havc::detail::write_text_file(out, doc.dump(1) + "\n");

        std::cout << "mean IoU, " << seeds << " scenarios (" << suite << ")\nalpha\\K";
        for (auto k : table.ks) std::cout << std::setw(8) << k;
        std::cout << '\n';
        for (std::size_t i = 0; i < table.alphas.size(); ++i) {
            std::cout << fmt("%-7.1f", table.alphas[i]);
            for (double v : table.mean_iou[i]) std::cout << fmt("%8.3f", v);
            std::cout << '\n';
        }
        std::cout << "best alpha " << table.alphas[table.best_alpha] << ", K " << table.ks[table.best_k]
                  << (table.alpha_interior() ? " (alpha interior)" : "")
                  << (table.k_interior() ? " (K interior)" : "") << '\n';
        for (const auto& r : ladder)
            std::cout << std::left << std::setw(24) << r.name << std::right << fmt("%.3f", r.score.mean_iou) << "  "
                      << r.score.hits << "/" << r.score.cases << '\n';
        return 0;
    }
};

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"havc: attention-head guided visual cropping"};
    app.require_subcommand(1);

    ScoreHeadsCmd score;
    GuideCmd guide;
    CropCmd crop;
    SynthCmd synth;
    RenderCmd render;
    SweepCmd sweep;
    score.attach(app.add_subcommand("score-heads", "profile heads on a diagnostic corpus"));
    guide.attach(app.add_subcommand("guide", "guidance map and crop box for one record"));
    crop.attach(app.add_subcommand("crop", "cut a box out of an image"));
    synth.attach(app.add_subcommand("synth", "write a synthetic corpus and record"));
    render.attach(app.add_subcommand("render", "render a map or a head as an image"));
    sweep.attach(app.add_subcommand("sweep", "alpha x K sweep and ablation ladder on synthetic scenarios"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand("score-heads")) return score.run();
        if (app.got_subcommand("guide")) return guide.run();
        if (app.got_subcommand("crop")) return crop.run();
        if (app.got_subcommand("synth")) return synth.run();
        if (app.got_subcommand("render")) return render.run();
        if (app.got_subcommand("sweep")) return sweep.run();
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const havc::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.is_degenerate() ? 3 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
