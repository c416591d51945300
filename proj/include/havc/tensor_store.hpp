#pragma once

// Binary tensor format (.hvt), little-endian throughout:
//
//   offset  size        field
//   0       4           magic "HAVC"
//   4       4           format version (u32), currently 1
//   8       4           dim count n (u32), 1 <= n <= kMaxRank
//   12      8*n         dims (u64 each, all > 0)
//   12+8n   4*prod(d)   payload, IEEE-754 binary32, row-major
//
// Manifests (.hvm) are JSON documents referencing .hvt files by path relative
// to the manifest's directory. See docs/formats.md.

#include "havc/error.hpp"
#include "havc/types.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace havc {

inline constexpr std::array<char, 4> kTensorMagic{'H', 'A', 'V', 'C'};
inline constexpr std::uint32_t kTensorVersion = 1;
inline constexpr std::uint32_t kMaxRank = 8;
/// Upper bound on payload elements a reader will accept (16 Gi floats).
inline constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;

inline constexpr std::uint32_t kManifestVersion = 1;
inline constexpr const char* kCorpusKind = "havc.corpus";
inline constexpr const char* kInferenceKind = "havc.inference";

/// Receives non-fatal diagnostics (e.g. renormalized attention rows).
using WarningSink = std::function<void(const std::string&)>;

namespace detail {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

inline void put_u32(std::ostream& os, std::uint32_t v)
{
    const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                       char((v >> 24) & 0xff)};
    os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v)
{
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

inline bool get_bytes(std::istream& is, unsigned char* out, std::size_t n)
{
    is.read(reinterpret_cast<char*>(out), static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(is.gcount()) == n;
}

inline std::uint32_t le_u32(const unsigned char* b)
{
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

inline std::uint64_t le_u64(const unsigned char* b)
{
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

} // namespace detail

/// Serializes `t`; returns the number of bytes written. Nothing is written if
/// the tensor is invalid.
inline std::size_t write_tensor(const Tensor& t, std::ostream& sink)
{
    t.validate();
    if (t.rank() > kMaxRank)
        throw Error(ErrorCode::dim_overflow, "rank " + std::to_string(t.rank()) + " exceeds " +
                                               std::to_string(kMaxRank));

    sink.write(kTensorMagic.data(), 4);
    detail::put_u32(sink, kTensorVersion);
    detail::put_u32(sink, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.dims()) detail::put_u64(sink, d);

    std::vector<char> payload(t.size() * 4);
    std::size_t k = 0;
    for (float v : t.data()) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        payload[k++] = char(bits & 0xff);
        payload[k++] = char((bits >> 8) & 0xff);
        payload[k++] = char((bits >> 16) & 0xff);
        payload[k++] = char((bits >> 24) & 0xff);
    }
    sink.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!sink) throw Error(ErrorCode::io, "failed writing tensor");
    return 12 + 8 * t.rank() + payload.size();
}

/// Reads one tensor from the current stream position.
inline Tensor read_tensor(std::istream& source)
{
    unsigned char head[12];
    if (!detail::get_bytes(source, head, 4))
        throw Error(ErrorCode::truncated, "stream ends inside magic");
    if (std::memcmp(head, kTensorMagic.data(), 4) != 0)
        throw Error(ErrorCode::bad_magic, "expected \"HAVC\"");
    if (!detail::get_bytes(source, head + 4, 8))
        throw Error(ErrorCode::truncated, "stream ends inside header");

    const auto version = detail::le_u32(head + 4);
    if (version != kTensorVersion)
        throw Error(ErrorCode::version_mismatch, "format version " + std::to_string(version) +
                                                   ", reader supports " +
                                                   std::to_string(kTensorVersion));
    const auto rank = detail::le_u32(head + 8);
    if (rank == 0 || rank > kMaxRank)
        throw Error(ErrorCode::dim_overflow, "dim count " + std::to_string(rank));

    std::vector<std::uint64_t> dims(rank);
    std::uint64_t count = 1;
    for (auto& d : dims) {
        unsigned char b[8];
        if (!detail::get_bytes(source, b, 8))
            throw Error(ErrorCode::truncated, "stream ends inside dims");
        d = detail::le_u64(b);
        if (d == 0) throw Error(ErrorCode::validation, "zero-sized dim");
        if (d > kMaxElements || count > kMaxElements / d)
            throw Error(ErrorCode::dim_overflow, "element count exceeds limit");
        count *= d;
    }

    std::vector<unsigned char> payload(count * 4);
    if (!detail::get_bytes(source, payload.data(), payload.size()))
        throw Error(ErrorCode::truncated, "payload shorter than " + std::to_string(count) +
                                            " floats");

    std::vector<float> data(count);
    for (std::size_t i = 0; i < count; ++i) {
        data[i] = std::bit_cast<float>(detail::le_u32(&payload[4 * i]));
        if (!std::isfinite(data[i]))
            throw Error(ErrorCode::non_finite, "non-finite value at element " + std::to_string(i));
    }
    return Tensor(std::move(dims), std::move(data));
}

inline std::vector<char> encode_tensor(const Tensor& t)
{
    std::ostringstream os(std::ios::binary);
    write_tensor(t, os);
    const auto s = os.str();
    return {s.begin(), s.end()};
}

/// Decodes a standalone buffer; bytes after the payload are an error.
inline Tensor decode_tensor(std::span<const char> bytes)
{
    std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
    Tensor t = read_tensor(is);
    if (is.peek() != std::char_traits<char>::eof())
        throw Error(ErrorCode::trailing_data, "bytes after tensor payload");
    return t;
}

inline void write_tensor_file(const Tensor& t, const std::filesystem::path& path)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::io, "cannot open " + path.string() + " for writing");
    write_tensor(t, os);
}

inline Tensor read_tensor_file(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::io, "cannot open " + path.string());
    try {
        Tensor t = read_tensor(is);
        if (is.peek() != std::char_traits<char>::eof())
            throw Error(ErrorCode::trailing_data, "bytes after tensor payload");
        return t;
    } catch (const Error& e) {
        throw Error(e.code(), path.string() + ": " + e.what());
    }
}

//----------------------------------------------------------------------------
// Records
//----------------------------------------------------------------------------

/// Token-index sets of one model input sequence. `valid` excludes special
/// tokens; `visual` is the image-patch subset of `valid`.
struct SequenceLayout {
    std::uint64_t total_len = 0;
    std::vector<std::uint32_t> valid;
    std::vector<std::uint32_t> visual;

    void validate() const
    {
        auto strictly_increasing = [](const std::vector<std::uint32_t>& v) {
            return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
        };
        if (total_len == 0) throw Error(ErrorCode::validation, "sequence length is zero");
        if (valid.empty()) throw Error(ErrorCode::validation, "valid index set is empty");
        if (visual.empty()) throw Error(ErrorCode::validation, "visual index set is empty");
        if (!strictly_increasing(valid) || !strictly_increasing(visual))
            throw Error(ErrorCode::validation, "index sets must be strictly increasing");
        if (valid.back() >= total_len)
            throw Error(ErrorCode::validation,
                        "valid index " + std::to_string(valid.back()) + " outside sequence");
        if (!std::includes(valid.begin(), valid.end(), visual.begin(), visual.end()))
            throw Error(ErrorCode::validation, "visual indices are not a subset of valid indices");
    }

    [[nodiscard]] bool is_visual(std::uint32_t j) const
    {
        return std::binary_search(visual.begin(), visual.end(), j);
    }

    friend bool operator==(const SequenceLayout&, const SequenceLayout&) = default;
};

/// One matched OCR output token: per-head attention rows over the whole input
/// sequence and the visual tokens covered by the token's ground-truth region.
struct DiagnosticRecord {
    SequenceLayout layout;
    std::vector<std::uint32_t> mask; ///< sorted support of the binary mask
    std::vector<HeadId> heads;       ///< row labels of `attn`
    Tensor attn;                     ///< [heads.size(), total_len]
    std::uint64_t token_index = 0;

    [[nodiscard]] std::span<const float> row(std::size_t k) const { return attn.row(k); }

    friend bool operator==(const DiagnosticRecord&, const DiagnosticRecord&) = default;
};

struct Corpus {
    HeadGeometry geometry;
    std::vector<DiagnosticRecord> records;
};

/// Attention and gradient-sensitivity vectors of one decoding step.
struct InferenceRecord {
    HeadGeometry geometry;
    std::uint32_t grid_side = 0;
    std::vector<HeadId> heads; ///< row labels of `attn` and `grad`
    Tensor attn;               ///< [heads.size(), grid_side^2]
    std::optional<Tensor> grad;
    std::uint32_t image_w = 0;
    std::uint32_t image_h = 0;
    std::uint32_t patch_size = 0;
    std::string predicted_token;
    double log_prob = 0.0;

    [[nodiscard]] std::size_t n_visual() const noexcept
    {
        return std::size_t(grid_side) * grid_side;
    }

    /// Row index of `id`, or npos if the record does not carry that head.
    [[nodiscard]] std::size_t find(const HeadId& id) const noexcept
    {
        for (std::size_t k = 0; k < heads.size(); ++k)
            if (heads[k] == id) return k;
        return npos;
    }

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    friend bool operator==(const InferenceRecord&, const InferenceRecord&) = default;
};

/// Load-time attention row-sum tolerances.
inline constexpr double kRowSumSilentTol = 1e-3;
inline constexpr double kRowSumHardTol = 1e-2;

namespace detail {

inline void check_heads(const std::vector<HeadId>& heads, const HeadGeometry& g,
                        const std::string& where)
{
    std::set<HeadId> seen;
    for (const auto& h : heads) {
        if (!g.contains(h))
            throw Error(ErrorCode::geometry_mismatch,
                        where + ": head " + to_string(h) + " outside declared geometry");
        if (!seen.insert(h).second)
            throw Error(ErrorCode::validation, where + ": duplicate head " + to_string(h));
    }
}

} // namespace detail

/// Checks every DiagnosticRecord invariant. Rows off by more than 1e-3 but
/// within 1e-2 of unit sum are renormalized in place with a warning.
inline void validate_record(DiagnosticRecord& rec, const HeadGeometry& g, std::size_t index,
                            const WarningSink& warn = {})
{
    const std::string where = "record " + std::to_string(index);
    try {
        rec.layout.validate();
    } catch (const Error& e) {
        throw Error(e.code(), where + ": " + e.what());
    }
    if (rec.mask.empty()) throw Error(ErrorCode::validation, where + ": mask is empty");
    for (std::size_t k = 0; k < rec.mask.size(); ++k) {
        const auto j = rec.mask[k];
        if (k > 0 && rec.mask[k - 1] >= j)
            throw Error(ErrorCode::validation, where + ": mask indices not strictly increasing");
        if (!rec.layout.is_visual(j))
            throw Error(ErrorCode::validation,
                        where + ": mask covers non-visual index " + std::to_string(j));
    }
    detail::check_heads(rec.heads, g, where);
    if (rec.attn.rank() != 2 || rec.attn.dims()[0] != rec.heads.size())
        throw Error(ErrorCode::validation,
                    where + ": missing head rows (attention tensor does not have one row per "
                            "listed head)");
    if (rec.attn.dims()[1] != rec.layout.total_len)
        throw Error(ErrorCode::validation,
                    where + ": attention row length " + std::to_string(rec.attn.dims()[1]) +
                      " != sequence length " + std::to_string(rec.layout.total_len));
    if (!rec.attn.all_finite())
        throw Error(ErrorCode::non_finite, where + ": attention contains NaN or Inf");

    for (std::size_t k = 0; k < rec.heads.size(); ++k) {
        auto row = rec.attn.row(k);
        double sum = 0.0;
        for (float v : row) {
            if (v < 0.0f)
                throw Error(ErrorCode::validation,
                            where + ": negative attention in head " + to_string(rec.heads[k]));
            sum += v;
        }
        const double dev = std::abs(sum - 1.0);
        if (dev <= kRowSumSilentTol) continue;
        if (dev > kRowSumHardTol)
            throw Error(ErrorCode::validation, where + ": attention row of head " +
                                                 to_string(rec.heads[k]) + " sums to " +
                                                 std::to_string(sum));
        if (warn)
            warn(where + ": renormalized attention row of head " + to_string(rec.heads[k]) +
                 " (sum " + std::to_string(sum) + ")");
        for (float& v : row) v = static_cast<float>(v / sum);
    }
}

inline void validate_record(InferenceRecord& rec)
{
    if (rec.grid_side == 0) throw Error(ErrorCode::validation, "grid side is zero");
    if (rec.patch_size == 0) throw Error(ErrorCode::validation, "patch size is zero");
    if (rec.image_w == 0 || rec.image_h == 0)
        throw Error(ErrorCode::validation, "image dimensions are zero");
    if (rec.heads.empty()) throw Error(ErrorCode::validation, "record carries no heads");
    detail::check_heads(rec.heads, rec.geometry, "inference record");
    auto check = [&](const Tensor& t, const char* what) {
        if (t.rank() != 2 || t.dims()[0] != rec.heads.size())
            throw Error(ErrorCode::validation,
                        std::string(what) + " tensor must have one row per listed head");
        if (t.dims()[1] != rec.n_visual())
            throw Error(ErrorCode::validation,
                        std::string(what) + " row length " + std::to_string(t.dims()[1]) +
                          " != grid_side^2 = " + std::to_string(rec.n_visual()));
        if (!t.all_finite())
            throw Error(ErrorCode::non_finite, std::string(what) + " contains NaN or Inf");
    };
    check(rec.attn, "attention");
    for (float v : rec.attn.data())
        if (v < 0.0f) throw Error(ErrorCode::validation, "negative attention value");
    if (rec.grad) check(*rec.grad, "gradient");
    if (!std::isfinite(rec.log_prob)) throw Error(ErrorCode::non_finite, "log_prob not finite");
}

//----------------------------------------------------------------------------
// Manifests
//----------------------------------------------------------------------------

namespace detail {

using nlohmann::json;

/// Half-open [start, end) ranges, the compact manifest encoding of index sets.
inline json to_ranges(const std::vector<std::uint32_t>& idx)
{
    json out = json::array();
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i + 1;
        while (j < idx.size() && idx[j] == idx[j - 1] + 1) ++j;
        out.push_back({idx[i], idx[j - 1] + 1});
        i = j;
    }
    return out;
}

inline std::vector<std::uint32_t> from_ranges(const json& j, const std::string& where)
{
    std::vector<std::uint32_t> out;
    if (!j.is_array()) throw Error(ErrorCode::validation, where + ": expected range list");
    for (const auto& r : j) {
        if (!r.is_array() || r.size() != 2)
            throw Error(ErrorCode::validation, where + ": range must be [start, end]");
        const auto a = r[0].get<std::uint32_t>(), b = r[1].get<std::uint32_t>();
        if (b <= a) throw Error(ErrorCode::validation, where + ": empty or inverted range");
        for (auto k = a; k < b; ++k) out.push_back(k);
    }
    return out;
}

inline json heads_to_json(const std::vector<HeadId>& heads)
{
    json out = json::array();
    for (const auto& h : heads) out.push_back({h.layer, h.head});
    return out;
}

inline std::vector<HeadId> heads_from_json(const json& j)
{
    std::vector<HeadId> out;
    for (const auto& p : j) {
        if (!p.is_array() || p.size() != 2)
            throw Error(ErrorCode::validation, "head entry must be [layer, head]");
        out.push_back({p[0].get<std::uint32_t>(), p[1].get<std::uint32_t>()});
    }
    return out;
}

inline json read_json_file(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw Error(ErrorCode::io, "cannot open " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::validation, path.string() + ": " + e.what());
    }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error(ErrorCode::io, "cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw Error(ErrorCode::io, "failed writing " + path.string());
}

inline void expect_kind(const json& doc, const char* kind)
{
    if (!doc.is_object() || doc.value("kind", std::string{}) != kind)
        throw Error(ErrorCode::validation, std::string("manifest kind is not ") + kind);
    if (doc.value("version", 0u) != kManifestVersion)
        throw Error(ErrorCode::version_mismatch, "manifest version unsupported");
}

inline HeadGeometry geometry_from_json(const json& j)
{
    HeadGeometry g{j.at("n_layers").get<std::uint32_t>(), j.at("n_heads").get<std::uint32_t>()};
    if (g.n_layers == 0 || g.n_heads == 0)
        throw Error(ErrorCode::validation, "geometry must be positive");
    return g;
}

} // namespace detail

/// Loads and validates a diagnostic corpus. Any malformed record aborts the
/// whole load; no partially constructed corpus is returned.
inline Corpus load_corpus(const std::filesystem::path& manifest, const WarningSink& warn = {})
{
    using detail::json;
    const json doc = detail::read_json_file(manifest);
    Corpus corpus;
    try {
        detail::expect_kind(doc, kCorpusKind);
        corpus.geometry = detail::geometry_from_json(doc.at("geometry"));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::validation, manifest.string() + ": " + e.what());
    }
    const auto base = manifest.parent_path();
    const auto& records = doc.at("records");
    corpus.records.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const std::string where = "record " + std::to_string(i);
        DiagnosticRecord rec;
        try {
            rec.token_index = r.value("token_index", std::uint64_t{i});
            rec.layout.total_len = r.at("total_len").get<std::uint64_t>();
            rec.layout.valid = detail::from_ranges(r.at("valid_ranges"), where);
            rec.layout.visual = detail::from_ranges(r.at("visual_ranges"), where);
            rec.mask = r.at("mask_indices").get<std::vector<std::uint32_t>>();
            rec.heads = r.contains("heads") ? detail::heads_from_json(r.at("heads"))
                                            : all_heads(corpus.geometry);
            Tensor t = read_tensor_file(base / r.at("attn").get<std::string>());
            // a full-geometry [n_layers, n_heads, L] tensor is accepted as rows
            if (t.rank() == 3 && t.dims()[0] * t.dims()[1] == rec.heads.size())
                t = Tensor({t.dims()[0] * t.dims()[1], t.dims()[2]},
                           std::vector<float>(t.data().begin(), t.data().end()));
            rec.attn = std::move(t);
        } catch (const detail::json::exception& e) {
            throw Error(ErrorCode::validation, where + ": " + e.what());
        } catch (const Error& e) {
            if (e.code() == ErrorCode::validation || e.code() == ErrorCode::non_finite)
                throw Error(e.code(), where + ": " + e.what());
            throw;
        }
        validate_record(rec, corpus.geometry, i, warn);
        corpus.records.push_back(std::move(rec));
    }
    return corpus;
}

/// Writes `corpus` as `manifest` plus one tensor per record alongside it.
inline void save_corpus(const Corpus& corpus, const std::filesystem::path& manifest)
{
    using detail::json;
    const auto base = manifest.parent_path();
    if (!base.empty()) std::filesystem::create_directories(base);
    const auto stem = manifest.stem().string();

    json records = json::array();
    for (std::size_t i = 0; i < corpus.records.size(); ++i) {
        const auto& rec = corpus.records[i];
        char name[64];
        std::snprintf(name, sizeof name, ".r%06zu.hvt", i);
        const std::string file = stem + name;
        write_tensor_file(rec.attn, base / file);
        json r = {
          {"token_index", rec.token_index},
          {"total_len", rec.layout.total_len},
          {"valid_ranges", detail::to_ranges(rec.layout.valid)},
          {"visual_ranges", detail::to_ranges(rec.layout.visual)},
          {"mask_indices", rec.mask},
          {"attn", file},
        };
        if (rec.heads != all_heads(corpus.geometry)) r["heads"] = detail::heads_to_json(rec.heads);
        records.push_back(std::move(r));
    }
    json doc = {
      {"kind", kCorpusKind},
      {"version", kManifestVersion},
      {"geometry", {{"n_layers", corpus.geometry.n_layers}, {"n_heads", corpus.geometry.n_heads}}},
      {"records", std::move(records)},
    };
    detail::write_text_file(manifest, doc.dump(1) + "\n");
}

inline InferenceRecord load_inference(const std::filesystem::path& manifest)
{
    using detail::json;
    const json doc = detail::read_json_file(manifest);
    const auto base = manifest.parent_path();
    InferenceRecord rec;
    try {
        detail::expect_kind(doc, kInferenceKind);
        rec.geometry = detail::geometry_from_json(doc.at("geometry"));
        rec.grid_side = doc.at("grid_side").get<std::uint32_t>();
        rec.image_w = doc.at("image_w").get<std::uint32_t>();
        rec.image_h = doc.at("image_h").get<std::uint32_t>();
        rec.patch_size = doc.at("patch_size").get<std::uint32_t>();
        rec.predicted_token = doc.value("predicted_token", std::string{});
        rec.log_prob = doc.value("log_prob", 0.0);
        rec.heads = detail::heads_from_json(doc.at("heads"));
        rec.attn = read_tensor_file(base / doc.at("attn").get<std::string>());
        if (doc.contains("grad") && !doc.at("grad").is_null())
            rec.grad = read_tensor_file(base / doc.at("grad").get<std::string>());
    } catch (const json::exception& e) {
        throw Error(ErrorCode::validation, manifest.string() + ": " + e.what());
    }
    validate_record(rec);
    return rec;
}

inline void save_inference(const InferenceRecord& rec, const std::filesystem::path& manifest)
{
    using detail::json;
    const auto base = manifest.parent_path();
    if (!base.empty()) std::filesystem::create_directories(base);
    const auto stem = manifest.stem().string();
    write_tensor_file(rec.attn, base / (stem + ".attn.hvt"));
    json doc = {
      {"kind", kInferenceKind},
      {"version", kManifestVersion},
      {"geometry", {{"n_layers", rec.geometry.n_layers}, {"n_heads", rec.geometry.n_heads}}},
      {"grid_side", rec.grid_side},
      {"image_w", rec.image_w},
      {"image_h", rec.image_h},
      {"patch_size", rec.patch_size},
      {"predicted_token", rec.predicted_token},
      {"log_prob", rec.log_prob},
      {"heads", detail::heads_to_json(rec.heads)},
      {"attn", stem + ".attn.hvt"},
    };
    if (rec.grad) {
        write_tensor_file(*rec.grad, base / (stem + ".grad.hvt"));
        doc["grad"] = stem + ".grad.hvt";
    }
    detail::write_text_file(manifest, doc.dump(1) + "\n");
}

} // namespace havc
