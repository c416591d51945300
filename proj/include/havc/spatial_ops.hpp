#pragma once

// Grid kernels over square patch maps: normalization, Otsu thresholding,
// connected-component labeling with centroids, and map -> crop box.

#include "havc/error.hpp"
#include "havc/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace havc {

enum class Connectivity { four = 4, eight = 8 };

inline GridMap normalize01(const GridMap& m)
{
    GridMap out(m.rows, m.cols);
    if (m.values.empty()) return out;
    const auto [lo, hi] = std::minmax_element(m.values.begin(), m.values.end());
    const double range = *hi - *lo;
    if (!(range > 0.0)) return out;
    for (std::size_t i = 0; i < m.size(); ++i) out.values[i] = (m.values[i] - *lo) / range;
    return out;
}

struct OtsuResult {
    /// Largest background value; the foreground is exactly `v > threshold`.
    double threshold = 0.0;
    /// First histogram bin assigned to the foreground; 0 when no split exists.
    std::size_t split_bin = 0;
    /// Between-class variance of the split, in squared bin units.
    double between_variance = 0.0;
    Mask mask;
};

/// Histogram bin of a value in [0, 1]; values outside are clamped.
inline std::size_t otsu_bin(double v, std::size_t bins) noexcept
{
    if (!(v > 0.0)) return 0;
    const auto b = static_cast<std::size_t>(v * double(bins));
    return std::min(b, bins - 1);
}

/// Otsu's method on a `bins`-bucket histogram of values expected in [0, 1].
///
/// Bins are intensity levels 0..bins-1. Each candidate split k puts bins < k in
/// the background; its between-class variance is computed from integer counts
/// and level sums as (s0*n1 - s1*n0)^2 / (n0*n1) (proportional to
/// w0*w1*(mu0-mu1)^2), so equal partitions score bit-identically and ties
/// resolve to the lowest k. A map with a single occupied bin has no split and
/// yields an empty foreground.
inline OtsuResult otsu_threshold(const GridMap& m, std::size_t bins = 256)
{
    if (bins < 2) throw Error(ErrorCode::invalid_argument, "otsu needs at least 2 bins");
    OtsuResult res;
    res.mask = Mask(m.rows, m.cols, 0);
    if (m.values.empty()) return res;

    std::vector<std::int64_t> hist(bins, 0);
    for (double v : m.values) ++hist[otsu_bin(v, bins)];

    const auto n = static_cast<std::int64_t>(m.size());
    std::int64_t total_sum = 0;
    for (std::size_t b = 0; b < bins; ++b) total_sum += std::int64_t(b) * hist[b];

    std::int64_t n0 = 0, s0 = 0;
    double best = -1.0;
    for (std::size_t k = 1; k < bins; ++k) {
        n0 += hist[k - 1];
        s0 += std::int64_t(k - 1) * hist[k - 1];
        const std::int64_t n1 = n - n0, s1 = total_sum - s0;
        if (n0 == 0 || n1 == 0) continue;
        const double a = double(s0 * n1 - s1 * n0);
        const double var = a * a / (double(n0) * double(n1));
        if (var > best) {
            best = var;
            res.split_bin = k;
        }
    }
    if (res.split_bin == 0) {
        res.threshold = *std::max_element(m.values.begin(), m.values.end());
        return res;
    }
    res.between_variance = best / (double(n) * double(n));

    double thr = -INFINITY;
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (otsu_bin(m.values[i], bins) >= res.split_bin)
            res.mask.values[i] = 1;
        else
            thr = std::max(thr, m.values[i]);
    }
    res.threshold = thr;
    return res;
}

struct Centroid {
    double row = 0.0;
    double col = 0.0;
};

struct ComponentSet {
    std::size_t count = 0;
    Labels labels; ///< 0 is background, components are 1..count
    std::vector<Centroid> centroids;
    std::vector<std::size_t> areas;
    std::vector<PatchBox> boxes;
};

namespace detail {

inline std::uint32_t uf_find(std::vector<std::uint32_t>& parent, std::uint32_t x)
{
    while (parent[x] != x) {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    return x;
}

inline void uf_unite(std::vector<std::uint32_t>& parent, std::uint32_t a, std::uint32_t b)
{
    a = uf_find(parent, a);
    b = uf_find(parent, b);
    if (a == b) return;
    if (a < b)
        parent[b] = a;
    else
        parent[a] = b;
}

} // namespace detail

/// Two-pass union-find labeling. Components are numbered in the order their
/// first cell appears in a row-major scan.
inline ComponentSet connected_components(const Mask& mask,
                                         Connectivity conn = Connectivity::eight)
{
    const std::size_t rows = mask.rows, cols = mask.cols;
    ComponentSet out;
    out.labels = Labels(rows, cols, 0);
    std::vector<std::uint32_t> parent{0};

    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            if (!mask.at(r, c)) continue;
            // already-visited neighbours: W, NW, N, NE
            std::uint32_t nb[4];
            int k = 0;
            if (c > 0 && out.labels.at(r, c - 1)) nb[k++] = out.labels.at(r, c - 1);
            if (r > 0) {
                if (out.labels.at(r - 1, c)) nb[k++] = out.labels.at(r - 1, c);
                if (conn == Connectivity::eight) {
                    if (c > 0 && out.labels.at(r - 1, c - 1)) nb[k++] = out.labels.at(r - 1, c - 1);
                    if (c + 1 < cols && out.labels.at(r - 1, c + 1))
                        nb[k++] = out.labels.at(r - 1, c + 1);
                }
            }
            if (k == 0) {
                const auto fresh = static_cast<std::uint32_t>(parent.size());
                parent.push_back(fresh);
                out.labels.at(r, c) = fresh;
                continue;
            }
            std::uint32_t lowest = nb[0];
            for (int i = 1; i < k; ++i) lowest = std::min(lowest, nb[i]);
            out.labels.at(r, c) = lowest;
            for (int i = 0; i < k; ++i) detail::uf_unite(parent, lowest, nb[i]);
        }
    }

    // relabel roots in first-seen order and gather statistics
    std::vector<std::uint32_t> final_label(parent.size(), 0);
    std::vector<double> sum_r, sum_c;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            auto& l = out.labels.at(r, c);
            if (!l) continue;
            const auto root = detail::uf_find(parent, l);
            if (!final_label[root]) {
                final_label[root] = static_cast<std::uint32_t>(++out.count);
                out.areas.push_back(0);
                sum_r.push_back(0.0);
                sum_c.push_back(0.0);
                out.boxes.push_back({r, c, r, c});
            }
            l = final_label[root];
            const std::size_t i = l - 1;
            ++out.areas[i];
            sum_r[i] += double(r);
            sum_c[i] += double(c);
            auto& b = out.boxes[i];
            b.r0 = std::min(b.r0, r);
            b.r1 = std::max(b.r1, r);
            b.c0 = std::min(b.c0, c);
            b.c1 = std::max(b.c1, c);
        }
    }
    out.centroids.resize(out.count);
    for (std::size_t i = 0; i < out.count; ++i)
        out.centroids[i] = {sum_r[i] / double(out.areas[i]), sum_c[i] / double(out.areas[i])};
    return out;
}

/// Mean Euclidean distance over unordered centroid pairs; 0 for fewer than two.
inline double mean_pairwise_distance(std::span<const Centroid> centroids)
{
    const std::size_t n = centroids.size();
    if (n < 2) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            total += std::hypot(centroids[i].row - centroids[j].row,
                                centroids[i].col - centroids[j].col);
    return total / (double(n) * double(n - 1) / 2.0);
}

/// Pixel-space crop rectangle, half-open: [x0, x1) x [y0, y1).
struct CropBox {
    std::uint32_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    PatchBox patch; ///< the patch-space box it was scaled from

    [[nodiscard]] std::uint32_t width() const noexcept { return x1 - x0; }
    [[nodiscard]] std::uint32_t height() const noexcept { return y1 - y0; }

    friend bool operator==(const CropBox&, const CropBox&) = default;
};

struct ImageGeometry {
    std::uint32_t image_w = 0;
    std::uint32_t image_h = 0;
    std::uint32_t patch_size = 0;
};

struct BoxParams {
    double threshold = 0.5;   ///< fraction of the map maximum
    std::size_t pad = 1;      ///< patches added on every side
    std::size_t min_side = 2; ///< minimum box side in patches
    Connectivity connectivity = Connectivity::eight;
};

namespace detail {

/// Grows [lo, hi] symmetrically to at least `min_len` cells, shifting back
/// inside [0, limit) where possible.
inline void grow_span(std::size_t& lo, std::size_t& hi, std::size_t min_len, std::size_t limit)
{
    const std::size_t len = hi - lo + 1;
    if (len >= min_len) return;
    const std::size_t need = min_len - len;
    auto a = static_cast<std::int64_t>(lo) - static_cast<std::int64_t>(need / 2);
    auto b = static_cast<std::int64_t>(hi) + static_cast<std::int64_t>(need - need / 2);
    const auto top = static_cast<std::int64_t>(limit) - 1;
    if (a < 0) {
        b -= a;
        a = 0;
    }
    if (b > top) {
        a -= b - top;
        b = top;
    }
    lo = static_cast<std::size_t>(std::max<std::int64_t>(a, 0));
    hi = static_cast<std::size_t>(b);
}

} // namespace detail

/// Crop box from a guidance map: threshold at `threshold * max`, keep the
/// largest component (first in scan order on ties), pad, enforce the minimum
/// side, clamp to the grid, then scale by the patch size and clamp to the image.
inline CropBox extract_bbox(const GridMap& map, const ImageGeometry& geo,
                            const BoxParams& p = {})
{
    if (map.values.empty()) throw Error(ErrorCode::invalid_argument, "empty map");
    if (geo.patch_size == 0 || geo.image_w == 0 || geo.image_h == 0)
        throw Error(ErrorCode::invalid_argument, "image geometry must be positive");
    if (!(p.threshold > 0.0 && p.threshold <= 1.0))
        throw Error(ErrorCode::invalid_argument, "box threshold must lie in (0, 1]");
    const double peak = *std::max_element(map.values.begin(), map.values.end());
    if (!(peak > 0.0)) throw Error(ErrorCode::no_salient_region, "guidance map has no positive value");

    Mask hot(map.rows, map.cols, 0);
    const double cut = p.threshold * peak;
    for (std::size_t i = 0; i < map.size(); ++i) hot.values[i] = map.values[i] >= cut ? 1 : 0;
    const auto comps = connected_components(hot, p.connectivity);

    std::size_t best = 0;
    for (std::size_t i = 1; i < comps.count; ++i)
        if (comps.areas[i] > comps.areas[best]) best = i;
    PatchBox box = comps.boxes[best];

    box.r0 = box.r0 >= p.pad ? box.r0 - p.pad : 0;
    box.c0 = box.c0 >= p.pad ? box.c0 - p.pad : 0;
    box.r1 = std::min(box.r1 + p.pad, map.rows - 1);
    box.c1 = std::min(box.c1 + p.pad, map.cols - 1);
    detail::grow_span(box.r0, box.r1, p.min_side, map.rows);
    detail::grow_span(box.c0, box.c1, p.min_side, map.cols);

    CropBox out;
    out.patch = box;
    const auto ps = std::uint64_t(geo.patch_size);
    out.x0 = static_cast<std::uint32_t>(std::min<std::uint64_t>(box.c0 * ps, geo.image_w - 1));
    out.y0 = static_cast<std::uint32_t>(std::min<std::uint64_t>(box.r0 * ps, geo.image_h - 1));
    out.x1 = static_cast<std::uint32_t>(std::min<std::uint64_t>((box.c1 + 1) * ps, geo.image_w));
    out.y1 = static_cast<std::uint32_t>(std::min<std::uint64_t>((box.r1 + 1) * ps, geo.image_h));
    return out;
}

} // namespace havc
