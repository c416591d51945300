#pragma once

// Brute-force reference implementations. Each one takes a deliberately
// different route from the production kernel it checks: explicit vectors
// instead of membership tests, per-candidate rescans instead of cumulative
// sums, BFS instead of union-find, ordered instead of unordered pairs.

#include "havc/guidance.hpp"
#include "havc/spatial_ops.hpp"
#include "havc/synth_bench.hpp"
#include "havc/tensor_store.hpp"
#include "havc/types.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <vector>

namespace havc::oracle {

/// Peak vector p (one-hot at the restricted argmax) dotted with the binary
/// mask m, divided by |m|_1.
inline double proj_score(std::span<const float> row, std::span<const std::uint32_t> mask_support,
                         const SequenceLayout& layout)
{
    std::vector<std::uint8_t> m(layout.total_len, 0);
    for (auto j : mask_support) m[j] = 1;
    std::vector<std::uint8_t> valid(layout.total_len, 0);
    for (auto j : layout.valid) valid[j] = 1;

    std::size_t peak = layout.total_len;
    for (std::size_t j = 0; j < row.size(); ++j)
        if (valid[j] && (peak == layout.total_len || row[j] > row[peak])) peak = j;
    std::vector<double> p(layout.total_len, 0.0);
    p[peak] = 1.0;

    double dot = 0.0, norm1 = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        dot += p[j] * m[j];
        norm1 += m[j];
    }
    return dot / norm1;
}

/// Raw head scores by looping heads outermost and records innermost.
inline std::vector<double> head_scores(const Corpus& corpus)
{
    std::vector<double> out(corpus.geometry.size(), 0.0);
    for (std::size_t h = 0; h < out.size(); ++h) {
        const HeadId id = corpus.geometry.unflat(h);
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& rec : corpus.records)
            for (std::size_t k = 0; k < rec.heads.size(); ++k)
                if (rec.heads[k] == id) {
                    sum += oracle::proj_score(rec.row(k), rec.mask, rec.layout);
                    ++n;
                }
        out[h] = n ? sum / double(n) : 0.0;
    }
    return out;
}

struct OtsuScan {
    std::size_t best_split = 0;
    double best_variance = -1.0;
    std::vector<double> variance; ///< per split k (index k), -1 when invalid
};

/// Between-class variance w0*w1*(mu0-mu1)^2 of every split, each computed by
/// rescanning the values.
inline OtsuScan otsu_scan(const GridMap& m, std::size_t bins = 256)
{
    OtsuScan s;
    s.variance.assign(bins, -1.0);
    const double n = double(m.size());
    for (std::size_t k = 1; k < bins; ++k) {
        double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
        for (double v : m.values) {
            const double level = std::min(std::floor(std::max(v, 0.0) * double(bins)), double(bins - 1));
            if (level < double(k)) {
                n0 += 1;
                s0 += level;
            } else {
                n1 += 1;
                s1 += level;
            }
        }
        if (n0 == 0 || n1 == 0) continue;
        const double w0 = n0 / n, w1 = n1 / n, d = s0 / n0 - s1 / n1;
        s.variance[k] = w0 * w1 * d * d;
        if (s.variance[k] > s.best_variance) {
            s.best_variance = s.variance[k];
            s.best_split = k;
        }
    }
    return s;
}

/// BFS labeling; returns, per cell, the index of its component (0 = background).
inline Labels flood_fill(const Mask& mask, Connectivity conn)
{
    Labels lab(mask.rows, mask.cols, 0);
    std::uint32_t next = 0;
    const int R = int(mask.rows), C = int(mask.cols);
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) {
            if (!mask.at(r, c) || lab.at(r, c)) continue;
            ++next;
            std::deque<std::pair<int, int>> q{{r, c}};
            lab.at(r, c) = next;
            while (!q.empty()) {
                auto [y, x] = q.front();
                q.pop_front();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (!dy && !dx) continue;
                        if (conn == Connectivity::four && dy && dx) continue;
                        const int ny = y + dy, nx = x + dx;
                        if (ny < 0 || nx < 0 || ny >= R || nx >= C) continue;
                        if (!mask.at(ny, nx) || lab.at(ny, nx)) continue;
                        lab.at(ny, nx) = next;
                        q.emplace_back(ny, nx);
                    }
            }
        }
    return lab;
}

/// True when two labelings induce the same partition of the foreground.
inline bool same_partition(const Labels& a, const Labels& b)
{
    if (a.rows != b.rows || a.cols != b.cols) return false;
    std::map<std::uint32_t, std::uint32_t> ab, ba;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto x = a.values[i], y = b.values[i];
        if ((x == 0) != (y == 0)) return false;
        if (!x) continue;
        auto [ia, fresh_a] = ab.emplace(x, y);
        auto [ib, fresh_b] = ba.emplace(y, x);
        if (ia->second != y || ib->second != x) return false;
    }
    return true;
}

/// Mean distance over ordered pairs i != j.
inline double mean_pairwise_distance(std::span<const Centroid> c)
{
    if (c.size() < 2) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i)
        for (std::size_t j = 0; j < c.size(); ++j)
            if (i != j) {
                const double dr = c[i].row - c[j].row, dc = c[i].col - c[j].col;
                total += std::sqrt(dr * dr + dc * dc);
            }
    return total / double(c.size() * (c.size() - 1));
}

/// Normalize each branch over the heads, then blend.
inline std::vector<double> fuse(std::span<const double> entropy, std::span<const double> grad,
                                double alpha)
{
    const auto n = entropy.size();
    double clo = 1e300, chi = -1e300, glo = 1e300, ghi = -1e300;
    for (std::size_t i = 0; i < n; ++i) {
        clo = std::min(clo, 1.0 - entropy[i]);
        chi = std::max(chi, 1.0 - entropy[i]);
        glo = std::min(glo, grad[i]);
        ghi = std::max(ghi, grad[i]);
    }
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double nc = chi > clo ? ((1.0 - entropy[i]) - clo) / (chi - clo) : 0.0;
        const double ng = ghi > glo ? (grad[i] - glo) / (ghi - glo) : 0.0;
        out[i] = alpha * nc + (1.0 - alpha) * ng;
    }
    return out;
}

/// Softmax in extended precision without max subtraction.
inline std::vector<long double> softmax(std::span<const double> s, double tau)
{
    std::vector<long double> e(s.size());
    long double z = 0.0L;
    for (std::size_t i = 0; i < s.size(); ++i) z += (e[i] = std::exp((long double)s[i] / tau));
    for (auto& x : e) x /= z;
    return e;
}

/// Cell-by-cell weighted sum, cells outermost.
inline GridMap aggregate(std::span<const GridMap> maps, std::span<const double> w)
{
    GridMap out(maps[0].rows, maps[0].cols, 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double acc = 0.0;
        for (std::size_t h = 0; h < maps.size(); ++h) acc += w[h] * maps[h].values[i];
        out.values[i] = acc;
    }
    return out;
}

inline double gradient_score(std::span<const float> a, std::span<const float> sens)
{
    double g = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j)
        g += double(a[j]) * std::max(0.0, double(sens[j]));
    return g;
}

/// Central finite difference of the surrogate log-probability with respect to
/// attention entry `i` (head-major flat index).
inline double finite_difference(const SurrogateModel& s, std::vector<double> attn, std::size_t i,
                                double step = 1e-5)
{
    const double x = attn[i];
    attn[i] = x + step;
    const double up = s.log_prob(attn);
    attn[i] = x - step;
    const double down = s.log_prob(attn);
    return (up - down) / (2.0 * step);
}

} // namespace havc::oracle
