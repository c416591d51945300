#pragma once

#include "havc/error.hpp"

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace havc {

/// Addresses one attention head of the profiled model.
struct HeadId {
    std::uint32_t layer = 0;
    std::uint32_t head = 0;

    friend constexpr auto operator<=>(const HeadId&, const HeadId&) = default;
};

inline std::string to_string(const HeadId& id)
{
    return "(" + std::to_string(id.layer) + "," + std::to_string(id.head) + ")";
}

/// Declared layer/head extent of a model.
struct HeadGeometry {
    std::uint32_t n_layers = 0;
    std::uint32_t n_heads = 0;

    [[nodiscard]] constexpr std::size_t size() const noexcept
    {
        return std::size_t(n_layers) * n_heads;
    }
    [[nodiscard]] constexpr bool contains(const HeadId& id) const noexcept
    {
        return id.layer < n_layers && id.head < n_heads;
    }
    [[nodiscard]] constexpr std::size_t flat(const HeadId& id) const noexcept
    {
        return std::size_t(id.layer) * n_heads + id.head;
    }
    [[nodiscard]] constexpr HeadId unflat(std::size_t i) const noexcept
    {
        return {static_cast<std::uint32_t>(i / n_heads),
                static_cast<std::uint32_t>(i % n_heads)};
    }

    friend constexpr bool operator==(const HeadGeometry&, const HeadGeometry&) = default;
};

/// All heads of a geometry in (layer, head) order.
inline std::vector<HeadId> all_heads(const HeadGeometry& g)
{
    std::vector<HeadId> out;
    out.reserve(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) out.push_back(g.unflat(i));
    return out;
}

/// Dense row-major float32 array. Finite-ness is checked by `validate()` and
/// by the serializer, not on every mutation.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::uint64_t> dims)
      : dims_(std::move(dims))
      , data_(element_count(dims_), 0.0f)
    {}

    Tensor(std::vector<std::uint64_t> dims, std::vector<float> data)
      : dims_(std::move(dims))
      , data_(std::move(data))
    {
        if (element_count(dims_) != data_.size())
            throw Error(ErrorCode::validation,
                        "tensor data length " + std::to_string(data_.size()) +
                          " does not match dims product " +
                          std::to_string(element_count(dims_)));
    }

    [[nodiscard]] const std::vector<std::uint64_t>& dims() const noexcept { return dims_; }
    [[nodiscard]] std::size_t rank() const noexcept { return dims_.size(); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    [[nodiscard]] std::span<const float> data() const noexcept { return data_; }
    [[nodiscard]] std::span<float> data() noexcept { return data_; }

    /// Row `i` of a tensor viewed as [dims[0], rest...].
    [[nodiscard]] std::span<const float> row(std::size_t i) const
    {
        const std::size_t w = row_width();
        return std::span<const float>(data_).subspan(i * w, w);
    }
    [[nodiscard]] std::span<float> row(std::size_t i)
    {
        const std::size_t w = row_width();
        return std::span<float>(data_).subspan(i * w, w);
    }
    [[nodiscard]] std::size_t row_width() const noexcept
    {
        if (dims_.empty()) return 0;
        std::size_t w = 1;
        for (std::size_t k = 1; k < dims_.size(); ++k) w *= dims_[k];
        return w;
    }

    [[nodiscard]] bool all_finite() const noexcept
    {
        return std::all_of(data_.begin(), data_.end(),
                           [](float v) { return std::isfinite(v); });
    }

    void validate() const
    {
        if (dims_.empty()) throw Error(ErrorCode::validation, "tensor has no dims");
        for (auto d : dims_)
            if (d == 0) throw Error(ErrorCode::validation, "tensor has a zero dim");
        if (element_count(dims_) != data_.size())
            throw Error(ErrorCode::validation, "tensor data length mismatch");
        if (!all_finite())
            throw Error(ErrorCode::non_finite, "tensor contains NaN or Inf");
    }

    static std::size_t element_count(const std::vector<std::uint64_t>& dims) noexcept
    {
        if (dims.empty()) return 0;
        return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                               std::multiplies<>());
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::uint64_t> dims_;
    std::vector<float> data_;
};

/// Row-major 2D grid. `GridMap` (double) carries attention maps, `Mask`
/// carries binary foregrounds and `Labels` component ids.
template<typename T>
struct Grid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> values;

    Grid() = default;
    Grid(std::size_t r, std::size_t c, T fill = T{})
      : rows(r), cols(c), values(r * c, fill)
    {}
    Grid(std::size_t r, std::size_t c, std::vector<T> v)
      : rows(r), cols(c), values(std::move(v))
    {
        if (values.size() != rows * cols)
            throw Error(ErrorCode::validation, "grid value count mismatch");
    }

    [[nodiscard]] T& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    [[nodiscard]] const T& at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    [[nodiscard]] std::size_t size() const noexcept { return values.size(); }
    [[nodiscard]] bool square() const noexcept { return rows == cols; }
    [[nodiscard]] std::size_t side() const noexcept { return rows; }

    [[nodiscard]] Grid transposed() const
    {
        Grid out(cols, rows);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) out.at(c, r) = at(r, c);
        return out;
    }

    friend bool operator==(const Grid&, const Grid&) = default;
};

using GridMap = Grid<double>;
using Mask = Grid<std::uint8_t>;
using Labels = Grid<std::uint32_t>;

/// Inclusive cell rectangle in patch space.
struct PatchBox {
    std::size_t r0 = 0, c0 = 0, r1 = 0, c1 = 0;

    [[nodiscard]] constexpr std::size_t height() const noexcept { return r1 - r0 + 1; }
    [[nodiscard]] constexpr std::size_t width() const noexcept { return c1 - c0 + 1; }
    [[nodiscard]] constexpr std::size_t area() const noexcept { return height() * width(); }
    [[nodiscard]] constexpr bool contains(std::size_t r, std::size_t c) const noexcept
    {
        return r >= r0 && r <= r1 && c >= c0 && c <= c1;
    }

    friend constexpr bool operator==(const PatchBox&, const PatchBox&) = default;
};

inline double iou(const PatchBox& a, const PatchBox& b) noexcept
{
    const std::size_t r0 = std::max(a.r0, b.r0), r1 = std::min(a.r1, b.r1);
    const std::size_t c0 = std::max(a.c0, b.c0), c1 = std::min(a.c1, b.c1);
    double inter = 0.0;
    if (r0 <= r1 && c0 <= c1) inter = double(r1 - r0 + 1) * double(c1 - c0 + 1);
    const double uni = double(a.area()) + double(b.area()) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

} // namespace havc
