#pragma once

// Minimal binary PNM (P5 grayscale / P6 RGB, maxval <= 255) reader and
// writer, used for map rendering and crop output without an image codec.

#include "havc/error.hpp"
#include "havc/spatial_ops.hpp"
#include "havc/types.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace havc {

struct Image {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t channels = 1; ///< 1 (P5) or 3 (P6)
    std::vector<std::uint8_t> pixels;

    [[nodiscard]] std::uint8_t at(std::uint32_t x, std::uint32_t y, std::uint32_t ch = 0) const
    {
        return pixels[(std::size_t(y) * width + x) * channels + ch];
    }

    friend bool operator==(const Image&, const Image&) = default;
};

namespace detail {

inline std::uint32_t pnm_field(std::istream& is)
{
    int ch = is.get();
    for (;;) {
        while (ch != EOF && std::isspace(ch)) ch = is.get();
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = is.get();
            continue;
        }
        break;
    }
    if (ch == EOF || !std::isdigit(ch)) throw Error(ErrorCode::validation, "malformed PNM header");
    std::uint64_t v = 0;
    while (ch != EOF && std::isdigit(ch)) {
        v = v * 10 + std::uint64_t(ch - '0');
        if (v > 0xffffffu) throw Error(ErrorCode::validation, "PNM header value too large");
        ch = is.get();
    }
    // exactly one whitespace byte follows the last header field
    return static_cast<std::uint32_t>(v);
}

} // namespace detail

inline Image read_pnm(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::io, "cannot open " + path.string());
    char magic[2];
    if (!is.read(magic, 2) || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
        throw Error(ErrorCode::validation, path.string() + ": only binary P5/P6 images are supported");
    Image img;
    img.channels = magic[1] == '5' ? 1 : 3;
    img.width = detail::pnm_field(is);
    img.height = detail::pnm_field(is);
    const auto maxval = detail::pnm_field(is);
    if (img.width == 0 || img.height == 0) throw Error(ErrorCode::validation, "empty image");
    if (maxval == 0 || maxval > 255) throw Error(ErrorCode::validation, "only 8-bit PNM supported");
    img.pixels.resize(std::size_t(img.width) * img.height * img.channels);
    if (!is.read(reinterpret_cast<char*>(img.pixels.data()), std::streamsize(img.pixels.size())))
        throw Error(ErrorCode::truncated, path.string() + ": pixel data truncated");
    return img;
}

inline void write_pnm(const Image& img, const std::filesystem::path& path)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::io, "cannot open " + path.string() + " for writing");
    os << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
    if (!os) throw Error(ErrorCode::io, "failed writing " + path.string());
}

/// Sub-image covering exactly [x0, x1) x [y0, y1).
inline Image crop_image(const Image& img, const CropBox& box)
{
    if (box.x0 >= box.x1 || box.y0 >= box.y1 || box.x1 > img.width || box.y1 > img.height)
        throw Error(ErrorCode::invalid_argument,
                    "crop box [" + std::to_string(box.x0) + "," + std::to_string(box.y0) + "," +
                      std::to_string(box.x1) + "," + std::to_string(box.y1) +
                      ") outside image " + std::to_string(img.width) + "x" +
                      std::to_string(img.height));
    Image out;
    out.width = box.width();
    out.height = box.height();
    out.channels = img.channels;
    out.pixels.reserve(std::size_t(out.width) * out.height * out.channels);
    for (std::uint32_t y = box.y0; y < box.y1; ++y) {
        const auto* row = &img.pixels[(std::size_t(y) * img.width + box.x0) * img.channels];
        out.pixels.insert(out.pixels.end(), row, row + std::size_t(out.width) * img.channels);
    }
    return out;
}

/// Grayscale rendering of a map, min-max scaled to 0..255, each cell drawn as
/// a `cell` x `cell` square.
inline Image render_map(const GridMap& m, std::uint32_t cell = 1)
{
    if (cell == 0) throw Error(ErrorCode::invalid_argument, "cell size must be positive");
    const auto n = normalize01(m);
    Image img;
    img.width = static_cast<std::uint32_t>(m.cols * cell);
    img.height = static_cast<std::uint32_t>(m.rows * cell);
    img.pixels.resize(std::size_t(img.width) * img.height);
    for (std::uint32_t y = 0; y < img.height; ++y)
        for (std::uint32_t x = 0; x < img.width; ++x)
            img.pixels[std::size_t(y) * img.width + x] = static_cast<std::uint8_t>(
              std::lround(255.0 * n.at(y / cell, x / cell)));
    return img;
}

} // namespace havc
