#pragma once

#include "dash/core/errors.hpp"
#include "dash/core/hash.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dash {

/// Decoded raster. Samples are stored row-major, interleaved, in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;      // 1 (gray) or 3 (rgb)
    int maxval = 65535;    // 255 or 65535 on disk
    std::vector<double> data;

    std::size_t sample_count() const noexcept {
        return static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * static_cast<std::size_t>(channels);
    }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Image samples mapped to [-1, 1]; the feature view the synthetic models use.
inline std::vector<double> image_features(const Image& img) {
    std::vector<double> x(img.data.size());
    std::transform(img.data.begin(), img.data.end(), x.begin(), [](double v) { return 2.0 * v - 1.0; });
    return x;
}

/// Inverse of image_features. Values outside [-1, 1] are clamped.
inline Image image_from_features(std::span<const double> x, int width, int height, int channels = 1) {
    if (static_cast<std::size_t>(width) * height * channels != x.size())
        throw DimensionError("feature vector size does not match raster shape");
    Image img{width, height, channels, 65535, {}};
    img.data.resize(x.size());
    std::transform(x.begin(), x.end(), img.data.begin(), [](double v) { return std::clamp(0.5 * (v + 1.0), 0.0, 1.0); });
    return img;
}

/// Binary netpbm (P5 gray / P6 rgb), 8 or 16 bit, big-endian samples.
inline Bytes encode_pnm(const Image& img) {
    if (img.width <= 0 || img.height <= 0) throw DecodeError("cannot encode empty image");
    if (img.channels != 1 && img.channels != 3) throw DecodeError("channels must be 1 or 3");
    if (img.maxval != 255 && img.maxval != 65535) throw DecodeError("maxval must be 255 or 65535");
    if (img.data.size() != img.sample_count()) throw DimensionError("sample count does not match raster shape");

    const std::string header = std::string(img.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(img.width) + " " +
                               std::to_string(img.height) + "\n" + std::to_string(img.maxval) + "\n";
    Bytes out(header.begin(), header.end());
    const bool wide = img.maxval > 255;
    out.reserve(out.size() + img.data.size() * (wide ? 2 : 1));
    for (double v : img.data) {
        const auto q = static_cast<std::uint32_t>(std::lround(std::clamp(v, 0.0, 1.0) * img.maxval));
        if (wide) out.push_back(static_cast<std::uint8_t>(q >> 8));
        out.push_back(static_cast<std::uint8_t>(q & 0xff));
    }
    return out;
}

namespace detail {

inline void skip_pnm_space(std::span<const std::uint8_t> in, std::size_t& pos) {
    while (pos < in.size()) {
        if (in[pos] == '#') {
            while (pos < in.size() && in[pos] != '\n') ++pos;
        } else if (in[pos] == ' ' || in[pos] == '\t' || in[pos] == '\n' || in[pos] == '\r') {
            ++pos;
        } else {
            break;
        }
    }
}

inline int read_pnm_int(std::span<const std::uint8_t> in, std::size_t& pos) {
    skip_pnm_space(in, pos);
    long value = 0;
    const std::size_t start = pos;
    while (pos < in.size() && in[pos] >= '0' && in[pos] <= '9') {
        value = value * 10 + (in[pos] - '0');
        if (value > 1'000'000) throw DecodeError("netpbm header value out of range");
        ++pos;
    }
    if (pos == start) throw DecodeError("malformed netpbm header");
    return static_cast<int>(value);
}

} // namespace detail

inline Image decode_pnm(std::span<const std::uint8_t> in) {
    if (in.size() < 2 || in[0] != 'P' || (in[1] != '5' && in[1] != '6'))
        throw DecodeError("not a binary netpbm image (expected P5 or P6 magic)");
    Image img;
    img.channels = in[1] == '5' ? 1 : 3;
    std::size_t pos = 2;
    img.width = detail::read_pnm_int(in, pos);
    img.height = detail::read_pnm_int(in, pos);
    img.maxval = detail::read_pnm_int(in, pos);
    if (img.width <= 0 || img.height <= 0) throw DecodeError("netpbm image has zero extent");
    if (img.maxval <= 0 || img.maxval > 65535) throw DecodeError("netpbm maxval out of range");
    if (pos >= in.size()) throw DecodeError("truncated netpbm header");
    ++pos;  // single whitespace byte before the raster

    const std::size_t bytes_per_sample = img.maxval > 255 ? 2 : 1;
    const std::size_t need = img.sample_count() * bytes_per_sample;
    if (in.size() - pos < need)
        throw DecodeError("truncated netpbm raster: need " + std::to_string(need) + " bytes, have " +
                          std::to_string(in.size() - pos));
    img.data.resize(img.sample_count());
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        std::uint32_t q = in[pos++];
        if (bytes_per_sample == 2) q = (q << 8) | in[pos++];
        if (q > static_cast<std::uint32_t>(img.maxval)) throw DecodeError("netpbm sample exceeds maxval");
        img.data[i] = static_cast<double>(q) / img.maxval;
    }
    return img;
}

} // namespace dash
