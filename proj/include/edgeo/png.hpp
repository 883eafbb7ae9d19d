#pragma once

// Minimal PNG codec: 8-bit grayscale / RGB / RGBA, non-interlaced. zlib
// does the DEFLATE and CRC work. Covers exactly what the pipeline needs
// (masks, encoding-field exports, synthetic images, overlays) without
// pulling in an image library.

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "edgeo/io.hpp"
#include "edgeo/posenc.hpp"
#include "edgeo/tensor.hpp"

namespace edgeo {

/// Interleaved 8-bit image; channels is 1 (gray), 3 (RGB) or 4 (RGBA).
struct PngImage {
    int width = 0, height = 0, channels = 0;
    std::vector<std::uint8_t> data;

    std::uint8_t at(int y, int x, int ch) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + ch];
    }
};

namespace pngdetail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char type[4], const std::vector<std::uint8_t>& payload) {
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    const std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const auto crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

inline std::uint8_t paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
    if (pb <= pc) return static_cast<std::uint8_t>(b);
    return static_cast<std::uint8_t>(c);
}

/// Apply a PNG scanline filter (encode direction). `prev` may be null for
/// the first row.
inline void filter_row(std::uint8_t ft, const std::uint8_t* row, const std::uint8_t* prev, int bytes, int bpp,
                       std::uint8_t* out) {
    for (int i = 0; i < bytes; ++i) {
        const int a = i >= bpp ? row[i - bpp] : 0;
        const int b = prev ? prev[i] : 0;
        const int c = (prev && i >= bpp) ? prev[i - bpp] : 0;
        int v = row[i];
        switch (ft) {
            case 0: break;
            case 1: v -= a; break;
            case 2: v -= b; break;
            case 3: v -= (a + b) / 2; break;
            case 4: v -= paeth(a, b, c); break;
            default: throw std::invalid_argument("png: bad filter type");
        }
        out[i] = static_cast<std::uint8_t>(v & 0xff);
    }
}

inline void unfilter_row(std::uint8_t ft, std::uint8_t* row, const std::uint8_t* prev, int bytes, int bpp) {
    for (int i = 0; i < bytes; ++i) {
        const int a = i >= bpp ? row[i - bpp] : 0;
        const int b = prev ? prev[i] : 0;
        const int c = (prev && i >= bpp) ? prev[i - bpp] : 0;
        int v = row[i];
        switch (ft) {
            case 0: break;
            case 1: v += a; break;
            case 2: v += b; break;
            case 3: v += (a + b) / 2; break;
            case 4: v += paeth(a, b, c); break;
            default: throw std::runtime_error("png: unsupported filter type " + std::to_string(ft));
        }
        row[i] = static_cast<std::uint8_t>(v & 0xff);
    }
}

} // namespace pngdetail

/// Encode to PNG bytes. `filter` selects the per-row filter (0..4); the
/// default None keeps output bytes trivially reproducible.
inline std::vector<std::uint8_t> png_encode(const PngImage& img, std::uint8_t filter = 0) {
    if (img.width < 1 || img.height < 1) throw std::invalid_argument("png_encode: empty image");
    if (img.channels != 1 && img.channels != 3 && img.channels != 4)
        throw std::invalid_argument("png_encode: channels must be 1, 3 or 4");
    if (img.data.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
        throw std::invalid_argument("png_encode: data size mismatch");

    const int row_bytes = img.width * img.channels;
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(img.height) * (row_bytes + 1));
    for (int y = 0; y < img.height; ++y) {
        std::uint8_t* out = raw.data() + static_cast<std::size_t>(y) * (row_bytes + 1);
        *out++ = filter;
        const std::uint8_t* row = img.data.data() + static_cast<std::size_t>(y) * row_bytes;
        const std::uint8_t* prev = y > 0 ? img.data.data() + static_cast<std::size_t>(y - 1) * row_bytes : nullptr;
        pngdetail::filter_row(filter, row, prev, row_bytes, img.channels, out);
    }

    uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> comp(comp_size);
    if (compress2(comp.data(), &comp_size, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("png_encode: deflate failed");
    comp.resize(comp_size);

    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    std::vector<std::uint8_t> out(sig, sig + 8);

    std::vector<std::uint8_t> ihdr;
    pngdetail::put_u32(ihdr, static_cast<std::uint32_t>(img.width));
    pngdetail::put_u32(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8); // bit depth
    ihdr.push_back(img.channels == 1 ? 0 : (img.channels == 3 ? 2 : 6));
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    pngdetail::put_chunk(out, "IHDR", ihdr);
    pngdetail::put_chunk(out, "IDAT", comp);
    pngdetail::put_chunk(out, "IEND", {});
    return out;
}

inline PngImage png_decode(const std::vector<std::uint8_t>& bytes) {
    static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw std::runtime_error("png_decode: not a PNG file");

    PngImage img;
    std::vector<std::uint8_t> idat;
    std::size_t pos = 8;
    bool seen_ihdr = false, seen_iend = false;
    while (pos + 8 <= bytes.size() && !seen_iend) {
        const std::uint32_t len = pngdetail::get_u32(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw std::runtime_error("png_decode: truncated chunk");
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const std::uint8_t* payload = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw std::runtime_error("png_decode: bad IHDR");
            img.width = static_cast<int>(pngdetail::get_u32(payload));
            img.height = static_cast<int>(pngdetail::get_u32(payload + 4));
            const int bit_depth = payload[8], color_type = payload[9], interlace = payload[12];
            if (bit_depth != 8) throw std::runtime_error("png_decode: only 8-bit supported");
            if (interlace != 0) throw std::runtime_error("png_decode: interlaced PNG unsupported");
            switch (color_type) {
                case 0: img.channels = 1; break;
                case 2: img.channels = 3; break;
                case 6: img.channels = 4; break;
                default: throw std::runtime_error("png_decode: unsupported color type");
            }
            seen_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            seen_iend = true;
        }
        pos += 12 + len;
    }
    if (!seen_ihdr || img.width < 1 || img.height < 1) throw std::runtime_error("png_decode: missing IHDR");

    const int row_bytes = img.width * img.channels;
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(img.height) * (row_bytes + 1));
    uLongf raw_size = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_size, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_size != raw.size())
        throw std::runtime_error("png_decode: inflate failed");

    img.data.resize(static_cast<std::size_t>(img.height) * row_bytes);
    for (int y = 0; y < img.height; ++y) {
        const std::uint8_t ft = raw[static_cast<std::size_t>(y) * (row_bytes + 1)];
        std::uint8_t* row = img.data.data() + static_cast<std::size_t>(y) * row_bytes;
        std::memcpy(row, raw.data() + static_cast<std::size_t>(y) * (row_bytes + 1) + 1, row_bytes);
        const std::uint8_t* prev = y > 0 ? img.data.data() + static_cast<std::size_t>(y - 1) * row_bytes : nullptr;
        pngdetail::unfilter_row(ft, row, prev, row_bytes, img.channels);
    }
    return img;
}

inline void png_write_file(const std::string& path, const PngImage& img) {
    atomic_write_file(path, png_encode(img));
}

inline PngImage png_read_file(const std::string& path) { return png_decode(read_file_bytes(path)); }

// ---- conversions between pipeline types and PNG images ----

/// Mask -> single-channel PNG with 0 = background, 255 = foreground.
inline PngImage mask_to_png(const Mask& m) {
    PngImage img;
    img.width = m.values.w;
    img.height = m.values.h;
    img.channels = 1;
    img.data.resize(m.values.size());
    for (std::size_t i = 0; i < m.values.v.size(); ++i) img.data[i] = m.values.v[i] ? 255 : 0;
    return img;
}

inline Mask mask_from_png(const PngImage& img) {
    if (img.channels != 1) throw std::runtime_error("mask_from_png: mask PNG must be single-channel");
    Grid2<std::uint8_t> g(img.height, img.width);
    for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] = img.data[i] >= 128 ? 1 : 0;
    return Mask(std::move(g));
}

/// Encoding field -> 8-bit grayscale via value*255 rounding (export only;
/// the in-memory representation stays floating point).
template <typename T>
PngImage field_to_png(const Grid2<T>& field) {
    PngImage img;
    img.width = field.w;
    img.height = field.h;
    img.channels = 1;
    img.data.resize(field.size());
    for (std::size_t i = 0; i < field.v.size(); ++i)
        img.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(double(field.v[i]), 0.0, 1.0) * 255.0));
    return img;
}

/// 3xHxW float image in [0,1] -> interleaved RGB with round(v*255).
template <typename T>
PngImage image_to_png(const Tensor3<T>& t) {
    if (t.c != 3) throw std::invalid_argument("image_to_png: expected 3 channels");
    PngImage img;
    img.width = t.w;
    img.height = t.h;
    img.channels = 3;
    img.data.resize(static_cast<std::size_t>(t.w) * t.h * 3);
    for (int y = 0; y < t.h; ++y)
        for (int x = 0; x < t.w; ++x)
            for (int c = 0; c < 3; ++c)
                img.data[(static_cast<std::size_t>(y) * t.w + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(std::clamp(double(t.at(c, y, x)), 0.0, 1.0) * 255.0));
    return img;
}

template <typename T = float>
Tensor3<T> image_from_png(const PngImage& img) {
    if (img.channels < 3) throw std::runtime_error("image_from_png: expected RGB(A) PNG");
    Tensor3<T> t(3, img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) t.at(c, y, x) = static_cast<T>(img.at(y, x, c) / 255.0);
    return t;
}

} // namespace edgeo
