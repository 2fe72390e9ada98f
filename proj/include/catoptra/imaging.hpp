// Copyright (c) 2026 catoptra contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Image buffers and file handling shared by all modules: PNG (8-bit color and
// masks), PFM (32-bit float depth), JSON/CSV/point-cloud text files, SHA-256
// hashing, and sub-view extraction from mosaic images. All writers go through
// a temp-file + rename so interrupted runs never leave torn artifacts.
// Byte layouts are documented in docs/formats.md.

#include "catoptra/common.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <png.h>

#include <bit>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace catoptra {

// ---------------------------------------------------------------------------
// Buffers
// ---------------------------------------------------------------------------

template <typename T>
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<T> data;  // row-major, interleaved

    Image() = default;
    Image(int w, int h, int c, T fill = T(0))
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * h * c, fill) {}

    std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    T& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    const T& at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
    bool inside(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
    bool sameShape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
    std::size_t pixelCount() const { return static_cast<std::size_t>(width) * height; }
};

using ImageU8 = Image<std::uint8_t>;
using ImageF32 = Image<float>;
using ImageF64 = Image<double>;
using ImageI32 = Image<std::int32_t>;

// Color sentinel for pixels outside any valid region (pure magenta) and the
// reserved depth value for invalid pixels.
inline const float kSentinelColor[3] = {1.0f, 0.0f, 1.0f};
inline constexpr float kInvalidDepth = std::numeric_limits<float>::infinity();

inline ImageU8 toU8(const ImageF32& src) {
    ImageU8 out(src.width, src.height, src.channels);
    for (std::size_t i = 0; i < src.data.size(); ++i) {
        float v = std::clamp(src.data[i], 0.0f, 1.0f);
        out.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return out;
}

inline ImageF32 toF32(const ImageU8& src) {
    ImageF32 out(src.width, src.height, src.channels);
    for (std::size_t i = 0; i < src.data.size(); ++i)
        out.data[i] = static_cast<float>(src.data[i]) / 255.0f;
    return out;
}

inline ImageF64 widen(const ImageF32& src) {
    ImageF64 out(src.width, src.height, src.channels);
    for (std::size_t i = 0; i < src.data.size(); ++i) out.data[i] = src.data[i];
    return out;
}

inline ImageF32 narrow(const ImageF64& src) {
    ImageF32 out(src.width, src.height, src.channels);
    for (std::size_t i = 0; i < src.data.size(); ++i)
        out.data[i] = static_cast<float>(src.data[i]);
    return out;
}

// Chebyshev-ball binary morphology; used for silhouette dilation when carving
// and mask erosion when scoring.
inline ImageU8 dilate(const ImageU8& mask, int radius) {
    ImageU8 out(mask.width, mask.height, 1, 0);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            bool hit = false;
            for (int dy = -radius; dy <= radius && !hit; ++dy)
                for (int dx = -radius; dx <= radius && !hit; ++dx) {
                    int nx = x + dx, ny = y + dy;
                    if (mask.inside(nx, ny) && mask.at(nx, ny)) hit = true;
                }
            out.at(x, y) = hit ? 1 : 0;
        }
    return out;
}

inline ImageU8 erode(const ImageU8& mask, int radius) {
    ImageU8 out(mask.width, mask.height, 1, 0);
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            bool all = true;
            for (int dy = -radius; dy <= radius && all; ++dy)
                for (int dx = -radius; dx <= radius && all; ++dx) {
                    int nx = x + dx, ny = y + dy;
                    if (!mask.inside(nx, ny) || !mask.at(nx, ny)) all = false;
                }
            out.at(x, y) = all ? 1 : 0;
        }
    return out;
}

// ---------------------------------------------------------------------------
// View records shared between the simulator, hull and splat stages
// ---------------------------------------------------------------------------

// One virtual view: color, depth along the viewing axis, the foreground
// silhouette and the set of pixels whose rays completed a legal path.
struct RenderedView {
    ImageF32 color;     // 3 channels
    ImageF32 depth;     // 1 channel; kInvalidDepth off the silhouette
    ImageU8 silhouette; // 1 = foreground object
    ImageU8 validity;   // 1 = legal two-bounce (or direct) ray

    int width() const { return color.width; }
    int height() const { return color.height; }
};

// Composite image seen by the single physical camera, with the per-pixel
// sub-view id (-1 = background / no legal path).
struct MosaicImage {
    ImageF32 color;
    ImageI32 multiViewMask;
    ImageF32 depth;        // optical path length from the sensor plane
    ImageU8 validity;
    int interReflections = 0;  // rays flagged during the trace
};

struct MaskSet {
    ImageI32 multiViewMask;
    std::vector<ImageU8> foregroundMasks;  // mosaic-sized, one per sub-view
};

struct SubView {
    int pairId = -1;
    bool empty = true;
    int x0 = 0, y0 = 0;    // crop origin in mosaic pixels
    ImageF32 color;        // region pixels; sentinel elsewhere
    ImageU8 region;        // 1 where the sub-view id matched
    ImageU8 foreground;    // cropped foreground mask
};

// Splits a mosaic into per-view cropped images. Pixels outside a view's
// region are set to the magenta sentinel.
inline std::vector<SubView> applyMultiViewMask(const MosaicImage& mosaic, const MaskSet& masks) {
    if (mosaic.color.width != masks.multiViewMask.width ||
        mosaic.color.height != masks.multiViewMask.height)
        throw ShapeMismatch("multi-view mask resolution does not match the mosaic");
    int nViews = static_cast<int>(masks.foregroundMasks.size());
    for (const auto& fg : masks.foregroundMasks)
        if (fg.width != mosaic.color.width || fg.height != mosaic.color.height)
            throw ShapeMismatch("foreground mask resolution does not match the mosaic");

    std::vector<SubView> views(nViews);
    std::vector<int> minX(nViews, mosaic.color.width), minY(nViews, mosaic.color.height);
    std::vector<int> maxX(nViews, -1), maxY(nViews, -1);
    for (int y = 0; y < mosaic.color.height; ++y)
        for (int x = 0; x < mosaic.color.width; ++x) {
            int id = masks.multiViewMask.at(x, y);
            if (id < 0 || id >= nViews) continue;
            minX[id] = std::min(minX[id], x);
            minY[id] = std::min(minY[id], y);
            maxX[id] = std::max(maxX[id], x);
            maxY[id] = std::max(maxY[id], y);
        }
    for (int id = 0; id < nViews; ++id) {
        SubView& v = views[id];
        v.pairId = id;
        if (maxX[id] < 0) continue;  // empty region stays flagged
        v.empty = false;
        v.x0 = minX[id];
        v.y0 = minY[id];
        int w = maxX[id] - minX[id] + 1, h = maxY[id] - minY[id] + 1;
        v.color = ImageF32(w, h, 3);
        v.region = ImageU8(w, h, 1, 0);
        v.foreground = ImageU8(w, h, 1, 0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int mx = x + v.x0, my = y + v.y0;
                bool mine = masks.multiViewMask.at(mx, my) == id;
                v.region.at(x, y) = mine ? 1 : 0;
                v.foreground.at(x, y) = mine && masks.foregroundMasks[id].at(mx, my) ? 1 : 0;
                for (int c = 0; c < 3; ++c)
                    v.color.at(x, y, c) = mine ? mosaic.color.at(mx, my, c) : kSentinelColor[c];
            }
    }
    return views;
}

// ---------------------------------------------------------------------------
// Atomic file writing
// ---------------------------------------------------------------------------

namespace detail {
inline std::filesystem::path tempSibling(const std::filesystem::path& path) {
    static std::atomic<unsigned> counter{0};
    auto dir = path.parent_path();
    auto name = path.filename().string() + ".tmp" + std::to_string(counter.fetch_add(1));
    return (dir.empty() ? std::filesystem::path(".") : dir) / name;
}
}  // namespace detail

// Writes via `writer(tmpPath)` then renames over the target.
template <typename Writer>
void atomicWrite(const std::filesystem::path& path, Writer&& writer) {
    auto tmp = detail::tempSibling(path);
    try {
        writer(tmp);
        std::filesystem::rename(tmp, path);
    } catch (...) {
        std::error_code ec;
        std::filesystem::remove(tmp, ec);
        throw;
    }
}

inline void writeTextAtomic(const std::filesystem::path& path, const std::string& text) {
    atomicWrite(path, [&](const std::filesystem::path& tmp) {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out << text;
        if (!out) throw IoError("write failed for " + tmp.string());
    });
}

inline std::string readText(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline nlohmann::json loadJson(const std::filesystem::path& path) {
    try {
        return nlohmann::json::parse(readText(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string(), e.what());
    }
}

inline void saveJsonAtomic(const std::filesystem::path& path, const nlohmann::json& j) {
    writeTextAtomic(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

namespace detail {
struct PngReadGuard {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* fp = nullptr;
    ~PngReadGuard() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};
struct PngWriteGuard {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* fp = nullptr;
    ~PngWriteGuard() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};
}  // namespace detail

// Reads an 8-bit PNG as grayscale (1 channel) or RGB (3 channels); palette and
// 16-bit inputs are expanded/stripped, alpha is dropped.
inline ImageU8 readPng(const std::filesystem::path& path) {
    detail::PngReadGuard g;
    g.fp = std::fopen(path.string().c_str(), "rb");
    if (!g.fp) throw IoError("cannot open " + path.string());
    g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!g.png) throw IoError("png_create_read_struct failed");
    g.info = png_create_info_struct(g.png);
    if (!g.info) throw IoError("png_create_info_struct failed");

    ImageU8 out;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(g.png)))
        throw ParseError(path.string(), "corrupt or truncated PNG");
    png_init_io(g.png, g.fp);
    png_read_info(g.png, g.info);
    png_set_expand(g.png);
    png_set_strip_16(g.png);
    png_set_strip_alpha(g.png);
    png_read_update_info(g.png, g.info);
    int channels = png_get_channels(g.png, g.info);
    if (channels != 1 && channels != 3)
        throw ParseError(path.string(), "unsupported channel count after expansion");
    out = ImageU8(static_cast<int>(png_get_image_width(g.png, g.info)),
                  static_cast<int>(png_get_image_height(g.png, g.info)), channels);
    rows.resize(out.height);
    for (int y = 0; y < out.height; ++y)
        rows[y] = out.data.data() + out.index(0, y);
    png_read_image(g.png, rows.data());
    png_read_end(g.png, nullptr);
    return out;
}

inline void writePng(const std::filesystem::path& path, const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3)
        throw ShapeMismatch("PNG writer supports 1 or 3 channels");
    atomicWrite(path, [&](const std::filesystem::path& tmp) {
        detail::PngWriteGuard g;
        g.fp = std::fopen(tmp.string().c_str(), "wb");
        if (!g.fp) throw IoError("cannot open " + tmp.string() + " for writing");
        g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        if (!g.png) throw IoError("png_create_write_struct failed");
        g.info = png_create_info_struct(g.png);
        if (!g.info) throw IoError("png_create_info_struct failed");
        std::vector<png_bytep> rows(img.height);
        if (setjmp(png_jmpbuf(g.png)))
            throw IoError("PNG encode failed for " + tmp.string());
        png_init_io(g.png, g.fp);
        png_set_IHDR(g.png, g.info, img.width, img.height, 8,
                     img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                     PNG_FILTER_TYPE_DEFAULT);
        png_write_info(g.png, g.info);
        for (int y = 0; y < img.height; ++y)
            rows[y] = const_cast<png_bytep>(img.data.data() + img.index(0, y));
        png_write_image(g.png, rows.data());
        png_write_end(g.png, nullptr);
    });
}

// ---------------------------------------------------------------------------
// PFM (32-bit float, grayscale "Pf" or RGB "PF"; scale sign = endianness)
// ---------------------------------------------------------------------------

inline void writePfm(const std::filesystem::path& path, const ImageF32& img) {
    if (img.channels != 1 && img.channels != 3)
        throw ShapeMismatch("PFM writer supports 1 or 3 channels");
    atomicWrite(path, [&](const std::filesystem::path& tmp) {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        const bool little = std::endian::native == std::endian::little;
        out << (img.channels == 1 ? "Pf" : "PF") << "\n"
            << img.width << " " << img.height << "\n"
            << (little ? "-1.0" : "1.0") << "\n";
        // PFM stores rows bottom-to-top.
        for (int y = img.height - 1; y >= 0; --y)
            out.write(reinterpret_cast<const char*>(img.data.data() + img.index(0, y)),
                      static_cast<std::streamsize>(img.width) * img.channels * sizeof(float));
        if (!out) throw IoError("write failed for " + tmp.string());
    });
}

inline ImageF32 readPfm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string magic;
    int w = 0, h = 0;
    double scale = 0;
    in >> magic >> w >> h >> scale;
    if (!in || (magic != "Pf" && magic != "PF") || w <= 0 || h <= 0 || scale == 0)
        throw ParseError(path.string(), "bad PFM header");
    in.get();  // single whitespace byte after the scale
    ImageF32 img(w, h, magic == "PF" ? 3 : 1);
    for (int y = h - 1; y >= 0; --y) {
        in.read(reinterpret_cast<char*>(img.data.data() + img.index(0, y)),
                static_cast<std::streamsize>(w) * img.channels * sizeof(float));
        if (!in) throw ParseError(path.string(), "truncated PFM payload");
    }
    const bool fileLittle = scale < 0;
    const bool hostLittle = std::endian::native == std::endian::little;
    if (fileLittle != hostLittle) {
        for (float& f : img.data) {
            auto u = std::bit_cast<std::uint32_t>(f);
            u = ((u & 0xff000000u) >> 24) | ((u & 0x00ff0000u) >> 8) |
                ((u & 0x0000ff00u) << 8) | ((u & 0x000000ffu) << 24);
            f = std::bit_cast<float>(u);
        }
    }
    return img;
}

// ---------------------------------------------------------------------------
// Point clouds ("x y z nx ny nz" per line)
// ---------------------------------------------------------------------------

struct PointNormal {
    Vec3 position = Vec3::Zero();
    Vec3 normal = Vec3::Zero();
};

inline void writePointsAtomic(const std::filesystem::path& path,
                              const std::vector<PointNormal>& points) {
    std::ostringstream ss;
    ss.precision(17);
    for (const auto& p : points)
        ss << p.position.x() << " " << p.position.y() << " " << p.position.z() << " "
           << p.normal.x() << " " << p.normal.y() << " " << p.normal.z() << "\n";
    writeTextAtomic(path, ss.str());
}

inline std::vector<PointNormal> readPoints(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<PointNormal> points;
    std::string line;
    long lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (line.empty()) continue;
        std::istringstream ls(line);
        PointNormal p;
        if (!(ls >> p.position.x() >> p.position.y() >> p.position.z() >>
              p.normal.x() >> p.normal.y() >> p.normal.z()))
            throw ParseError(path.string(), lineNo, "expected 6 numbers");
        points.push_back(p);
    }
    return points;
}

// ---------------------------------------------------------------------------
// CSV (numeric tables with a header row)
// ---------------------------------------------------------------------------

inline void writeCsvAtomic(const std::filesystem::path& path,
                           const std::vector<std::string>& header,
                           const std::vector<std::vector<double>>& rows) {
    std::ostringstream ss;
    ss.precision(17);
    for (std::size_t i = 0; i < header.size(); ++i)
        ss << header[i] << (i + 1 < header.size() ? "," : "");
    ss << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i)
            ss << row[i] << (i + 1 < row.size() ? "," : "");
        ss << "\n";
    }
    writeTextAtomic(path, ss.str());
}

// ---------------------------------------------------------------------------
// SHA-256 (manifest hashes)
// ---------------------------------------------------------------------------

inline std::string sha256Hex(const void* data, std::size_t size) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw IoError("EVP_MD_CTX_new failed");
    bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) &&
              EVP_DigestUpdate(ctx, data, size) &&
              EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    if (!ok) throw IoError("SHA-256 computation failed");
    static const char* hex = "0123456789abcdef";
    std::string out(len * 2, '0');
    for (unsigned i = 0; i < len; ++i) {
        out[2 * i] = hex[digest[i] >> 4];
        out[2 * i + 1] = hex[digest[i] & 0xf];
    }
    return out;
}

inline std::string sha256File(const std::filesystem::path& path) {
    std::string bytes = readText(path);
    return sha256Hex(bytes.data(), bytes.size());
}

}  // namespace catoptra
