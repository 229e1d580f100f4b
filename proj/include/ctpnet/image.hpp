#pragma once

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "ctpnet/common.hpp"
#include "ctpnet/tensor.hpp"

namespace ctpnet {

/// 8-bit interleaved RGB raster.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // 3 * width * height

    Image() = default;
    Image(int w, int h, std::uint8_t r = 0, std::uint8_t g = 0, std::uint8_t b = 0) : width(w), height(h) {
        rgb.resize(static_cast<std::size_t>(w) * h * 3);
        for (std::size_t i = 0; i < rgb.size(); i += 3) {
            rgb[i] = r;
            rgb[i + 1] = g;
            rgb[i + 2] = b;
        }
    }

    std::uint8_t* px(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
    const std::uint8_t* px(int x, int y) const { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }

    bool operator==(const Image& o) const { return width == o.width && height == o.height && rgb == o.rgb; }
};

/// Binary mask, values strictly 0 or 1 (1 = forged).
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> v;

    Mask() = default;
    Mask(int w, int h, std::uint8_t fill = 0) : width(w), height(h), v(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t& at(int x, int y) { return v[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return v[static_cast<std::size_t>(y) * width + x]; }

    std::int64_t sum() const {
        std::int64_t s = 0;
        for (std::uint8_t b : v) s += b;
        return s;
    }

    bool operator==(const Mask& o) const { return width == o.width && height == o.height && v == o.v; }
};

struct Rect {
    int x = 0, y = 0, w = 0, h = 0;

    bool inside(int img_w, int img_h) const {
        return x >= 0 && y >= 0 && w > 0 && h > 0 && x + w <= img_w && y + h <= img_h;
    }
    bool operator==(const Rect&) const = default;
};

// --- PNG I/O ------------------------------------------------------------

namespace detail {

struct PngCloser {
    std::FILE* f = nullptr;
    ~PngCloser() {
        if (f) std::fclose(f);
    }
};

}  // namespace detail

inline void write_png_rgb(const std::string& path, const Image& img) {
    detail::PngCloser file;
    file.f = std::fopen(path.c_str(), "wb");
    if (!file.f) throw DataError("cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng initialization failed");
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) {
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(img.px(0, y));
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("PNG write failed: " + path);
    }
    png_init_io(png, file.f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

/// Masks are stored as 8-bit grayscale PNG with {0,255}.
inline void write_png_mask(const std::string& path, const Mask& mask) {
    detail::PngCloser file;
    file.f = std::fopen(path.c_str(), "wb");
    if (!file.f) throw DataError("cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng initialization failed");
    }
    std::vector<std::uint8_t> gray(mask.v.size());
    for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = mask.v[i] ? 255 : 0;
    std::vector<png_bytep> rows(static_cast<std::size_t>(mask.height));
    for (int y = 0; y < mask.height; ++y) {
        rows[static_cast<std::size_t>(y)] = gray.data() + static_cast<std::size_t>(y) * mask.width;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("PNG write failed: " + path);
    }
    png_init_io(png, file.f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(mask.width), static_cast<png_uint_32>(mask.height), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline Image read_png_rgb(const std::string& path) {
    detail::PngCloser file;
    file.f = std::fopen(path.c_str(), "rb");
    if (!file.f) throw DataError("cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng initialization failed");
    }
    Image img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("PNG read failed: " + path);
    }
    png_init_io(png, file.f);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
        png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(png);
    }
    png_read_update_info(png, info);
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
    rows.resize(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = img.px(0, y);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline Mask read_png_mask(const std::string& path) {
    Image img = read_png_rgb(path);
    Mask mask(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            mask.at(x, y) = img.px(x, y)[0] >= 128 ? 1 : 0;
        }
    }
    return mask;
}

// --- JPEG round trip ------------------------------------------------------

namespace detail {

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(mgr->jump, 1);
}

}  // namespace detail

/// Baseline-JPEG encode followed by decode, in memory. Chroma subsampling is
/// 4:2:0 below quality 95 and 4:4:4 at or above it. The image dimensions
/// never change.
inline Image jpeg_roundtrip(const Image& img, int quality) {
    if (quality < 1 || quality > 100) throw ConfigError("jpeg quality must be in [1, 100]");

    unsigned char* buf = nullptr;
    unsigned long buf_size = 0;
    {
        jpeg_compress_struct cinfo;
        detail::JpegErrorMgr err;
        cinfo.err = jpeg_std_error(&err.pub);
        err.pub.error_exit = detail::jpeg_error_exit;
        if (setjmp(err.jump)) {
            jpeg_destroy_compress(&cinfo);
            if (buf) std::free(buf);
            throw DataError("JPEG encode failed");
        }
        jpeg_create_compress(&cinfo);
        jpeg_mem_dest(&cinfo, &buf, &buf_size);
        cinfo.image_width = static_cast<JDIMENSION>(img.width);
        cinfo.image_height = static_cast<JDIMENSION>(img.height);
        cinfo.input_components = 3;
        cinfo.in_color_space = JCS_RGB;
        jpeg_set_defaults(&cinfo);
        jpeg_set_quality(&cinfo, quality, TRUE);
        const int samp = quality >= 95 ? 1 : 2;
        cinfo.comp_info[0].h_samp_factor = samp;
        cinfo.comp_info[0].v_samp_factor = samp;
        cinfo.comp_info[1].h_samp_factor = 1;
        cinfo.comp_info[1].v_samp_factor = 1;
        cinfo.comp_info[2].h_samp_factor = 1;
        cinfo.comp_info[2].v_samp_factor = 1;
        jpeg_start_compress(&cinfo, TRUE);
        while (cinfo.next_scanline < cinfo.image_height) {
            JSAMPROW row = const_cast<JSAMPROW>(img.px(0, static_cast<int>(cinfo.next_scanline)));
            jpeg_write_scanlines(&cinfo, &row, 1);
        }
        jpeg_finish_compress(&cinfo);
        jpeg_destroy_compress(&cinfo);
    }

    Image out;
    {
        jpeg_decompress_struct dinfo;
        detail::JpegErrorMgr err;
        dinfo.err = jpeg_std_error(&err.pub);
        err.pub.error_exit = detail::jpeg_error_exit;
        if (setjmp(err.jump)) {
            jpeg_destroy_decompress(&dinfo);
            std::free(buf);
            throw DataError("JPEG decode failed");
        }
        jpeg_create_decompress(&dinfo);
        jpeg_mem_src(&dinfo, buf, buf_size);
        jpeg_read_header(&dinfo, TRUE);
        dinfo.out_color_space = JCS_RGB;
        jpeg_start_decompress(&dinfo);
        out.width = static_cast<int>(dinfo.output_width);
        out.height = static_cast<int>(dinfo.output_height);
        out.rgb.resize(static_cast<std::size_t>(out.width) * out.height * 3);
        while (dinfo.output_scanline < dinfo.output_height) {
            JSAMPROW row = out.px(0, static_cast<int>(dinfo.output_scanline));
            jpeg_read_scanlines(&dinfo, &row, 1);
        }
        jpeg_finish_decompress(&dinfo);
        jpeg_destroy_decompress(&dinfo);
    }
    std::free(buf);
    if (out.width != img.width || out.height != img.height) {
        throw DataError("JPEG round trip changed image dimensions");
    }
    return out;
}

// --- resampling -----------------------------------------------------------

/// Bilinear resize with the half-pixel-center convention; identical
/// dimensions reproduce the input exactly.
inline Image resize_bilinear(const Image& img, int new_w, int new_h) {
    if (new_w < 1 || new_h < 1) throw ConfigError("resize: target dimensions must be positive");
    Image out(new_w, new_h);
    const double sx = static_cast<double>(img.width) / new_w;
    const double sy = static_cast<double>(img.height) / new_h;
    for (int y = 0; y < new_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        if (fy < 0) fy = 0;
        if (fy > img.height - 1) fy = img.height - 1;
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < new_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            if (fx < 0) fx = 0;
            if (fx > img.width - 1) fx = img.width - 1;
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double v = (1 - wy) * ((1 - wx) * img.px(x0, y0)[c] + wx * img.px(x1, y0)[c]) +
                                 wy * ((1 - wx) * img.px(x0, y1)[c] + wx * img.px(x1, y1)[c]);
                const int r = static_cast<int>(std::lround(v));
                out.px(x, y)[c] = static_cast<std::uint8_t>(std::clamp(r, 0, 255));
            }
        }
    }
    return out;
}

/// Nearest-neighbour resize; masks stay strictly binary.
inline Mask resize_nearest(const Mask& mask, int new_w, int new_h) {
    if (new_w < 1 || new_h < 1) throw ConfigError("resize: target dimensions must be positive");
    Mask out(new_w, new_h);
    const double sx = static_cast<double>(mask.width) / new_w;
    const double sy = static_cast<double>(mask.height) / new_h;
    for (int y = 0; y < new_h; ++y) {
        int syi = static_cast<int>((y + 0.5) * sy);
        if (syi > mask.height - 1) syi = mask.height - 1;
        for (int x = 0; x < new_w; ++x) {
            int sxi = static_cast<int>((x + 0.5) * sx);
            if (sxi > mask.width - 1) sxi = mask.width - 1;
            out.at(x, y) = mask.at(sxi, syi);
        }
    }
    return out;
}

inline Image crop(const Image& img, const Rect& r) {
    if (!r.inside(img.width, img.height)) throw DataError("crop region out of bounds");
    Image out(r.w, r.h);
    for (int y = 0; y < r.h; ++y) {
        std::memcpy(out.px(0, y), img.px(r.x, r.y + y), static_cast<std::size_t>(r.w) * 3);
    }
    return out;
}

inline Mask crop(const Mask& mask, const Rect& r) {
    if (!r.inside(mask.width, mask.height)) throw DataError("crop region out of bounds");
    Mask out(r.w, r.h);
    for (int y = 0; y < r.h; ++y) {
        std::memcpy(&out.at(0, y), &mask.at(r.x, r.y + y), static_cast<std::size_t>(r.w));
    }
    return out;
}

/// Per-channel Gaussian noise, rounded and clipped to [0, 255]. sigma 0 is
/// an exact no-op.
inline void add_gaussian_noise(Image& img, double sigma, Rng& rng) {
    if (sigma < 0) throw ConfigError("noise sigma must be >= 0");
    if (sigma == 0) return;
    for (auto& byte : img.rgb) {
        const double v = static_cast<double>(byte) + rng.normal() * sigma;
        byte = static_cast<std::uint8_t>(std::clamp(static_cast<int>(std::lround(v)), 0, 255));
    }
}

/// Pure red over masked pixels, untouched elsewhere.
inline Image overlay_mask(const Image& img, const Mask& mask) {
    if (img.width != mask.width || img.height != mask.height) throw ShapeError("overlay: image/mask size mismatch");
    Image out = img;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            if (mask.at(x, y)) {
                out.px(x, y)[0] = 255;
                out.px(x, y)[1] = 0;
                out.px(x, y)[2] = 0;
            }
        }
    }
    return out;
}

/// [0,1]-normalized NCHW float batch entry from an 8-bit image.
inline void image_into_tensor(const Image& img, float* dst) {
    const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const std::uint8_t* p = img.px(x, y);
            const std::size_t i = static_cast<std::size_t>(y) * img.width + x;
            dst[i] = static_cast<float>(p[0]) / 255.0f;
            dst[plane + i] = static_cast<float>(p[1]) / 255.0f;
            dst[2 * plane + i] = static_cast<float>(p[2]) / 255.0f;
        }
    }
}

}  // namespace ctpnet
