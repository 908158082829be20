#include "dgseg/png_io.hpp"

#include <csetjmp>
#include <cstring>
#include <cstdio>
#include <memory>

#include <png.h>

#include "dgseg/core.hpp"

namespace dgseg::png {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open(const std::filesystem::path& p, const char* mode) {
    FilePtr f(std::fopen(p.c_str(), mode));
    if (!f) throw DataError("png: cannot open " + p.string());
    return f;
}

void write_png(const std::filesystem::path& path, int width, int height, int color_type, int bit_depth,
               const std::vector<png_bytep>& rows) {
    auto f = open(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("png: out of memory writing " + path.string());
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("png: failed writing " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);  // rows are host (little-endian) order
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

template <typename Fn>
void read_png(const std::filesystem::path& path, int want_color, int want_depth, Fn&& consume) {
    auto f = open(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("png: out of memory reading " + path.string());
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("png: failed reading " + path.string());
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color != want_color || depth != want_depth) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("png: unexpected pixel format in " + path.string());
    }
    if (depth == 16) png_set_swap(png);
    png_read_update_info(png, info);
    const auto rowbytes = png_get_rowbytes(png, info);
    std::vector<png_byte> buf(rowbytes * static_cast<std::size_t>(h));
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = buf.data() + rowbytes * static_cast<std::size_t>(y);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    consume(w, h, buf);
}

}  // namespace

void write_rgb8(const std::filesystem::path& path, const Rgb8& img) {
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    auto* base = const_cast<std::uint8_t*>(img.pixels.data());
    for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = base + static_cast<std::size_t>(y) * img.width * 3;
    write_png(path, img.width, img.height, PNG_COLOR_TYPE_RGB, 8, rows);
}

Rgb8 read_rgb8(const std::filesystem::path& path) {
    Rgb8 out;
    read_png(path, PNG_COLOR_TYPE_RGB, 8, [&](int w, int h, std::vector<png_byte>& buf) {
        out.width = w;
        out.height = h;
        out.pixels.assign(buf.begin(), buf.end());
    });
    return out;
}

void write_gray16(const std::filesystem::path& path, const Gray16& img) {
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    auto* base = reinterpret_cast<png_bytep>(const_cast<std::uint16_t*>(img.pixels.data()));
    for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = base + static_cast<std::size_t>(y) * img.width * 2;
    write_png(path, img.width, img.height, PNG_COLOR_TYPE_GRAY, 16, rows);
}

Gray16 read_gray16(const std::filesystem::path& path) {
    Gray16 out;
    read_png(path, PNG_COLOR_TYPE_GRAY, 16, [&](int w, int h, std::vector<png_byte>& buf) {
        out.width = w;
        out.height = h;
        out.pixels.resize(static_cast<std::size_t>(w) * h);
        std::memcpy(out.pixels.data(), buf.data(), out.pixels.size() * 2);
    });
    return out;
}

}  // namespace dgseg::png
