#include "magic/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "magic/util.hpp"

namespace magic::imaging {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

// Decodes any 8/16-bit PNG into 8-bit rows with `want_channels` (1 or 3).
std::vector<std::vector<uint8_t>> decode_png(const std::string& path, int want_channels,
                                             uint32_t& width, uint32_t& height) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open PNG: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng info init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("PNG decode error: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (want_channels == 3 && (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA))
        png_set_gray_to_rgb(png);
    if (want_channels == 1 && (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
                               color == PNG_COLOR_TYPE_PALETTE))
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);

    std::vector<std::vector<uint8_t>> rows(height);
    std::vector<png_bytep> row_ptrs(height);
    const size_t rowbytes = png_get_rowbytes(png, info);
    for (uint32_t y = 0; y < height; ++y) {
        rows[y].resize(rowbytes);
        row_ptrs[y] = rows[y].data();
    }
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return rows;
}

void encode_png(const std::string& path, const std::vector<uint8_t>& interleaved, uint32_t width,
                uint32_t height, int channels) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot write PNG: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng info init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG encode error: " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, 8,
                 channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> row_ptrs(height);
    for (uint32_t y = 0; y < height; ++y)
        row_ptrs[y] = const_cast<png_bytep>(interleaved.data() +
                                            static_cast<size_t>(y) * width * channels);
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

uint8_t quantize_unit(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<uint8_t>(std::lround(c * 255.0));
}

}  // namespace

Image read_png(const std::string& path) {
    uint32_t w = 0, h = 0;
    auto rows = decode_png(path, 3, w, h);
    Image img(static_cast<int>(h), static_cast<int>(w), ValueRange::Unit);
    for (uint32_t y = 0; y < h; ++y)
        for (uint32_t x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.pixels.at3(c, static_cast<int>(y), static_cast<int>(x)) =
                    rows[y][static_cast<size_t>(x) * 3 + c] / 255.0;
    img.validate();
    return img;
}

void write_png(const std::string& path, const Image& img) {
    img.validate();
    const int h = img.height(), w = img.width();
    const double scale = img.range == ValueRange::Raw255 ? 1.0 / 255.0 : 1.0;
    std::vector<uint8_t> buf(static_cast<size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                buf[(static_cast<size_t>(y) * w + x) * 3 + c] =
                    quantize_unit(img.pixels.at3(c, y, x) * scale);
    encode_png(path, buf, static_cast<uint32_t>(w), static_cast<uint32_t>(h), 3);
}

BinaryMask read_mask_png(const std::string& path) {
    uint32_t w = 0, h = 0;
    auto rows = decode_png(path, 1, w, h);
    BinaryMask mask(static_cast<int>(h), static_cast<int>(w));
    for (uint32_t y = 0; y < h; ++y) {
        for (uint32_t x = 0; x < w; ++x) {
            const uint8_t v = rows[y][x];
            if (v != 0 && v != 255)
                throw InputError("mask PNG must contain only {0,255}, found " +
                                 std::to_string(static_cast<int>(v)) + " in " + path);
            mask.at(static_cast<int>(y), static_cast<int>(x)) = v == 255 ? 1 : 0;
        }
    }
    return mask;
}

void write_mask_png(const std::string& path, const BinaryMask& mask) {
    mask.validate();
    std::vector<uint8_t> buf(mask.values.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = mask.values[i] ? 255 : 0;
    encode_png(path, buf, static_cast<uint32_t>(mask.W), static_cast<uint32_t>(mask.H), 1);
}

}  // namespace magic::imaging
