#include "mfm/png_io.hpp"

#include <png.h>

#include <cstdio>

namespace mfm::png {

Image read(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw ConfigError("png: cannot open '" + path + "'");
    png_structp p = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = p ? png_create_info_struct(p) : nullptr;
    if (!p || !info) {
        if (p) png_destroy_read_struct(&p, &info, nullptr);
        std::fclose(fp);
        throw ConfigError("png: reader initialization failed for '" + path + "'");
    }

    Image img;
    bool failed = false;
    if (setjmp(png_jmpbuf(p))) {
        failed = true;
    } else {
        png_init_io(p, fp);
        png_read_info(p, info);
        const png_byte color = png_get_color_type(p, info);
        const png_byte depth = png_get_bit_depth(p, info);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(p);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(p);
        if (depth == 16) png_set_strip_16(p);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(p);
        if (png_get_valid(p, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(p), png_set_strip_alpha(p);
        png_read_update_info(p, info);

        img.h = static_cast<int>(png_get_image_height(p, info));
        img.w = static_cast<int>(png_get_image_width(p, info));
        img.channels = static_cast<int>(png_get_channels(p, info));
        if (img.channels == 1 || img.channels == 3) {
            img.data.resize(static_cast<std::size_t>(img.h) * img.w * img.channels);
            std::vector<png_bytep> rows(img.h);
            for (int y = 0; y < img.h; ++y)
                rows[y] = img.data.data() + static_cast<std::size_t>(y) * img.w * img.channels;
            png_read_image(p, rows.data());
            png_read_end(p, nullptr);
        }
    }
    png_destroy_read_struct(&p, &info, nullptr);
    std::fclose(fp);

    if (failed) throw ConfigError("png: failed to read '" + path + "'");
    if (img.channels != 1 && img.channels != 3)
        throw ConfigError("png: '" + path + "' must decode to 8-bit grayscale or RGB, got " +
                          std::to_string(img.channels) + " channels");
    return img;
}

namespace {

void write_impl(const std::string& path, const std::uint8_t* data, int h, int w, int channels,
                int color_type) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw ConfigError("png: cannot create '" + path + "'");
    png_structp p = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = p ? png_create_info_struct(p) : nullptr;
    if (!p || !info) {
        if (p) png_destroy_write_struct(&p, &info);
        std::fclose(fp);
        throw ConfigError("png: writer initialization failed for '" + path + "'");
    }

    bool failed = false;
    if (setjmp(png_jmpbuf(p))) {
        failed = true;
    } else {
        png_init_io(p, fp);
        png_set_IHDR(p, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                     color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                     PNG_FILTER_TYPE_DEFAULT);
        png_write_info(p, info);
        std::vector<png_bytep> rows(h);
        for (int y = 0; y < h; ++y)
            rows[y] = const_cast<png_bytep>(data) + static_cast<std::size_t>(y) * w * channels;
        png_write_image(p, rows.data());
        png_write_end(p, info);
    }
    png_destroy_write_struct(&p, &info);
    std::fclose(fp);
    if (failed) throw ConfigError("png: failed to write '" + path + "'");
}

}  // namespace

void write_rgb8(const std::string& path, const std::vector<std::uint8_t>& rgb, int h, int w) {
    if (rgb.size() != static_cast<std::size_t>(h) * w * 3)
        throw ConfigError("png: RGB buffer size " + std::to_string(rgb.size()) +
                          " does not match " + std::to_string(h) + "x" + std::to_string(w));
    write_impl(path, rgb.data(), h, w, 3, PNG_COLOR_TYPE_RGB);
}

void write_gray8(const std::string& path, const std::vector<std::uint8_t>& gray, int h, int w) {
    if (gray.size() != static_cast<std::size_t>(h) * w)
        throw ConfigError("png: gray buffer size " + std::to_string(gray.size()) +
                          " does not match " + std::to_string(h) + "x" + std::to_string(w));
    write_impl(path, gray.data(), h, w, 1, PNG_COLOR_TYPE_GRAY);
}

}  // namespace mfm::png
