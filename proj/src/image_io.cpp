#include "tdm/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace tdm {

namespace {
struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

unsigned char to_byte(double v) {
    if (v <= 0.0) return 0;
    if (v >= 1.0) return 255;
    return static_cast<unsigned char>(v * 255.0 + 0.5);
}
}  // namespace

void write_png(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || (image.shape[0] != 1 && image.shape[0] != 3))
        throw std::invalid_argument("write_png: expected 1xHxW or 3xHxW tensor");
    const int c = image.shape[0], h = image.shape[1], w = image.shape[2];

    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("write_png: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: libpng error writing " + path);
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, w, h, 8, c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> row(static_cast<std::size_t>(w) * c);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int ci = 0; ci < c; ++ci) row[x * c + ci] = to_byte(image.at(ci, y, x));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("read_png: cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: libpng error reading " + path);
    }

    png_init_io(png, fp.get());
    png_read_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int c = static_cast<int>(png_get_channels(png, info));
    if (c != 1 && c != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: unsupported channel count in " + path);
    }

    Tensor image({c, h, w});
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * c);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int ci = 0; ci < c; ++ci) image.at(ci, y, x) = row[x * c + ci] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

void write_f32(const std::string& path, const Tensor& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_f32: cannot open " + path);
    std::vector<float> buf(image.numel());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(image.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw std::runtime_error("write_f32: write failed for " + path);
}

Tensor read_f32(const std::string& path, const std::vector<int>& shape) {
    Tensor t(shape);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_f32: cannot open " + path);
    std::vector<float> buf(t.numel());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != buf.size() * sizeof(float))
        throw std::runtime_error("read_f32: truncated file " + path);
    for (std::size_t i = 0; i < buf.size(); ++i) t.data[i] = static_cast<double>(buf[i]);
    return t;
}

}  // namespace tdm
