#include "dapper/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace dapper {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

uint8_t quantize(float v) {
    const float c = std::clamp(v, 0.f, 1.f);
    return uint8_t(std::lround(c * 255.f));
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw std::invalid_argument("write_png: expected 1 or 3 channels");
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
        throw std::runtime_error("write_png: encode error for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // Pin encoder settings so identical pixels give identical bytes.
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_write_info(png, info);

    std::vector<uint8_t> row(size_t(img.width) * img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                row[size_t(x) * img.channels + c] = quantize(img.at(y, x, c));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("read_png: cannot open " + path);

    uint8_t sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
        throw std::runtime_error("read_png: not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: decode error for " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int color_type = png_get_color_type(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int h = int(png_get_image_height(png, info));
    const int w = int(png_get_image_width(png, info));
    const int ch = int(png_get_channels(png, info));
    if (ch != 1 && ch != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: unsupported channel count in " + path);
    }

    Image img(h, w, ch);
    std::vector<uint8_t> row(size_t(w) * ch);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) img.at(y, x, c) = float(row[size_t(x) * ch + c]) / 255.f;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

Image resize_center_crop(const Image& src, int size) {
    if (src.height <= 0 || src.width <= 0) throw std::invalid_argument("resize: empty image");
    const float ratio = float(size) / float(std::min(src.height, src.width));
    const int rh = std::max(size, int(std::lround(src.height * ratio)));
    const int rw = std::max(size, int(std::lround(src.width * ratio)));

    Image resized(rh, rw, src.channels);
    for (int y = 0; y < rh; ++y) {
        const float sy = (y + 0.5f) * src.height / rh - 0.5f;
        const int y0 = std::clamp(int(std::floor(sy)), 0, src.height - 1);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const float fy = std::clamp(sy - float(y0), 0.f, 1.f);
        for (int x = 0; x < rw; ++x) {
            const float sx = (x + 0.5f) * src.width / rw - 0.5f;
            const int x0 = std::clamp(int(std::floor(sx)), 0, src.width - 1);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const float fx = std::clamp(sx - float(x0), 0.f, 1.f);
            for (int c = 0; c < src.channels; ++c) {
                const float top = src.at(y0, x0, c) * (1 - fx) + src.at(y0, x1, c) * fx;
                const float bot = src.at(y1, x0, c) * (1 - fx) + src.at(y1, x1, c) * fx;
                resized.at(y, x, c) = top * (1 - fy) + bot * fy;
            }
        }
    }

    const int oy = (rh - size) / 2, ox = (rw - size) / 2;
    Image out(size, size, src.channels);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < src.channels; ++c) out.at(y, x, c) = resized.at(y + oy, x + ox, c);
    return out;
}

Array image_to_model(const Image& img) {
    Array a({1, img.channels, img.height, img.width});
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) a.at4(0, c, y, x) = img.at(y, x, c) * 2.f - 1.f;
    return a;
}

Image model_to_image(const Array& chw, int n) {
    const int C = chw.shape[1], H = chw.shape[2], W = chw.shape[3];
    Image img(H, W, C);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                img.at(y, x, c) = std::clamp((chw.at4(n, c, y, x) + 1.f) * 0.5f, 0.f, 1.f);
    return img;
}

Array images_to_model_batch(const std::vector<Image>& imgs) {
    if (imgs.empty()) throw std::invalid_argument("images_to_model_batch: empty batch");
    const int C = imgs[0].channels, H = imgs[0].height, W = imgs[0].width;
    Array a({int(imgs.size()), C, H, W});
    for (size_t n = 0; n < imgs.size(); ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) a.at4(int(n), c, y, x) = imgs[n].at(y, x, c) * 2.f - 1.f;
    return a;
}

bool images_equal(const Image& a, const Image& b) {
    return a.height == b.height && a.width == b.width && a.channels == b.channels &&
           a.pixels == b.pixels;
}

double image_mse(const Image& a, const Image& b) {
    if (a.numel() != b.numel()) throw std::invalid_argument("image_mse: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = double(a.pixels[i]) - double(b.pixels[i]);
        acc += d * d;
    }
    return acc / double(a.pixels.size());
}

}  // namespace dapper
