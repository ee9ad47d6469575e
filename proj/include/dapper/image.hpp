#pragma once

#include <string>
#include <vector>

#include "dapper/array.hpp"

namespace dapper {

// HWC float image in [0,1]. This is the external (file-facing) convention;
// model code converts to CHW in [-1,1] at the boundary.
struct Image {
    int height = 0, width = 0, channels = 0;
    std::vector<float> pixels;  // height*width*channels

    Image() = default;
    Image(int h, int w, int c, float fill = 0.f)
        : height(h), width(w), channels(c), pixels(size_t(h) * w * c, fill) {}

    float& at(int y, int x, int c) { return pixels[(size_t(y) * width + x) * channels + c]; }
    float at(int y, int x, int c) const { return pixels[(size_t(y) * width + x) * channels + c]; }
    size_t numel() const { return pixels.size(); }
};

// PNG I/O (8-bit). Writing quantizes with round(v*255) after clamping.
// Reading accepts gray/gray-alpha/palette/RGB/RGBA at 8 or 16 bits and
// returns RGB (or single-channel when the file is grayscale).
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// Bilinear resize then center crop to size x size.
Image resize_center_crop(const Image& src, int size);

// Model-facing conversions. CHW, [-1,1].
Array image_to_model(const Image& img);
Image model_to_image(const Array& chw, int n = 0);

// Batch of model images [N,C,H,W] from manifest-ordered images.
Array images_to_model_batch(const std::vector<Image>& imgs);

bool images_equal(const Image& a, const Image& b);
double image_mse(const Image& a, const Image& b);

}  // namespace dapper
