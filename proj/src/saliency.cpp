#include "dapper/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dapper::saliency {

Array gradcam_map(const Array& activations, const Array& grads) {
    if (activations.shape != grads.shape || activations.shape.size() != 3)
        throw std::invalid_argument("gradcam_map: need matching [K,h,w] arrays");
    const int K = activations.shape[0], h = activations.shape[1], w = activations.shape[2];
    const int hw = h * w;
    for (float g : grads.data)
        if (!std::isfinite(g)) throw std::runtime_error("gradcam_map: non-finite gradients");

    Array map({h, w});
    for (int k = 0; k < K; ++k) {
        float alpha = 0.f;
        const float* gp = grads.ptr() + size_t(k) * hw;
        for (int i = 0; i < hw; ++i) alpha += gp[i];
        alpha /= float(hw);
        const float* ap = activations.ptr() + size_t(k) * hw;
        for (int i = 0; i < hw; ++i) map[size_t(i)] += alpha * ap[i];
    }
    for (auto& v : map.data) v = std::max(v, 0.f);
    return map;
}

Array upsample_bilinear(const Array& map, int out_h, int out_w) {
    const int h = map.shape[0], w = map.shape[1];
    Array out({out_h, out_w});
    for (int y = 0; y < out_h; ++y) {
        const float sy = (float(y) + 0.5f) * float(h) / float(out_h) - 0.5f;
        const int y0 = std::clamp(int(std::floor(sy)), 0, h - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        const float fy = std::clamp(sy - float(y0), 0.f, 1.f);
        for (int x = 0; x < out_w; ++x) {
            const float sx = (float(x) + 0.5f) * float(w) / float(out_w) - 0.5f;
            const int x0 = std::clamp(int(std::floor(sx)), 0, w - 1);
            const int x1 = std::min(x0 + 1, w - 1);
            const float fx = std::clamp(sx - float(x0), 0.f, 1.f);
            const float top = map[size_t(y0) * w + x0] * (1 - fx) + map[size_t(y0) * w + x1] * fx;
            const float bot = map[size_t(y1) * w + x0] * (1 - fx) + map[size_t(y1) * w + x1] * fx;
            out[size_t(y) * out_w + x] = top * (1 - fy) + bot * fy;
        }
    }
    return out;
}

SaliencyMap gradcam(const eval::ClassifierBundle& bundle, const Image& image, int class_idx) {
    const int n_classes = int(bundle.label_set.size());
    if (class_idx < 0 || class_idx >= n_classes)
        throw std::invalid_argument("gradcam: class index out of range");

    Array final_conv;  // [1,64,4,4] post-activation
    eval::classifier_logits(bundle, image_to_model(image), &final_conv);

    // d logit_c / d A flows through GAP then the dense row for class c:
    // uniform W[c,k] / (h*w) over each map.
    const int K = final_conv.shape[1], h = final_conv.shape[2], w = final_conv.shape[3];
    const Array& fw = bundle.params.at("c.fc.w").value;  // [classes, K]
    Array grads({K, h, w});
    for (int k = 0; k < K; ++k) {
        const float g = fw.at2(class_idx, k) / float(h * w);
        for (int i = 0; i < h * w; ++i) grads[size_t(k) * h * w + size_t(i)] = g;
    }
    Array acts({K, h, w});
    std::copy_n(final_conv.data.begin(), acts.numel(), acts.data.begin());

    SaliencyMap out;
    out.target_class = class_idx;
    out.raw = gradcam_map(acts, grads);
    out.upsampled = upsample_bilinear(out.raw, 32, 32);
    return out;
}

Image overlay(const SaliencyMap& map, const Image& image) {
    if (map.upsampled.shape[0] != image.height || map.upsampled.shape[1] != image.width)
        throw std::invalid_argument("overlay: map/image size mismatch");
    float peak = 0.f;
    for (float v : map.upsampled.data) peak = std::max(peak, v);

    Image out = image;
    if (peak <= 0.f) return out;  // zero map: unchanged input
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            const float m = map.upsampled[size_t(y) * image.width + x] / peak;
            // fixed blue->red heat colormap, alpha proportional to heat
            const float heat[3] = {m, 0.15f * m, 1.f - m};
            const float alpha = 0.5f * m;
            for (int c = 0; c < image.channels && c < 3; ++c)
                out.at(y, x, c) = std::clamp(image.at(y, x, c) * (1 - alpha) + heat[c] * alpha, 0.f, 1.f);
        }
    return out;
}

double on_object_fraction(const Array& upsampled_map, const Image& mask) {
    if (mask.height != upsampled_map.shape[0] || mask.width != upsampled_map.shape[1])
        throw std::invalid_argument("on_object_fraction: mask size mismatch");
    double total = 0.0, inside = 0.0;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            const double v = double(upsampled_map[size_t(y) * mask.width + x]);
            total += v;
            if (mask.at(y, x, 0) >= 0.5f) inside += v;
        }
    return total > 0.0 ? inside / total : 0.0;
}

}  // namespace dapper::saliency
