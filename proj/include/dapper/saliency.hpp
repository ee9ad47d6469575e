#pragma once

#include "dapper/array.hpp"
#include "dapper/evalhost.hpp"
#include "dapper/image.hpp"

namespace dapper::saliency {

struct SaliencyMap {
    Array raw;        // [4,4], non-negative
    Array upsampled;  // [32,32], bilinear
    int target_class = 0;
};

// Core Grad-CAM formula, exposed for direct checking: alpha_k = spatial mean
// of grads_k; map = ReLU(sum_k alpha_k A_k). activations/grads are [K,h,w].
Array gradcam_map(const Array& activations, const Array& grads);

// Grad-CAM over the classifier's final convolutional layer for one image.
// The gradient is taken on the pre-softmax logit of `class_idx`.
SaliencyMap gradcam(const eval::ClassifierBundle& bundle, const Image& image, int class_idx);

Array upsample_bilinear(const Array& map, int out_h, int out_w);

// Heatmap alpha-blend over the input (map normalized to [0,1] first; a zero
// map returns the input unchanged).
Image overlay(const SaliencyMap& map, const Image& image);

// Saliency mass inside the foreground mask / total mass; 0 when the map is
// all zero. The mask is binary 32x32 (single channel).
double on_object_fraction(const Array& upsampled_map, const Image& mask);

}  // namespace dapper::saliency
