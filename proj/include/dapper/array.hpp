#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dapper {

// Dense row-major float32 array. Value semantics; shape is a small vector
// of extents. All learning modules share this one container.
struct Array {
    std::vector<int> shape;
    std::vector<float> data;

    Array() = default;
    explicit Array(std::vector<int> s, float fill = 0.f) : shape(std::move(s)) {
        data.assign(numel_of(shape), fill);
    }

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("Array: negative extent");
            n *= size_t(d);
        }
        return n;
    }

    size_t numel() const { return data.size(); }
    bool empty() const { return data.empty(); }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    float& operator[](size_t i) { return data[i]; }
    float operator[](size_t i) const { return data[i]; }

    // 2D / 4D accessors for the common layouts [N,C] and [N,C,H,W]
    float& at2(int i, int j) { return data[size_t(i) * shape[1] + j]; }
    float at2(int i, int j) const { return data[size_t(i) * shape[1] + j]; }

    float& at4(int n, int c, int y, int x) {
        return data[((size_t(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    float at4(int n, int c, int y, int x) const {
        return data[((size_t(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }

    void fill(float v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Array& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

inline Array zeros_like(const Array& a) { return Array(a.shape); }

inline void require_shape(const Array& a, const std::vector<int>& s, const char* what) {
    if (a.shape != s) throw std::invalid_argument(std::string(what) + ": shape mismatch, got " + a.shape_str());
}

}  // namespace dapper
