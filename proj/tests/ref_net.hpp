#pragma once

// Independent double-precision forward evaluators for every network in the
// repo, written as plain loop nests against the checkpoint parameter layout.
// Test-only: they serve as the low-noise side of finite-difference gradient
// checks and as an independent oracle for the float32 forward passes.

#include <cmath>
#include <string>
#include <vector>

#include "dapper/numerics.hpp"
#include "dapper/stylegan.hpp"

namespace refnet {

using dvec = std::vector<double>;

inline dvec to_double(const dapper::Array& a) {
    dvec out(a.numel());
    for (size_t i = 0; i < a.numel(); ++i) out[i] = double(a[i]);
    return out;
}

inline dvec param(const dapper::ParamStore& s, const std::string& name) {
    return to_double(s.at(name).value);
}

inline void lrelu(dvec& x, double slope) {
    for (auto& v : x)
        if (v < 0) v *= slope;
}

// y[N,O] = x[N,I] . w[O,I]^T + b
inline dvec dense(const dvec& x, const dvec& w, const dvec& b, int N, int I, int O) {
    dvec y(size_t(N) * O, 0.0);
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
            double acc = b[size_t(o)];
            for (int i = 0; i < I; ++i) acc += x[size_t(n) * I + i] * w[size_t(o) * I + i];
            y[size_t(n) * O + o] = acc;
        }
    return y;
}

// conv KxK pad K/2; weights shared [Co,Ci,K,K] or per-sample [N,Co,Ci,K,K]
inline dvec conv(const dvec& x, const dvec& w, const dvec* bias, int N, int Ci, int H, int W,
                 int Co, int K, int stride, bool per_sample) {
    const int p = K / 2;
    const int Ho = stride == 2 ? H / 2 : H;
    const int Wo = stride == 2 ? W / 2 : W;
    dvec y(size_t(N) * Co * Ho * Wo, 0.0);
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < Co; ++o) {
            const size_t wbase = (per_sample ? size_t(n) * Co + o : size_t(o)) * Ci * K * K;
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    double acc = bias ? (*bias)[size_t(o)] : 0.0;
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                const int iy = oy * stride + ky - p;
                                const int ix = ox * stride + kx - p;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x[((size_t(n) * Ci + ci) * H + iy) * W + ix] *
                                       w[wbase + (size_t(ci) * K + ky) * K + kx];
                            }
                    y[((size_t(n) * Co + o) * Ho + oy) * Wo + ox] = acc;
                }
        }
    return y;
}

inline dvec upsample2x(const dvec& x, int N, int C, int H, int W) {
    dvec y(size_t(N) * C * 4 * H * W);
    for (int nc = 0; nc < N * C; ++nc)
        for (int iy = 0; iy < H; ++iy)
            for (int ix = 0; ix < W; ++ix) {
                const double v = x[(size_t(nc) * H + iy) * W + ix];
                const size_t base = size_t(nc) * 4 * H * W;
                y[base + size_t(2 * iy) * 2 * W + 2 * ix] = v;
                y[base + size_t(2 * iy) * 2 * W + 2 * ix + 1] = v;
                y[base + size_t(2 * iy + 1) * 2 * W + 2 * ix] = v;
                y[base + size_t(2 * iy + 1) * 2 * W + 2 * ix + 1] = v;
            }
    return y;
}

// ---- mapping ---------------------------------------------------------------

inline dvec mapping_forward(const dapper::ParamStore& gen, const dvec& z, int N) {
    constexpr int L = dapper::gan::kLatentDim;
    dvec x(size_t(N) * L);
    for (int n = 0; n < N; ++n) {
        double ss = 0.0;
        for (int j = 0; j < L; ++j) ss += z[size_t(n) * L + j] * z[size_t(n) * L + j];
        const double inv = 1.0 / std::sqrt(std::max(ss, 1e-20));
        for (int j = 0; j < L; ++j) x[size_t(n) * L + j] = z[size_t(n) * L + j] * inv;
    }
    for (int i = 0; i < 3; ++i) {
        x = dense(x, param(gen, "map.fc" + std::to_string(i) + ".w"),
                  param(gen, "map.fc" + std::to_string(i) + ".b"), N, L, L);
        lrelu(x, 0.2);
    }
    return x;
}

// ---- synthesis --------------------------------------------------------------

// styles[N,L]; returns modulated+optionally demodulated per-sample weights
inline dvec modulated_weights(const dapper::ParamStore& gen, const std::string& prefix,
                              const dvec& styles_in, int N, int Ci, int Co, int K, bool demod) {
    const dvec wb = param(gen, prefix + ".w");
    const dvec aw = param(gen, prefix + ".affine.w");
    const dvec ab = param(gen, prefix + ".affine.b");
    const dvec s = dense(styles_in, aw, ab, N, dapper::gan::kLatentDim, Ci);

    const size_t kk = size_t(K) * K;
    dvec w2(size_t(N) * Co * Ci * kk);
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < Co; ++o) {
            double ss = 0.0;
            for (int i = 0; i < Ci; ++i)
                for (size_t k = 0; k < kk; ++k) {
                    const double v = wb[(size_t(o) * Ci + i) * kk + k] * s[size_t(n) * Ci + i];
                    w2[((size_t(n) * Co + o) * Ci + i) * kk + k] = v;
                    ss += v * v;
                }
            if (demod) {
                const double d = 1.0 / std::sqrt(ss + 1e-8);
                for (size_t j = 0; j < size_t(Ci) * kk; ++j)
                    w2[(size_t(n) * Co + o) * Ci * kk + j] *= d;
            }
        }
    return w2;
}

inline dvec synthesis_forward(const dapper::ParamStore& gen, const dvec& w_latent, int N) {
    constexpr int kChan[4] = {64, 64, 32, 16};
    const dvec cst = param(gen, "syn.const");
    dvec x(size_t(N) * cst.size());
    for (int n = 0; n < N; ++n)
        for (size_t j = 0; j < cst.size(); ++j) x[size_t(n) * cst.size() + j] = cst[j];

    int H = 4, Ci = kChan[0];
    for (int i = 0; i < 3; ++i) {
        x = upsample2x(x, N, Ci, H, H);
        H *= 2;
        const int Co = kChan[i + 1];
        const std::string prefix = "syn.b" + std::to_string(i);
        const dvec w2 = modulated_weights(gen, prefix, w_latent, N, Ci, Co, 3, true);
        const dvec bias = param(gen, prefix + ".b");
        x = conv(x, w2, &bias, N, Ci, H, H, Co, 3, 1, true);
        lrelu(x, 0.2);
        Ci = Co;
    }
    const dvec w2 = modulated_weights(gen, "syn.rgb", w_latent, N, Ci, 3, 1, false);
    const dvec bias = param(gen, "syn.rgb.b");
    x = conv(x, w2, &bias, N, Ci, 32, 32, 3, 1, 1, true);
    for (auto& v : x) v = std::tanh(v);
    return x;
}

// ---- discriminator -----------------------------------------------------------

inline dvec disc_forward(const dapper::ParamStore& disc, const dvec& img, int N) {
    constexpr int kChan[3] = {16, 32, 64};
    dvec x = img;
    int Ci = 3, H = 32;
    for (int i = 0; i < 3; ++i) {
        const std::string p = "d.c" + std::to_string(i);
        const dvec bias = param(disc, p + ".b");
        x = conv(x, param(disc, p + ".w"), &bias, N, Ci, H, H, kChan[i], 3, 2, false);
        lrelu(x, 0.2);
        Ci = kChan[i];
        H /= 2;
    }
    return dense(x, param(disc, "d.fc.w"), param(disc, "d.fc.b"), N, Ci * H * H, 1);
}

// ---- pose oracle --------------------------------------------------------------

inline dvec oracle_forward(const dapper::ParamStore& p, const dvec& img, int N) {
    dvec x = img;
    const dvec b1 = param(p, "o.c1.b");
    x = conv(x, param(p, "o.c1.w"), &b1, N, 3, 32, 32, 24, 3, 2, false);
    lrelu(x, 0.2);
    const dvec b2 = param(p, "o.c2.b");
    x = conv(x, param(p, "o.c2.w"), &b2, N, 24, 16, 16, 48, 3, 2, false);
    lrelu(x, 0.2);
    return dense(x, param(p, "o.fc.w"), param(p, "o.fc.b"), N, 48 * 8 * 8, 1);
}

// ---- classifier -----------------------------------------------------------------

inline dvec classifier_forward(const dapper::ParamStore& p, const dvec& img, int N, int n_classes) {
    constexpr int kChan[3] = {16, 32, 64};
    dvec x = img;
    int Ci = 3, H = 32;
    for (int i = 0; i < 3; ++i) {
        const std::string name = "c.c" + std::to_string(i);
        const dvec bias = param(p, name + ".b");
        x = conv(x, param(p, name + ".w"), &bias, N, Ci, H, H, kChan[i], 3, 2, false);
        lrelu(x, 0.0);
        Ci = kChan[i];
        H /= 2;
    }
    dvec pooled(size_t(N) * Ci, 0.0);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < Ci; ++c) {
            double acc = 0.0;
            for (int j = 0; j < H * H; ++j) acc += x[(size_t(n) * Ci + c) * H * H + j];
            pooled[size_t(n) * Ci + c] = acc / double(H * H);
        }
    return dense(pooled, param(p, "c.fc.w"), param(p, "c.fc.b"), N, Ci, n_classes);
}

}  // namespace refnet
