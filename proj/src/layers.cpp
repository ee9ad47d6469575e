#include "dapper/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "dapper/kernels.hpp"
#include "dapper/rng.hpp"

namespace dapper::nn {

using kernels::ConvDims;

static ConvDims dims_for(const Array& x, const Array& w, int stride) {
    const bool per_sample = w.shape.size() == 5;
    const int Co = per_sample ? w.shape[1] : w.shape[0];
    const int K = per_sample ? w.shape[3] : w.shape[2];
    return kernels::make_conv_dims(x.shape[0], x.shape[1], x.shape[2], x.shape[3], Co, K, stride,
                                   per_sample);
}

Array conv2d(const Array& x, const Array& w, int stride) {
    const ConvDims d = dims_for(x, w, stride);
    Array y({d.N, d.Co, d.Ho, d.Wo});
    kernels::conv_fwd(x.ptr(), w.ptr(), y.ptr(), d);
    return y;
}

void conv2d_backward(const Array& x, const Array& w, const Array& gy, int stride, Array* gx, Array* gw) {
    const ConvDims d = dims_for(x, w, stride);
    if (gx) {
        *gx = Array(x.shape);
        kernels::conv_bwd_input(gy.ptr(), w.ptr(), gx->ptr(), d);
    }
    if (gw) {
        *gw = Array(w.shape);
        kernels::conv_bwd_weight(x.ptr(), gy.ptr(), gw->ptr(), d);
    }
}

Array dense(const Array& x, const Array& w, const Array& b) {
    const int N = x.shape[0], I = x.shape[1], O = w.shape[0];
    Array y({N, O});
    kernels::dense_fwd(x.ptr(), w.ptr(), y.ptr(), N, I, O);
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) y.at2(n, o) += b[o];
    return y;
}

void dense_backward(const Array& x, const Array& w, const Array& gy, Array* gx, Param& wp, Param& bp) {
    const int N = x.shape[0], I = x.shape[1], O = w.shape[0];
    if (gx) {
        *gx = Array({N, I});
        kernels::dense_bwd_input(gy.ptr(), w.ptr(), gx->ptr(), N, I, O);
    }
    Array gw({O, I});
    kernels::dense_bwd_weight(x.ptr(), gy.ptr(), gw.ptr(), N, I, O);
    for (size_t i = 0; i < gw.numel(); ++i) wp.grad[i] += gw[i];
    for (int o = 0; o < O; ++o) {
        float acc = 0.f;
        for (int n = 0; n < N; ++n) acc += gy.at2(n, o);
        bp.grad[o] += acc;
    }
}

Array lrelu(const Array& x, float slope) {
    Array y(x.shape);
    kernels::lrelu_fwd(x.ptr(), y.ptr(), x.numel(), slope);
    return y;
}

Array lrelu_backward(const Array& x, const Array& gy, float slope) {
    Array gx(x.shape);
    kernels::lrelu_bwd(x.ptr(), gy.ptr(), gx.ptr(), x.numel(), slope);
    return gx;
}

Array tanh_act(const Array& x) {
    Array y(x.shape);
    kernels::tanh_fwd(x.ptr(), y.ptr(), x.numel());
    return y;
}

Array tanh_backward(const Array& y, const Array& gy) {
    Array gx(y.shape);
    kernels::tanh_bwd(y.ptr(), gy.ptr(), gx.ptr(), y.numel());
    return gx;
}

Array upsample2x(const Array& x) {
    Array y({x.shape[0], x.shape[1], x.shape[2] * 2, x.shape[3] * 2});
    kernels::upsample2x_fwd(x.ptr(), y.ptr(), x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    return y;
}

Array upsample2x_backward(const Array& gy) {
    Array gx({gy.shape[0], gy.shape[1], gy.shape[2] / 2, gy.shape[3] / 2});
    kernels::upsample2x_bwd(gy.ptr(), gx.ptr(), gx.shape[0], gx.shape[1], gx.shape[2], gx.shape[3]);
    return gx;
}

Array gap(const Array& x) {
    Array y({x.shape[0], x.shape[1]});
    kernels::gap_fwd(x.ptr(), y.ptr(), x.shape[0], x.shape[1], x.shape[2] * x.shape[3]);
    return y;
}

Array gap_backward(const Array& gy, int H, int W) {
    Array gx({gy.shape[0], gy.shape[1], H, W});
    kernels::gap_bwd(gy.ptr(), gx.ptr(), gy.shape[0], gy.shape[1], H * W);
    return gx;
}

void add_bias_nchw(Array& y, const Array& b) {
    kernels::bias_add(y.ptr(), b.ptr(), y.shape[0], y.shape[1], y.shape[2] * y.shape[3]);
}

void bias_backward_nchw(const Array& gy, Param& bp) {
    Array gb({gy.shape[1]});
    kernels::bias_grad(gy.ptr(), gb.ptr(), gy.shape[0], gy.shape[1], gy.shape[2] * gy.shape[3]);
    for (int c = 0; c < gy.shape[1]; ++c) bp.grad[c] += gb[c];
}

// ---------------------------------------------------------------------------
// ModConv
// ---------------------------------------------------------------------------

void ModConv::init(ParamStore& store, uint64_t seed) {
    Rng rng(seed);
    Array w({Co, Ci, K, K});
    const float wstd = std::sqrt(2.f / float(Ci * K * K));
    for (auto& v : w.data) v = wstd * rng.normalf();
    store.add(w_name(), std::move(w));
    store.add(b_name(), Array({Co}));

    // Affine from the latent to per-input-channel scales; bias starts at 1
    // so modulation is near-identity at init.
    Array aw({Ci, latent_dim});
    const float astd = std::sqrt(1.f / float(latent_dim));
    for (auto& v : aw.data) v = astd * rng.normalf();
    store.add(aw_name(), std::move(aw));
    store.add(ab_name(), Array({Ci}, 1.f));
}

Array ModConv::forward(ParamStore& store, const Array& x, const Array& wlat, Cache& cache) const {
    const Array& wb = store.at(w_name()).value;
    const Array& aw = store.at(aw_name()).value;
    const Array& ab = store.at(ab_name()).value;
    const Array& bias = store.at(b_name()).value;
    const int N = x.shape[0];

    cache.x = x;
    cache.wlat = wlat;
    cache.styles = dense(wlat, aw, ab);  // [N,Ci]

    cache.w1 = Array({N, Co, Ci, K, K});
    const size_t kk = size_t(K) * K;
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < Co; ++o)
            for (int i = 0; i < Ci; ++i) {
                const float s = cache.styles.at2(n, i);
                const float* src = wb.ptr() + (size_t(o) * Ci + i) * kk;
                float* dst = cache.w1.ptr() + ((size_t(n) * Co + o) * Ci + i) * kk;
                for (size_t k = 0; k < kk; ++k) dst[k] = src[k] * s;
            }

    if (demodulate) {
        cache.demod = Array({N, Co});
        cache.w2 = Array({N, Co, Ci, K, K});
        for (int n = 0; n < N; ++n)
            for (int o = 0; o < Co; ++o) {
                const float* w1p = cache.w1.ptr() + (size_t(n) * Co + o) * Ci * kk;
                float ss = 0.f;
                for (size_t j = 0; j < size_t(Ci) * kk; ++j) ss += w1p[j] * w1p[j];
                const float dv = 1.f / std::sqrt(ss + 1e-8f);
                cache.demod.at2(n, o) = dv;
                float* w2p = cache.w2.ptr() + (size_t(n) * Co + o) * Ci * kk;
                for (size_t j = 0; j < size_t(Ci) * kk; ++j) w2p[j] = w1p[j] * dv;
            }
    } else {
        cache.w2 = cache.w1;
    }

    Array y = conv2d(x, cache.w2, 1);
    add_bias_nchw(y, bias);
    return y;
}

Array ModConv::backward(ParamStore& store, const Array& gy, const Cache& cache, Array* gwlat) const {
    Param& wbp = store.at(w_name());
    Param& awp = store.at(aw_name());
    Param& abp = store.at(ab_name());
    Param& bp = store.at(b_name());
    const Array& wb = wbp.value;
    const Array& aw = awp.value;
    const int N = cache.x.shape[0];
    const size_t kk = size_t(K) * K;

    bias_backward_nchw(gy, bp);

    Array gx, gw2;
    conv2d_backward(cache.x, cache.w2, gy, 1, &gx, &gw2);

    // through demodulation: gw1 = gw2*d - (sum gw2.w1) * d^3 * w1
    Array gw1;
    if (demodulate) {
        gw1 = Array({N, Co, Ci, K, K});
        for (int n = 0; n < N; ++n)
            for (int o = 0; o < Co; ++o) {
                const size_t base = (size_t(n) * Co + o) * Ci * kk;
                const float* g2 = gw2.ptr() + base;
                const float* w1p = cache.w1.ptr() + base;
                const float dv = cache.demod.at2(n, o);
                float gd = 0.f;
                for (size_t j = 0; j < size_t(Ci) * kk; ++j) gd += g2[j] * w1p[j];
                const float c = gd * dv * dv * dv;
                float* g1 = gw1.ptr() + base;
                for (size_t j = 0; j < size_t(Ci) * kk; ++j) g1[j] = g2[j] * dv - c * w1p[j];
            }
    } else {
        gw1 = std::move(gw2);
    }

    // base weight grad and style grad
    Array gstyles({N, Ci});
    for (int o = 0; o < Co; ++o)
        for (int i = 0; i < Ci; ++i)
            for (size_t k = 0; k < kk; ++k) {
                float acc = 0.f;
                for (int n = 0; n < N; ++n)
                    acc += gw1.ptr()[((size_t(n) * Co + o) * Ci + i) * kk + k] * cache.styles.at2(n, i);
                wbp.grad[(size_t(o) * Ci + i) * kk + k] += acc;
            }
    for (int n = 0; n < N; ++n)
        for (int i = 0; i < Ci; ++i) {
            float acc = 0.f;
            for (int o = 0; o < Co; ++o) {
                const float* g1 = gw1.ptr() + ((size_t(n) * Co + o) * Ci + i) * kk;
                const float* wbr = wb.ptr() + (size_t(o) * Ci + i) * kk;
                for (size_t k = 0; k < kk; ++k) acc += g1[k] * wbr[k];
            }
            gstyles.at2(n, i) = acc;
        }

    // affine backward
    Array gwl;
    dense_backward(cache.wlat, aw, gstyles, gwlat ? &gwl : nullptr, awp, abp);
    if (gwlat) {
        for (size_t i = 0; i < gwl.numel(); ++i) (*gwlat)[i] += gwl[i];
    }
    return gx;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

double mse(const Array& a, const Array& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("mse: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        acc += d * d;
    }
    return acc / double(a.numel());
}

Array mse_backward(const Array& a, const Array& b, float scale) {
    Array g(a.shape);
    const float c = 2.f * scale / float(a.numel());
    for (size_t i = 0; i < a.numel(); ++i) g[i] = c * (a[i] - b[i]);
    return g;
}

double softmax_cross_entropy(const Array& logits, const std::vector<int>& labels, Array* dlogits) {
    const int N = logits.shape[0], K = logits.shape[1];
    if (int(labels.size()) != N) throw std::invalid_argument("cross entropy: label count mismatch");
    if (dlogits) *dlogits = Array({N, K});
    double loss = 0.0;
    for (int n = 0; n < N; ++n) {
        float mx = logits.at2(n, 0);
        for (int k = 1; k < K; ++k) mx = std::max(mx, logits.at2(n, k));
        double z = 0.0;
        for (int k = 0; k < K; ++k) z += std::exp(double(logits.at2(n, k)) - mx);
        const int y = labels[n];
        if (y < 0 || y >= K) throw std::invalid_argument("cross entropy: label out of range");
        loss += std::log(z) - (double(logits.at2(n, y)) - mx);
        if (dlogits) {
            for (int k = 0; k < K; ++k) {
                const double p = std::exp(double(logits.at2(n, k)) - mx) / z;
                dlogits->at2(n, k) = float((p - (k == y ? 1.0 : 0.0)) / double(N));
            }
        }
    }
    return loss / double(N);
}

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

}  // namespace dapper::nn
