#include "dapper/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace dapper::kernels {

namespace {

int env_thread_cap() {
    if (const char* s = std::getenv("DAPPER_THREADS")) {
        int v = std::atoi(s);
        if (v > 0) return v;
    }
    return 1 << 30;
}

std::atomic<int> g_override{0};

}  // namespace

int threads() {
    int n = g_override.load(std::memory_order_relaxed);
    if (n <= 0) n = omp_get_max_threads();
    n = std::min(n, env_thread_cap());
    return std::max(1, n);
}

void set_threads(int n) { g_override.store(n, std::memory_order_relaxed); }

// Dispatch to the parallel flavor only from serial context; nested callers
// (e.g. projections already parallel over images) get the reference path.
static bool use_parallel() { return threads() > 1 && !omp_in_parallel(); }

ConvDims make_conv_dims(int N, int Ci, int H, int W, int Co, int K, int stride, bool per_sample_w) {
    if (K != 1 && K != 3) throw std::invalid_argument("conv: K must be 1 or 3");
    if (stride != 1 && stride != 2) throw std::invalid_argument("conv: stride must be 1 or 2");
    if (stride == 2 && (H % 2 || W % 2)) throw std::invalid_argument("conv: stride 2 needs even extents");
    ConvDims d;
    d.N = N; d.Ci = Ci; d.H = H; d.W = W; d.Co = Co; d.K = K; d.stride = stride;
    d.Ho = (stride == 2) ? H / 2 : H;
    d.Wo = (stride == 2) ? W / 2 : W;
    d.per_sample_w = per_sample_w;
    return d;
}

// ---------------------------------------------------------------------------
// conv forward: y[n,o,oy,ox] = sum_{ci,ky,kx} x[n,ci,oy*s+ky-p,ox*s+kx-p] * w[.,o,ci,ky,kx]
// Term order per output element is (ci,ky,kx) ascending in both flavors.
// ---------------------------------------------------------------------------

static inline void conv_fwd_one(const float* x, const float* w, float* y, const ConvDims& d,
                                int n, int o) {
    const int p = d.K / 2;
    const size_t wbase = (d.per_sample_w ? size_t(n) * d.Co + o : size_t(o)) * d.Ci * d.K * d.K;
    float* yp = y + (size_t(n) * d.Co + o) * d.Ho * d.Wo;
    std::memset(yp, 0, sizeof(float) * size_t(d.Ho) * d.Wo);
    for (int ci = 0; ci < d.Ci; ++ci) {
        const float* xp = x + (size_t(n) * d.Ci + ci) * d.H * d.W;
        for (int ky = 0; ky < d.K; ++ky) {
            for (int kx = 0; kx < d.K; ++kx) {
                const float wv = w[wbase + (size_t(ci) * d.K + ky) * d.K + kx];
                for (int oy = 0; oy < d.Ho; ++oy) {
                    const int iy = oy * d.stride + ky - p;
                    if (iy < 0 || iy >= d.H) continue;
                    const float* xrow = xp + size_t(iy) * d.W;
                    float* yrow = yp + size_t(oy) * d.Wo;
                    // valid ox range: 0 <= ox*s + kx - p < W
                    int ox0 = 0;
                    while (ox0 < d.Wo && ox0 * d.stride + kx - p < 0) ++ox0;
                    int ox1 = d.Wo;
                    while (ox1 > ox0 && (ox1 - 1) * d.stride + kx - p >= d.W) --ox1;
                    if (d.stride == 1) {
                        const float* xs = xrow + kx - p;
                        for (int ox = ox0; ox < ox1; ++ox) yrow[ox] += xs[ox] * wv;
                    } else {
                        for (int ox = ox0; ox < ox1; ++ox) yrow[ox] += xrow[2 * ox + kx - p] * wv;
                    }
                }
            }
        }
    }
}

void conv_fwd_ref(const float* x, const float* w, float* y, const ConvDims& d) {
    for (int n = 0; n < d.N; ++n)
        for (int o = 0; o < d.Co; ++o) conv_fwd_one(x, w, y, d, n, o);
}

void conv_fwd_omp(const float* x, const float* w, float* y, const ConvDims& d) {
    const int nt = threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
    for (int n = 0; n < d.N; ++n)
        for (int o = 0; o < d.Co; ++o) conv_fwd_one(x, w, y, d, n, o);
}

void conv_fwd(const float* x, const float* w, float* y, const ConvDims& d) {
    use_parallel() ? conv_fwd_omp(x, w, y, d) : conv_fwd_ref(x, w, y, d);
}

// ---------------------------------------------------------------------------
// conv input gradient: gx[n,ci,iy,ix] += gy[n,o,oy,ox] * w[.,o,ci,ky,kx]
// Term order per input element is (o,ky,kx) ascending.
// ---------------------------------------------------------------------------

static inline void conv_bwd_input_one(const float* gy, const float* w, float* gx, const ConvDims& d,
                                      int n, int ci) {
    const int p = d.K / 2;
    float* gxp = gx + (size_t(n) * d.Ci + ci) * d.H * d.W;
    std::memset(gxp, 0, sizeof(float) * size_t(d.H) * d.W);
    for (int o = 0; o < d.Co; ++o) {
        const float* gyp = gy + (size_t(n) * d.Co + o) * d.Ho * d.Wo;
        const size_t wbase = (d.per_sample_w ? size_t(n) * d.Co + o : size_t(o)) * d.Ci * d.K * d.K;
        for (int ky = 0; ky < d.K; ++ky) {
            for (int kx = 0; kx < d.K; ++kx) {
                const float wv = w[wbase + (size_t(ci) * d.K + ky) * d.K + kx];
                for (int oy = 0; oy < d.Ho; ++oy) {
                    const int iy = oy * d.stride + ky - p;
                    if (iy < 0 || iy >= d.H) continue;
                    float* gxrow = gxp + size_t(iy) * d.W;
                    const float* gyrow = gyp + size_t(oy) * d.Wo;
                    int ox0 = 0;
                    while (ox0 < d.Wo && ox0 * d.stride + kx - p < 0) ++ox0;
                    int ox1 = d.Wo;
                    while (ox1 > ox0 && (ox1 - 1) * d.stride + kx - p >= d.W) --ox1;
                    if (d.stride == 1) {
                        float* gxs = gxrow + kx - p;
                        for (int ox = ox0; ox < ox1; ++ox) gxs[ox] += gyrow[ox] * wv;
                    } else {
                        for (int ox = ox0; ox < ox1; ++ox) gxrow[2 * ox + kx - p] += gyrow[ox] * wv;
                    }
                }
            }
        }
    }
}

void conv_bwd_input_ref(const float* gy, const float* w, float* gx, const ConvDims& d) {
    for (int n = 0; n < d.N; ++n)
        for (int ci = 0; ci < d.Ci; ++ci) conv_bwd_input_one(gy, w, gx, d, n, ci);
}

void conv_bwd_input_omp(const float* gy, const float* w, float* gx, const ConvDims& d) {
    const int nt = threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
    for (int n = 0; n < d.N; ++n)
        for (int ci = 0; ci < d.Ci; ++ci) conv_bwd_input_one(gy, w, gx, d, n, ci);
}

void conv_bwd_input(const float* gy, const float* w, float* gx, const ConvDims& d) {
    use_parallel() ? conv_bwd_input_omp(gy, w, gx, d) : conv_bwd_input_ref(gy, w, gx, d);
}

// ---------------------------------------------------------------------------
// conv weight gradient. Shared weights reduce over (n,oy,ox) in ascending
// order; per-sample weights reduce over (oy,ox).
// ---------------------------------------------------------------------------

static inline float conv_bwd_weight_sum(const float* x, const float* gy, const ConvDims& d,
                                        int n, int o, int ci, int ky, int kx) {
    const int p = d.K / 2;
    const float* xp = x + (size_t(n) * d.Ci + ci) * d.H * d.W;
    const float* gyp = gy + (size_t(n) * d.Co + o) * d.Ho * d.Wo;
    float acc = 0.f;
    for (int oy = 0; oy < d.Ho; ++oy) {
        const int iy = oy * d.stride + ky - p;
        if (iy < 0 || iy >= d.H) continue;
        const float* xrow = xp + size_t(iy) * d.W;
        const float* gyrow = gyp + size_t(oy) * d.Wo;
        int ox0 = 0;
        while (ox0 < d.Wo && ox0 * d.stride + kx - p < 0) ++ox0;
        int ox1 = d.Wo;
        while (ox1 > ox0 && (ox1 - 1) * d.stride + kx - p >= d.W) --ox1;
        if (d.stride == 1) {
            const float* xs = xrow + kx - p;
            for (int ox = ox0; ox < ox1; ++ox) acc += gyrow[ox] * xs[ox];
        } else {
            for (int ox = ox0; ox < ox1; ++ox) acc += gyrow[ox] * xrow[2 * ox + kx - p];
        }
    }
    return acc;
}

static inline void conv_bwd_weight_shared_one(const float* x, const float* gy, float* gw,
                                              const ConvDims& d, int o, int ci) {
    for (int ky = 0; ky < d.K; ++ky)
        for (int kx = 0; kx < d.K; ++kx) {
            float acc = 0.f;
            for (int n = 0; n < d.N; ++n) acc += conv_bwd_weight_sum(x, gy, d, n, o, ci, ky, kx);
            gw[((size_t(o) * d.Ci + ci) * d.K + ky) * d.K + kx] = acc;
        }
}

static inline void conv_bwd_weight_sample_one(const float* x, const float* gy, float* gw,
                                              const ConvDims& d, int n, int o) {
    for (int ci = 0; ci < d.Ci; ++ci)
        for (int ky = 0; ky < d.K; ++ky)
            for (int kx = 0; kx < d.K; ++kx)
                gw[(((size_t(n) * d.Co + o) * d.Ci + ci) * d.K + ky) * d.K + kx] =
                    conv_bwd_weight_sum(x, gy, d, n, o, ci, ky, kx);
}

void conv_bwd_weight_ref(const float* x, const float* gy, float* gw, const ConvDims& d) {
    if (d.per_sample_w) {
        for (int n = 0; n < d.N; ++n)
            for (int o = 0; o < d.Co; ++o) conv_bwd_weight_sample_one(x, gy, gw, d, n, o);
    } else {
        for (int o = 0; o < d.Co; ++o)
            for (int ci = 0; ci < d.Ci; ++ci) conv_bwd_weight_shared_one(x, gy, gw, d, o, ci);
    }
}

void conv_bwd_weight_omp(const float* x, const float* gy, float* gw, const ConvDims& d) {
    const int nt = threads();
    if (d.per_sample_w) {
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
        for (int n = 0; n < d.N; ++n)
            for (int o = 0; o < d.Co; ++o) conv_bwd_weight_sample_one(x, gy, gw, d, n, o);
    } else {
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
        for (int o = 0; o < d.Co; ++o)
            for (int ci = 0; ci < d.Ci; ++ci) conv_bwd_weight_shared_one(x, gy, gw, d, o, ci);
    }
}

void conv_bwd_weight(const float* x, const float* gy, float* gw, const ConvDims& d) {
    use_parallel() ? conv_bwd_weight_omp(x, gy, gw, d) : conv_bwd_weight_ref(x, gy, gw, d);
}

// ---------------------------------------------------------------------------
// dense
// ---------------------------------------------------------------------------

void dense_fwd_ref(const float* x, const float* w, float* y, int N, int I, int O) {
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
            const float* xr = x + size_t(n) * I;
            const float* wr = w + size_t(o) * I;
            float acc = 0.f;
            for (int i = 0; i < I; ++i) acc += xr[i] * wr[i];
            y[size_t(n) * O + o] = acc;
        }
}

void dense_fwd_omp(const float* x, const float* w, float* y, int N, int I, int O) {
    const int nt = threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
            const float* xr = x + size_t(n) * I;
            const float* wr = w + size_t(o) * I;
            float acc = 0.f;
            for (int i = 0; i < I; ++i) acc += xr[i] * wr[i];
            y[size_t(n) * O + o] = acc;
        }
}

void dense_fwd(const float* x, const float* w, float* y, int N, int I, int O) {
    use_parallel() ? dense_fwd_omp(x, w, y, N, I, O) : dense_fwd_ref(x, w, y, N, I, O);
}

void dense_bwd_input_ref(const float* gy, const float* w, float* gx, int N, int I, int O) {
    for (int n = 0; n < N; ++n)
        for (int i = 0; i < I; ++i) {
            float acc = 0.f;
            for (int o = 0; o < O; ++o) acc += gy[size_t(n) * O + o] * w[size_t(o) * I + i];
            gx[size_t(n) * I + i] = acc;
        }
}

void dense_bwd_input_omp(const float* gy, const float* w, float* gx, int N, int I, int O) {
    const int nt = threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
    for (int n = 0; n < N; ++n)
        for (int i = 0; i < I; ++i) {
            float acc = 0.f;
            for (int o = 0; o < O; ++o) acc += gy[size_t(n) * O + o] * w[size_t(o) * I + i];
            gx[size_t(n) * I + i] = acc;
        }
}

void dense_bwd_input(const float* gy, const float* w, float* gx, int N, int I, int O) {
    use_parallel() ? dense_bwd_input_omp(gy, w, gx, N, I, O) : dense_bwd_input_ref(gy, w, gx, N, I, O);
}

void dense_bwd_weight_ref(const float* x, const float* gy, float* gw, int N, int I, int O) {
    for (int o = 0; o < O; ++o)
        for (int i = 0; i < I; ++i) {
            float acc = 0.f;
            for (int n = 0; n < N; ++n) acc += gy[size_t(n) * O + o] * x[size_t(n) * I + i];
            gw[size_t(o) * I + i] = acc;
        }
}

void dense_bwd_weight_omp(const float* x, const float* gy, float* gw, int N, int I, int O) {
    const int nt = threads();
#pragma omp parallel for collapse(2) schedule(static) num_threads(nt)
    for (int o = 0; o < O; ++o)
        for (int i = 0; i < I; ++i) {
            float acc = 0.f;
            for (int n = 0; n < N; ++n) acc += gy[size_t(n) * O + o] * x[size_t(n) * I + i];
            gw[size_t(o) * I + i] = acc;
        }
}

void dense_bwd_weight(const float* x, const float* gy, float* gw, int N, int I, int O) {
    use_parallel() ? dense_bwd_weight_omp(x, gy, gw, N, I, O) : dense_bwd_weight_ref(x, gy, gw, N, I, O);
}

// ---------------------------------------------------------------------------
// light ops
// ---------------------------------------------------------------------------

void bias_add(float* y, const float* b, int N, int C, int HW) {
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            float* yp = y + (size_t(n) * C + c) * HW;
            const float bv = b[c];
            for (int i = 0; i < HW; ++i) yp[i] += bv;
        }
}

void bias_grad(const float* gy, float* gb, int N, int C, int HW) {
    for (int c = 0; c < C; ++c) {
        float acc = 0.f;
        for (int n = 0; n < N; ++n) {
            const float* gp = gy + (size_t(n) * C + c) * HW;
            for (int i = 0; i < HW; ++i) acc += gp[i];
        }
        gb[c] = acc;
    }
}

void lrelu_fwd(const float* x, float* y, size_t n, float slope) {
    for (size_t i = 0; i < n; ++i) y[i] = x[i] >= 0.f ? x[i] : slope * x[i];
}

void lrelu_bwd(const float* x, const float* gy, float* gx, size_t n, float slope) {
    for (size_t i = 0; i < n; ++i) gx[i] = x[i] >= 0.f ? gy[i] : slope * gy[i];
}

void tanh_fwd(const float* x, float* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

void tanh_bwd(const float* y, const float* gy, float* gx, size_t n) {
    for (size_t i = 0; i < n; ++i) gx[i] = gy[i] * (1.f - y[i] * y[i]);
}

void upsample2x_fwd(const float* x, float* y, int N, int C, int H, int W) {
    for (int nc = 0; nc < N * C; ++nc) {
        const float* xp = x + size_t(nc) * H * W;
        float* yp = y + size_t(nc) * 4 * H * W;
        for (int iy = 0; iy < H; ++iy)
            for (int ix = 0; ix < W; ++ix) {
                const float v = xp[size_t(iy) * W + ix];
                float* o = yp + (size_t(2 * iy) * 2 * W + 2 * ix);
                o[0] = v;
                o[1] = v;
                o[2 * size_t(W)] = v;
                o[2 * size_t(W) + 1] = v;
            }
    }
}

void upsample2x_bwd(const float* gy, float* gx, int N, int C, int H, int W) {
    for (int nc = 0; nc < N * C; ++nc) {
        const float* gp = gy + size_t(nc) * 4 * H * W;
        float* xp = gx + size_t(nc) * H * W;
        for (int iy = 0; iy < H; ++iy)
            for (int ix = 0; ix < W; ++ix) {
                const float* o = gp + (size_t(2 * iy) * 2 * W + 2 * ix);
                xp[size_t(iy) * W + ix] = o[0] + o[1] + o[2 * size_t(W)] + o[2 * size_t(W) + 1];
            }
    }
}

void gap_fwd(const float* x, float* y, int N, int C, int HW) {
    for (int nc = 0; nc < N * C; ++nc) {
        const float* xp = x + size_t(nc) * HW;
        float acc = 0.f;
        for (int i = 0; i < HW; ++i) acc += xp[i];
        y[nc] = acc / float(HW);
    }
}

void gap_bwd(const float* gy, float* gx, int N, int C, int HW) {
    for (int nc = 0; nc < N * C; ++nc) {
        const float g = gy[nc] / float(HW);
        float* xp = gx + size_t(nc) * HW;
        for (int i = 0; i < HW; ++i) xp[i] = g;
    }
}

}  // namespace dapper::kernels
