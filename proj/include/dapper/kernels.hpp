#pragma once

#include <cstddef>

// Compute kernels for the learning modules. Every heavy kernel comes in two
// flavors:
//
//   *_ref  — plain serial loop nest, the reference implementation
//   *_omp  — OpenMP-parallel over independent output elements
//
// Both accumulate each output element in the identical term order, so their
// results are bitwise identical; tests assert this and the bench target
// compares their throughput. The unsuffixed entry point dispatches on the
// effective thread count.
//
// Convolutions are KxK (K in {1,3}) with pad K/2 and stride in {1,2}.
// Layouts: x[N,Ci,H,W], y[N,Co,Ho,Wo], shared weights w[Co,Ci,K,K] or
// per-sample weights w[N,Co,Ci,K,K] (style-modulated convolutions).

namespace dapper::kernels {

// Effective worker count: min(omp_get_max_threads(), DAPPER_THREADS).
// set_threads(0) restores the environment default.
int threads();
void set_threads(int n);

struct ConvDims {
    int N, Ci, H, W;   // input
    int Co, K, stride; // kernel
    int Ho, Wo;        // output (derived)
    bool per_sample_w; // weights carry a leading N extent
};

ConvDims make_conv_dims(int N, int Ci, int H, int W, int Co, int K, int stride, bool per_sample_w);

void conv_fwd_ref(const float* x, const float* w, float* y, const ConvDims& d);
void conv_fwd_omp(const float* x, const float* w, float* y, const ConvDims& d);
void conv_fwd(const float* x, const float* w, float* y, const ConvDims& d);

void conv_bwd_input_ref(const float* gy, const float* w, float* gx, const ConvDims& d);
void conv_bwd_input_omp(const float* gy, const float* w, float* gx, const ConvDims& d);
void conv_bwd_input(const float* gy, const float* w, float* gx, const ConvDims& d);

// gw is overwritten (not accumulated); shape matches w.
void conv_bwd_weight_ref(const float* x, const float* gy, float* gw, const ConvDims& d);
void conv_bwd_weight_omp(const float* x, const float* gy, float* gw, const ConvDims& d);
void conv_bwd_weight(const float* x, const float* gy, float* gw, const ConvDims& d);

// y[N,O] = x[N,I] . w[O,I]^T
void dense_fwd_ref(const float* x, const float* w, float* y, int N, int I, int O);
void dense_fwd_omp(const float* x, const float* w, float* y, int N, int I, int O);
void dense_fwd(const float* x, const float* w, float* y, int N, int I, int O);

void dense_bwd_input_ref(const float* gy, const float* w, float* gx, int N, int I, int O);
void dense_bwd_input_omp(const float* gy, const float* w, float* gx, int N, int I, int O);
void dense_bwd_input(const float* gy, const float* w, float* gx, int N, int I, int O);

void dense_bwd_weight_ref(const float* x, const float* gy, float* gw, int N, int I, int O);
void dense_bwd_weight_omp(const float* x, const float* gy, float* gw, int N, int I, int O);
void dense_bwd_weight(const float* x, const float* gy, float* gw, int N, int I, int O);

// Light elementwise / reduction helpers (single implementation, no
// cross-element reductions that could reorder).
void bias_add(float* y, const float* b, int N, int C, int HW);
void bias_grad(const float* gy, float* gb, int N, int C, int HW);
void lrelu_fwd(const float* x, float* y, size_t n, float slope);
void lrelu_bwd(const float* x, const float* gy, float* gx, size_t n, float slope);
void tanh_fwd(const float* x, float* y, size_t n);
void tanh_bwd(const float* y, const float* gy, float* gx, size_t n);
void upsample2x_fwd(const float* x, float* y, int N, int C, int H, int W);
void upsample2x_bwd(const float* gy, float* gx, int N, int C, int H, int W);
void gap_fwd(const float* x, float* y, int N, int C, int HW);
void gap_bwd(const float* gy, float* gx, int N, int C, int HW);

}  // namespace dapper::kernels
