#pragma once

#include <cstdint>

#include "dapper/array.hpp"
#include "dapper/numerics.hpp"

// Array-level building blocks on top of the raw kernels. Backward helpers
// accumulate into Param::grad so a network backward is a chain of these.

namespace dapper::nn {

// x[N,Ci,H,W] * w[Co,Ci,K,K] (+ per-sample variant w[N,Co,Ci,K,K])
Array conv2d(const Array& x, const Array& w, int stride);
// gx and gw may be null when not needed; gw is overwritten.
void conv2d_backward(const Array& x, const Array& w, const Array& gy, int stride, Array* gx, Array* gw);

Array dense(const Array& x, const Array& w, const Array& b);
void dense_backward(const Array& x, const Array& w, const Array& gy, Array* gx, Param& wp, Param& bp);

Array lrelu(const Array& x, float slope);
Array lrelu_backward(const Array& x, const Array& gy, float slope);

Array tanh_act(const Array& x);
Array tanh_backward(const Array& y, const Array& gy);

Array upsample2x(const Array& x);
Array upsample2x_backward(const Array& gy);

Array gap(const Array& x);                       // [N,C,H,W] -> [N,C]
Array gap_backward(const Array& gy, int H, int W);

void add_bias_nchw(Array& y, const Array& b);
void bias_backward_nchw(const Array& gy, Param& bp);

// Style-modulated convolution (weights scaled per input channel by an affine
// function of the latent, optionally demodulated per output channel).
struct ModConv {
    int Ci = 0, Co = 0, K = 3;
    int latent_dim = 64;
    bool demodulate = true;
    std::string prefix;

    // parameter names inside the store
    std::string w_name() const { return prefix + ".w"; }
    std::string b_name() const { return prefix + ".b"; }
    std::string aw_name() const { return prefix + ".affine.w"; }
    std::string ab_name() const { return prefix + ".affine.b"; }

    void init(ParamStore& store, uint64_t seed);

    struct Cache {
        Array x;       // conv input
        Array wlat;    // latent [N,L]
        Array styles;  // s[N,Ci]
        Array w1;      // modulated weights [N,Co,Ci,K,K]
        Array w2;      // demodulated weights
        Array demod;   // [N,Co]
    };

    Array forward(ParamStore& store, const Array& x, const Array& wlat, Cache& cache) const;
    // Returns gx; accumulates parameter grads; adds latent grad into gwlat.
    Array backward(ParamStore& store, const Array& gy, const Cache& cache, Array* gwlat) const;
};

// Scalar losses. Reductions accumulate in double, serially, for stable
// finite-difference checks.
double mse(const Array& a, const Array& b);
Array mse_backward(const Array& a, const Array& b, float scale);  // d(mse)/da * scale

// logits[N,K], labels[N] -> (mean CE loss, dloss/dlogits)
double softmax_cross_entropy(const Array& logits, const std::vector<int>& labels, Array* dlogits);

double softplus(double x);

}  // namespace dapper::nn
