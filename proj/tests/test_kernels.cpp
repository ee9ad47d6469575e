#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "dapper/kernels.hpp"
#include "dapper/rng.hpp"

using namespace dapper;
namespace k = dapper::kernels;

namespace {

std::vector<float> random_vec(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (auto& x : v) x = rng.normalf();
    return v;
}

}  // namespace

TEST_CASE("conv kernels: omp path is bitwise identical to the serial reference") {
    for (const bool per_sample : {false, true}) {
        for (const int stride : {1, 2}) {
            for (const int K : {1, 3}) {
                const int N = 3, Ci = 5, H = 8, W = 8, Co = 4;
                const auto d = k::make_conv_dims(N, Ci, H, W, Co, K, stride, per_sample);
                const size_t wn = (per_sample ? size_t(N) : 1) * Co * Ci * K * K;
                const auto x = random_vec(size_t(N) * Ci * H * W, 1);
                const auto w = random_vec(wn, 2);
                const auto gy = random_vec(size_t(N) * Co * d.Ho * d.Wo, 3);

                std::vector<float> y_ref(size_t(N) * Co * d.Ho * d.Wo), y_omp(y_ref.size());
                k::conv_fwd_ref(x.data(), w.data(), y_ref.data(), d);
                k::conv_fwd_omp(x.data(), w.data(), y_omp.data(), d);
                CHECK(y_ref == y_omp);

                std::vector<float> gx_ref(x.size()), gx_omp(x.size());
                k::conv_bwd_input_ref(gy.data(), w.data(), gx_ref.data(), d);
                k::conv_bwd_input_omp(gy.data(), w.data(), gx_omp.data(), d);
                CHECK(gx_ref == gx_omp);

                std::vector<float> gw_ref(wn), gw_omp(wn);
                k::conv_bwd_weight_ref(x.data(), gy.data(), gw_ref.data(), d);
                k::conv_bwd_weight_omp(x.data(), gy.data(), gw_omp.data(), d);
                CHECK(gw_ref == gw_omp);
            }
        }
    }
}

TEST_CASE("dense kernels: omp path is bitwise identical to the serial reference") {
    const int N = 7, I = 33, O = 17;
    const auto x = random_vec(size_t(N) * I, 4);
    const auto w = random_vec(size_t(O) * I, 5);
    const auto gy = random_vec(size_t(N) * O, 6);

    std::vector<float> a(size_t(N) * O), b(a.size());
    k::dense_fwd_ref(x.data(), w.data(), a.data(), N, I, O);
    k::dense_fwd_omp(x.data(), w.data(), b.data(), N, I, O);
    CHECK(a == b);

    std::vector<float> gx_a(x.size()), gx_b(x.size());
    k::dense_bwd_input_ref(gy.data(), w.data(), gx_a.data(), N, I, O);
    k::dense_bwd_input_omp(gy.data(), w.data(), gx_b.data(), N, I, O);
    CHECK(gx_a == gx_b);

    std::vector<float> gw_a(w.size()), gw_b(w.size());
    k::dense_bwd_weight_ref(x.data(), gy.data(), gw_a.data(), N, I, O);
    k::dense_bwd_weight_omp(x.data(), gy.data(), gw_b.data(), N, I, O);
    CHECK(gw_a == gw_b);
}

TEST_CASE("conv forward matches a directly-computed small case") {
    // 1 sample, 1 channel, 3x3 input, identity-ish 3x3 kernel
    const auto d = k::make_conv_dims(1, 1, 4, 4, 1, 3, 1, false);
    std::vector<float> x(16);
    for (int i = 0; i < 16; ++i) x[size_t(i)] = float(i);
    std::vector<float> w(9, 0.f);
    w[4] = 1.f;  // center tap: output equals input
    std::vector<float> y(16);
    k::conv_fwd_ref(x.data(), w.data(), y.data(), d);
    CHECK(y == x);

    // shifted tap: output(y,x) = input(y, x+1), zero at right edge
    std::fill(w.begin(), w.end(), 0.f);
    w[5] = 1.f;  // (ky=1, kx=2) -> ix = x+1
    k::conv_fwd_ref(x.data(), w.data(), y.data(), d);
    for (int yy = 0; yy < 4; ++yy)
        for (int xx = 0; xx < 4; ++xx)
            CHECK(y[size_t(yy) * 4 + xx] == (xx + 1 < 4 ? x[size_t(yy) * 4 + xx + 1] : 0.f));
}

TEST_CASE("stride-2 conv halves spatial extents") {
    const auto d = k::make_conv_dims(2, 3, 16, 16, 5, 3, 2, false);
    CHECK(d.Ho == 8);
    CHECK(d.Wo == 8);
    CHECK_THROWS(k::make_conv_dims(1, 1, 5, 5, 1, 3, 2, false));
}

TEST_CASE("DAPPER_THREADS override caps the pool") {
    k::set_threads(1);
    CHECK(k::threads() == 1);
    k::set_threads(0);
    CHECK(k::threads() >= 1);
}
