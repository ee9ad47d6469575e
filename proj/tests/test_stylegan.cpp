#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "dapper/kernels.hpp"
#include "dapper/layers.hpp"
#include "dapper/rng.hpp"
#include "dapper/scenegen.hpp"
#include "dapper/stylegan.hpp"

#include "ref_net.hpp"

using namespace dapper;
using namespace dapper::gan;
namespace fs = std::filesystem;

namespace {

Array random_z(int n, uint64_t seed) {
    Rng rng(seed);
    Array z({n, kLatentDim});
    for (auto& v : z.data) v = rng.normalf();
    return z;
}

// fixed random projection of the outputs to one scalar, for grad checks
Array fixed_weights(const std::vector<int>& shape, uint64_t seed) {
    Rng rng(seed);
    Array r(shape);
    for (auto& v : r.data) v = rng.normalf();
    return r;
}

}  // namespace

TEST_CASE("map_z: deterministic and invariant to latent rescaling") {
    const GanBundle bundle = init_gan(5);
    const Array z = random_z(4, 21);
    const LatentBatch w1 = map_z(bundle, z);
    const LatentBatch w2 = map_z(bundle, z);
    CHECK(w1.values.data == w2.values.data);

    Array z2 = z;
    for (auto& v : z2.data) v *= 2.f;
    const LatentBatch w3 = map_z(bundle, z2);
    CHECK(w1.values.data == w3.values.data);
}

TEST_CASE("synthesize: shape, range, and W/W+ broadcast equivalence") {
    const GanBundle bundle = init_gan(6);
    const Array z = random_z(3, 22);
    const LatentBatch w = map_z(bundle, z);
    const Array img = synthesize(bundle, w);
    CHECK(img.shape == std::vector<int>{3, 3, 32, 32});
    for (float v : img.data) {
        CHECK(v <= 1.f);
        CHECK(v >= -1.f);
    }

    // W+ made of four copies of w gives the identical image
    Array wp({3, kStyleSlots, kLatentDim});
    for (int n = 0; n < 3; ++n)
        for (int s = 0; s < kStyleSlots; ++s)
            for (int j = 0; j < kLatentDim; ++j)
                wp[(size_t(n) * kStyleSlots + s) * kLatentDim + j] = w.values.at2(n, j);
    const Array img2 = synthesize(bundle, LatentBatch::wplus(std::move(wp)));
    CHECK(img.data == img2.data);

    Array bad = w.values;
    bad[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS(synthesize(bundle, LatentBatch::w(std::move(bad))));
}

TEST_CASE("local smoothness: tiny latent step moves pixels boundedly") {
    const GanBundle bundle = init_gan(7);
    const Array z = random_z(1, 23);
    const LatentBatch w = map_z(bundle, z);
    const Array img = synthesize(bundle, w);

    LatentBatch w2 = w;
    w2.values[5] += 1e-6f;
    const Array img2 = synthesize(bundle, w2);
    float max_delta = 0.f;
    for (size_t i = 0; i < img.numel(); ++i)
        max_delta = std::max(max_delta, std::abs(img[i] - img2[i]));
    CHECK(max_delta < 1e-2f);
}

TEST_CASE("float forward agrees with the double-precision reference") {
    const GanBundle bundle = init_gan(15);
    const Array z = random_z(2, 27);
    const Array w = mapping_forward(bundle.gen, z, nullptr);
    const auto w_ref = refnet::mapping_forward(bundle.gen, refnet::to_double(z), 2);
    for (size_t i = 0; i < w.numel(); ++i)
        CHECK(double(w[i]) == doctest::Approx(w_ref[i]).epsilon(1e-4));

    const Array img = synthesize(bundle, LatentBatch::w(w));
    const auto img_ref = refnet::synthesis_forward(bundle.gen, refnet::to_double(w), 2);
    double max_err = 0.0;
    for (size_t i = 0; i < img.numel(); ++i)
        max_err = std::max(max_err, std::abs(double(img[i]) - img_ref[i]));
    CHECK(max_err < 1e-4);

    const Array score = disc_forward(bundle.disc, img, nullptr);
    const auto score_ref = refnet::disc_forward(bundle.disc, refnet::to_double(img), 2);
    for (size_t i = 0; i < score.numel(); ++i)
        CHECK(double(score[i]) == doctest::Approx(score_ref[i]).epsilon(1e-3));
}

TEST_CASE("generator passes the finite-difference gradient gate") {
    GanBundle bundle = init_gan(8);
    const Array z = random_z(2, 24);
    const Array r = fixed_weights({2, 3, 32, 32}, 25);
    const auto z_ref = refnet::to_double(z);

    // analytic grads from the float backward; FD side evaluated in double
    auto loss = [&](bool grads) {
        if (grads) {
            MappingCache mc;
            const Array w = mapping_forward(bundle.gen, z, &mc);
            SynthesisCache sc;
            synthesis_forward(bundle.gen, LatentBatch::w(w), &sc);
            bundle.gen.zero_grads();
            const LatentBatch gw = synthesis_backward(bundle.gen, sc, r, LatentSpace::W);
            mapping_backward(bundle.gen, mc, gw.values);
        }
        const auto w_ref = refnet::mapping_forward(bundle.gen, z_ref, 2);
        const auto img = refnet::synthesis_forward(bundle.gen, w_ref, 2);
        double acc = 0.0;
        for (size_t i = 0; i < img.size(); ++i) acc += img[i] * double(r[i]);
        return acc;
    };
    const auto report = grad_check(loss, bundle.gen, 1e-3f, 32, 77);
    CHECK(report.max_rel_err < 1e-3f);
}

TEST_CASE("discriminator passes the finite-difference gradient gate") {
    GanBundle bundle = init_gan(9);
    Rng rng(31);
    Array img({2, 3, 32, 32});
    for (auto& v : img.data) v = std::tanh(rng.normalf());
    const auto img_ref = refnet::to_double(img);

    auto loss = [&](bool grads) {
        if (grads) {
            DiscCache dc;
            disc_forward(bundle.disc, img, &dc);
            bundle.disc.zero_grads();
            Array gs({2, 1}, 1.f);
            DiscBackwardSpec spec;
            spec.gscore = &gs;
            disc_backward(bundle.disc, dc, spec);
        }
        const auto score = refnet::disc_forward(bundle.disc, img_ref, 2);
        double acc = 0.0;
        for (double s : score) acc += s;
        return acc;
    };
    const auto report = grad_check(loss, bundle.disc, 1e-3f, 32, 78);
    CHECK(report.max_rel_err < 1e-3f);
}

TEST_CASE("discriminator input gradient matches finite differences") {
    const GanBundle bundle = init_gan(10);
    Rng rng(32);
    Array img({1, 3, 32, 32});
    for (auto& v : img.data) v = std::tanh(rng.normalf());

    DiscCache dc;
    disc_forward(bundle.disc, img, &dc);
    Array gs({1, 1}, 1.f);
    DiscBackwardSpec spec;
    spec.gscore = &gs;
    spec.accumulate_params = false;
    spec.need_input_grad = true;
    ParamStore& disc = const_cast<ParamStore&>(bundle.disc);
    const Array gin = disc_backward(disc, dc, spec);

    Rng pick(33);
    float max_rel = 0.f;
    for (int trial = 0; trial < 24; ++trial) {
        const size_t i = pick.below(img.numel());
        const float keep = img[i];
        const float eps = 1e-2f;
        Array tmp = img;
        tmp[i] = keep + eps;
        const float fp = disc_forward(bundle.disc, tmp, nullptr)[0];
        tmp[i] = keep - eps;
        const float fm = disc_forward(bundle.disc, tmp, nullptr)[0];
        const float fd = (fp - fm) / (2 * eps);
        const float rel = std::abs(gin[i] - fd) / std::max(1e-8f, std::abs(gin[i]) + std::abs(fd));
        max_rel = std::max(max_rel, rel);
    }
    CHECK(max_rel < 1e-2f);
}

TEST_CASE("R1 penalty of a constant discriminator is zero") {
    GanBundle bundle = init_gan(11);
    // zero every weight: D(x) = bias, so the input gradient field vanishes
    for (auto& [name, p] : bundle.disc.entries()) p.value.fill(0.f);
    bundle.disc.at("d.fc.b").value[0] = 0.7f;

    Rng rng(34);
    Array img({4, 3, 32, 32});
    for (auto& v : img.data) v = std::tanh(rng.normalf());
    CHECK(r1_penalty_value(bundle, img, 1.f) == 0.0);
}

TEST_CASE("estimate_w_stats: determinism, CLT agreement, positive spread") {
    const GanBundle bundle = init_gan(12);
    const WStats s1 = estimate_w_stats(bundle, 10000, 1);
    const WStats s2 = estimate_w_stats(bundle, 10000, 1);
    CHECK(s1.mean.data == s2.mean.data);
    CHECK(s1.stdev.data == s2.stdev.data);

    const WStats s3 = estimate_w_stats(bundle, 10000, 2);
    for (int j = 0; j < kLatentDim; ++j) {
        const float se = s1.stdev[size_t(j)] * std::sqrt(2.f / 10000.f);
        CHECK(std::abs(s1.mean[size_t(j)] - s3.mean[size_t(j)]) < 3.f * se + 1e-6f);
        CHECK(s1.stdev[size_t(j)] > 0.f);
    }
    CHECK_THROWS(estimate_w_stats(bundle, 100, 1));
}

TEST_CASE("checkpoint round-trip reproduces synthesize output bitwise") {
    const GanBundle bundle = init_gan(13);
    const Array z = random_z(2, 26);
    const Array img = synthesize(bundle, map_z(bundle, z));

    const auto dir = fs::temp_directory_path() / "dapper_gan_ckpt";
    fs::create_directories(dir);
    bundle.save((dir / "g.ckpt").string(), (dir / "d.ckpt").string());
    const GanBundle loaded = GanBundle::load((dir / "g.ckpt").string(), (dir / "d.ckpt").string());
    const Array img2 = synthesize(loaded, map_z(loaded, z));
    CHECK(img.data == img2.data);
    fs::remove_all(dir);
}

TEST_CASE("short adversarial run keeps losses finite and is thread-count invariant") {
    MemoryImageStore store;
    const DatasetManifest source = scenegen::make_source_dataset(1000, 19, store, "img");

    GanTrainConfig cfg;
    cfg.steps = 6;
    cfg.batch_size = 8;
    cfg.seed = 3;

    kernels::set_threads(1);
    GanBundle b1 = init_gan(14);
    const GanTrainLog log1 = train_gan(b1, source, store, cfg);

    kernels::set_threads(2);
    GanBundle b2 = init_gan(14);
    const GanTrainLog log2 = train_gan(b2, source, store, cfg);
    kernels::set_threads(0);

    REQUIRE(log1.steps.size() == 6);
    for (size_t i = 0; i < log1.steps.size(); ++i) {
        CHECK(std::isfinite(log1.steps[i].d_loss));
        CHECK(std::isfinite(log1.steps[i].g_loss));
        CHECK(log1.steps[i].d_loss == log2.steps[i].d_loss);
        CHECK(log1.steps[i].g_loss == log2.steps[i].g_loss);
        CHECK(log1.steps[i].r1 == log2.steps[i].r1);
    }
    CHECK(b1.gen.value_checksum() == b2.gen.value_checksum());
    CHECK(b1.disc.value_checksum() == b2.disc.value_checksum());
}
