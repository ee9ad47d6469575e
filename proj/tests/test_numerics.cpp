#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "dapper/layers.hpp"
#include "dapper/numerics.hpp"
#include "dapper/rng.hpp"

using namespace dapper;

TEST_CASE("grad_check: quadratic has exact analytic gradient") {
    ParamStore params;
    Array x({2});
    x[0] = 1.f;
    x[1] = 2.f;
    params.add("x", std::move(x));

    auto loss = [&](bool grads) {
        const Array& v = params.at("x").value;
        if (grads) {
            params.zero_grads();
            for (size_t i = 0; i < v.numel(); ++i) params.at("x").grad[i] = 2.f * v[i];
        }
        double acc = 0.0;
        for (size_t i = 0; i < v.numel(); ++i) acc += double(v[i]) * double(v[i]);
        return acc;
    };

    const auto report = grad_check(loss, params, 1e-3f);
    CHECK(report.passed(1e-4f));
    CHECK(params.at("x").grad[0] == doctest::Approx(2.f));
    CHECK(params.at("x").grad[1] == doctest::Approx(4.f));
}

TEST_CASE("grad_check: constant function gives zero analytic and FD gradients") {
    ParamStore params;
    params.add("x", Array({4}, 0.5f));
    auto loss = [&](bool grads) {
        if (grads) params.zero_grads();
        return 3.25;
    };
    const auto report = grad_check(loss, params, 1e-3f);
    CHECK(report.max_rel_err == 0.f);
}

TEST_CASE("grad_check: two-layer perceptron with smooth activations") {
    Rng rng(7);
    ParamStore params;
    Array w1({8, 6}), w2({1, 8}), input({3, 6});
    for (auto& v : w1.data) v = 0.5f * rng.normalf();
    for (auto& v : w2.data) v = 0.5f * rng.normalf();
    for (auto& v : input.data) v = rng.normalf();
    params.add("w1", std::move(w1));
    params.add("w2", std::move(w2));
    Array b1({8}), b2({1});
    params.add("b1", std::move(b1));
    params.add("b2", std::move(b2));

    auto loss = [&](bool grads) {
        const Array& W1 = params.at("w1").value;
        const Array& W2 = params.at("w2").value;
        Array h = nn::dense(input, W1, params.at("b1").value);
        Array a = nn::tanh_act(h);
        Array out = nn::dense(a, W2, params.at("b2").value);
        double acc = 0.0;
        for (size_t i = 0; i < out.numel(); ++i) acc += double(out[i]);
        if (grads) {
            params.zero_grads();
            Array gout(out.shape);
            gout.fill(1.f);
            Array ga;
            nn::dense_backward(a, W2, gout, &ga, params.at("w2"), params.at("b2"));
            Array gh = nn::tanh_backward(a, ga);
            nn::dense_backward(input, W1, gh, nullptr, params.at("w1"), params.at("b1"));
        }
        return acc;
    };

    // float32 forward: eps must sit above the roundoff floor
    const auto report = grad_check(loss, params, 1e-2f, 64, 99);
    CHECK(report.max_rel_err < 1e-3f);
}

TEST_CASE("adam: zero gradient leaves params unchanged") {
    ParamStore params;
    params.add("x", Array({3}, 1.5f));
    Adam opt(0.1f);
    opt.step(params);
    for (int i = 0; i < 3; ++i) CHECK(params.at("x").value[size_t(i)] == 1.5f);
}

TEST_CASE("adam: frozen entries are untouched regardless of gradient") {
    ParamStore params;
    params.add("x", Array({3}, 1.5f), /*frozen=*/true);
    params.at("x").grad.fill(5.f);
    const uint64_t sum = params.value_checksum();
    Adam opt(0.1f);
    opt.step(params);
    CHECK(params.value_checksum() == sum);
}

TEST_CASE("adam: bias-corrected sign step for a single scalar") {
    ParamStore params;
    params.add("x", Array({1}, 0.f));
    params.at("x").grad[0] = 1.f;
    Adam opt(0.1f, 0.f, 0.f);
    opt.step(params);
    CHECK(params.at("x").value[0] == doctest::Approx(-0.1f).epsilon(1e-4));
}

TEST_CASE("checkpoint: byte-exact round-trip") {
    Rng rng(11);
    ParamStore store;
    Array a({3, 4});
    for (auto& v : a.data) v = rng.normalf();
    store.add("alpha", std::move(a));
    Array b({7});
    for (auto& v : b.data) v = rng.normalf();
    store.add("beta", std::move(b), /*frozen=*/true);

    const auto dir = std::filesystem::temp_directory_path() / "dapper_ckpt_test";
    std::filesystem::create_directories(dir);
    const std::string p1 = (dir / "a.ckpt").string();
    const std::string p2 = (dir / "b.ckpt").string();
    store.save(p1);

    ParamStore loaded = ParamStore::load(p1);
    CHECK(loaded.value_checksum() == store.value_checksum());
    CHECK(loaded.at("beta").frozen);
    CHECK(loaded.at("alpha").value.shape == std::vector<int>{3, 4});

    // second save of the loaded store is byte-identical
    loaded.save(p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    std::filesystem::remove_all(dir);
}

TEST_CASE("grad_check reports non-finite loss with the parameter name") {
    ParamStore params;
    params.add("w", Array({1}, 1.f));
    auto loss = [&](bool grads) {
        if (grads) params.zero_grads();
        return std::numeric_limits<double>::quiet_NaN();
    };
    CHECK_THROWS_WITH_AS(grad_check(loss, params, 1e-3f), doctest::Contains("w"),
                         std::runtime_error);
}
