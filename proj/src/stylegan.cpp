#include "dapper/stylegan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "dapper/image.hpp"
#include "dapper/kernels.hpp"
#include "dapper/rng.hpp"

namespace dapper::gan {

namespace {

constexpr float kLReluSlope = 0.2f;
constexpr int kMappingLayers = 3;

// synthesis channel plan: const 64@4x4, blocks to 64@8, 32@16, 16@32, rgb 3@32
constexpr int kSynthChannels[4] = {64, 64, 32, 16};

// discriminator channel plan: 3 -> 16@16 -> 32@8 -> 64@4, dense 1024 -> 1
constexpr int kDiscChannels[3] = {16, 32, 64};

nn::ModConv synth_block(int i) {
    nn::ModConv mc;
    mc.prefix = "syn.b" + std::to_string(i);
    mc.Ci = kSynthChannels[i];
    mc.Co = kSynthChannels[i + 1];
    mc.K = 3;
    mc.latent_dim = kLatentDim;
    mc.demodulate = true;
    return mc;
}

nn::ModConv synth_rgb() {
    nn::ModConv mc;
    mc.prefix = "syn.rgb";
    mc.Ci = kSynthChannels[3];
    mc.Co = kImageChannels;
    mc.K = 1;
    mc.latent_dim = kLatentDim;
    mc.demodulate = false;  // toRGB is modulated but not demodulated
    return mc;
}

void init_dense(ParamStore& store, const std::string& prefix, int in, int out, Rng& rng) {
    Array w({out, in});
    const float std_ = std::sqrt(2.f / float(in));
    for (auto& v : w.data) v = std_ * rng.normalf();
    store.add(prefix + ".w", std::move(w));
    store.add(prefix + ".b", Array({out}));
}

void init_conv(ParamStore& store, const std::string& prefix, int ci, int co, int k, Rng& rng) {
    Array w({co, ci, k, k});
    const float std_ = std::sqrt(2.f / float(ci * k * k));
    for (auto& v : w.data) v = std_ * rng.normalf();
    store.add(prefix + ".w", std::move(w));
    store.add(prefix + ".b", Array({co}));
}

void check_finite(const Array& a, const char* what) {
    if (!a.all_finite()) throw std::runtime_error(std::string(what) + ": non-finite values");
}

Array slot_style(const LatentBatch& w, int slot) {
    const int N = w.count();
    Array s({N, kLatentDim});
    if (w.space == LatentSpace::W) {
        s.data = w.values.data;
    } else {
        for (int n = 0; n < N; ++n)
            for (int j = 0; j < kLatentDim; ++j)
                s.at2(n, j) = w.values[(size_t(n) * kStyleSlots + slot) * kLatentDim + j];
    }
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// bundle init / io
// ---------------------------------------------------------------------------

GanBundle init_gan(uint64_t seed) {
    GanBundle b;
    Rng grng(derive_seed(seed, "gan-init-gen"));
    for (int i = 0; i < kMappingLayers; ++i)
        init_dense(b.gen, "map.fc" + std::to_string(i), kLatentDim, kLatentDim, grng);

    Array cst({kSynthChannels[0], 4, 4});
    for (auto& v : cst.data) v = grng.normalf();
    b.gen.add("syn.const", std::move(cst));
    for (int i = 0; i < 3; ++i) synth_block(i).init(b.gen, grng.next_u64());
    synth_rgb().init(b.gen, grng.next_u64());

    Rng drng(derive_seed(seed, "gan-init-disc"));
    int ci = kImageChannels;
    for (int i = 0; i < kDiscFeatureLayers; ++i) {
        init_conv(b.disc, "d.c" + std::to_string(i), ci, kDiscChannels[i], 3, drng);
        ci = kDiscChannels[i];
    }
    init_dense(b.disc, "d.fc", kDiscChannels[2] * 4 * 4, 1, drng);
    return b;
}

void GanBundle::save(const std::string& gen_path, const std::string& disc_path) const {
    gen.save(gen_path);
    disc.save(disc_path);
}

GanBundle GanBundle::load(const std::string& gen_path, const std::string& disc_path) {
    GanBundle b;
    b.gen = ParamStore::load(gen_path);
    b.disc = ParamStore::load(disc_path);
    return b;
}

// ---------------------------------------------------------------------------
// mapping
// ---------------------------------------------------------------------------

Array mapping_forward(const ParamStore& gen, const Array& z, MappingCache* cache) {
    const int N = z.shape[0];
    require_shape(z, {N, kLatentDim}, "mapping_forward");

    Array zn({N, kLatentDim});
    for (int n = 0; n < N; ++n) {
        float ss = 0.f;
        for (int j = 0; j < kLatentDim; ++j) ss += z.at2(n, j) * z.at2(n, j);
        const float inv = 1.f / std::sqrt(std::max(ss, 1e-20f));
        for (int j = 0; j < kLatentDim; ++j) zn.at2(n, j) = z.at2(n, j) * inv;
    }

    MappingCache local;
    MappingCache& c = cache ? *cache : local;
    c.zn = zn;
    c.pre.clear();
    c.post.clear();
    Array x = zn;
    for (int i = 0; i < kMappingLayers; ++i) {
        const auto& w = gen.at("map.fc" + std::to_string(i) + ".w").value;
        const auto& bias = gen.at("map.fc" + std::to_string(i) + ".b").value;
        Array pre = nn::dense(x, w, bias);
        Array post = nn::lrelu(pre, kLReluSlope);
        c.pre.push_back(pre);
        c.post.push_back(post);
        x = c.post.back();
    }
    return x;
}

void mapping_backward(ParamStore& gen, const MappingCache& cache, const Array& gw) {
    Array g = gw;
    for (int i = kMappingLayers - 1; i >= 0; --i) {
        g = nn::lrelu_backward(cache.pre[size_t(i)], g, kLReluSlope);
        const Array& input = i == 0 ? cache.zn : cache.post[size_t(i - 1)];
        Param& wp = gen.at("map.fc" + std::to_string(i) + ".w");
        Param& bp = gen.at("map.fc" + std::to_string(i) + ".b");
        Array gx;
        nn::dense_backward(input, wp.value, g, i > 0 ? &gx : nullptr, wp, bp);
        if (i > 0) g = std::move(gx);
    }
    // gradient into z is not needed anywhere (z is always freshly sampled)
}

// ---------------------------------------------------------------------------
// synthesis
// ---------------------------------------------------------------------------

Array synthesis_forward(const ParamStore& gen, const LatentBatch& w, SynthesisCache* cache) {
    const int N = w.count();
    if (w.space == LatentSpace::W)
        require_shape(w.values, {N, kLatentDim}, "synthesis_forward (W)");
    else
        require_shape(w.values, {N, kStyleSlots, kLatentDim}, "synthesis_forward (W+)");

    SynthesisCache local;
    SynthesisCache& c = cache ? *cache : local;
    c.styles.clear();
    c.conv.assign(kStyleSlots, {});
    c.pre.clear();

    const Array& cst = gen.at("syn.const").value;
    c.x0 = Array({N, kSynthChannels[0], 4, 4});
    for (int n = 0; n < N; ++n)
        std::copy(cst.data.begin(), cst.data.end(), c.x0.data.begin() + size_t(n) * cst.numel());

    Array x = c.x0;
    for (int i = 0; i < 3; ++i) {
        c.styles.push_back(slot_style(w, i));
        x = nn::upsample2x(x);
        const nn::ModConv mc = synth_block(i);
        // forward needs a mutable store only to fetch params; const_cast is
        // confined here and the store is not modified.
        Array pre = mc.forward(const_cast<ParamStore&>(gen), x, c.styles.back(), c.conv[size_t(i)]);
        c.pre.push_back(pre);
        x = nn::lrelu(pre, kLReluSlope);
    }
    c.styles.push_back(slot_style(w, 3));
    const nn::ModConv rgb = synth_rgb();
    c.rgb_pre = rgb.forward(const_cast<ParamStore&>(gen), x, c.styles.back(), c.conv[3]);
    c.img = nn::tanh_act(c.rgb_pre);
    return c.img;
}

LatentBatch synthesis_backward(ParamStore& gen, const SynthesisCache& cache, const Array& gimg,
                               LatentSpace space) {
    const int N = gimg.shape[0];
    std::vector<Array> style_grads(kStyleSlots, Array({N, kLatentDim}));

    Array g = nn::tanh_backward(cache.img, gimg);
    const nn::ModConv rgb = synth_rgb();
    g = rgb.backward(gen, g, cache.conv[3], &style_grads[3]);

    for (int i = 2; i >= 0; --i) {
        g = nn::lrelu_backward(cache.pre[size_t(i)], g, kLReluSlope);
        const nn::ModConv mc = synth_block(i);
        g = mc.backward(gen, g, cache.conv[size_t(i)], &style_grads[size_t(i)]);
        g = nn::upsample2x_backward(g);
    }

    // constant gradient: sum over batch
    Param& cst = gen.at("syn.const");
    for (int n = 0; n < N; ++n)
        for (size_t j = 0; j < cst.value.numel(); ++j)
            cst.grad[j] += g[size_t(n) * cst.value.numel() + j];

    if (space == LatentSpace::W) {
        Array total({N, kLatentDim});
        for (const auto& sg : style_grads)
            for (size_t j = 0; j < total.numel(); ++j) total[j] += sg[j];
        return LatentBatch::w(std::move(total));
    }
    Array total({N, kStyleSlots, kLatentDim});
    for (int s = 0; s < kStyleSlots; ++s)
        for (int n = 0; n < N; ++n)
            for (int j = 0; j < kLatentDim; ++j)
                total[(size_t(n) * kStyleSlots + s) * kLatentDim + j] = style_grads[size_t(s)].at2(n, j);
    return LatentBatch::wplus(std::move(total));
}

// ---------------------------------------------------------------------------
// discriminator
// ---------------------------------------------------------------------------

Array disc_forward(const ParamStore& disc, const Array& img, DiscCache* cache) {
    const int N = img.shape[0];
    require_shape(img, {N, kImageChannels, kImageSize, kImageSize}, "disc_forward");

    DiscCache local;
    DiscCache& c = cache ? *cache : local;
    c.x = img;
    c.pre.clear();
    c.post.clear();

    Array x = img;
    for (int i = 0; i < kDiscFeatureLayers; ++i) {
        const auto& w = disc.at("d.c" + std::to_string(i) + ".w").value;
        const auto& b = disc.at("d.c" + std::to_string(i) + ".b").value;
        Array pre = nn::conv2d(x, w, 2);
        nn::add_bias_nchw(pre, b);
        Array post = nn::lrelu(pre, kLReluSlope);
        c.pre.push_back(pre);
        c.post.push_back(post);
        x = c.post.back();
    }
    c.flat = x;
    c.flat.shape = {N, kDiscChannels[2] * 4 * 4};
    c.score = nn::dense(c.flat, disc.at("d.fc.w").value, disc.at("d.fc.b").value);
    return c.score;
}

Array disc_backward(ParamStore& disc, const DiscCache& cache, const DiscBackwardSpec& spec) {
    const int N = cache.x.shape[0];

    Array g;  // gradient flowing down from the dense layer, in conv layout
    if (spec.gscore) {
        Param& wp = disc.at("d.fc.w");
        Param& bp = disc.at("d.fc.b");
        Array gflat;
        if (spec.accumulate_params) {
            nn::dense_backward(cache.flat, wp.value, *spec.gscore, &gflat, wp, bp);
        } else {
            gflat = Array({N, wp.value.shape[1]});
            kernels::dense_bwd_input(spec.gscore->ptr(), wp.value.ptr(), gflat.ptr(), N,
                                     wp.value.shape[1], 1);
        }
        g = std::move(gflat);
        g.shape = {N, kDiscChannels[2], 4, 4};
    }

    for (int i = kDiscFeatureLayers - 1; i >= 0; --i) {
        // inject feature-loss gradients at the post-activation map
        if (int(spec.gfeatures.size()) > i && spec.gfeatures[size_t(i)]) {
            const Array& gf = *spec.gfeatures[size_t(i)];
            if (g.empty()) {
                g = gf;
            } else {
                for (size_t j = 0; j < g.numel(); ++j) g[j] += gf[j];
            }
        }
        if (g.empty()) throw std::invalid_argument("disc_backward: no gradient source");

        g = nn::lrelu_backward(cache.pre[size_t(i)], g, kLReluSlope);
        Param& wp = disc.at("d.c" + std::to_string(i) + ".w");
        Param& bp = disc.at("d.c" + std::to_string(i) + ".b");
        const Array& input = i == 0 ? cache.x : cache.post[size_t(i - 1)];
        const bool need_gx = spec.need_input_grad || i > 0;
        Array gx, gw;
        nn::conv2d_backward(input, wp.value, g, 2, need_gx ? &gx : nullptr,
                            spec.accumulate_params ? &gw : nullptr);
        if (spec.accumulate_params) {
            for (size_t j = 0; j < gw.numel(); ++j) wp.grad[j] += gw[j];
            nn::bias_backward_nchw(g, bp);
        }
        g = std::move(gx);
    }
    return g;
}

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

LatentBatch map_z(const GanBundle& bundle, const Array& z) {
    return LatentBatch::w(mapping_forward(bundle.gen, z, nullptr));
}

Array synthesize(const GanBundle& bundle, const LatentBatch& w) {
    check_finite(w.values, "synthesize: latent");
    return synthesis_forward(bundle.gen, w, nullptr);
}

void WStats::save(const std::string& path) const {
    nlohmann::json j;
    j["mean"] = mean.data;
    j["stdev"] = stdev.data;
    j["sample_count"] = sample_count;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("wstats: cannot write " + path);
    out << j.dump(2) << '\n';
}

WStats WStats::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("wstats: cannot open " + path);
    nlohmann::json j;
    in >> j;
    WStats s;
    s.mean = Array({kLatentDim});
    s.stdev = Array({kLatentDim});
    s.mean.data = j.at("mean").get<std::vector<float>>();
    s.stdev.data = j.at("stdev").get<std::vector<float>>();
    s.sample_count = j.at("sample_count").get<int>();
    return s;
}

WStats estimate_w_stats(const GanBundle& bundle, int n, uint64_t seed) {
    if (n < 10000) throw std::invalid_argument("estimate_w_stats: n must be >= 10000");
    Rng rng(derive_seed(seed, "w-stats"));
    std::vector<double> sum(kLatentDim, 0.0), sumsq(kLatentDim, 0.0);

    const int batch = 256;
    int done = 0;
    while (done < n) {
        const int b = std::min(batch, n - done);
        Array z({b, kLatentDim});
        for (auto& v : z.data) v = rng.normalf();
        const Array w = mapping_forward(bundle.gen, z, nullptr);
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < kLatentDim; ++j) {
                const double v = double(w.at2(i, j));
                sum[size_t(j)] += v;
                sumsq[size_t(j)] += v * v;
            }
        done += b;
    }

    WStats s;
    s.sample_count = n;
    s.mean = Array({kLatentDim});
    s.stdev = Array({kLatentDim});
    for (int j = 0; j < kLatentDim; ++j) {
        const double mu = sum[size_t(j)] / double(n);
        const double var = (sumsq[size_t(j)] - double(n) * mu * mu) / double(n - 1);
        s.mean[size_t(j)] = float(mu);
        s.stdev[size_t(j)] = float(std::sqrt(std::max(var, 0.0)));
    }
    return s;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// mean softplus(-s) over scores, with d/ds = -sigmoid(-s)/N written to gs
double loss_real(const Array& score, Array* gs) {
    const int N = score.shape[0];
    if (gs) *gs = Array({N, 1});
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
        const double s = double(score.at2(n, 0));
        acc += nn::softplus(-s);
        if (gs) gs->at2(n, 0) = float(-sigmoid(-s) / N);
    }
    return acc / N;
}

// mean softplus(s) over scores, with d/ds = sigmoid(s)/N
double loss_fake(const Array& score, Array* gs) {
    const int N = score.shape[0];
    if (gs) *gs = Array({N, 1});
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
        const double s = double(score.at2(n, 0));
        acc += nn::softplus(s);
        if (gs) gs->at2(n, 0) = float(sigmoid(s) / N);
    }
    return acc / N;
}

Array sample_z(Rng& rng, int n) {
    Array z({n, kLatentDim});
    for (auto& v : z.data) v = rng.normalf();
    return z;
}

}  // namespace

double r1_penalty_value(const GanBundle& bundle, const Array& images, float gamma) {
    DiscCache cache;
    disc_forward(bundle.disc, images, &cache);
    const int N = images.shape[0];
    Array ones({N, 1}, 1.f);
    DiscBackwardSpec spec;
    spec.gscore = &ones;
    spec.accumulate_params = false;
    spec.need_input_grad = true;
    ParamStore& disc = const_cast<ParamStore&>(bundle.disc);
    const Array gin = disc_backward(disc, cache, spec);
    double ss = 0.0;
    for (float v : gin.data) ss += double(v) * double(v);
    return 0.5 * double(gamma) * ss / double(N);
}

GanTrainLog train_gan(GanBundle& bundle, const DatasetManifest& source, const ImageStore& store,
                      const GanTrainConfig& config) {
    if (source.records.size() < 1000)
        throw std::invalid_argument("train_gan: source must have >= 1000 images");

    // preload all source images as model tensors
    std::vector<Image> imgs;
    imgs.reserve(source.records.size());
    for (const auto& r : source.records) imgs.push_back(store.get(r.path));
    const Array all = images_to_model_batch(imgs);
    const size_t img_elems = size_t(kImageChannels) * kImageSize * kImageSize;

    Adam opt_g(config.lr, config.beta1, config.beta2);
    Adam opt_d(config.lr, config.beta1, config.beta2);
    Rng rng(derive_seed(config.seed, "gan-train"));
    const int N = config.batch_size;

    GanTrainLog log;
    for (int step = 0; step < config.steps; ++step) {
        // ---- discriminator step ----
        Array real({N, kImageChannels, kImageSize, kImageSize});
        for (int i = 0; i < N; ++i) {
            const size_t idx = rng.below(source.records.size());
            std::copy_n(all.data.begin() + idx * img_elems, img_elems,
                        real.data.begin() + size_t(i) * img_elems);
        }
        const Array z_d = sample_z(rng, N);
        const Array fake = synthesis_forward(bundle.gen, map_z(bundle, z_d), nullptr);

        bundle.disc.zero_grads();
        DiscCache cr, cf;
        const Array sr = disc_forward(bundle.disc, real, &cr);
        const Array sf = disc_forward(bundle.disc, fake, &cf);
        Array gsr, gsf;
        const double dl = loss_real(sr, &gsr) + loss_fake(sf, &gsf);

        DiscBackwardSpec br;
        br.gscore = &gsr;
        disc_backward(bundle.disc, cr, br);
        DiscBackwardSpec bf;
        bf.gscore = &gsf;
        disc_backward(bundle.disc, cf, bf);

        // ---- R1 penalty: gamma/2 * mean ||d D/d x||^2 at real images.
        // Parameter gradient via a central-difference Hessian-vector
        // product: perturb the real batch along the input gradient and
        // difference the parameter gradients.
        Array ones({N, 1}, 1.f);
        DiscBackwardSpec bin;
        bin.gscore = &ones;
        bin.accumulate_params = false;
        bin.need_input_grad = true;
        const Array v = disc_backward(bundle.disc, cr, bin);
        double vss = 0.0;
        for (float x : v.data) vss += double(x) * double(x);
        const double r1 = 0.5 * double(config.r1_gamma) * vss / double(N);

        if (config.r1_gamma > 0.f && vss > 0.0) {
            const double vrms = std::sqrt(vss / double(v.numel()));
            const float alpha = float(1e-2 / (vrms + 1e-12));
            Array shifted(real.shape);

            ParamStore scratch_plus = bundle.disc;   // copies values; grads zeroed below
            scratch_plus.zero_grads();
            for (size_t j = 0; j < shifted.numel(); ++j) shifted[j] = real[j] + alpha * v[j];
            {
                DiscCache c2;
                disc_forward(scratch_plus, shifted, &c2);
                DiscBackwardSpec b2;
                b2.gscore = &ones;
                disc_backward(scratch_plus, c2, b2);
            }
            ParamStore scratch_minus = bundle.disc;
            scratch_minus.zero_grads();
            for (size_t j = 0; j < shifted.numel(); ++j) shifted[j] = real[j] - alpha * v[j];
            {
                DiscCache c2;
                disc_forward(scratch_minus, shifted, &c2);
                DiscBackwardSpec b2;
                b2.gscore = &ones;
                disc_backward(scratch_minus, c2, b2);
            }
            const float hvp_scale = float(config.r1_gamma) / (float(N) * 2.f * alpha);
            for (auto& [name, p] : bundle.disc.entries()) {
                const Array& gp = scratch_plus.at(name).grad;
                const Array& gm = scratch_minus.at(name).grad;
                for (size_t j = 0; j < p.grad.numel(); ++j)
                    p.grad[j] += hvp_scale * (gp[j] - gm[j]);
            }
        }
        opt_d.step(bundle.disc);

        // ---- generator step ----
        bundle.gen.zero_grads();
        const Array z_g = sample_z(rng, N);
        MappingCache mc;
        const Array wl = mapping_forward(bundle.gen, z_g, &mc);
        SynthesisCache sc;
        const Array gen_img = synthesis_forward(bundle.gen, LatentBatch::w(wl), &sc);
        DiscCache cg;
        const Array sg = disc_forward(bundle.disc, gen_img, &cg);
        Array gsg;
        const double gl = loss_real(sg, &gsg);  // non-saturating: softplus(-D(G(z)))

        DiscBackwardSpec bg;
        bg.gscore = &gsg;
        bg.accumulate_params = false;
        bg.need_input_grad = true;
        const Array gimg = disc_backward(bundle.disc, cg, bg);
        const LatentBatch gw = synthesis_backward(bundle.gen, sc, gimg, LatentSpace::W);
        mapping_backward(bundle.gen, mc, gw.values);
        opt_g.step(bundle.gen);

        if (!std::isfinite(dl) || !std::isfinite(gl) || !std::isfinite(r1))
            throw TrainingDiverged(step, "non-finite loss");
        log.steps.push_back({step, float(dl), float(gl), float(r1)});
    }
    return log;
}

void GanTrainLog::save_json(const std::string& path) const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : steps)
        j.push_back({{"step", s.step}, {"d_loss", s.d_loss}, {"g_loss", s.g_loss}, {"r1", s.r1}});
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("loss log: cannot write " + path);
    out << j.dump() << '\n';
}

double disc_accuracy(const GanBundle& bundle, const DatasetManifest& source, const ImageStore& store,
                     int n, uint64_t seed) {
    Rng rng(derive_seed(seed, "disc-acc"));
    std::vector<Image> imgs;
    for (int i = 0; i < n; ++i)
        imgs.push_back(store.get(source.records[rng.below(source.records.size())].path));
    const Array real = images_to_model_batch(imgs);
    const Array fake = synthesis_forward(bundle.gen, map_z(bundle, sample_z(rng, n)), nullptr);

    const Array sr = disc_forward(bundle.disc, real, nullptr);
    const Array sf = disc_forward(bundle.disc, fake, nullptr);
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        if (sr.at2(i, 0) > 0.f) ++correct;
        if (sf.at2(i, 0) < 0.f) ++correct;
    }
    return double(correct) / double(2 * n);
}

}  // namespace dapper::gan
