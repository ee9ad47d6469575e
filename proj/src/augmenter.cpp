#include "dapper/augmenter.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dapper/rng.hpp"

namespace dapper::augment {

const char* provenance_of(AugmentPolicy::Kind kind) {
    switch (kind) {
        case AugmentPolicy::Kind::kPerturb: return kProvPerturb;
        case AugmentPolicy::Kind::kTraverse: return kProvTraverse;
        case AugmentPolicy::Kind::kAffine: return kProvAffine;
        case AugmentPolicy::Kind::kNone: return kProvReal;
    }
    return kProvReal;
}

AugmentPolicy::Kind policy_kind_from_name(const std::string& name) {
    if (name == "none") return AugmentPolicy::Kind::kNone;
    if (name == "perturb") return AugmentPolicy::Kind::kPerturb;
    if (name == "traverse") return AugmentPolicy::Kind::kTraverse;
    if (name == "affine") return AugmentPolicy::Kind::kAffine;
    throw std::invalid_argument("unknown augmentation policy: " + name);
}

std::string policy_name(AugmentPolicy::Kind kind) {
    switch (kind) {
        case AugmentPolicy::Kind::kNone: return "none";
        case AugmentPolicy::Kind::kPerturb: return "perturb";
        case AugmentPolicy::Kind::kTraverse: return "traverse";
        case AugmentPolicy::Kind::kAffine: return "affine";
    }
    return "none";
}

gan::LatentBatch perturb(const gan::LatentBatch& w, float sigma, const gan::WStats& stats,
                         uint64_t seed) {
    if (sigma < 0.f) throw std::invalid_argument("perturb: sigma must be >= 0");
    gan::LatentBatch out = w;
    if (sigma == 0.f) return out;
    Rng rng(derive_seed(seed, "perturb"));
    const int N = w.count();
    const int elems = int(w.values.numel()) / N;
    for (int n = 0; n < N; ++n)
        for (int e = 0; e < elems; ++e) {
            const float s = stats.stdev[size_t(e % gan::kLatentDim)];
            out.values[size_t(n) * elems + e] += sigma * s * rng.normalf();
        }
    return out;
}

std::vector<Image> synth_from_latent(const gan::LatentBatch& w, const gan::GanBundle& bundle,
                                     const gan::WStats& stats, const AugmentPolicy& policy,
                                     const semdir::DirectionVector* direction, uint64_t seed) {
    std::vector<Image> out;
    if (policy.k <= 0) return out;

    std::vector<gan::LatentBatch> latents;
    switch (policy.kind) {
        case AugmentPolicy::Kind::kPerturb:
            for (int j = 0; j < policy.k; ++j)
                latents.push_back(perturb(w, policy.sigma, stats, derive_seed(seed, "synth", uint64_t(j))));
            break;
        case AugmentPolicy::Kind::kTraverse: {
            if (!direction) throw std::invalid_argument("synth_from_latent: traverse needs a direction");
            const int count = std::min<int>(policy.k, int(policy.coefficients.size()));
            for (int j = 0; j < count; ++j)
                latents.push_back(semdir::traverse(w, *direction, policy.coefficients[size_t(j)]));
            break;
        }
        default:
            throw std::invalid_argument("synth_from_latent: policy must be perturb or traverse");
    }

    for (const auto& l : latents) out.push_back(model_to_image(gan::synthesize(bundle, l), 0));
    return out;
}

std::vector<Image> synth_from_real(const Image& image, const gan::GanBundle& bundle,
                                   const gan::WStats& stats, const inversion::ProjectionConfig& pcfg,
                                   const AugmentPolicy& policy,
                                   const semdir::DirectionVector* direction) {
    const inversion::ProjectionResult proj = inversion::project(image, bundle, stats, pcfg);
    return synth_from_latent(proj.w_star, bundle, stats, policy, direction, policy.seed);
}

std::vector<Image> affine_augment(const Image& image, const AugmentPolicy& policy,
                                  const AffineParams& params) {
    std::vector<Image> out;
    if (policy.k < 0) throw std::invalid_argument("affine_augment: k must be >= 0");
    constexpr float kPi = 3.14159265358979323846f;

    for (int j = 0; j < policy.k; ++j) {
        Rng rng(derive_seed(policy.seed, "affine", uint64_t(j)));
        const float rot = float(rng.uniform(-params.max_rotate_deg, params.max_rotate_deg)) * kPi / 180.f;
        const float shear = std::tan(float(rng.uniform(-params.max_shear_deg, params.max_shear_deg)) *
                                     kPi / 180.f);

        // inverse-warp with bilinear sampling about the image center
        const float c = std::cos(rot), s = std::sin(rot);
        const float cx = float(image.width) * 0.5f, cy = float(image.height) * 0.5f;
        Image warped(image.height, image.width, image.channels);
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) {
                const float dx = float(x) + 0.5f - cx;
                const float dy = float(y) + 0.5f - cy;
                // forward map = rotate then shear x by y; invert: unshear, unrotate
                const float ux = dx - shear * dy;
                const float sxf = c * ux + s * dy + cx - 0.5f;
                const float syf = -s * ux + c * dy + cy - 0.5f;
                const int x0 = int(std::floor(sxf)), y0 = int(std::floor(syf));
                const float fx = sxf - float(x0), fy = syf - float(y0);
                for (int ch = 0; ch < image.channels; ++ch) {
                    auto sample = [&](int yy, int xx) {
                        yy = std::clamp(yy, 0, image.height - 1);
                        xx = std::clamp(xx, 0, image.width - 1);
                        return image.at(yy, xx, ch);
                    };
                    const float top = sample(y0, x0) * (1 - fx) + sample(y0, x0 + 1) * fx;
                    const float bot = sample(y0 + 1, x0) * (1 - fx) + sample(y0 + 1, x0 + 1) * fx;
                    warped.at(y, x, ch) = top * (1 - fy) + bot * fy;
                }
            }
        for (auto& v : warped.pixels)
            v = std::clamp(v + params.noise_std * rng.normalf(), 0.f, 1.f);
        out.push_back(std::move(warped));
    }
    return out;
}

DatasetManifest build_mix(const DatasetManifest& train, const MixSpec& spec,
                          const AugmentContext& ctx, ImageStore& store,
                          const std::string& synth_dir) {
    if (!(spec.real_fraction > 0.f && spec.real_fraction <= 1.f))
        throw std::invalid_argument("build_mix: real_fraction must be in (0,1]");
    const auto kind = spec.policy.kind;
    const bool needs_latents =
        kind == AugmentPolicy::Kind::kPerturb || kind == AugmentPolicy::Kind::kTraverse;
    if (needs_latents && (!ctx.bundle || !ctx.stats || !ctx.latents))
        throw std::invalid_argument("build_mix: policy needs generator, W stats and latents");
    if (kind == AugmentPolicy::Kind::kTraverse && !ctx.direction)
        throw std::invalid_argument("build_mix: traverse policy needs a direction");

    DatasetManifest out;
    out.label_set = train.label_set;
    out.generator_seed = train.generator_seed;
    out.split = train.split + "+mix";

    // subsample real records, per class when stratified
    std::vector<size_t> retained;
    auto subsample = [&](std::vector<size_t> idx, uint64_t salt) {
        const size_t keep = size_t(std::floor(double(spec.real_fraction) * double(idx.size())));
        if (keep == 0)
            throw std::runtime_error("build_mix: real_fraction empties a class");
        Rng rng(derive_seed(spec.policy.seed, "subsample", salt));
        for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
        idx.resize(keep);
        std::sort(idx.begin(), idx.end());  // manifest order
        retained.insert(retained.end(), idx.begin(), idx.end());
    };
    if (spec.stratified && !train.label_set.empty()) {
        for (int c = 0; c < int(train.label_set.size()); ++c) {
            auto idx = train.indices_of_label(c);
            if (idx.empty()) continue;
            subsample(std::move(idx), uint64_t(c));
        }
    } else {
        std::vector<size_t> idx(train.records.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        subsample(std::move(idx), 0);
    }
    std::sort(retained.begin(), retained.end());

    for (size_t i : retained) out.records.push_back(train.records[i]);

    if (kind == AugmentPolicy::Kind::kNone || spec.policy.k <= 0) return out;

    for (size_t i : retained) {
        const ManifestRecord& src = train.records[i];
        const uint64_t rec_seed = derive_seed(spec.policy.seed, src.id);

        std::vector<Image> synth;
        if (needs_latents) {
            const gan::LatentBatch w = ctx.latents->latent(src.id);
            synth = synth_from_latent(w, *ctx.bundle, *ctx.stats, spec.policy, ctx.direction, rec_seed);
        } else {  // affine
            AugmentPolicy p = spec.policy;
            p.seed = rec_seed;
            synth = affine_augment(store.get(src.path), p);
        }

        for (size_t j = 0; j < synth.size(); ++j) {
            ManifestRecord r;
            r.id = src.id + "_s" + std::to_string(j);
            r.path = synth_dir + "/" + r.id + ".png";
            r.label = src.label;
            r.provenance = provenance_of(kind);
            r.seed = rec_seed;
            r.source_id = src.id;
            store.put(r.path, synth[j]);
            out.records.push_back(std::move(r));
        }
    }
    return out;
}

}  // namespace dapper::augment
