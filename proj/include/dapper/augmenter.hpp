#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dapper/image.hpp"
#include "dapper/inversion.hpp"
#include "dapper/manifest.hpp"
#include "dapper/semdir.hpp"
#include "dapper/stylegan.hpp"

namespace dapper::augment {

struct AugmentPolicy {
    enum class Kind { kNone, kPerturb, kTraverse, kAffine };
    Kind kind = Kind::kNone;
    float sigma = 0.3f;                  // perturb std, in per-dimension W-std units
    std::vector<float> coefficients;     // traverse grid (raw W units)
    int k = 2;                           // synthetic count per real image
    uint64_t seed = 0;
};

const char* provenance_of(AugmentPolicy::Kind kind);
AugmentPolicy::Kind policy_kind_from_name(const std::string& name);
std::string policy_name(AugmentPolicy::Kind kind);

struct MixSpec {
    float real_fraction = 1.f;  // rho in (0,1]
    AugmentPolicy policy;
    bool stratified = true;
};

// w' = w + eps, eps ~ N(0, (sigma * s_i)^2) per dimension, s from WStats.
gan::LatentBatch perturb(const gan::LatentBatch& w, float sigma, const gan::WStats& stats,
                         uint64_t seed);

// Project one image, then emit k reconstructions from perturbed or
// traversed latents (policy decides). Traversal emits one image per grid
// coefficient (first k).
std::vector<Image> synth_from_real(const Image& image, const gan::GanBundle& bundle,
                                   const gan::WStats& stats, const inversion::ProjectionConfig& pcfg,
                                   const AugmentPolicy& policy,
                                   const semdir::DirectionVector* direction = nullptr);

// Reconstructions for precomputed latents (one per policy output); exposed
// so build_mix can reuse a latent table instead of re-projecting.
std::vector<Image> synth_from_latent(const gan::LatentBatch& w, const gan::GanBundle& bundle,
                                     const gan::WStats& stats, const AugmentPolicy& policy,
                                     const semdir::DirectionVector* direction, uint64_t seed);

// k affine-transformed copies: rotation within +-15 deg, shear within
// +-10 deg, additive Gaussian pixel noise (std 0.02), clamped to [0,1].
struct AffineParams {
    float max_rotate_deg = 15.f;
    float max_shear_deg = 10.f;
    float noise_std = 0.02f;
};
std::vector<Image> affine_augment(const Image& image, const AugmentPolicy& policy,
                                  const AffineParams& params = {});

// Everything build_mix needs beyond the manifest. Latents/gan may be null
// for kNone/kAffine policies.
struct AugmentContext {
    const gan::GanBundle* bundle = nullptr;
    const gan::WStats* stats = nullptr;
    const inversion::LatentTable* latents = nullptr;
    const semdir::DirectionVector* direction = nullptr;
};

// Per class keep floor(rho * n) real records (seeded subsample), then append
// k synthetics per retained real. Synthetic images are written through the
// store under `synth_dir`; labels copy the source record; source ids are
// recorded for fold-hygiene audits.
DatasetManifest build_mix(const DatasetManifest& train, const MixSpec& spec,
                          const AugmentContext& ctx, ImageStore& store,
                          const std::string& synth_dir);

}  // namespace dapper::augment
