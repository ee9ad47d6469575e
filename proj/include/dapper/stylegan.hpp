#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dapper/array.hpp"
#include "dapper/layers.hpp"
#include "dapper/manifest.hpp"
#include "dapper/numerics.hpp"

namespace dapper::gan {

inline constexpr int kLatentDim = 64;
inline constexpr int kImageSize = 32;
inline constexpr int kImageChannels = 3;
// Style consumers: three upsample blocks (4->8->16->32) plus the 1x1 toRGB.
inline constexpr int kStyleSlots = 4;

enum class LatentSpace { W, WPlus };

// Batch of intermediate latents: [N,64] in W, [N,4,64] in W+.
struct LatentBatch {
    LatentSpace space = LatentSpace::W;
    Array values;

    int count() const { return values.empty() ? 0 : values.shape[0]; }
    static LatentBatch w(Array v) { return {LatentSpace::W, std::move(v)}; }
    static LatentBatch wplus(Array v) { return {LatentSpace::WPlus, std::move(v)}; }
};

// Generator (mapping + synthesis) and discriminator parameter stores.
struct GanBundle {
    ParamStore gen;
    ParamStore disc;

    void save(const std::string& gen_path, const std::string& disc_path) const;
    static GanBundle load(const std::string& gen_path, const std::string& disc_path);
};

GanBundle init_gan(uint64_t seed);

// ---- mapping network: unit-sphere normalize, then 3 dense+lrelu ----------

struct MappingCache {
    Array zn;                  // normalized z
    std::vector<Array> pre;    // dense outputs per layer
    std::vector<Array> post;   // lrelu outputs per layer
};

// z [N,64] -> w [N,64]. z is normalized to the unit hypersphere first.
Array mapping_forward(const ParamStore& gen, const Array& z, MappingCache* cache);
void mapping_backward(ParamStore& gen, const MappingCache& cache, const Array& gw);

// ---- synthesis network ----------------------------------------------------

struct SynthesisCache {
    Array x0;                       // broadcast constant
    std::vector<Array> styles;      // per-slot latent [N,64]
    std::vector<nn::ModConv::Cache> conv;
    std::vector<Array> pre;         // modconv outputs (pre-activation)
    Array rgb_pre;                  // toRGB output before tanh
    Array img;                      // final image
};

// w (W or W+) -> image [N,3,32,32] in [-1,1].
Array synthesis_forward(const ParamStore& gen, const LatentBatch& w, SynthesisCache* cache);
// Accumulates generator grads; returns per-style-slot latent grads summed
// into a LatentBatch matching `w` (W: slot grads summed; W+: per-slot).
LatentBatch synthesis_backward(ParamStore& gen, const SynthesisCache& cache, const Array& gimg,
                               LatentSpace space);

// ---- discriminator --------------------------------------------------------

inline constexpr int kDiscFeatureLayers = 3;

struct DiscCache {
    Array x;                      // input image
    std::vector<Array> pre;       // conv outputs
    std::vector<Array> post;      // lrelu outputs (the perceptual features)
    Array flat;                   // flattened final feature map
    Array score;                  // [N,1]
};

Array disc_forward(const ParamStore& disc, const Array& img, DiscCache* cache);

struct DiscBackwardSpec {
    const Array* gscore = nullptr;                 // [N,1], optional
    std::vector<const Array*> gfeatures;           // per feature layer, optional
    bool accumulate_params = true;
    bool need_input_grad = false;
};
Array disc_backward(ParamStore& disc, const DiscCache& cache, const DiscBackwardSpec& spec);

// ---- ops -------------------------------------------------------------------

// map_z on a batch; the LatentBatch is tagged W.
LatentBatch map_z(const GanBundle& bundle, const Array& z);

// synthesize: forward-only; throws on non-finite latents.
Array synthesize(const GanBundle& bundle, const LatentBatch& w);

struct WStats {
    Array mean;  // [64]
    Array stdev; // [64], sample standard deviation
    int sample_count = 0;

    void save(const std::string& path) const;
    static WStats load(const std::string& path);
};

WStats estimate_w_stats(const GanBundle& bundle, int n, uint64_t seed);

// ---- training ---------------------------------------------------------------

struct GanTrainConfig {
    int steps = 3000;
    int batch_size = 32;
    float lr = 2e-3f;
    float beta1 = 0.0f;
    float beta2 = 0.99f;
    float r1_gamma = 1.0f;
    uint64_t seed = 0;
};

struct GanStepLoss {
    int step;
    float d_loss;
    float g_loss;
    float r1;
};

struct GanTrainLog {
    std::vector<GanStepLoss> steps;
    void save_json(const std::string& path) const;
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(int step, const std::string& what)
        : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what),
          step(step) {}
    int step;
};

// Non-saturating logistic GAN loss with an R1 penalty on real images.
// Requires >= 1000 unlabeled source images.
GanTrainLog train_gan(GanBundle& bundle, const DatasetManifest& source, const ImageStore& store,
                      const GanTrainConfig& config);

// Fraction of a held-out real/fake batch the discriminator classifies
// correctly (used as a non-collapse heuristic).
double disc_accuracy(const GanBundle& bundle, const DatasetManifest& source, const ImageStore& store,
                     int n, uint64_t seed);

// R1 penalty value of the discriminator at a batch of images (exposed for
// tests; gamma/2 * mean squared input-gradient norm).
double r1_penalty_value(const GanBundle& bundle, const Array& images, float gamma);

}  // namespace dapper::gan
