#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dapper/image.hpp"
#include "dapper/manifest.hpp"
#include "dapper/numerics.hpp"
#include "dapper/stylegan.hpp"

namespace dapper::semdir {

// ---- pose oracle: small CNN regressor image -> yaw degrees ----------------

struct PoseOracleConfig {
    int epochs = 30;
    int batch_size = 32;
    float lr = 1e-3f;
    float val_fraction = 0.1f;
    float mae_gate_deg = 6.f;  // validation gate; throws when missed
    uint64_t seed = 0;
};

struct PoseOracle {
    ParamStore params;
    float val_mae_deg = 0.f;

    // images [N,3,32,32] in [-1,1] -> yaw degrees [N]
    std::vector<float> predict(const Array& images) const;
    float predict_one(const Image& image) const;

    void save(const std::string& path) const;
    static PoseOracle load(const std::string& path);
};

// Trains on pose-labeled renders; throws with the achieved MAE when the
// validation gate is missed.
PoseOracle train_pose_oracle(const DatasetManifest& labeled, const ImageStore& store,
                             const PoseOracleConfig& config);

// Training-set MAE of an oracle on the given manifest (used by the
// memorization sanity check).
float oracle_mae(const PoseOracle& oracle, const DatasetManifest& manifest, const ImageStore& store);

// ---- synthetic corpus ------------------------------------------------------

struct CorpusSample {
    Array w;      // [64]
    Image image;
};

// n mapped latents and their synthesized images (default n: 25,000 full
// config, 2,500 desk config).
std::vector<CorpusSample> sample_corpus(const gan::GanBundle& bundle, int n, uint64_t seed);

// Foreground fraction: pixels whose color departs from a least-squares
// affine background model (fitted on the image border) by more than a fixed
// distance.
float foreground_fraction(const Image& image);

// Keeps samples whose foreground fraction lies in [min_fg, max_fg].
std::vector<CorpusSample> filter_corpus(const std::vector<CorpusSample>& corpus, float min_fg,
                                        float max_fg);

// ---- linear probe and direction -------------------------------------------

struct PoseProbe {
    std::vector<double> weights;  // [64]
    double bias = 0.0;
    double lambda = 0.0;
    double r2 = 0.0;
    int corpus_size = 0;

    double predict(const float* w64) const;
    double predict(const Array& w) const;  // [64] or [1,64]
};

// Closed-form ridge on centered data. Throws when the system is singular at
// lambda = 0.
PoseProbe fit_probe(const std::vector<Array>& latents, const std::vector<float>& poses,
                    double lambda);

// Scale-invariant default shrinkage: 1e-3 * trace(Xc^T Xc) / 64.
double default_probe_lambda(const std::vector<Array>& latents);

struct DirectionVector {
    Array d;                    // [64], unit L2 norm, masked-out entries exactly 0
    std::vector<uint8_t> mask;  // kept dimensions
    float threshold_ratio = 0.f;
    float degrees_per_unit = 0.f;  // from calibrate(); 0 until calibrated
    std::string attribute = "yaw";

    int kept_count() const;
    void save(const std::string& path) const;
    static DirectionVector load(const std::string& path);
};

// Zero every weight below tau * max |weight|, then L2-normalize the rest.
DirectionVector extract_direction(const PoseProbe& probe, float tau);

// w' = w + c * d. W input shifts the single vector; W+ shifts every block.
gan::LatentBatch traverse(const gan::LatentBatch& w, const DirectionVector& d, float c);

// Median over n latents of [oracle(G(w + c0 d)) - oracle(G(w))] / c0.
float calibrate(const DirectionVector& d, const gan::GanBundle& bundle, const PoseOracle& oracle,
                int n, uint64_t seed, float c0 = 0.5f);

}  // namespace dapper::semdir
