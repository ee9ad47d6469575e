#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dapper/image.hpp"
#include "dapper/manifest.hpp"
#include "dapper/stylegan.hpp"

namespace dapper::inversion {

struct ProjectionConfig {
    int steps = 400;
    gan::LatentSpace space = gan::LatentSpace::W;

    enum class Init { kMeanW, kGiven, kRandomZ };
    Init init = Init::kMeanW;

    // cosine ramp-up/ramp-down around the peak learning rate
    float lr_peak = 0.05f;
    float lr_rampup = 0.05f;    // fraction of steps
    float lr_rampdown = 0.25f;  // fraction of steps

    // latent exploration noise: std starts at noise_scale * mean(W std),
    // decays linearly to zero by noise_decay_end * steps
    float noise_scale = 0.05f;
    float noise_decay_end = 0.75f;

    float lambda_pixel = 1.0f;
    float lambda_feat = 0.1f;
    uint64_t seed = 0;
};

struct ProjectionResult {
    gan::LatentBatch w_star;        // single latent (N=1)
    std::vector<float> loss_curve;  // per-step total loss (noisy evals)
    float best_loss = 0.f;          // loss of the returned latent
    float final_pixel_mse = 0.f;    // pixel MSE of the returned latent
    int best_step = -1;             // -1 = the clean init evaluation won
    double wall_time_s = 0.0;
};

// Optimize latents against the frozen generator for a batch of images.
// Per-sample losses and noise streams are independent, so results are
// bitwise identical to projecting each image alone; the batch exists purely
// for throughput. Throws if the generator weights change (checksum) or the
// loss goes non-finite. `init` may be null (config decides) or hold one
// latent per image; `sample_seeds` overrides the per-sample seed derivation.
std::vector<ProjectionResult> project_batch(const std::vector<Image>& images,
                                            const gan::GanBundle& bundle, const gan::WStats& stats,
                                            const ProjectionConfig& config,
                                            const std::vector<gan::LatentBatch>* init = nullptr,
                                            const std::vector<uint64_t>* sample_seeds = nullptr);

ProjectionResult project(const Image& image, const gan::GanBundle& bundle, const gan::WStats& stats,
                         const ProjectionConfig& config, const gan::LatentBatch* init = nullptr);

// Persisted latent table: one JSONL row per projected sample.
struct LatentTable {
    struct Row {
        std::string sample_id;
        gan::LatentSpace space = gan::LatentSpace::W;
        std::vector<float> w;
        float final_mse = 0.f;
    };
    std::vector<Row> rows;

    bool contains(const std::string& id) const { return index_.count(id) > 0; }
    const Row& row(const std::string& id) const;
    void add(Row row);

    gan::LatentBatch latent(const std::string& id) const;

    void save(const std::string& path) const;
    static LatentTable load(const std::string& path);

private:
    std::map<std::string, size_t> index_;
};

struct BatchProjectStats {
    int projected = 0;  // newly projected this call
    int skipped = 0;    // already present (resume)
    int failed = 0;     // unreadable records
};

// Project every manifest record, resumable via the table at `table_path`.
// Unreadable images are reported and skipped; throws if nothing could be
// projected at all.
BatchProjectStats batch_project(const DatasetManifest& manifest, const ImageStore& store,
                                const gan::GanBundle& bundle, const gan::WStats& stats,
                                const ProjectionConfig& config, const std::string& table_path,
                                int chunk_size = 25);

}  // namespace dapper::inversion
