#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dapper/rng.hpp"

namespace dapper {

// Raised for malformed configs; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Versioned experiment configuration. Parsing is strict: unknown keys are
// rejected with their full field path. The master seed deterministically
// derives every stage seed (stage_seed = fnv1a(stage name, fnv1a(master))).
struct ExperimentConfig {
    int schema_version = 1;
    uint64_t master_seed = 1;

    struct Scenegen {
        int source_n = 2500;
        int target_n_per_class = 60;
        std::string import_path;            // optional folder ingestion
        std::string import_rule = "subdir";  // or "sidecar"
    } scenegen;

    struct Gan {
        int steps = 3000;
        int batch_size = 32;
        float lr = 2e-3f;
        float beta1 = 0.0f;
        float beta2 = 0.99f;
        float r1_gamma = 1.0f;
        int wstats_n = 10000;
    } gan;

    struct Projection {
        int steps = 400;
        std::string space = "w";  // "w" | "w+"
        float lr_peak = 0.05f;
        float lambda_pixel = 1.0f;
        float lambda_feat = 0.1f;
        int sweep_steps = 150;  // cheaper budget used when projecting the whole target set
    } projection;

    struct Direction {
        int corpus_n = 2500;
        float filter_min_fg = 0.05f;
        float filter_max_fg = 0.60f;
        double probe_lambda = -1.0;  // < 0: scale-invariant default
        float threshold_ratio = 0.1f;
        int oracle_train_n = 4000;
        int oracle_epochs = 30;
        float oracle_mae_gate_deg = 6.0f;
        int calibrate_n = 64;
        std::vector<float> coefficient_grid = {-30.f, -20.f, 0.f, 20.f, 30.f};
        float traverse_unit_deg = 10.f;  // one traversal unit in degrees
    } direction;

    struct Augmentation {
        float sigma = 0.3f;
        int k = 2;
        float rho = 0.7f;          // real fraction for the standalone augment stage
        std::string policy = "perturb";
    } augmentation;

    struct Classifier {
        int epochs = 30;
        int batch_size = 32;
        float lr = 1e-3f;
    } classifier;

    struct Sweep {
        std::vector<float> fractions = {1.0f, 0.9f, 0.8f, 0.7f, 0.6f, 0.5f};
        std::vector<std::string> policies = {"none", "perturb", "traverse", "affine"};
        int folds = 5;
    } sweep;

    struct Report {
        int strip_samples = 4;
        int gradcam_samples = 24;
    } report;

    uint64_t stage_seed(const std::string& stage) const { return derive_seed(master_seed, stage); }

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::string& path);
    nlohmann::json to_json() const;
};

}  // namespace dapper
