#pragma once

#include <stdexcept>
#include <string>

#include "dapper/config.hpp"
#include "dapper/inversion.hpp"
#include "dapper/ledger.hpp"
#include "dapper/manifest.hpp"
#include "dapper/semdir.hpp"
#include "dapper/stylegan.hpp"

namespace dapper::pipeline {

// Raised when a stage cannot run (missing upstream artifact, gate missed);
// the CLI maps it to exit code 1.
class StageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Artifact layout under the run directory.
namespace paths {
inline constexpr const char* kSourceManifest = "manifests/source.jsonl";
inline constexpr const char* kTargetManifest = "manifests/target.jsonl";
inline constexpr const char* kImportManifest = "manifests/imported.jsonl";
inline constexpr const char* kGanGen = "checkpoints/gan_g.ckpt";
inline constexpr const char* kGanDisc = "checkpoints/gan_d.ckpt";
inline constexpr const char* kWStats = "checkpoints/wstats.json";
inline constexpr const char* kGanLossLog = "logs/gan_loss.json";
inline constexpr const char* kGanGrid = "samples/gan_grid.png";
inline constexpr const char* kLatentTable = "latents/target_w.jsonl";
inline constexpr const char* kPoseOracle = "checkpoints/pose_oracle.ckpt";
inline constexpr const char* kDirection = "direction/yaw.json";
inline constexpr const char* kTraverseStrip = "samples/traverse_strip.png";
inline constexpr const char* kAugmentedManifest = "manifests/augmented.jsonl";
inline constexpr const char* kSweepCsv = "sweep/results.csv";
inline constexpr const char* kSweepSummary = "sweep/summary.json";
inline constexpr const char* kSaliencyCsv = "saliency/metrics.csv";
inline constexpr const char* kSaliencySummary = "saliency/summary.json";
inline constexpr const char* kReportSummary = "report/summary.json";
inline constexpr const char* kReportCurves = "report/accuracy_vs_fraction.svg";
inline constexpr const char* kReportStrip = "report/coefficient_strip.png";
inline constexpr const char* kReportGradcam = "report/gradcam_pairs.png";
}  // namespace paths

struct Context {
    ExperimentConfig cfg;
    std::string out_dir;
    RunLedger ledger;
    DiskImageStore store;
    bool force = false;

    Context(ExperimentConfig config, std::string out);

    std::string abs(const std::string& rel) const;
    bool artifact_exists(const std::string& rel) const;
};

inline constexpr const char* kStages[] = {"render",  "train-gan", "project", "discover-direction",
                                          "augment", "sweep",     "gradcam", "report"};

bool is_stage(const std::string& name);

// Runs one stage (with ledger caching); returns "ok" or "cached".
std::string run_stage(Context& ctx, const std::string& stage);

// Artifact loaders shared with the acceptance suite. Throw StageError with
// the producing stage's name when the artifact is missing.
DatasetManifest load_source_manifest(const Context& ctx);
DatasetManifest load_target_manifest(const Context& ctx);
gan::GanBundle load_gan(const Context& ctx);
gan::WStats load_wstats(const Context& ctx);
inversion::LatentTable load_latents(const Context& ctx);
semdir::PoseOracle load_oracle(const Context& ctx);
semdir::DirectionVector load_direction(const Context& ctx);

// Projection configs derived from the experiment config.
inversion::ProjectionConfig projection_config(const ExperimentConfig& cfg, bool sweep_budget);

// Traversal coefficients for augmentation: +-1, +-2, ... traversal units
// (one unit = cfg.direction.traverse_unit_deg degrees after calibration),
// truncated to k entries.
std::vector<float> traverse_coefficients(const ExperimentConfig& cfg,
                                         const semdir::DirectionVector& dir, int k);

}  // namespace dapper::pipeline
