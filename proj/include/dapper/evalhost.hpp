#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dapper/augmenter.hpp"
#include "dapper/manifest.hpp"
#include "dapper/numerics.hpp"

namespace dapper::eval {

inline constexpr int kClasses = 10;
inline constexpr int kFinalConvChannels = 64;
inline constexpr int kFinalConvSize = 4;

struct ClassifierConfig {
    int epochs = 30;
    int batch_size = 32;
    float lr = 1e-3f;
    uint64_t seed = 0;
};

struct ClassifierBundle {
    ParamStore params;
    std::vector<std::string> label_set;
    std::vector<float> loss_history;  // mean CE per epoch

    void save(const std::string& path) const;
    static ClassifierBundle load(const std::string& path, std::vector<std::string> label_set);
};

// Forward pass; when `final_conv` is non-null it receives the
// post-activation final convolution maps [N,64,4,4] (Grad-CAM input).
Array classifier_logits(const ClassifierBundle& bundle, const Array& images,
                        Array* final_conv = nullptr);

// Cross-entropy training with a fixed epoch budget; deterministic given the
// seed. Throws when fewer than two classes are present.
ClassifierBundle train_classifier(const DatasetManifest& train, const ImageStore& store,
                                  const ClassifierConfig& config);

struct EvalResult {
    double accuracy = 0.0;
    std::vector<int> confusion;  // row-major [true][pred], kClasses^2
    int total = 0;

    int at(int truth, int pred) const { return confusion[size_t(truth) * kClasses + size_t(pred)]; }
};

EvalResult evaluate(const ClassifierBundle& bundle, const DatasetManifest& test,
                    const ImageStore& store);

struct FoldResult {
    int fold = 0;
    double accuracy = 0.0;
    int n_real = 0, n_synth = 0;
    EvalResult eval;
};

struct FoldResults {
    std::vector<FoldResult> folds;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
};

// Stratified k-fold assignment: fold index per record (records without a
// label are rejected).
std::vector<int> stratified_folds(const DatasetManifest& manifest, int k, uint64_t seed);

// Stratified k-fold cross-validation: build_mix on each training portion,
// train, evaluate on the untouched real test fold.
FoldResults cross_validate(const DatasetManifest& target, const augment::MixSpec& spec, int k,
                           uint64_t seed, const augment::AugmentContext& ctx,
                           const ImageStore& store, const ClassifierConfig& ccfg);

struct SweepRow {
    float fraction;
    std::string policy;
    int fold;
    double accuracy;
    int n_real, n_synth;
    bool failed = false;
    std::string error;
};

struct SweepReport {
    std::vector<SweepRow> rows;
    std::vector<float> fractions;
    std::vector<std::string> policies;
    int folds = 0;

    double cell_mean(float fraction, const std::string& policy) const;
    double cell_std(float fraction, const std::string& policy) const;
    void save_csv(const std::string& path) const;
    void save_summary_json(const std::string& path) const;
};

// cross_validate per (fraction, policy) cell; cell failures are recorded
// and the sweep continues.
SweepReport reduction_sweep(const DatasetManifest& target, const std::vector<float>& fractions,
                            const std::vector<std::string>& policies, int k, uint64_t seed,
                            const augment::MixSpec& base_spec, const augment::AugmentContext& ctx,
                            const ImageStore& store, const ClassifierConfig& ccfg);

}  // namespace dapper::eval
