#include "dapper/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "dapper/augmenter.hpp"
#include "dapper/evalhost.hpp"
#include "dapper/report.hpp"
#include "dapper/saliency.hpp"
#include "dapper/scenegen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dapper::pipeline {

Context::Context(ExperimentConfig config, std::string out)
    : cfg(std::move(config)),
      out_dir(std::move(out)),
      ledger(RunLedger::open((fs::path(out_dir) / "ledger.jsonl").string())),
      store(out_dir) {
    fs::create_directories(out_dir);
}

std::string Context::abs(const std::string& rel) const { return (fs::path(out_dir) / rel).string(); }

bool Context::artifact_exists(const std::string& rel) const { return fs::exists(abs(rel)); }

bool is_stage(const std::string& name) {
    for (const char* s : kStages)
        if (name == s) return true;
    return false;
}

namespace {

uint64_t input_fingerprint(const Context& ctx, const json& section,
                           const std::vector<std::string>& upstream) {
    uint64_t h = stable_hash(section.dump());
    h = stable_hash_u64(ctx.cfg.master_seed, h);
    for (const auto& rel : upstream) {
        h = stable_hash(rel, h);
        h = stable_hash_u64(hash_file(ctx.abs(rel)), h);
    }
    return h;
}

void require_artifact(const Context& ctx, const std::string& rel, const char* producing_stage) {
    if (!ctx.artifact_exists(rel))
        throw StageError("missing artifact " + rel + "; run stage '" + producing_stage + "' first");
}

template <typename Fn>
std::string cached_stage(Context& ctx, const std::string& stage, uint64_t input_hash,
                         const std::vector<std::string>& outputs, Fn&& body) {
    if (!ctx.force) {
        if (const LedgerEntry* prev = ctx.ledger.last_ok(stage); prev && prev->input_hash == input_hash) {
            bool intact = !outputs.empty();
            for (const auto& rel : outputs) {
                auto it = prev->outputs.find(rel);
                if (it == prev->outputs.end() || !ctx.artifact_exists(rel) ||
                    hash_file(ctx.abs(rel)) != it->second) {
                    intact = false;
                    break;
                }
            }
            if (intact) {
                LedgerEntry e;
                e.stage = stage;
                e.status = "cached";
                e.input_hash = input_hash;
                e.outputs = prev->outputs;
                e.wall_time_s = 0.0;
                ctx.ledger.append(e);
                return "cached";
            }
        }
    }

    const auto t0 = std::chrono::steady_clock::now();
    try {
        body();
    } catch (...) {
        LedgerEntry e;
        e.stage = stage;
        e.status = "failed";
        e.input_hash = input_hash;
        e.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        ctx.ledger.append(e);
        throw;
    }

    LedgerEntry e;
    e.stage = stage;
    e.status = "ok";
    e.input_hash = input_hash;
    for (const auto& rel : outputs) e.outputs[rel] = hash_file(ctx.abs(rel));
    e.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ctx.ledger.append(e);
    return "ok";
}

}  // namespace

// ---------------------------------------------------------------------------
// loaders
// ---------------------------------------------------------------------------

DatasetManifest load_source_manifest(const Context& ctx) {
    require_artifact(ctx, paths::kSourceManifest, "render");
    return DatasetManifest::load(ctx.abs(paths::kSourceManifest));
}

DatasetManifest load_target_manifest(const Context& ctx) {
    require_artifact(ctx, paths::kTargetManifest, "render");
    return DatasetManifest::load(ctx.abs(paths::kTargetManifest));
}

gan::GanBundle load_gan(const Context& ctx) {
    require_artifact(ctx, paths::kGanGen, "train-gan");
    require_artifact(ctx, paths::kGanDisc, "train-gan");
    return gan::GanBundle::load(ctx.abs(paths::kGanGen), ctx.abs(paths::kGanDisc));
}

gan::WStats load_wstats(const Context& ctx) {
    require_artifact(ctx, paths::kWStats, "train-gan");
    return gan::WStats::load(ctx.abs(paths::kWStats));
}

inversion::LatentTable load_latents(const Context& ctx) {
    require_artifact(ctx, paths::kLatentTable, "project");
    return inversion::LatentTable::load(ctx.abs(paths::kLatentTable));
}

semdir::PoseOracle load_oracle(const Context& ctx) {
    require_artifact(ctx, paths::kPoseOracle, "discover-direction");
    return semdir::PoseOracle::load(ctx.abs(paths::kPoseOracle));
}

semdir::DirectionVector load_direction(const Context& ctx) {
    require_artifact(ctx, paths::kDirection, "discover-direction");
    return semdir::DirectionVector::load(ctx.abs(paths::kDirection));
}

inversion::ProjectionConfig projection_config(const ExperimentConfig& cfg, bool sweep_budget) {
    inversion::ProjectionConfig p;
    p.steps = sweep_budget ? cfg.projection.sweep_steps : cfg.projection.steps;
    p.space = cfg.projection.space == "w+" ? gan::LatentSpace::WPlus : gan::LatentSpace::W;
    p.lr_peak = cfg.projection.lr_peak;
    p.lambda_pixel = cfg.projection.lambda_pixel;
    p.lambda_feat = cfg.projection.lambda_feat;
    p.seed = cfg.stage_seed("project");
    return p;
}

std::vector<float> traverse_coefficients(const ExperimentConfig& cfg,
                                         const semdir::DirectionVector& dir, int k) {
    const float dpu = dir.degrees_per_unit;
    if (dpu == 0.f) throw StageError("direction is not calibrated (degrees_per_unit = 0)");
    const float unit = cfg.direction.traverse_unit_deg / std::abs(dpu);
    std::vector<float> out;
    for (int j = 0; j < k; ++j) {
        const int level = j / 2 + 1;
        out.push_back((j % 2 == 0 ? -1.f : 1.f) * unit * float(level));
    }
    return out;
}

// ---------------------------------------------------------------------------
// stages
// ---------------------------------------------------------------------------

namespace {

std::string stage_render(Context& ctx) {
    json section = ctx.cfg.to_json()["scenegen"];
    std::vector<std::string> outputs = {paths::kSourceManifest, paths::kTargetManifest};
    const bool has_import = !ctx.cfg.scenegen.import_path.empty();
    if (has_import) outputs.push_back(paths::kImportManifest);

    return cached_stage(ctx, "render", input_fingerprint(ctx, section, {}), outputs, [&] {
        DatasetManifest source = scenegen::make_source_dataset(
            ctx.cfg.scenegen.source_n, ctx.cfg.stage_seed("render-source"), ctx.store, "images/src");
        source.save(ctx.abs(paths::kSourceManifest));

        DatasetManifest target = scenegen::make_target_dataset(ctx.cfg.scenegen.target_n_per_class,
                                                               ctx.cfg.stage_seed("render-target"),
                                                               ctx.store, "images/tgt");
        target.save(ctx.abs(paths::kTargetManifest));

        if (has_import) {
            const auto rule = ctx.cfg.scenegen.import_rule == "sidecar"
                                  ? scenegen::LabelRule::kSidecar
                                  : scenegen::LabelRule::kSubdir;
            DatasetManifest imported =
                scenegen::import_folder(ctx.cfg.scenegen.import_path, rule, ctx.store, "images/imp");
            imported.save(ctx.abs(paths::kImportManifest));
        }
    });
}

std::string stage_train_gan(Context& ctx) {
    json section = ctx.cfg.to_json()["gan"];
    const std::vector<std::string> upstream = {paths::kSourceManifest};
    require_artifact(ctx, paths::kSourceManifest, "render");
    const std::vector<std::string> outputs = {paths::kGanGen, paths::kGanDisc, paths::kWStats,
                                              paths::kGanLossLog, paths::kGanGrid};

    return cached_stage(ctx, "train-gan", input_fingerprint(ctx, section, upstream), outputs, [&] {
        const DatasetManifest source = load_source_manifest(ctx);
        gan::GanBundle bundle = gan::init_gan(ctx.cfg.stage_seed("gan-init"));

        gan::GanTrainConfig tc;
        tc.steps = ctx.cfg.gan.steps;
        tc.batch_size = ctx.cfg.gan.batch_size;
        tc.lr = ctx.cfg.gan.lr;
        tc.beta1 = ctx.cfg.gan.beta1;
        tc.beta2 = ctx.cfg.gan.beta2;
        tc.r1_gamma = ctx.cfg.gan.r1_gamma;
        tc.seed = ctx.cfg.stage_seed("gan-train");
        const gan::GanTrainLog log = gan::train_gan(bundle, source, ctx.store, tc);

        fs::create_directories(fs::path(ctx.abs(paths::kGanGen)).parent_path());
        fs::create_directories(fs::path(ctx.abs(paths::kGanLossLog)).parent_path());
        bundle.save(ctx.abs(paths::kGanGen), ctx.abs(paths::kGanDisc));
        log.save_json(ctx.abs(paths::kGanLossLog));

        const gan::WStats stats =
            gan::estimate_w_stats(bundle, ctx.cfg.gan.wstats_n, ctx.cfg.stage_seed("w-stats"));
        stats.save(ctx.abs(paths::kWStats));

        // sample grid for eyeballing training quality
        Rng rng(ctx.cfg.stage_seed("gan-grid"));
        Array z({16, gan::kLatentDim});
        for (auto& v : z.data) v = rng.normalf();
        const Array imgs = gan::synthesize(bundle, gan::map_z(bundle, z));
        std::vector<Image> tiles;
        for (int i = 0; i < 16; ++i) tiles.push_back(model_to_image(imgs, i));
        fs::create_directories(fs::path(ctx.abs(paths::kGanGrid)).parent_path());
        write_png(ctx.abs(paths::kGanGrid), report::image_grid(tiles, 4));
    });
}

std::string stage_project(Context& ctx) {
    json section = ctx.cfg.to_json()["projection"];
    require_artifact(ctx, paths::kTargetManifest, "render");
    require_artifact(ctx, paths::kGanGen, "train-gan");
    const std::vector<std::string> upstream = {paths::kTargetManifest, paths::kGanGen,
                                               paths::kWStats};
    const std::vector<std::string> outputs = {paths::kLatentTable};

    return cached_stage(ctx, "project", input_fingerprint(ctx, section, upstream), outputs, [&] {
        const DatasetManifest target = load_target_manifest(ctx);
        const gan::GanBundle bundle = load_gan(ctx);
        const gan::WStats stats = load_wstats(ctx);
        const inversion::ProjectionConfig pcfg = projection_config(ctx.cfg, /*sweep_budget=*/true);
        const auto stats_out = inversion::batch_project(target, ctx.store, bundle, stats, pcfg,
                                                        ctx.abs(paths::kLatentTable));
        std::fprintf(stderr, "project: %d projected, %d resumed, %d failed\n", stats_out.projected,
                     stats_out.skipped, stats_out.failed);
    });
}

std::string stage_discover_direction(Context& ctx) {
    json section = ctx.cfg.to_json()["direction"];
    require_artifact(ctx, paths::kSourceManifest, "render");
    require_artifact(ctx, paths::kGanGen, "train-gan");
    const std::vector<std::string> upstream = {paths::kSourceManifest, paths::kGanGen, paths::kWStats};
    const std::vector<std::string> outputs = {paths::kPoseOracle, paths::kDirection,
                                              paths::kTraverseStrip};

    return cached_stage(ctx, "discover-direction", input_fingerprint(ctx, section, upstream), outputs,
                        [&] {
        const gan::GanBundle bundle = load_gan(ctx);

        // pose oracle trained on freshly rendered pose-labeled scenes
        MemoryImageStore oracle_store;
        const DatasetManifest oracle_data = scenegen::make_source_dataset(
            ctx.cfg.direction.oracle_train_n, ctx.cfg.stage_seed("oracle-data"), oracle_store,
            "oracle");
        semdir::PoseOracleConfig ocfg;
        ocfg.epochs = ctx.cfg.direction.oracle_epochs;
        ocfg.mae_gate_deg = ctx.cfg.direction.oracle_mae_gate_deg;
        ocfg.seed = ctx.cfg.stage_seed("oracle-train");
        const semdir::PoseOracle oracle = semdir::train_pose_oracle(oracle_data, oracle_store, ocfg);
        fs::create_directories(fs::path(ctx.abs(paths::kPoseOracle)).parent_path());
        oracle.save(ctx.abs(paths::kPoseOracle));
        std::fprintf(stderr, "discover-direction: oracle val MAE %.2f deg\n",
                     double(oracle.val_mae_deg));

        // corpus -> filter -> annotate -> probe -> threshold -> calibrate
        const auto corpus = semdir::sample_corpus(bundle, ctx.cfg.direction.corpus_n,
                                                  ctx.cfg.stage_seed("corpus"));
        const auto kept = semdir::filter_corpus(corpus, ctx.cfg.direction.filter_min_fg,
                                                ctx.cfg.direction.filter_max_fg);
        std::fprintf(stderr, "discover-direction: filter kept %zu / %zu\n", kept.size(),
                     corpus.size());

        std::vector<Array> latents;
        std::vector<float> poses;
        {
            std::vector<Image> imgs;
            for (const auto& s : kept) {
                latents.push_back(s.w);
                imgs.push_back(s.image);
            }
            const int batch = 256;
            for (size_t start = 0; start < imgs.size(); start += batch) {
                const size_t b = std::min<size_t>(batch, imgs.size() - start);
                std::vector<Image> chunk(imgs.begin() + long(start), imgs.begin() + long(start + b));
                const auto pred = oracle.predict(images_to_model_batch(chunk));
                poses.insert(poses.end(), pred.begin(), pred.end());
            }
        }

        const double lambda = ctx.cfg.direction.probe_lambda >= 0.0
                                  ? ctx.cfg.direction.probe_lambda
                                  : semdir::default_probe_lambda(latents);
        const semdir::PoseProbe probe = semdir::fit_probe(latents, poses, lambda);
        std::fprintf(stderr, "discover-direction: probe R2 %.3f (lambda %.4g, n %d)\n", probe.r2,
                     probe.lambda, probe.corpus_size);

        semdir::DirectionVector dir =
            semdir::extract_direction(probe, ctx.cfg.direction.threshold_ratio);
        dir.degrees_per_unit = semdir::calibrate(dir, bundle, oracle, ctx.cfg.direction.calibrate_n,
                                                 ctx.cfg.stage_seed("calibrate"));
        fs::create_directories(fs::path(ctx.abs(paths::kDirection)).parent_path());
        dir.save(ctx.abs(paths::kDirection));
        std::fprintf(stderr, "discover-direction: %d dims kept, %.2f deg/unit\n", dir.kept_count(),
                     double(dir.degrees_per_unit));

        // traversal strip over random corpus latents (coefficient grid is in
        // calibrated degrees)
        std::vector<Image> tiles;
        const int strip_rows = 4;
        Rng rng(ctx.cfg.stage_seed("strip"));
        for (int r = 0; r < strip_rows; ++r) {
            Array z({1, gan::kLatentDim});
            for (auto& v : z.data) v = rng.normalf();
            const gan::LatentBatch w = gan::map_z(bundle, z);
            for (float deg : ctx.cfg.direction.coefficient_grid) {
                const float c = deg / dir.degrees_per_unit;
                tiles.push_back(model_to_image(gan::synthesize(bundle, semdir::traverse(w, dir, c)), 0));
            }
        }
        fs::create_directories(fs::path(ctx.abs(paths::kTraverseStrip)).parent_path());
        write_png(ctx.abs(paths::kTraverseStrip),
                  report::image_grid(tiles, int(ctx.cfg.direction.coefficient_grid.size())));
    });
}

augment::AugmentPolicy policy_from_cfg(const Context& ctx, augment::AugmentPolicy::Kind kind,
                                       const semdir::DirectionVector* dir) {
    augment::AugmentPolicy p;
    p.kind = kind;
    p.sigma = ctx.cfg.augmentation.sigma;
    p.k = ctx.cfg.augmentation.k;
    p.seed = ctx.cfg.stage_seed("augment-policy");
    if (kind == augment::AugmentPolicy::Kind::kTraverse && dir)
        p.coefficients = traverse_coefficients(ctx.cfg, *dir, p.k);
    return p;
}

std::string stage_augment(Context& ctx) {
    json section = ctx.cfg.to_json()["augmentation"];
    require_artifact(ctx, paths::kTargetManifest, "render");
    require_artifact(ctx, paths::kGanGen, "train-gan");
    require_artifact(ctx, paths::kLatentTable, "project");
    std::vector<std::string> upstream = {paths::kTargetManifest, paths::kGanGen, paths::kLatentTable};
    const auto kind = augment::policy_kind_from_name(ctx.cfg.augmentation.policy);
    if (kind == augment::AugmentPolicy::Kind::kTraverse) {
        require_artifact(ctx, paths::kDirection, "discover-direction");
        upstream.push_back(paths::kDirection);
    }
    const std::vector<std::string> outputs = {paths::kAugmentedManifest};

    return cached_stage(ctx, "augment", input_fingerprint(ctx, section, upstream), outputs, [&] {
        const DatasetManifest target = load_target_manifest(ctx);
        const gan::GanBundle bundle = load_gan(ctx);
        const gan::WStats stats = load_wstats(ctx);
        const inversion::LatentTable latents = load_latents(ctx);
        semdir::DirectionVector dir;
        const bool needs_dir = kind == augment::AugmentPolicy::Kind::kTraverse;
        if (needs_dir) dir = load_direction(ctx);

        augment::AugmentContext actx;
        actx.bundle = &bundle;
        actx.stats = &stats;
        actx.latents = &latents;
        actx.direction = needs_dir ? &dir : nullptr;

        augment::MixSpec spec;
        spec.real_fraction = ctx.cfg.augmentation.rho;
        spec.policy = policy_from_cfg(ctx, kind, needs_dir ? &dir : nullptr);

        const DatasetManifest mixed =
            augment::build_mix(target, spec, actx, ctx.store, "images/synth");
        mixed.save(ctx.abs(paths::kAugmentedManifest));
    });
}

augment::AugmentContext make_augment_context(const Context& ctx, const gan::GanBundle* bundle,
                                             const gan::WStats* stats,
                                             const inversion::LatentTable* latents,
                                             const semdir::DirectionVector* dir) {
    augment::AugmentContext actx;
    actx.bundle = bundle;
    actx.stats = stats;
    actx.latents = latents;
    actx.direction = dir;
    return actx;
}

std::string stage_sweep(Context& ctx) {
    json section = ctx.cfg.to_json();
    section = json{{"sweep", section["sweep"]},
                   {"classifier", section["classifier"]},
                   {"augmentation", section["augmentation"]}};
    require_artifact(ctx, paths::kTargetManifest, "render");
    require_artifact(ctx, paths::kGanGen, "train-gan");
    require_artifact(ctx, paths::kLatentTable, "project");
    std::vector<std::string> upstream = {paths::kTargetManifest, paths::kGanGen, paths::kLatentTable};
    const bool wants_traverse = std::count(ctx.cfg.sweep.policies.begin(),
                                           ctx.cfg.sweep.policies.end(), "traverse") > 0;
    if (wants_traverse) {
        require_artifact(ctx, paths::kDirection, "discover-direction");
        upstream.push_back(paths::kDirection);
    }
    const std::vector<std::string> outputs = {paths::kSweepCsv, paths::kSweepSummary};

    return cached_stage(ctx, "sweep", input_fingerprint(ctx, section, upstream), outputs, [&] {
        const DatasetManifest target = load_target_manifest(ctx);
        const gan::GanBundle bundle = load_gan(ctx);
        const gan::WStats stats = load_wstats(ctx);
        const inversion::LatentTable latents = load_latents(ctx);
        semdir::DirectionVector dir;
        if (wants_traverse) dir = load_direction(ctx);

        const auto actx =
            make_augment_context(ctx, &bundle, &stats, &latents, wants_traverse ? &dir : nullptr);

        augment::MixSpec base;
        base.policy.sigma = ctx.cfg.augmentation.sigma;
        base.policy.k = ctx.cfg.augmentation.k;
        base.policy.seed = ctx.cfg.stage_seed("sweep-mix");
        if (wants_traverse)
            base.policy.coefficients = traverse_coefficients(ctx.cfg, dir, ctx.cfg.augmentation.k);

        eval::ClassifierConfig ccfg;
        ccfg.epochs = ctx.cfg.classifier.epochs;
        ccfg.batch_size = ctx.cfg.classifier.batch_size;
        ccfg.lr = ctx.cfg.classifier.lr;
        ccfg.seed = ctx.cfg.stage_seed("classifier");

        const eval::SweepReport report =
            eval::reduction_sweep(target, ctx.cfg.sweep.fractions, ctx.cfg.sweep.policies,
                                  ctx.cfg.sweep.folds, ctx.cfg.stage_seed("sweep"), base, actx,
                                  ctx.store, ccfg);
        fs::create_directories(fs::path(ctx.abs(paths::kSweepCsv)).parent_path());
        report.save_csv(ctx.abs(paths::kSweepCsv));
        report.save_summary_json(ctx.abs(paths::kSweepSummary));
    });
}

std::string stage_gradcam(Context& ctx) {
    json section = ctx.cfg.to_json();
    section = json{{"classifier", section["classifier"]},
                   {"augmentation", section["augmentation"]},
                   {"report", section["report"]}};
    require_artifact(ctx, paths::kTargetManifest, "render");
    require_artifact(ctx, paths::kGanGen, "train-gan");
    require_artifact(ctx, paths::kLatentTable, "project");
    const std::vector<std::string> upstream = {paths::kTargetManifest, paths::kGanGen,
                                               paths::kLatentTable};
    const std::vector<std::string> outputs = {paths::kSaliencyCsv, paths::kSaliencySummary,
                                              paths::kReportGradcam};

    return cached_stage(ctx, "gradcam", input_fingerprint(ctx, section, upstream), outputs, [&] {
        const DatasetManifest target = load_target_manifest(ctx);
        const gan::GanBundle bundle = load_gan(ctx);
        const gan::WStats stats = load_wstats(ctx);
        const inversion::LatentTable latents = load_latents(ctx);

        // fixed 80/20 split: fold 0 of 5 is the saliency test fold
        const std::vector<int> fold =
            eval::stratified_folds(target, 5, ctx.cfg.stage_seed("gradcam-split"));
        DatasetManifest train, test;
        train.label_set = test.label_set = target.label_set;
        train.split = "saliency-train";
        test.split = "saliency-test";
        for (size_t i = 0; i < target.records.size(); ++i)
            (fold[i] == 0 ? test : train).records.push_back(target.records[i]);

        eval::ClassifierConfig ccfg;
        ccfg.epochs = ctx.cfg.classifier.epochs;
        ccfg.batch_size = ctx.cfg.classifier.batch_size;
        ccfg.lr = ctx.cfg.classifier.lr;
        ccfg.seed = ctx.cfg.stage_seed("gradcam-train");

        const auto actx = make_augment_context(ctx, &bundle, &stats, &latents, nullptr);

        augment::MixSpec raw_spec;  // real data only
        raw_spec.real_fraction = 1.f;
        raw_spec.policy.kind = augment::AugmentPolicy::Kind::kNone;

        augment::MixSpec aug_spec;
        aug_spec.real_fraction = 1.f;
        aug_spec.policy.kind = augment::AugmentPolicy::Kind::kPerturb;
        aug_spec.policy.sigma = ctx.cfg.augmentation.sigma;
        aug_spec.policy.k = ctx.cfg.augmentation.k;
        aug_spec.policy.seed = ctx.cfg.stage_seed("gradcam-mix");

        MemoryImageStore mem(&ctx.store);
        const DatasetManifest raw_train = augment::build_mix(train, raw_spec, actx, mem, "gc-raw");
        const DatasetManifest aug_train = augment::build_mix(train, aug_spec, actx, mem, "gc-aug");

        const eval::ClassifierBundle raw_cls = eval::train_classifier(raw_train, mem, ccfg);
        const eval::ClassifierBundle aug_cls = eval::train_classifier(aug_train, mem, ccfg);

        std::ofstream csv(ctx.abs(paths::kSaliencyCsv));
        fs::create_directories(fs::path(ctx.abs(paths::kSaliencyCsv)).parent_path());
        csv.open(ctx.abs(paths::kSaliencyCsv), std::ios::trunc);
        csv << "id,arm,on_object_fraction\n";

        const int n_show = std::min<int>(ctx.cfg.report.gradcam_samples, int(test.records.size()));
        double raw_sum = 0.0, aug_sum = 0.0;
        int counted = 0;
        std::vector<Image> pair_tiles;
        for (int i = 0; i < int(test.records.size()); ++i) {
            const ManifestRecord& r = test.records[size_t(i)];
            if (r.mask_path.empty()) continue;
            const Image img = ctx.store.get(r.path);
            const Image mask = ctx.store.get(r.mask_path);
            const auto raw_map = saliency::gradcam(raw_cls, img, *r.label);
            const auto aug_map = saliency::gradcam(aug_cls, img, *r.label);
            const double raw_frac = saliency::on_object_fraction(raw_map.upsampled, mask);
            const double aug_frac = saliency::on_object_fraction(aug_map.upsampled, mask);
            raw_sum += raw_frac;
            aug_sum += aug_frac;
            ++counted;
            csv << r.id << ",raw," << raw_frac << "\n" << r.id << ",augmented," << aug_frac << "\n";
            if (int(pair_tiles.size()) / 3 < n_show) {
                pair_tiles.push_back(img);
                pair_tiles.push_back(saliency::overlay(raw_map, img));
                pair_tiles.push_back(saliency::overlay(aug_map, img));
            }
        }
        csv.close();

        json summary;
        summary["samples"] = counted;
        summary["raw_mean_on_object"] = counted ? raw_sum / counted : 0.0;
        summary["augmented_mean_on_object"] = counted ? aug_sum / counted : 0.0;
        summary["delta"] = counted ? (aug_sum - raw_sum) / counted : 0.0;
        std::ofstream sj(ctx.abs(paths::kSaliencySummary), std::ios::trunc);
        sj << summary.dump(2) << '\n';

        fs::create_directories(fs::path(ctx.abs(paths::kReportGradcam)).parent_path());
        write_png(ctx.abs(paths::kReportGradcam), report::image_grid(pair_tiles, 3));
    });
}

std::string stage_report(Context& ctx) {
    json section = ctx.cfg.to_json()["report"];
    require_artifact(ctx, paths::kSweepCsv, "sweep");
    require_artifact(ctx, paths::kSweepSummary, "sweep");
    require_artifact(ctx, paths::kSaliencySummary, "gradcam");
    require_artifact(ctx, paths::kDirection, "discover-direction");
    require_artifact(ctx, paths::kLatentTable, "project");
    const std::vector<std::string> upstream = {paths::kSweepCsv, paths::kSweepSummary,
                                               paths::kSaliencySummary, paths::kDirection,
                                               paths::kLatentTable};
    const std::vector<std::string> outputs = {paths::kReportSummary, paths::kReportCurves,
                                              paths::kReportStrip};

    return cached_stage(ctx, "report", input_fingerprint(ctx, section, upstream), outputs, [&] {
        // rebuild the sweep report from its CSV
        eval::SweepReport sweep;
        sweep.folds = ctx.cfg.sweep.folds;
        sweep.fractions = ctx.cfg.sweep.fractions;
        sweep.policies = ctx.cfg.sweep.policies;
        {
            std::ifstream in(ctx.abs(paths::kSweepCsv));
            std::string line;
            std::getline(in, line);  // header
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                eval::SweepRow row;
                char policy[64];
                int failed = 0;
                if (std::sscanf(line.c_str(), "%f,%63[^,],%d,%lf,%d,%d,%d", &row.fraction, policy,
                                &row.fold, &row.accuracy, &row.n_real, &row.n_synth, &failed) == 7) {
                    row.policy = policy;
                    row.failed = failed != 0;
                    sweep.rows.push_back(std::move(row));
                }
            }
        }

        fs::create_directories(fs::path(ctx.abs(paths::kReportCurves)).parent_path());
        {
            std::ofstream svg(ctx.abs(paths::kReportCurves), std::ios::trunc);
            svg << report::sweep_curves_svg(sweep);
        }

        // coefficient strip over projected target latents (Fig. 5 analog)
        const semdir::DirectionVector dir = load_direction(ctx);
        const gan::GanBundle bundle = load_gan(ctx);
        const inversion::LatentTable latents = load_latents(ctx);
        const DatasetManifest target = load_target_manifest(ctx);
        std::vector<Image> tiles;
        int shown = 0;
        for (const auto& rec : target.records) {
            if (shown >= ctx.cfg.report.strip_samples) break;
            if (!latents.contains(rec.id)) continue;
            const gan::LatentBatch w = latents.latent(rec.id);
            for (float deg : ctx.cfg.direction.coefficient_grid) {
                const float c = deg / dir.degrees_per_unit;
                tiles.push_back(model_to_image(gan::synthesize(bundle, semdir::traverse(w, dir, c)), 0));
            }
            ++shown;
        }
        if (tiles.empty()) throw StageError("report: no projected latents available for the strip");
        write_png(ctx.abs(paths::kReportStrip),
                  report::image_grid(tiles, int(ctx.cfg.direction.coefficient_grid.size())));

        // summary: config echo + sweep cells + saliency means + direction
        json summary;
        summary["config"] = ctx.cfg.to_json();
        {
            std::ifstream in(ctx.abs(paths::kSweepSummary));
            json sj;
            in >> sj;
            summary["sweep"] = sj;
        }
        {
            std::ifstream in(ctx.abs(paths::kSaliencySummary));
            json sj;
            in >> sj;
            summary["saliency"] = sj;
        }
        summary["direction"] = {{"degrees_per_unit", dir.degrees_per_unit},
                                {"kept_dimensions", dir.kept_count()},
                                {"threshold_ratio", dir.threshold_ratio}};
        summary["coefficient_grid"] = ctx.cfg.direction.coefficient_grid;

        // headline comparison: accuracy at (0.7, perturb) vs (1.0, none)
        auto have_cell = [&](float f, const std::string& p) {
            for (const auto& r : sweep.rows)
                if (!r.failed && r.policy == p && std::abs(r.fraction - f) < 1e-6) return true;
            return false;
        };
        if (have_cell(0.7f, "perturb") && have_cell(1.0f, "none")) {
            summary["headline"] = {
                {"acc_070_perturb", sweep.cell_mean(0.7f, "perturb")},
                {"acc_100_none", sweep.cell_mean(1.0f, "none")},
                {"delta", sweep.cell_mean(0.7f, "perturb") - sweep.cell_mean(1.0f, "none")}};
        }
        std::ofstream out(ctx.abs(paths::kReportSummary), std::ios::trunc);
        out << summary.dump(2) << '\n';
    });
}

}  // namespace

std::string run_stage(Context& ctx, const std::string& stage) {
    if (stage == "render") return stage_render(ctx);
    if (stage == "train-gan") return stage_train_gan(ctx);
    if (stage == "project") return stage_project(ctx);
    if (stage == "discover-direction") return stage_discover_direction(ctx);
    if (stage == "augment") return stage_augment(ctx);
    if (stage == "sweep") return stage_sweep(ctx);
    if (stage == "gradcam") return stage_gradcam(ctx);
    if (stage == "report") return stage_report(ctx);
    throw ConfigError("unknown stage: " + stage);
}

}  // namespace dapper::pipeline
