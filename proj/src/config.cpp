#include "dapper/config.hpp"

#include <fstream>
#include <set>

using nlohmann::json;

namespace dapper {

namespace {

void require_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config: " + path + " must be an object");
    for (auto& [key, value] : j.items()) {
        if (!allowed.count(key))
            throw ConfigError("config: unknown key " + (path.empty() ? key : path + "." + key));
    }
}

template <typename T>
void get_to(const json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    require_keys(j, "", {"schema_version", "master_seed", "scenegen", "gan", "projection",
                         "direction", "augmentation", "classifier", "sweep", "report"});
    ExperimentConfig c;
    get_to(j, "schema_version", c.schema_version);
    if (c.schema_version != 1)
        throw ConfigError("config: schema_version must be 1, got " +
                          std::to_string(c.schema_version));
    get_to(j, "master_seed", c.master_seed);

    if (j.contains("scenegen")) {
        const json& s = j.at("scenegen");
        require_keys(s, "scenegen", {"source_n", "target_n_per_class", "import_path", "import_rule"});
        get_to(s, "source_n", c.scenegen.source_n);
        get_to(s, "target_n_per_class", c.scenegen.target_n_per_class);
        get_to(s, "import_path", c.scenegen.import_path);
        get_to(s, "import_rule", c.scenegen.import_rule);
        if (c.scenegen.source_n < 1) throw ConfigError("config: scenegen.source_n must be >= 1");
        if (c.scenegen.target_n_per_class < 10)
            throw ConfigError("config: scenegen.target_n_per_class must be >= 10");
        if (c.scenegen.import_rule != "subdir" && c.scenegen.import_rule != "sidecar")
            throw ConfigError("config: scenegen.import_rule must be subdir or sidecar");
    }
    if (j.contains("gan")) {
        const json& s = j.at("gan");
        require_keys(s, "gan", {"steps", "batch_size", "lr", "beta1", "beta2", "r1_gamma", "wstats_n"});
        get_to(s, "steps", c.gan.steps);
        get_to(s, "batch_size", c.gan.batch_size);
        get_to(s, "lr", c.gan.lr);
        get_to(s, "beta1", c.gan.beta1);
        get_to(s, "beta2", c.gan.beta2);
        get_to(s, "r1_gamma", c.gan.r1_gamma);
        get_to(s, "wstats_n", c.gan.wstats_n);
        if (c.gan.steps < 1) throw ConfigError("config: gan.steps must be >= 1");
        if (c.gan.lr <= 0.f) throw ConfigError("config: gan.lr must be > 0");
    }
    if (j.contains("projection")) {
        const json& s = j.at("projection");
        require_keys(s, "projection",
                     {"steps", "space", "lr_peak", "lambda_pixel", "lambda_feat", "sweep_steps"});
        get_to(s, "steps", c.projection.steps);
        get_to(s, "space", c.projection.space);
        get_to(s, "lr_peak", c.projection.lr_peak);
        get_to(s, "lambda_pixel", c.projection.lambda_pixel);
        get_to(s, "lambda_feat", c.projection.lambda_feat);
        get_to(s, "sweep_steps", c.projection.sweep_steps);
        if (c.projection.steps < 1) throw ConfigError("config: projection.steps must be >= 1");
        if (c.projection.space != "w" && c.projection.space != "w+")
            throw ConfigError("config: projection.space must be \"w\" or \"w+\"");
        if (c.projection.lambda_pixel < 0.f || c.projection.lambda_feat < 0.f)
            throw ConfigError("config: projection loss weights must be >= 0");
    }
    if (j.contains("direction")) {
        const json& s = j.at("direction");
        require_keys(s, "direction",
                     {"corpus_n", "filter_min_fg", "filter_max_fg", "probe_lambda",
                      "threshold_ratio", "oracle_train_n", "oracle_epochs", "oracle_mae_gate_deg",
                      "calibrate_n", "coefficient_grid", "traverse_unit_deg"});
        get_to(s, "corpus_n", c.direction.corpus_n);
        get_to(s, "filter_min_fg", c.direction.filter_min_fg);
        get_to(s, "filter_max_fg", c.direction.filter_max_fg);
        get_to(s, "probe_lambda", c.direction.probe_lambda);
        get_to(s, "threshold_ratio", c.direction.threshold_ratio);
        get_to(s, "oracle_train_n", c.direction.oracle_train_n);
        get_to(s, "oracle_epochs", c.direction.oracle_epochs);
        get_to(s, "oracle_mae_gate_deg", c.direction.oracle_mae_gate_deg);
        get_to(s, "calibrate_n", c.direction.calibrate_n);
        get_to(s, "coefficient_grid", c.direction.coefficient_grid);
        get_to(s, "traverse_unit_deg", c.direction.traverse_unit_deg);
        if (!(c.direction.threshold_ratio >= 0.f && c.direction.threshold_ratio < 1.f))
            throw ConfigError("config: direction.threshold_ratio must be in [0,1)");
    }
    if (j.contains("augmentation")) {
        const json& s = j.at("augmentation");
        require_keys(s, "augmentation", {"sigma", "k", "rho", "policy"});
        get_to(s, "sigma", c.augmentation.sigma);
        get_to(s, "k", c.augmentation.k);
        get_to(s, "rho", c.augmentation.rho);
        get_to(s, "policy", c.augmentation.policy);
        if (c.augmentation.sigma < 0.f) throw ConfigError("config: augmentation.sigma must be >= 0");
        if (c.augmentation.k < 0) throw ConfigError("config: augmentation.k must be >= 0");
        if (!(c.augmentation.rho > 0.f && c.augmentation.rho <= 1.f))
            throw ConfigError("config: augmentation.rho must be in (0,1]");
    }
    if (j.contains("classifier")) {
        const json& s = j.at("classifier");
        require_keys(s, "classifier", {"epochs", "batch_size", "lr"});
        get_to(s, "epochs", c.classifier.epochs);
        get_to(s, "batch_size", c.classifier.batch_size);
        get_to(s, "lr", c.classifier.lr);
        if (c.classifier.epochs < 1) throw ConfigError("config: classifier.epochs must be >= 1");
    }
    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        require_keys(s, "sweep", {"fractions", "policies", "folds"});
        get_to(s, "fractions", c.sweep.fractions);
        get_to(s, "policies", c.sweep.policies);
        get_to(s, "folds", c.sweep.folds);
        for (float f : c.sweep.fractions)
            if (!(f > 0.f && f <= 1.f))
                throw ConfigError("config: sweep.fractions must lie in (0,1]");
        for (const auto& p : c.sweep.policies)
            if (p != "none" && p != "perturb" && p != "traverse" && p != "affine")
                throw ConfigError("config: sweep.policies contains unknown policy " + p);
        if (c.sweep.folds < 2) throw ConfigError("config: sweep.folds must be >= 2");
    }
    if (j.contains("report")) {
        const json& s = j.at("report");
        require_keys(s, "report", {"strip_samples", "gradcam_samples"});
        get_to(s, "strip_samples", c.report.strip_samples);
        get_to(s, "gradcam_samples", c.report.gradcam_samples);
    }
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("config: parse error in " + path + ": " + e.what());
    }
    return from_json(j);
}

nlohmann::json ExperimentConfig::to_json() const {
    json j;
    j["schema_version"] = schema_version;
    j["master_seed"] = master_seed;
    j["scenegen"] = {{"source_n", scenegen.source_n},
                     {"target_n_per_class", scenegen.target_n_per_class},
                     {"import_path", scenegen.import_path},
                     {"import_rule", scenegen.import_rule}};
    j["gan"] = {{"steps", gan.steps},       {"batch_size", gan.batch_size}, {"lr", gan.lr},
                {"beta1", gan.beta1},       {"beta2", gan.beta2},           {"r1_gamma", gan.r1_gamma},
                {"wstats_n", gan.wstats_n}};
    j["projection"] = {{"steps", projection.steps},
                       {"space", projection.space},
                       {"lr_peak", projection.lr_peak},
                       {"lambda_pixel", projection.lambda_pixel},
                       {"lambda_feat", projection.lambda_feat},
                       {"sweep_steps", projection.sweep_steps}};
    j["direction"] = {{"corpus_n", direction.corpus_n},
                      {"filter_min_fg", direction.filter_min_fg},
                      {"filter_max_fg", direction.filter_max_fg},
                      {"probe_lambda", direction.probe_lambda},
                      {"threshold_ratio", direction.threshold_ratio},
                      {"oracle_train_n", direction.oracle_train_n},
                      {"oracle_epochs", direction.oracle_epochs},
                      {"oracle_mae_gate_deg", direction.oracle_mae_gate_deg},
                      {"calibrate_n", direction.calibrate_n},
                      {"coefficient_grid", direction.coefficient_grid},
                      {"traverse_unit_deg", direction.traverse_unit_deg}};
    j["augmentation"] = {{"sigma", augmentation.sigma},
                         {"k", augmentation.k},
                         {"rho", augmentation.rho},
                         {"policy", augmentation.policy}};
    j["classifier"] = {{"epochs", classifier.epochs},
                       {"batch_size", classifier.batch_size},
                       {"lr", classifier.lr}};
    j["sweep"] = {{"fractions", sweep.fractions}, {"policies", sweep.policies}, {"folds", sweep.folds}};
    j["report"] = {{"strip_samples", report.strip_samples},
                   {"gradcam_samples", report.gradcam_samples}};
    return j;
}

}  // namespace dapper
