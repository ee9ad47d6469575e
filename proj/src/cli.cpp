#include "dapper/cli.hpp"

#include <cstdio>
#include <exception>
#include <optional>

#include <CLI11.hpp>

#include "dapper/pipeline.hpp"

namespace dapper::cli {

int run(const std::vector<std::string>& args) {
    CLI::App app{"dapper: latent-space data augmentation pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<uint64_t> seed_override;
    bool force = false;

    std::vector<CLI::App*> subs;
    for (const char* stage : pipeline::kStages) {
        CLI::App* sub = app.add_subcommand(stage, std::string("run the ") + stage + " stage");
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--out", out_dir, "run directory (default: out_dir next to config)");
        sub->add_option("--seed", seed_override, "override the master seed");
        sub->add_flag("--stage-force", force, "re-run even when the ledger says cached");
        subs.push_back(sub);
    }

    std::vector<const char*> argv;
    argv.push_back("dapper");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(int(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // help text, exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    std::string stage;
    for (size_t i = 0; i < subs.size(); ++i)
        if (subs[i]->parsed()) stage = pipeline::kStages[i];

    try {
        ExperimentConfig cfg = ExperimentConfig::from_file(config_path);
        if (seed_override) cfg.master_seed = *seed_override;
        if (out_dir.empty()) out_dir = "dapper_out";

        pipeline::Context ctx(cfg, out_dir);
        ctx.force = force;
        const std::string status = pipeline::run_stage(ctx, stage);
        std::fprintf(stderr, "%s: %s\n", stage.c_str(), status.c_str());
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s failed: %s\n", stage.c_str(), e.what());
        return 1;
    }
}

}  // namespace dapper::cli
