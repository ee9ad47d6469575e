#include "dapper/inversion.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "dapper/rng.hpp"

namespace dapper::inversion {

namespace {

constexpr float kPi = 3.14159265358979323846f;

float lr_at(const ProjectionConfig& cfg, int step) {
    const float t = float(step) / float(cfg.steps);
    float ramp = std::min(1.f, (1.f - t) / cfg.lr_rampdown);
    ramp = 0.5f - 0.5f * std::cos(ramp * kPi);
    ramp *= std::min(1.f, (t + 1.f / float(cfg.steps)) / cfg.lr_rampup);
    return cfg.lr_peak * ramp;
}

float noise_std_at(const ProjectionConfig& cfg, int step, float mean_w_std) {
    const float t = float(step) / float(cfg.steps);
    const float decay = std::max(0.f, 1.f - t / cfg.noise_decay_end);
    return cfg.noise_scale * mean_w_std * decay;
}

int latent_elems(gan::LatentSpace space) {
    return space == gan::LatentSpace::W ? gan::kLatentDim : gan::kStyleSlots * gan::kLatentDim;
}

// Per-sample losses summed over the batch so every sample's trajectory is
// independent of its batch companions.
struct EvalOut {
    std::vector<double> total;      // per sample
    std::vector<double> pixel_mse;  // per sample
};

EvalOut eval_and_grad(const gan::GanBundle& bundle, const Array& wv, gan::LatentSpace space,
                      const Array& target, const std::vector<gan::DiscCache>& target_feats,
                      const ProjectionConfig& cfg, Array* gw) {
    const int N = target.shape[0];
    gan::LatentBatch w{space, wv};

    gan::SynthesisCache sc;
    const Array img = gan::synthesis_forward(bundle.gen, w, &sc);

    gan::DiscCache dc;
    gan::disc_forward(bundle.disc, img, &dc);

    EvalOut out;
    out.total.assign(size_t(N), 0.0);
    out.pixel_mse.assign(size_t(N), 0.0);

    const size_t img_elems = img.numel() / size_t(N);
    Array gimg({N, img.shape[1], img.shape[2], img.shape[3]});

    for (int n = 0; n < N; ++n) {
        double acc = 0.0;
        const size_t base = size_t(n) * img_elems;
        for (size_t j = 0; j < img_elems; ++j) {
            const double d = double(img[base + j]) - double(target[base + j]);
            acc += d * d;
        }
        const double pmse = acc / double(img_elems);
        out.pixel_mse[size_t(n)] = pmse;
        out.total[size_t(n)] = double(cfg.lambda_pixel) * pmse;
        if (gw) {
            const float c = 2.f * cfg.lambda_pixel / float(img_elems);
            for (size_t j = 0; j < img_elems; ++j)
                gimg[base + j] = c * (img[base + j] - target[base + j]);
        }
    }

    // discriminator feature distance (perceptual proxy)
    std::vector<Array> gfeat(gan::kDiscFeatureLayers);
    if (cfg.lambda_feat > 0.f) {
        for (int l = 0; l < gan::kDiscFeatureLayers; ++l) {
            const Array& f = dc.post[size_t(l)];
            const Array& ft = target_feats[0].post[size_t(l)];
            const size_t fe = f.numel() / size_t(N);
            if (gw) gfeat[size_t(l)] = Array(f.shape);
            for (int n = 0; n < N; ++n) {
                const size_t base = size_t(n) * fe;
                double acc = 0.0;
                for (size_t j = 0; j < fe; ++j) {
                    const double d = double(f[base + j]) - double(ft[base + j]);
                    acc += d * d;
                }
                out.total[size_t(n)] += double(cfg.lambda_feat) * acc / double(fe);
                if (gw) {
                    const float c = 2.f * cfg.lambda_feat / float(fe);
                    for (size_t j = 0; j < fe; ++j)
                        gfeat[size_t(l)][base + j] = c * (f[base + j] - ft[base + j]);
                }
            }
        }
    }

    if (gw) {
        gan::DiscBackwardSpec spec;
        spec.accumulate_params = false;
        spec.need_input_grad = true;
        std::vector<const Array*> gf;
        for (auto& g : gfeat) gf.push_back(g.empty() ? nullptr : &g);
        spec.gfeatures = gf;
        Array gimg_feat;
        if (cfg.lambda_feat > 0.f) {
            gan::DiscCache& mdc = dc;
            gimg_feat = gan::disc_backward(const_cast<ParamStore&>(bundle.disc), mdc, spec);
            for (size_t j = 0; j < gimg.numel(); ++j) gimg[j] += gimg_feat[j];
        }
        ParamStore& gen = const_cast<ParamStore&>(bundle.gen);
        const gan::LatentBatch g = gan::synthesis_backward(gen, sc, gimg, space);
        *gw = g.values;
    }
    return out;
}

}  // namespace

std::vector<ProjectionResult> project_batch(const std::vector<Image>& images,
                                            const gan::GanBundle& bundle, const gan::WStats& stats,
                                            const ProjectionConfig& cfg,
                                            const std::vector<gan::LatentBatch>* init,
                                            const std::vector<uint64_t>* sample_seeds) {
    if (images.empty()) throw std::invalid_argument("project_batch: no images");
    if (sample_seeds && sample_seeds->size() != images.size())
        throw std::invalid_argument("project_batch: sample seed count mismatch");
    if (cfg.steps < 1) throw std::invalid_argument("project_batch: steps must be >= 1");
    if (cfg.lambda_pixel < 0.f || cfg.lambda_feat < 0.f)
        throw std::invalid_argument("project_batch: loss weights must be >= 0");
    if (cfg.init == ProjectionConfig::Init::kGiven && (!init || init->size() != images.size()))
        throw std::invalid_argument("project_batch: init latents missing");

    const auto t_start = std::chrono::steady_clock::now();
    const int N = int(images.size());
    const int elems = latent_elems(cfg.space);

    const uint64_t gen_sum_before = bundle.gen.value_checksum();

    const Array target = images_to_model_batch(images);
    // target features are per-sample; compute once on the target batch
    std::vector<gan::DiscCache> target_feats(1);
    gan::disc_forward(bundle.disc, target, &target_feats[0]);

    float mean_w_std = 0.f;
    for (int j = 0; j < gan::kLatentDim; ++j) mean_w_std += stats.stdev[size_t(j)];
    mean_w_std /= float(gan::kLatentDim);

    // initial latents
    Array wv = cfg.space == gan::LatentSpace::W
                   ? Array({N, gan::kLatentDim})
                   : Array({N, gan::kStyleSlots, gan::kLatentDim});
    auto seed_of = [&](int n) {
        return sample_seeds ? (*sample_seeds)[size_t(n)] : derive_seed(cfg.seed, "proj-sample", uint64_t(n));
    };
    for (int n = 0; n < N; ++n) {
        switch (cfg.init) {
            case ProjectionConfig::Init::kMeanW:
                for (int e = 0; e < elems; ++e)
                    wv[size_t(n) * elems + e] = stats.mean[size_t(e % gan::kLatentDim)];
                break;
            case ProjectionConfig::Init::kGiven: {
                const gan::LatentBatch& g = (*init)[size_t(n)];
                if (g.space == cfg.space) {
                    std::copy_n(g.values.data.begin(), elems, wv.data.begin() + size_t(n) * elems);
                } else if (g.space == gan::LatentSpace::W && cfg.space == gan::LatentSpace::WPlus) {
                    for (int s = 0; s < gan::kStyleSlots; ++s)
                        std::copy_n(g.values.data.begin(), gan::kLatentDim,
                                    wv.data.begin() + (size_t(n) * gan::kStyleSlots + s) * gan::kLatentDim);
                } else {
                    throw std::invalid_argument("project_batch: cannot narrow W+ init to W");
                }
                break;
            }
            case ProjectionConfig::Init::kRandomZ: {
                Rng zr(derive_seed(seed_of(n), "proj-init"));
                Array z({1, gan::kLatentDim});
                for (auto& v : z.data) v = zr.normalf();
                const Array w0 = gan::map_z(bundle, z).values;
                for (int e = 0; e < elems; ++e)
                    wv[size_t(n) * elems + e] = w0[size_t(e % gan::kLatentDim)];
                break;
            }
        }
    }

    // per-sample noise streams, independent of batch composition
    std::vector<Rng> noise_rng;
    noise_rng.reserve(size_t(N));
    for (int n = 0; n < N; ++n) noise_rng.emplace_back(derive_seed(seed_of(n), "proj-noise"));

    std::vector<ProjectionResult> results(static_cast<size_t>(N));
    for (auto& r : results) {
        r.loss_curve.reserve(size_t(cfg.steps));
        r.w_star = gan::LatentBatch{cfg.space, Array(cfg.space == gan::LatentSpace::W
                                                         ? std::vector<int>{1, gan::kLatentDim}
                                                         : std::vector<int>{1, gan::kStyleSlots,
                                                                            gan::kLatentDim})};
    }

    auto consider = [&](int n, double loss, double pmse, const Array& cand, int step) {
        ProjectionResult& r = results[size_t(n)];
        // strictly better wins; ties resolved by the earliest step
        if (r.best_step == -2 || loss < double(r.best_loss)) {
            r.best_loss = float(loss);
            r.final_pixel_mse = float(pmse);
            r.best_step = step;
            std::copy_n(cand.data.begin() + size_t(n) * elems, elems, r.w_star.values.data.begin());
        }
    };
    for (auto& r : results) r.best_step = -2;  // sentinel: nothing evaluated yet

    // clean evaluation of the initial latent (candidate "step -1")
    {
        const EvalOut ev = eval_and_grad(bundle, wv, cfg.space, target, target_feats, cfg, nullptr);
        for (int n = 0; n < N; ++n) consider(n, ev.total[size_t(n)], ev.pixel_mse[size_t(n)], wv, -1);
    }

    // optimizer over the latents only
    ParamStore wstore;
    wstore.add("w", wv);
    Adam opt(cfg.lr_peak, 0.9f, 0.999f);

    Array weval(wstore.at("w").value.shape);
    for (int step = 0; step < cfg.steps; ++step) {
        Array& wcur = wstore.at("w").value;
        const float nstd = noise_std_at(cfg, step, mean_w_std);
        for (int n = 0; n < N; ++n) {
            Rng& rng = noise_rng[size_t(n)];
            for (int e = 0; e < elems; ++e) {
                const float draw = rng.normalf();
                weval[size_t(n) * elems + e] =
                    wcur[size_t(n) * elems + e] + (nstd > 0.f ? nstd * draw : 0.f);
            }
        }

        Array gw;
        const EvalOut ev = eval_and_grad(bundle, weval, cfg.space, target, target_feats, cfg, &gw);
        for (int n = 0; n < N; ++n) {
            const double loss = ev.total[size_t(n)];
            if (!std::isfinite(loss))
                throw std::runtime_error("project: non-finite loss at step " + std::to_string(step));
            results[size_t(n)].loss_curve.push_back(float(loss));
            consider(n, loss, ev.pixel_mse[size_t(n)], weval, step);
        }

        wstore.at("w").grad = gw;
        opt.set_lr(lr_at(cfg, step));
        opt.step(wstore);
    }

    // clean evaluation of the final latent
    {
        const Array& wcur = wstore.at("w").value;
        const EvalOut ev = eval_and_grad(bundle, wcur, cfg.space, target, target_feats, cfg, nullptr);
        for (int n = 0; n < N; ++n)
            consider(n, ev.total[size_t(n)], ev.pixel_mse[size_t(n)], wcur, cfg.steps);
    }

    if (bundle.gen.value_checksum() != gen_sum_before)
        throw std::runtime_error("project: frozen generator was modified (checksum mismatch)");

    const auto t_end = std::chrono::steady_clock::now();
    const double secs = std::chrono::duration<double>(t_end - t_start).count();
    for (auto& r : results) r.wall_time_s = secs / double(N);
    return results;
}

ProjectionResult project(const Image& image, const gan::GanBundle& bundle, const gan::WStats& stats,
                         const ProjectionConfig& config, const gan::LatentBatch* init) {
    std::vector<gan::LatentBatch> inits;
    if (init) inits.push_back(*init);
    auto res = project_batch({image}, bundle, stats, config, init ? &inits : nullptr);
    return std::move(res[0]);
}

// ---------------------------------------------------------------------------
// latent table
// ---------------------------------------------------------------------------

const LatentTable::Row& LatentTable::row(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw std::out_of_range("latent table: no row for " + id);
    return rows[it->second];
}

void LatentTable::add(Row row) {
    if (contains(row.sample_id)) throw std::invalid_argument("latent table: duplicate " + row.sample_id);
    index_[row.sample_id] = rows.size();
    rows.push_back(std::move(row));
}

gan::LatentBatch LatentTable::latent(const std::string& id) const {
    const Row& r = row(id);
    if (r.space == gan::LatentSpace::W) {
        Array v({1, gan::kLatentDim});
        v.data = r.w;
        return gan::LatentBatch::w(std::move(v));
    }
    Array v({1, gan::kStyleSlots, gan::kLatentDim});
    v.data = r.w;
    return gan::LatentBatch::wplus(std::move(v));
}

void LatentTable::save(const std::string& path) const {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("latent table: cannot write " + path);
    for (const auto& r : rows) {
        nlohmann::json j;
        j["sample_id"] = r.sample_id;
        j["space"] = r.space == gan::LatentSpace::W ? "w" : "w+";
        j["w"] = r.w;
        j["final_mse"] = r.final_mse;
        out << j.dump() << '\n';
    }
}

LatentTable LatentTable::load(const std::string& path) {
    LatentTable t;
    std::ifstream in(path);
    if (!in) return t;  // empty table: nothing projected yet
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        Row r;
        r.sample_id = j.at("sample_id").get<std::string>();
        r.space = j.at("space").get<std::string>() == "w+" ? gan::LatentSpace::WPlus
                                                           : gan::LatentSpace::W;
        r.w = j.at("w").get<std::vector<float>>();
        r.final_mse = j.at("final_mse").get<float>();
        t.add(std::move(r));
    }
    return t;
}

BatchProjectStats batch_project(const DatasetManifest& manifest, const ImageStore& store,
                                const gan::GanBundle& bundle, const gan::WStats& stats,
                                const ProjectionConfig& config, const std::string& table_path,
                                int chunk_size) {
    if (manifest.records.empty()) throw std::invalid_argument("batch_project: empty manifest");

    LatentTable table = LatentTable::load(table_path);
    BatchProjectStats out;

    std::vector<const ManifestRecord*> pending;
    for (const auto& r : manifest.records) {
        if (table.contains(r.id))
            ++out.skipped;
        else
            pending.push_back(&r);
    }

    size_t i = 0;
    while (i < pending.size()) {
        std::vector<Image> chunk;
        std::vector<const ManifestRecord*> chunk_recs;
        while (i < pending.size() && int(chunk.size()) < chunk_size) {
            const ManifestRecord* r = pending[i++];
            try {
                chunk.push_back(store.get(r->path));
                chunk_recs.push_back(r);
            } catch (const std::exception& e) {
                std::fprintf(stderr, "batch_project: skipping %s (%s)\n", r->id.c_str(), e.what());
                ++out.failed;
            }
        }
        if (chunk.empty()) continue;

        // per-record seeds: results do not depend on chunk boundaries, so a
        // resumed run reproduces what a fresh run would have produced
        std::vector<uint64_t> seeds;
        seeds.reserve(chunk_recs.size());
        for (const auto* r : chunk_recs) seeds.push_back(derive_seed(config.seed, r->id));
        const std::vector<ProjectionResult> results =
            project_batch(chunk, bundle, stats, config, nullptr, &seeds);
        for (size_t k = 0; k < chunk_recs.size(); ++k) {
            LatentTable::Row row;
            row.sample_id = chunk_recs[k]->id;
            row.space = config.space;
            row.w = results[k].w_star.values.data;
            row.final_mse = results[k].final_pixel_mse;
            table.add(std::move(row));
            ++out.projected;
        }
        table.save(table_path);  // persist progress for resume
    }

    if (out.projected == 0 && out.skipped == 0)
        throw std::runtime_error("batch_project: no record could be projected");
    return out;
}

}  // namespace dapper::inversion
