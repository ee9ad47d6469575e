#include "dapper/evalhost.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "dapper/layers.hpp"
#include "dapper/rng.hpp"

namespace dapper::eval {

namespace {

constexpr int kChannels[3] = {16, 32, 64};

struct NetCache {
    Array x;
    std::vector<Array> pre, post;
    Array pooled, logits;
};

Array net_forward(const ParamStore& p, const Array& images, NetCache* cache, Array* final_conv) {
    NetCache local;
    NetCache& c = cache ? *cache : local;
    c.x = images;
    c.pre.clear();
    c.post.clear();
    Array x = images;
    for (int i = 0; i < 3; ++i) {
        Array pre = nn::conv2d(x, p.at("c.c" + std::to_string(i) + ".w").value, 2);
        nn::add_bias_nchw(pre, p.at("c.c" + std::to_string(i) + ".b").value);
        Array post = nn::lrelu(pre, 0.f);  // plain ReLU
        c.pre.push_back(std::move(pre));
        c.post.push_back(std::move(post));
        x = c.post.back();
    }
    if (final_conv) *final_conv = c.post.back();
    c.pooled = nn::gap(c.post.back());
    c.logits = nn::dense(c.pooled, p.at("c.fc.w").value, p.at("c.fc.b").value);
    return c.logits;
}

void net_backward(ParamStore& p, const NetCache& c, const Array& glogits) {
    Param& fw = p.at("c.fc.w");
    Param& fb = p.at("c.fc.b");
    Array gpool;
    nn::dense_backward(c.pooled, fw.value, glogits, &gpool, fw, fb);
    Array g = nn::gap_backward(gpool, kFinalConvSize, kFinalConvSize);

    for (int i = 2; i >= 0; --i) {
        g = nn::lrelu_backward(c.pre[size_t(i)], g, 0.f);
        Param& wp = p.at("c.c" + std::to_string(i) + ".w");
        const Array& input = i == 0 ? c.x : c.post[size_t(i - 1)];
        Array gx, gw;
        nn::conv2d_backward(input, wp.value, g, 2, i > 0 ? &gx : nullptr, &gw);
        for (size_t j = 0; j < gw.numel(); ++j) wp.grad[j] += gw[j];
        nn::bias_backward_nchw(g, p.at("c.c" + std::to_string(i) + ".b"));
        if (i > 0) g = std::move(gx);
    }
}

ParamStore net_init(uint64_t seed, int n_classes) {
    Rng rng(derive_seed(seed, "classifier-init"));
    ParamStore p;
    int ci = 3;
    for (int i = 0; i < 3; ++i) {
        Array w({kChannels[i], ci, 3, 3});
        const float s = std::sqrt(2.f / float(ci * 9));
        for (auto& v : w.data) v = s * rng.normalf();
        p.add("c.c" + std::to_string(i) + ".w", std::move(w));
        p.add("c.c" + std::to_string(i) + ".b", Array({kChannels[i]}));
        ci = kChannels[i];
    }
    Array fw({n_classes, kChannels[2]});
    const float s = std::sqrt(1.f / float(kChannels[2]));
    for (auto& v : fw.data) v = s * rng.normalf();
    p.add("c.fc.w", std::move(fw));
    p.add("c.fc.b", Array({n_classes}));
    return p;
}

}  // namespace

void ClassifierBundle::save(const std::string& path) const { params.save(path); }

ClassifierBundle ClassifierBundle::load(const std::string& path, std::vector<std::string> label_set) {
    ClassifierBundle b;
    b.params = ParamStore::load(path);
    b.label_set = std::move(label_set);
    return b;
}

Array classifier_logits(const ClassifierBundle& bundle, const Array& images, Array* final_conv) {
    return net_forward(bundle.params, images, nullptr, final_conv);
}

ClassifierBundle train_classifier(const DatasetManifest& train, const ImageStore& store,
                                  const ClassifierConfig& config) {
    std::set<int> classes;
    for (const auto& r : train.records)
        if (r.label) classes.insert(*r.label);
    if (classes.size() < 2) throw std::invalid_argument("train_classifier: need >= 2 classes");

    std::vector<Image> imgs;
    std::vector<int> labels;
    for (const auto& r : train.records) {
        if (!r.label) continue;
        imgs.push_back(store.get(r.path));
        labels.push_back(*r.label);
    }
    const Array all = images_to_model_batch(imgs);
    const size_t img_elems = size_t(3) * 32 * 32;
    const int n = int(labels.size());

    ClassifierBundle bundle;
    bundle.label_set = train.label_set;
    bundle.params = net_init(config.seed, int(train.label_set.size()));
    Adam opt(config.lr);
    Rng rng(derive_seed(config.seed, "classifier-train"));

    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[size_t(i)] = i;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        double epoch_loss = 0.0;
        int batches = 0;
        for (int start = 0; start < n; start += config.batch_size) {
            const int b = std::min(config.batch_size, n - start);
            Array x({b, 3, 32, 32});
            std::vector<int> y(static_cast<size_t>(b));
            for (int k = 0; k < b; ++k) {
                const int src = order[size_t(start + k)];
                std::copy_n(all.data.begin() + size_t(src) * img_elems, img_elems,
                            x.data.begin() + size_t(k) * img_elems);
                y[size_t(k)] = labels[size_t(src)];
            }
            bundle.params.zero_grads();
            NetCache cache;
            net_forward(bundle.params, x, &cache, nullptr);
            Array glogits;
            epoch_loss += nn::softmax_cross_entropy(cache.logits, y, &glogits);
            ++batches;
            net_backward(bundle.params, cache, glogits);
            opt.step(bundle.params);
        }
        bundle.loss_history.push_back(float(epoch_loss / std::max(1, batches)));
    }
    return bundle;
}

EvalResult evaluate(const ClassifierBundle& bundle, const DatasetManifest& test,
                    const ImageStore& store) {
    EvalResult res;
    res.confusion.assign(size_t(kClasses) * kClasses, 0);

    std::vector<Image> imgs;
    std::vector<int> labels;
    for (const auto& r : test.records) {
        if (!r.label) continue;
        if (*r.label < 0 || *r.label >= int(bundle.label_set.size()))
            throw std::invalid_argument("evaluate: unknown label on " + r.id);
        imgs.push_back(store.get(r.path));
        labels.push_back(*r.label);
    }
    if (imgs.empty()) throw std::invalid_argument("evaluate: no labeled test records");

    const int batch = 128;
    int correct = 0;
    for (size_t start = 0; start < imgs.size(); start += batch) {
        const size_t b = std::min<size_t>(batch, imgs.size() - start);
        std::vector<Image> chunk(imgs.begin() + long(start), imgs.begin() + long(start + b));
        const Array logits = classifier_logits(bundle, images_to_model_batch(chunk));
        for (size_t i = 0; i < b; ++i) {
            int arg = 0;
            for (int k = 1; k < logits.shape[1]; ++k)
                if (logits.at2(int(i), k) > logits.at2(int(i), arg)) arg = k;
            const int truth = labels[start + i];
            res.confusion[size_t(truth) * kClasses + size_t(arg)]++;
            if (arg == truth) ++correct;
        }
    }
    res.total = int(imgs.size());
    res.accuracy = double(correct) / double(res.total);
    return res;
}

std::vector<int> stratified_folds(const DatasetManifest& manifest, int k, uint64_t seed) {
    std::vector<int> fold(manifest.records.size(), -1);
    for (int c = 0; c < int(manifest.label_set.size()); ++c) {
        auto idx = manifest.indices_of_label(c);
        if (idx.empty()) continue;
        if (int(idx.size()) < k)
            throw std::invalid_argument("stratified_folds: class " + std::to_string(c) +
                                        " has fewer than k samples");
        Rng rng(derive_seed(seed, "folds", uint64_t(c)));
        for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
        for (size_t i = 0; i < idx.size(); ++i) fold[idx[i]] = int(i % size_t(k));
    }
    for (size_t i = 0; i < fold.size(); ++i)
        if (fold[i] < 0) throw std::invalid_argument("stratified_folds: unlabeled record " +
                                                     manifest.records[i].id);
    return fold;
}

FoldResults cross_validate(const DatasetManifest& target, const augment::MixSpec& spec, int k,
                           uint64_t seed, const augment::AugmentContext& ctx,
                           const ImageStore& store, const ClassifierConfig& ccfg) {
    if (k < 2) throw std::invalid_argument("cross_validate: k must be >= 2");
    const std::vector<int> fold = stratified_folds(target, k, seed);

    FoldResults out;
    for (int f = 0; f < k; ++f) {
        DatasetManifest train, test;
        train.label_set = test.label_set = target.label_set;
        train.generator_seed = test.generator_seed = target.generator_seed;
        train.split = "train-fold" + std::to_string(f);
        test.split = "test-fold" + std::to_string(f);
        for (size_t i = 0; i < target.records.size(); ++i)
            (fold[i] == f ? test : train).records.push_back(target.records[i]);

        augment::MixSpec fold_spec = spec;
        fold_spec.policy.seed = derive_seed(seed, "mix", uint64_t(f)) ^ spec.policy.seed;

        MemoryImageStore fold_store(&store);
        const DatasetManifest mixed =
            augment::build_mix(train, fold_spec, ctx, fold_store, "synth-fold" + std::to_string(f));

        // fold hygiene: no synthetic may originate from a test-fold record
        std::set<std::string> test_ids;
        for (const auto& r : test.records) test_ids.insert(r.id);
        for (const auto& r : mixed.records)
            if (!r.source_id.empty() && test_ids.count(r.source_id))
                throw std::runtime_error("cross_validate: synthetic " + r.id +
                                         " leaks test sample " + r.source_id);

        ClassifierConfig fold_cfg = ccfg;
        fold_cfg.seed = derive_seed(ccfg.seed, "fold-train", uint64_t(f));
        const ClassifierBundle bundle = train_classifier(mixed, fold_store, fold_cfg);

        FoldResult fr;
        fr.fold = f;
        fr.eval = evaluate(bundle, test, store);
        fr.accuracy = fr.eval.accuracy;
        for (const auto& r : mixed.records)
            (r.provenance == kProvReal ? fr.n_real : fr.n_synth)++;
        out.folds.push_back(std::move(fr));
    }

    double mean = 0.0;
    for (const auto& f : out.folds) mean += f.accuracy;
    mean /= double(out.folds.size());
    double var = 0.0;
    for (const auto& f : out.folds) var += (f.accuracy - mean) * (f.accuracy - mean);
    out.mean_accuracy = mean;
    out.std_accuracy = out.folds.size() > 1 ? std::sqrt(var / double(out.folds.size() - 1)) : 0.0;
    return out;
}

double SweepReport::cell_mean(float fraction, const std::string& policy) const {
    double acc = 0.0;
    int n = 0;
    for (const auto& r : rows)
        if (!r.failed && r.policy == policy && std::abs(r.fraction - fraction) < 1e-6) {
            acc += r.accuracy;
            ++n;
        }
    if (!n) throw std::out_of_range("sweep: no cell (" + std::to_string(fraction) + ", " + policy + ")");
    return acc / double(n);
}

double SweepReport::cell_std(float fraction, const std::string& policy) const {
    const double mean = cell_mean(fraction, policy);
    double var = 0.0;
    int n = 0;
    for (const auto& r : rows)
        if (!r.failed && r.policy == policy && std::abs(r.fraction - fraction) < 1e-6) {
            var += (r.accuracy - mean) * (r.accuracy - mean);
            ++n;
        }
    return n > 1 ? std::sqrt(var / double(n - 1)) : 0.0;
}

void SweepReport::save_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("sweep: cannot write " + path);
    out << "fraction,policy,fold,accuracy,n_real,n_synth,failed\n";
    for (const auto& r : rows) {
        char line[256];
        std::snprintf(line, sizeof(line), "%.4f,%s,%d,%.6f,%d,%d,%d\n", double(r.fraction),
                      r.policy.c_str(), r.fold, r.accuracy, r.n_real, r.n_synth, r.failed ? 1 : 0);
        out << line;
    }
}

void SweepReport::save_summary_json(const std::string& path) const {
    nlohmann::json cells = nlohmann::json::array();
    for (float f : fractions)
        for (const auto& p : policies) {
            nlohmann::json c;
            c["fraction"] = f;
            c["policy"] = p;
            bool any = false;
            for (const auto& r : rows)
                if (!r.failed && r.policy == p && std::abs(r.fraction - f) < 1e-6) any = true;
            if (any) {
                c["mean_accuracy"] = cell_mean(f, p);
                c["std_accuracy"] = cell_std(f, p);
            } else {
                c["failed"] = true;
            }
            cells.push_back(c);
        }
    nlohmann::json j;
    j["cells"] = cells;
    j["folds"] = folds;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("sweep: cannot write " + path);
    out << j.dump(2) << '\n';
}

SweepReport reduction_sweep(const DatasetManifest& target, const std::vector<float>& fractions,
                            const std::vector<std::string>& policies, int k, uint64_t seed,
                            const augment::MixSpec& base_spec, const augment::AugmentContext& ctx,
                            const ImageStore& store, const ClassifierConfig& ccfg) {
    if (fractions.empty() || policies.empty())
        throw std::invalid_argument("reduction_sweep: empty grid");
    for (float f : fractions)
        if (!(f > 0.f && f <= 1.f))
            throw std::invalid_argument("reduction_sweep: fractions must be in (0,1]");

    SweepReport report;
    report.fractions = fractions;
    report.policies = policies;
    report.folds = k;

    for (float fraction : fractions) {
        for (const auto& policy : policies) {
            augment::MixSpec spec = base_spec;
            spec.real_fraction = fraction;
            spec.policy.kind = augment::policy_kind_from_name(policy);
            try {
                const FoldResults res = cross_validate(target, spec, k, seed, ctx, store, ccfg);
                for (const auto& f : res.folds) {
                    SweepRow row;
                    row.fraction = fraction;
                    row.policy = policy;
                    row.fold = f.fold;
                    row.accuracy = f.accuracy;
                    row.n_real = f.n_real;
                    row.n_synth = f.n_synth;
                    report.rows.push_back(std::move(row));
                }
            } catch (const std::exception& e) {
                SweepRow row;
                row.fraction = fraction;
                row.policy = policy;
                row.fold = -1;
                row.accuracy = 0.0;
                row.n_real = row.n_synth = 0;
                row.failed = true;
                row.error = e.what();
                report.rows.push_back(std::move(row));
            }
        }
    }
    return report;
}

}  // namespace dapper::eval
