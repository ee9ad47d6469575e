#include "dapper/semdir.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "dapper/layers.hpp"
#include "dapper/rng.hpp"

namespace dapper::semdir {

namespace {

constexpr float kLReluSlope = 0.2f;
constexpr float kYawRange = 75.f;  // oracle predicts yaw / 75 internally
constexpr int kOracleC1 = 24, kOracleC2 = 48;

struct OracleCache {
    Array x, pre1, post1, pre2, post2, flat, out;
};

Array oracle_forward(const ParamStore& p, const Array& images, OracleCache* cache) {
    OracleCache local;
    OracleCache& c = cache ? *cache : local;
    c.x = images;
    c.pre1 = nn::conv2d(images, p.at("o.c1.w").value, 2);
    nn::add_bias_nchw(c.pre1, p.at("o.c1.b").value);
    c.post1 = nn::lrelu(c.pre1, kLReluSlope);
    c.pre2 = nn::conv2d(c.post1, p.at("o.c2.w").value, 2);
    nn::add_bias_nchw(c.pre2, p.at("o.c2.b").value);
    c.post2 = nn::lrelu(c.pre2, kLReluSlope);
    c.flat = c.post2;
    c.flat.shape = {images.shape[0], kOracleC2 * 8 * 8};
    c.out = nn::dense(c.flat, p.at("o.fc.w").value, p.at("o.fc.b").value);
    return c.out;
}

void oracle_backward(ParamStore& p, const OracleCache& c, const Array& gout) {
    Param& fw = p.at("o.fc.w");
    Param& fb = p.at("o.fc.b");
    Array gflat;
    nn::dense_backward(c.flat, fw.value, gout, &gflat, fw, fb);
    gflat.shape = c.post2.shape;

    Array g = nn::lrelu_backward(c.pre2, gflat, kLReluSlope);
    Param& w2 = p.at("o.c2.w");
    Array gx2, gw2;
    nn::conv2d_backward(c.post1, w2.value, g, 2, &gx2, &gw2);
    for (size_t j = 0; j < gw2.numel(); ++j) w2.grad[j] += gw2[j];
    nn::bias_backward_nchw(g, p.at("o.c2.b"));

    g = nn::lrelu_backward(c.pre1, gx2, kLReluSlope);
    Param& w1 = p.at("o.c1.w");
    Array gw1;
    nn::conv2d_backward(c.x, w1.value, g, 2, nullptr, &gw1);
    for (size_t j = 0; j < gw1.numel(); ++j) w1.grad[j] += gw1[j];
    nn::bias_backward_nchw(g, p.at("o.c1.b"));
}

ParamStore oracle_init(uint64_t seed) {
    Rng rng(derive_seed(seed, "oracle-init"));
    ParamStore p;
    auto conv = [&](const std::string& name, int ci, int co) {
        Array w({co, ci, 3, 3});
        const float s = std::sqrt(2.f / float(ci * 9));
        for (auto& v : w.data) v = s * rng.normalf();
        p.add(name + ".w", std::move(w));
        p.add(name + ".b", Array({co}));
    };
    conv("o.c1", 3, kOracleC1);
    conv("o.c2", kOracleC1, kOracleC2);
    Array fw({1, kOracleC2 * 8 * 8});
    const float s = std::sqrt(1.f / float(kOracleC2 * 64));
    for (auto& v : fw.data) v = s * rng.normalf();
    p.add("o.fc.w", std::move(fw));
    p.add("o.fc.b", Array({1}));
    return p;
}

}  // namespace

std::vector<float> PoseOracle::predict(const Array& images) const {
    const Array out = oracle_forward(params, images, nullptr);
    std::vector<float> deg(static_cast<size_t>(images.shape[0]));
    for (size_t n = 0; n < deg.size(); ++n) deg[n] = out[n] * kYawRange;
    return deg;
}

float PoseOracle::predict_one(const Image& image) const {
    return predict(image_to_model(image))[0];
}

void PoseOracle::save(const std::string& path) const { params.save(path); }

PoseOracle PoseOracle::load(const std::string& path) {
    PoseOracle o;
    o.params = ParamStore::load(path);
    return o;
}

PoseOracle train_pose_oracle(const DatasetManifest& labeled, const ImageStore& store,
                             const PoseOracleConfig& config) {
    std::vector<size_t> with_pose;
    for (size_t i = 0; i < labeled.records.size(); ++i)
        if (labeled.records[i].pose_deg) with_pose.push_back(i);
    if (with_pose.size() < 10) throw std::invalid_argument("train_pose_oracle: manifest lacks pose labels");

    // deterministic shuffle, then split off validation
    Rng shuffle_rng(derive_seed(config.seed, "oracle-split"));
    for (size_t i = with_pose.size(); i > 1; --i)
        std::swap(with_pose[i - 1], with_pose[shuffle_rng.below(i)]);
    size_t n_val = size_t(double(with_pose.size()) * config.val_fraction);
    n_val = std::min(std::max<size_t>(n_val, with_pose.size() >= 20 ? 1 : 0), with_pose.size() - 1);
    const std::vector<size_t> val_idx(with_pose.begin(), with_pose.begin() + long(n_val));
    const std::vector<size_t> train_idx(with_pose.begin() + long(n_val), with_pose.end());

    auto load_batch = [&](const std::vector<size_t>& idx) {
        std::vector<Image> imgs;
        imgs.reserve(idx.size());
        for (size_t i : idx) imgs.push_back(store.get(labeled.records[i].path));
        return images_to_model_batch(imgs);
    };
    const Array train_x = load_batch(train_idx);
    const Array val_x = n_val ? load_batch(val_idx) : Array();

    PoseOracle oracle;
    oracle.params = oracle_init(config.seed);
    Adam opt(config.lr);
    Rng rng(derive_seed(config.seed, "oracle-train"));

    const int n_train = int(train_idx.size());
    const size_t img_elems = size_t(3) * 32 * 32;
    std::vector<int> order(static_cast<size_t>(n_train));
    for (int i = 0; i < n_train; ++i) order[size_t(i)] = i;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        for (int start = 0; start < n_train; start += config.batch_size) {
            const int b = std::min(config.batch_size, n_train - start);
            Array x({b, 3, 32, 32});
            Array target({b, 1});
            for (int k = 0; k < b; ++k) {
                const int src = order[size_t(start + k)];
                std::copy_n(train_x.data.begin() + size_t(src) * img_elems, img_elems,
                            x.data.begin() + size_t(k) * img_elems);
                target.at2(k, 0) = *labeled.records[train_idx[size_t(src)]].pose_deg / kYawRange;
            }
            oracle.params.zero_grads();
            OracleCache cache;
            const Array out = oracle_forward(oracle.params, x, &cache);
            const Array gout = nn::mse_backward(out, target, 1.f);
            oracle_backward(oracle.params, cache, gout);
            opt.step(oracle.params);
        }
    }

    // validation MAE gate
    float mae = 0.f;
    if (n_val) {
        const Array out = oracle_forward(oracle.params, val_x, nullptr);
        double acc = 0.0;
        for (size_t k = 0; k < val_idx.size(); ++k)
            acc += std::abs(double(out[k]) * kYawRange -
                            double(*labeled.records[val_idx[k]].pose_deg));
        mae = float(acc / double(val_idx.size()));
    }
    oracle.val_mae_deg = mae;
    if (mae > config.mae_gate_deg)
        throw std::runtime_error("train_pose_oracle: validation MAE " + std::to_string(mae) +
                                 " deg exceeds gate " + std::to_string(config.mae_gate_deg));
    return oracle;
}

float oracle_mae(const PoseOracle& oracle, const DatasetManifest& manifest, const ImageStore& store) {
    std::vector<Image> imgs;
    std::vector<float> poses;
    for (const auto& r : manifest.records) {
        if (!r.pose_deg) continue;
        imgs.push_back(store.get(r.path));
        poses.push_back(*r.pose_deg);
    }
    if (imgs.empty()) throw std::invalid_argument("oracle_mae: no pose labels");
    const std::vector<float> pred = oracle.predict(images_to_model_batch(imgs));
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) acc += std::abs(double(pred[i]) - double(poses[i]));
    return float(acc / double(pred.size()));
}

// ---------------------------------------------------------------------------
// corpus
// ---------------------------------------------------------------------------

std::vector<CorpusSample> sample_corpus(const gan::GanBundle& bundle, int n, uint64_t seed) {
    if (n < 100) throw std::invalid_argument("sample_corpus: n must be >= 100");
    Rng rng(derive_seed(seed, "corpus"));
    std::vector<CorpusSample> out;
    out.reserve(size_t(n));

    const int batch = 64;
    int done = 0;
    while (done < n) {
        const int b = std::min(batch, n - done);
        Array z({b, gan::kLatentDim});
        for (auto& v : z.data) v = rng.normalf();
        const gan::LatentBatch w = gan::map_z(bundle, z);
        const Array imgs = gan::synthesize(bundle, w);
        for (int i = 0; i < b; ++i) {
            CorpusSample s;
            s.w = Array({gan::kLatentDim});
            std::copy_n(w.values.data.begin() + size_t(i) * gan::kLatentDim, gan::kLatentDim,
                        s.w.data.begin());
            s.image = model_to_image(imgs, i);
            out.push_back(std::move(s));
        }
        done += b;
    }
    return out;
}

float foreground_fraction(const Image& image) {
    const int H = image.height, W = image.width;
    // least-squares affine background color(u,v) = c0 + cx u + cy v fitted on
    // the 1-pixel border
    Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
    Eigen::Matrix<double, 3, 3> atb = Eigen::Matrix<double, 3, 3>::Zero();  // per channel rhs
    auto add_point = [&](int y, int x) {
        const double u = (double(x) + 0.5) / W;
        const double v = (double(y) + 0.5) / H;
        const Eigen::Vector3d phi(1.0, u, v);
        ata += phi * phi.transpose();
        for (int c = 0; c < 3; ++c) atb.col(c) += phi * double(image.at(y, x, c));
    };
    for (int x = 0; x < W; ++x) {
        add_point(0, x);
        add_point(H - 1, x);
    }
    for (int y = 1; y < H - 1; ++y) {
        add_point(y, 0);
        add_point(y, W - 1);
    }
    const Eigen::Matrix3d coef = ata.ldlt().solve(atb);

    constexpr double kColorDist = 0.15;
    int fg = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double u = (double(x) + 0.5) / W;
            const double v = (double(y) + 0.5) / H;
            double d2 = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double bg = coef(0, c) + coef(1, c) * u + coef(2, c) * v;
                const double d = double(image.at(y, x, c)) - bg;
                d2 += d * d;
            }
            if (std::sqrt(d2) > kColorDist) ++fg;
        }
    return float(fg) / float(H * W);
}

std::vector<CorpusSample> filter_corpus(const std::vector<CorpusSample>& corpus, float min_fg,
                                        float max_fg) {
    if (!(min_fg >= 0.f && min_fg < max_fg && max_fg <= 1.f))
        throw std::invalid_argument("filter_corpus: need 0 <= min_fg < max_fg <= 1");
    std::vector<CorpusSample> kept;
    for (const auto& s : corpus) {
        const float fg = foreground_fraction(s.image);
        if (fg >= min_fg && fg <= max_fg) kept.push_back(s);
    }
    if (kept.empty())
        throw std::runtime_error("filter_corpus: nothing kept; widen [min_fg, max_fg]");
    return kept;
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

double PoseProbe::predict(const float* w64) const {
    double acc = bias;
    for (int j = 0; j < gan::kLatentDim; ++j) acc += weights[size_t(j)] * double(w64[j]);
    return acc;
}

double PoseProbe::predict(const Array& w) const { return predict(w.ptr()); }

double default_probe_lambda(const std::vector<Array>& latents) {
    const int n = int(latents.size());
    std::vector<double> mean(gan::kLatentDim, 0.0);
    for (const auto& w : latents)
        for (int j = 0; j < gan::kLatentDim; ++j) mean[size_t(j)] += double(w[size_t(j)]);
    for (auto& m : mean) m /= double(n);
    double trace = 0.0;
    for (const auto& w : latents)
        for (int j = 0; j < gan::kLatentDim; ++j) {
            const double d = double(w[size_t(j)]) - mean[size_t(j)];
            trace += d * d;
        }
    return 1e-3 * trace / double(gan::kLatentDim);
}

PoseProbe fit_probe(const std::vector<Array>& latents, const std::vector<float>& poses,
                    double lambda) {
    const int n = int(latents.size());
    const int d = gan::kLatentDim;
    if (n < d) throw std::invalid_argument("fit_probe: need at least 64 samples");
    if (poses.size() != latents.size()) throw std::invalid_argument("fit_probe: size mismatch");
    if (lambda < 0.0) throw std::invalid_argument("fit_probe: lambda must be >= 0");

    Eigen::MatrixXd X(n, d);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) X(i, j) = double(latents[size_t(i)][size_t(j)]);
        y(i) = double(poses[size_t(i)]);
    }
    const Eigen::RowVectorXd xmean = X.colwise().mean();
    const double ymean = y.mean();
    X.rowwise() -= xmean;
    y.array() -= ymean;

    const Eigen::MatrixXd gram = X.transpose() * X;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    const double max_ev = eig.eigenvalues().maxCoeff();
    if (lambda == 0.0 && (max_ev <= 0.0 || eig.eigenvalues().minCoeff() < 1e-10 * max_ev))
        throw std::runtime_error("fit_probe: singular system at lambda = 0; use lambda > 0");

    const Eigen::VectorXd rhs = X.transpose() * y;
    const Eigen::VectorXd rot = eig.eigenvectors().transpose() * rhs;
    Eigen::VectorXd scaled(d);
    for (int j = 0; j < d; ++j) scaled(j) = rot(j) / (eig.eigenvalues()(j) + lambda);
    const Eigen::VectorXd a = eig.eigenvectors() * scaled;

    PoseProbe probe;
    probe.weights.assign(a.data(), a.data() + d);
    probe.bias = ymean - a.dot(xmean.transpose());
    probe.lambda = lambda;
    probe.corpus_size = n;

    const double ss_tot = y.squaredNorm();
    const double ss_res = (y - X * a).squaredNorm();
    probe.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
    return probe;
}

// ---------------------------------------------------------------------------
// direction
// ---------------------------------------------------------------------------

int DirectionVector::kept_count() const {
    int n = 0;
    for (uint8_t m : mask) n += m;
    return n;
}

void DirectionVector::save(const std::string& path) const {
    nlohmann::json j;
    j["attribute"] = attribute;
    j["d"] = d.data;
    j["mask"] = mask;
    j["threshold_ratio"] = threshold_ratio;
    j["degrees_per_unit"] = degrees_per_unit;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("direction: cannot write " + path);
    out << j.dump(2) << '\n';
}

DirectionVector DirectionVector::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("direction: cannot open " + path);
    nlohmann::json j;
    in >> j;
    DirectionVector v;
    v.attribute = j.at("attribute").get<std::string>();
    v.d = Array({gan::kLatentDim});
    v.d.data = j.at("d").get<std::vector<float>>();
    v.mask = j.at("mask").get<std::vector<uint8_t>>();
    v.threshold_ratio = j.at("threshold_ratio").get<float>();
    v.degrees_per_unit = j.at("degrees_per_unit").get<float>();
    return v;
}

DirectionVector extract_direction(const PoseProbe& probe, float tau) {
    if (!(tau >= 0.f && tau < 1.f)) throw std::invalid_argument("extract_direction: need 0 <= tau < 1");
    double max_abs = 0.0;
    for (double w : probe.weights) max_abs = std::max(max_abs, std::abs(w));

    DirectionVector v;
    v.threshold_ratio = tau;
    v.d = Array({gan::kLatentDim});
    v.mask.assign(gan::kLatentDim, 0);
    double norm2 = 0.0;
    for (int j = 0; j < gan::kLatentDim; ++j) {
        const double w = probe.weights[size_t(j)];
        if (std::abs(w) >= double(tau) * max_abs && w != 0.0) {
            v.mask[size_t(j)] = 1;
            norm2 += w * w;
        }
    }
    if (norm2 == 0.0)
        throw std::runtime_error("extract_direction: all dimensions zeroed; lower tau");
    const double inv = 1.0 / std::sqrt(norm2);
    for (int j = 0; j < gan::kLatentDim; ++j)
        v.d[size_t(j)] = v.mask[size_t(j)] ? float(probe.weights[size_t(j)] * inv) : 0.f;
    return v;
}

gan::LatentBatch traverse(const gan::LatentBatch& w, const DirectionVector& dir, float c) {
    gan::LatentBatch out = w;
    const int N = w.count();
    if (w.space == gan::LatentSpace::W) {
        for (int n = 0; n < N; ++n)
            for (int j = 0; j < gan::kLatentDim; ++j)
                out.values.at2(n, j) += c * dir.d[size_t(j)];
    } else {
        for (int n = 0; n < N; ++n)
            for (int s = 0; s < gan::kStyleSlots; ++s)
                for (int j = 0; j < gan::kLatentDim; ++j)
                    out.values[(size_t(n) * gan::kStyleSlots + s) * gan::kLatentDim + j] +=
                        c * dir.d[size_t(j)];
    }
    return out;
}

float calibrate(const DirectionVector& d, const gan::GanBundle& bundle, const PoseOracle& oracle,
                int n, uint64_t seed, float c0) {
    if (n < 1) throw std::invalid_argument("calibrate: n must be >= 1");
    Rng rng(derive_seed(seed, "calibrate"));
    Array z({n, gan::kLatentDim});
    for (auto& v : z.data) v = rng.normalf();
    const gan::LatentBatch w = gan::map_z(bundle, z);
    const gan::LatentBatch w2 = traverse(w, d, c0);

    const std::vector<float> base = oracle.predict(gan::synthesize(bundle, w));
    const std::vector<float> moved = oracle.predict(gan::synthesize(bundle, w2));

    std::vector<float> slopes(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) slopes[size_t(i)] = (moved[size_t(i)] - base[size_t(i)]) / c0;
    std::sort(slopes.begin(), slopes.end());
    const float med = n % 2 ? slopes[size_t(n / 2)]
                            : 0.5f * (slopes[size_t(n / 2 - 1)] + slopes[size_t(n / 2)]);
    if (!std::isfinite(med)) throw std::runtime_error("calibrate: non-finite estimate");
    return med;
}

}  // namespace dapper::semdir
