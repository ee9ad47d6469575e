#include "dapper/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "dapper/rng.hpp"

namespace fs = std::filesystem;

namespace dapper::scenegen {

namespace {

constexpr float kPi = 3.14159265358979323846f;
constexpr float kYawShear = 0.15f;   // x' = x cos(yaw) + 0.15 y sin(yaw)
constexpr float kGroundY = 0.40f;    // world y of the wheel axle line
constexpr int kWheelSides = 16;
constexpr int kSub = 4;              // 4x4 subsamples per pixel

// Car-local geometry per template. Pair members (2k, 2k+1) share everything
// except cab length and wheel radius; the +1 member scales both by 1.35.
// Units: world coordinates in [-1,1]^2, car origin on the axle line.
constexpr CarTemplate kPairBase[6] = {
    // body_len body_h cab_len cab_h wheel_x wheel_r
    {1.30f, 0.30f, 0.62f, 0.26f, 0.42f, 0.115f},
    {1.44f, 0.24f, 0.52f, 0.22f, 0.50f, 0.105f},
    {1.20f, 0.34f, 0.70f, 0.30f, 0.38f, 0.130f},
    {1.52f, 0.27f, 0.44f, 0.20f, 0.55f, 0.110f},
    {1.36f, 0.36f, 0.58f, 0.16f, 0.45f, 0.140f},
    {1.26f, 0.22f, 0.66f, 0.32f, 0.40f, 0.095f},
};
constexpr float kPairCabScale = 1.35f;
constexpr float kPairWheelScale = 1.35f;

struct Vec2 {
    float x, y;
};

struct Polygon {
    std::vector<Vec2> v;
    float bb_min_x, bb_max_x, bb_min_y, bb_max_y;

    void finalize() {
        bb_min_x = bb_max_x = v[0].x;
        bb_min_y = bb_max_y = v[0].y;
        for (const auto& p : v) {
            bb_min_x = std::min(bb_min_x, p.x);
            bb_max_x = std::max(bb_max_x, p.x);
            bb_min_y = std::min(bb_min_y, p.y);
            bb_max_y = std::max(bb_max_y, p.y);
        }
    }

    bool contains(float px, float py) const {
        if (px < bb_min_x || px > bb_max_x || py < bb_min_y || py > bb_max_y) return false;
        bool inside = false;
        for (size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
            const Vec2& a = v[j];
            const Vec2& b = v[i];
            if ((b.y > py) != (a.y > py)) {
                const float xint = (a.x - b.x) * (py - b.y) / (a.y - b.y) + b.x;
                if (px < xint) inside = !inside;
            }
        }
        return inside;
    }
};

void check_range(bool ok, const char* field) {
    if (!ok) throw std::invalid_argument(std::string("scene params: ") + field + " out of range");
}

void validate(const SceneParams& p) {
    check_range(p.template_id >= 0 && p.template_id < kTemplateCount, "template_id");
    check_range(p.yaw_deg >= -75.f && p.yaw_deg <= 75.f, "yaw_deg");
    check_range(p.scale >= 0.6f && p.scale <= 1.f, "scale");
    for (float c : p.body_color) check_range(c >= 0.f && c <= 1.f, "body_color");
    check_range(p.background_id >= 0 && p.background_id <= 3, "background_id");
}

// Car-local vertices -> world: yaw squash/shear first, then uniform scale,
// then shift onto the ground line. Only x gets the yaw treatment.
struct CarTransform {
    float cos_yaw, sin_yaw, scale;
    Vec2 apply(float x, float y) const {
        const float xs = x * cos_yaw + kYawShear * y * sin_yaw;
        return {xs * scale, y * scale + kGroundY};
    }
};

std::vector<Polygon> car_polygons(const SceneParams& p) {
    const CarTemplate& t = car_template(p.template_id);
    const float yaw = p.yaw_deg * kPi / 180.f;
    const CarTransform tf{std::cos(yaw), std::sin(yaw), p.scale};

    std::vector<Polygon> polys;

    // body: rectangle sitting on the axle line
    Polygon body;
    const float hx = t.body_len * 0.5f;
    body.v = {tf.apply(-hx, 0.f), tf.apply(hx, 0.f), tf.apply(hx, -t.body_h), tf.apply(-hx, -t.body_h)};
    body.finalize();
    polys.push_back(std::move(body));

    // cab: centered trapezoid on the body roof (x-symmetric)
    Polygon cab;
    const float cb = t.cab_len * 0.5f;
    const float ct = cb * 0.6f;
    cab.v = {tf.apply(-cb, -t.body_h), tf.apply(cb, -t.body_h), tf.apply(ct, -t.body_h - t.cab_h),
             tf.apply(-ct, -t.body_h - t.cab_h)};
    cab.finalize();
    polys.push_back(std::move(cab));

    // wheels: 16-gons centered on the axle line. Offsets come from a quarter
    // table reflected explicitly so the vertex set is exactly x-symmetric.
    float qc[5], qs[5];
    for (int k = 0; k <= 4; ++k) {
        const float a = kPi * float(k) / 8.f;
        qc[k] = t.wheel_r * std::cos(a);
        qs[k] = t.wheel_r * std::sin(a);
    }
    qc[4] = 0.f;  // exact quarter point
    std::array<Vec2, kWheelSides> ring;
    for (int k = 0; k <= 4; ++k) ring[size_t(k)] = {qc[k], qs[k]};
    for (int k = 5; k <= 8; ++k) ring[size_t(k)] = {-qc[8 - k], qs[8 - k]};
    for (int k = 9; k <= 12; ++k) ring[size_t(k)] = {-qc[k - 8], -qs[k - 8]};
    for (int k = 13; k < 16; ++k) ring[size_t(k)] = {qc[16 - k], -qs[16 - k]};

    for (float wx : {-t.wheel_x, t.wheel_x}) {
        Polygon wheel;
        wheel.v.reserve(kWheelSides);
        for (const auto& o : ring) wheel.v.push_back(tf.apply(wx + o.x, o.y));
        wheel.finalize();
        polys.push_back(std::move(wheel));
    }
    return polys;
}

struct Background {
    // colors at the gradient endpoints plus texture parameters
    std::array<float, 3> c0, c1;
    int mode;          // 0 vertical, 1 horizontal, 2 diagonal, 3 textured
    float phase;       // jittered gradient phase in [-0.1, 0.1]
    float brightness;  // jittered offset in [-0.04, 0.04]

    void sample(float u, float v, float* rgb) const {
        float t = 0.f;
        switch (mode) {
            case 0: t = v; break;
            case 1: t = u; break;
            case 2: t = 0.5f * (u + v); break;
            case 3: t = v; break;
        }
        t = std::clamp(t + phase, 0.f, 1.f);
        float tex = 0.f;
        if (mode == 3) {
            // soft plaid, small amplitude so it stays clearly background
            tex = 0.05f * std::sin(u * 6.f * kPi) * std::sin(v * 6.f * kPi);
        }
        for (int c = 0; c < 3; ++c)
            rgb[c] = std::clamp(c0[c] * (1.f - t) + c1[c] * t + tex + brightness, 0.f, 1.f);
    }
};

Background make_background(int id, uint64_t jitter_seed) {
    static constexpr std::array<float, 3> kEnds[4][2] = {
        {{0.82f, 0.88f, 0.95f}, {0.55f, 0.62f, 0.70f}},  // sky-ish vertical
        {{0.90f, 0.86f, 0.78f}, {0.62f, 0.58f, 0.52f}},  // sand horizontal
        {{0.75f, 0.82f, 0.75f}, {0.45f, 0.55f, 0.50f}},  // green diagonal
        {{0.70f, 0.70f, 0.74f}, {0.52f, 0.52f, 0.56f}},  // grey textured
    };
    Rng rng(derive_seed(jitter_seed, "background"));
    Background bg;
    bg.c0 = kEnds[id][0];
    bg.c1 = kEnds[id][1];
    bg.mode = id;
    bg.phase = float(rng.uniform(-0.1, 0.1));
    bg.brightness = float(rng.uniform(-0.04, 0.04));
    return bg;
}

std::string sample_file(const std::string& dir, const std::string& id) { return dir + "/" + id + ".png"; }
std::string mask_file(const std::string& dir, const std::string& id) { return dir + "/" + id + "_mask.png"; }

SceneParams random_params(Rng& rng, int template_lo, int template_hi, uint64_t jitter_seed) {
    SceneParams p;
    p.template_id = template_lo + int(rng.below(uint64_t(template_hi - template_lo + 1)));
    p.yaw_deg = float(rng.uniform(-75.0, 75.0));
    p.scale = float(rng.uniform(0.6, 1.0));
    for (auto& c : p.body_color) c = float(rng.uniform(0.10, 0.95));
    p.background_id = int(rng.below(4));
    p.jitter_seed = jitter_seed;
    return p;
}

}  // namespace

const CarTemplate& car_template(int template_id) {
    static const std::array<CarTemplate, kTemplateCount> table = [] {
        std::array<CarTemplate, kTemplateCount> t{};
        for (int pair = 0; pair < 6; ++pair) {
            t[2 * pair] = kPairBase[pair];
            CarTemplate alt = kPairBase[pair];
            alt.cab_len *= kPairCabScale;
            alt.wheel_r *= kPairWheelScale;
            t[2 * pair + 1] = alt;
        }
        return t;
    }();
    if (template_id < 0 || template_id >= kTemplateCount)
        throw std::invalid_argument("scene params: template_id out of range");
    return table[template_id];
}

float template_width(int template_id) { return car_template(template_id).body_len; }

BBox silhouette_bbox(const SceneParams& params) {
    validate(params);
    const auto polys = car_polygons(params);
    BBox bb{polys[0].bb_min_x, polys[0].bb_max_x, polys[0].bb_min_y, polys[0].bb_max_y};
    for (const auto& poly : polys) {
        bb.min_x = std::min(bb.min_x, poly.bb_min_x);
        bb.max_x = std::max(bb.max_x, poly.bb_max_x);
        bb.min_y = std::min(bb.min_y, poly.bb_min_y);
        bb.max_y = std::max(bb.max_y, poly.bb_max_y);
    }
    return bb;
}

RenderedSample render_sample(const SceneParams& params) {
    validate(params);
    const auto polys = car_polygons(params);
    const Background bg = make_background(params.background_id, params.jitter_seed);

    // fill colors: body, cab (darker body), two wheels (near-black)
    const std::array<std::array<float, 3>, 4> fill = {{
        params.body_color,
        {params.body_color[0] * 0.78f, params.body_color[1] * 0.78f, params.body_color[2] * 0.78f},
        {0.10f, 0.10f, 0.11f},
        {0.10f, 0.10f, 0.11f},
    }};

    RenderedSample out;
    out.params = params;
    out.image = Image(kImageSize, kImageSize, 3);
    out.mask = Image(kImageSize, kImageSize, 1);

    const float inv = 1.f / float(kImageSize);
    for (int py = 0; py < kImageSize; ++py) {
        for (int px = 0; px < kImageSize; ++px) {
            float cov[4] = {0, 0, 0, 0};
            float cov_any = 0.f;
            for (int sy = 0; sy < kSub; ++sy) {
                for (int sx = 0; sx < kSub; ++sx) {
                    const float wx = -1.f + 2.f * (float(px) + (float(sx) + 0.5f) / kSub) * inv;
                    const float wy = -1.f + 2.f * (float(py) + (float(sy) + 0.5f) / kSub) * inv;
                    int hit = -1;
                    // later polygons draw over earlier ones
                    for (int k = int(polys.size()) - 1; k >= 0; --k) {
                        if (polys[k].contains(wx, wy)) {
                            hit = k;
                            break;
                        }
                    }
                    if (hit >= 0) {
                        cov[hit] += 1.f;
                        cov_any += 1.f;
                    }
                }
            }
            const float norm = 1.f / float(kSub * kSub);
            float rgb[3];
            const float u = (float(px) + 0.5f) * inv;
            const float v = (float(py) + 0.5f) * inv;
            bg.sample(u, v, rgb);
            for (int c = 0; c < 3; ++c) {
                float acc = rgb[c] * (1.f - cov_any * norm);
                for (int k = 0; k < 4; ++k) acc += fill[k][c] * cov[k] * norm;
                out.image.at(py, px, c) = acc;
            }
            out.mask.at(py, px, 0) = cov_any * norm >= 0.5f ? 1.f : 0.f;
        }
    }
    return out;
}

Image render(const SceneParams& params) { return render_sample(params).image; }

DatasetManifest make_source_dataset(int n, uint64_t seed, ImageStore& store,
                                    const std::string& image_dir) {
    if (n < 1) throw std::invalid_argument("make_source_dataset: n must be >= 1");
    DatasetManifest m;
    m.generator_seed = seed;
    m.split = "source";

    m.records.resize(size_t(n));
    for (int i = 0; i < n; ++i) {
        const uint64_t sample_seed = derive_seed(seed, "source-sample", uint64_t(i));
        Rng rng(sample_seed);
        const SceneParams p = random_params(rng, 0, kSourceTemplateMax, derive_seed(sample_seed, "jitter"));
        const RenderedSample s = render_sample(p);

        char id[32];
        std::snprintf(id, sizeof(id), "src_%06d", i);
        store.put(sample_file(image_dir, id), s.image);
        store.put(mask_file(image_dir, id), s.mask);

        ManifestRecord& r = m.records[size_t(i)];
        r.id = id;
        r.path = sample_file(image_dir, id);
        r.mask_path = mask_file(image_dir, id);
        r.pose_deg = p.yaw_deg;
        r.provenance = kProvReal;
        r.seed = sample_seed;
    }
    return m;
}

DatasetManifest make_target_dataset(int n_per_class, uint64_t seed, ImageStore& store,
                                    const std::string& image_dir) {
    if (n_per_class < 10) throw std::invalid_argument("make_target_dataset: n_per_class must be >= 10");
    DatasetManifest m;
    m.generator_seed = seed;
    m.split = "target";
    for (int c = 0; c < kNumClasses; ++c) {
        char name[8];
        std::snprintf(name, sizeof(name), "t%02d", kTargetTemplateMin + c);
        m.label_set.push_back(name);
    }

    for (int c = 0; c < kNumClasses; ++c) {
        for (int i = 0; i < n_per_class; ++i) {
            const uint64_t sample_seed =
                derive_seed(seed, "target-sample", uint64_t(c) * 1000003ull + uint64_t(i));
            Rng rng(sample_seed);
            SceneParams p = random_params(rng, 0, 0, derive_seed(sample_seed, "jitter"));
            p.template_id = kTargetTemplateMin + c;
            const RenderedSample s = render_sample(p);

            char id[32];
            std::snprintf(id, sizeof(id), "tgt_c%02d_%05d", c, i);
            store.put(sample_file(image_dir, id), s.image);
            store.put(mask_file(image_dir, id), s.mask);

            ManifestRecord r;
            r.id = id;
            r.path = sample_file(image_dir, id);
            r.mask_path = mask_file(image_dir, id);
            r.label = c;
            r.pose_deg = p.yaw_deg;
            r.provenance = kProvReal;
            r.seed = sample_seed;
            m.records.push_back(std::move(r));
        }
    }
    return m;
}

DatasetManifest import_folder(const std::string& path, LabelRule rule, ImageStore& store,
                              const std::string& image_dir) {
    if (!fs::exists(path)) throw std::runtime_error("import_folder: no such path " + path);

    std::map<std::string, std::string> sidecar_labels;
    if (rule == LabelRule::kSidecar) {
        std::ifstream in(fs::path(path) / "labels.json");
        if (!in) throw std::runtime_error("import_folder: labels.json not found in " + path);
        nlohmann::json j;
        in >> j;
        for (auto& [k, v] : j.items()) sidecar_labels[k] = v.get<std::string>();
    }

    // gather (file, label-name) pairs in sorted order for determinism
    std::vector<std::pair<fs::path, std::string>> files;
    std::vector<fs::path> listing;
    for (const auto& e : fs::recursive_directory_iterator(path)) listing.push_back(e.path());
    std::sort(listing.begin(), listing.end());
    for (const auto& p : listing) {
        if (!fs::is_regular_file(p)) continue;
        std::string label;
        if (rule == LabelRule::kSubdir) {
            const fs::path rel = fs::relative(p, path);
            if (rel.has_parent_path()) label = rel.begin()->string();
        } else {
            auto it = sidecar_labels.find(p.filename().string());
            if (it != sidecar_labels.end()) label = it->second;
        }
        if (label.empty()) continue;
        files.emplace_back(p, label);
    }

    DatasetManifest m;
    m.split = "imported";
    std::map<std::string, int> label_index;
    int imported = 0;
    for (const auto& [file, label_name] : files) {
        Image img;
        try {
            img = read_png(file.string());
        } catch (const std::exception& e) {
            std::fprintf(stderr, "import_folder: skipping %s (%s)\n", file.c_str(), e.what());
            continue;
        }
        if (img.channels == 1) {
            Image rgb(img.height, img.width, 3);
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x)
                    for (int c = 0; c < 3; ++c) rgb.at(y, x, c) = img.at(y, x, 0);
            img = std::move(rgb);
        }
        const Image normalized = resize_center_crop(img, kImageSize);

        auto [it, fresh] = label_index.emplace(label_name, int(m.label_set.size()));
        if (fresh) m.label_set.push_back(label_name);

        char id[32];
        std::snprintf(id, sizeof(id), "imp_%06d", imported);
        store.put(sample_file(image_dir, id), normalized);

        ManifestRecord r;
        r.id = id;
        r.path = sample_file(image_dir, id);
        r.label = it->second;
        r.provenance = kProvReal;
        m.records.push_back(std::move(r));
        ++imported;
    }
    if (m.records.empty()) throw std::runtime_error("import_folder: no images found in " + path);
    return m;
}

}  // namespace dapper::scenegen
