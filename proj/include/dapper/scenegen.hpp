#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "dapper/image.hpp"
#include "dapper/manifest.hpp"

namespace dapper::scenegen {

inline constexpr int kImageSize = 32;
inline constexpr int kTemplateCount = 12;
// Templates 8..11 never appear in the source (GAN-training) world; the
// target label set spans templates 2..11, so four target classes are unseen
// by the generator.
inline constexpr int kSourceTemplateMax = 7;
inline constexpr int kTargetTemplateMin = 2;
inline constexpr int kNumClasses = 10;

struct SceneParams {
    int template_id = 0;
    float yaw_deg = 0.f;     // [-75, 75]
    float scale = 1.f;       // [0.6, 1.0]
    std::array<float, 3> body_color = {0.8f, 0.2f, 0.2f};
    int background_id = 0;   // [0, 3]
    uint64_t jitter_seed = 0;
};

struct RenderedSample {
    Image image;  // 32x32x3 in [0,1]
    Image mask;   // 32x32x1, binary foreground coverage
    SceneParams params;
};

// Geometry of one car template in car-local units. Pairs (2k, 2k+1) differ
// only in cab length and wheel radius.
struct CarTemplate {
    float body_len;   // total x extent; the template width
    float body_h;
    float cab_len;
    float cab_h;
    float wheel_x;    // wheel center offset from origin
    float wheel_r;
};

const CarTemplate& car_template(int template_id);
float template_width(int template_id);

// Pure function of params; throws std::invalid_argument naming the field
// when out of range.
RenderedSample render_sample(const SceneParams& params);
Image render(const SceneParams& params);

struct BBox {
    float min_x, max_x, min_y, max_y;
    float width() const { return max_x - min_x; }
};
// Bounding box of the transformed silhouette vertices in world coordinates.
BBox silhouette_bbox(const SceneParams& params);

// Writes images/masks through the store under `image_dir` and returns the
// manifest (not yet saved). Unlabeled, templates 0..7, pose recorded.
DatasetManifest make_source_dataset(int n, uint64_t seed, ImageStore& store,
                                    const std::string& image_dir);

// 10 labeled classes = templates 2..11, n_per_class each, pose recorded.
DatasetManifest make_target_dataset(int n_per_class, uint64_t seed, ImageStore& store,
                                    const std::string& image_dir);

enum class LabelRule { kSubdir, kSidecar };

// Ingest a folder of PNGs (class subdirectories, or labels.json sidecar
// mapping file name to label). Images are resized/center-cropped to 32x32
// and rewritten through the store. Unreadable files are skipped with a
// warning on stderr; an empty result is an error.
DatasetManifest import_folder(const std::string& path, LabelRule rule, ImageStore& store,
                              const std::string& image_dir);

}  // namespace dapper::scenegen
