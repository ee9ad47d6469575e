#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dapper/image.hpp"

namespace dapper {

// Provenance tags carried by every record.
inline constexpr const char* kProvReal = "real";
inline constexpr const char* kProvPerturb = "synthetic-perturb";
inline constexpr const char* kProvTraverse = "synthetic-traverse";
inline constexpr const char* kProvAffine = "affine";

struct ManifestRecord {
    std::string id;
    std::string path;                 // image ref, relative to the run root
    std::string mask_path;            // empty when the sample has no mask
    std::optional<int> label;         // index into label_set
    std::optional<float> pose_deg;
    std::string provenance;
    uint64_t seed = 0;                // per-sample seed
    std::string source_id;            // originating real sample for synthetics
};

// Ordered dataset records plus split metadata. Serialized as line-delimited
// JSON: one header line (kind=header) followed by one line per record.
struct DatasetManifest {
    std::vector<std::string> label_set;
    uint64_t generator_seed = 0;
    std::string split = "all";
    std::vector<ManifestRecord> records;

    void validate() const;  // unique ids, labels within set, provenance present
    void save(const std::string& path) const;
    static DatasetManifest load(const std::string& path);

    std::vector<size_t> indices_of_label(int label) const;
    std::map<int, int> label_counts() const;
};

// Resolves manifest image refs. The disk store reads/writes PNG under a
// root; the memory store keeps images in RAM (used by the sweep to avoid
// I/O in inner loops) with optional disk fallback for refs it has not seen.
class ImageStore {
public:
    virtual ~ImageStore() = default;
    virtual Image get(const std::string& ref) const = 0;
    virtual void put(const std::string& ref, const Image& img) = 0;
};

class DiskImageStore : public ImageStore {
public:
    explicit DiskImageStore(std::string root) : root_(std::move(root)) {}
    Image get(const std::string& ref) const override;
    void put(const std::string& ref, const Image& img) override;
    const std::string& root() const { return root_; }

private:
    std::string root_;
};

class MemoryImageStore : public ImageStore {
public:
    MemoryImageStore() = default;
    explicit MemoryImageStore(const ImageStore* fallback) : fallback_(fallback) {}
    Image get(const std::string& ref) const override;
    void put(const std::string& ref, const Image& img) override;
    size_t size() const { return images_.size(); }

private:
    std::map<std::string, Image> images_;
    const ImageStore* fallback_ = nullptr;
};

}  // namespace dapper
