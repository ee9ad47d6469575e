#include "dapper/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace dapper {

void DatasetManifest::validate() const {
    std::set<std::string> ids;
    for (const auto& r : records) {
        if (!ids.insert(r.id).second) throw std::runtime_error("manifest: duplicate id " + r.id);
        if (r.provenance.empty()) throw std::runtime_error("manifest: missing provenance on " + r.id);
        if (r.label && (*r.label < 0 || *r.label >= int(label_set.size())))
            throw std::runtime_error("manifest: label out of range on " + r.id);
    }
}

void DatasetManifest::save(const std::string& path) const {
    validate();
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("manifest: cannot write " + path);

    json header;
    header["kind"] = "header";
    header["schema"] = "dapper-manifest-v1";
    header["label_set"] = label_set;
    header["generator_seed"] = generator_seed;
    header["split"] = split;
    out << header.dump() << '\n';

    for (const auto& r : records) {
        json j;
        j["id"] = r.id;
        j["path"] = r.path;
        if (!r.mask_path.empty()) j["mask_path"] = r.mask_path;
        if (r.label)
            j["label"] = *r.label;
        else
            j["label"] = nullptr;
        if (r.pose_deg)
            j["pose_deg"] = *r.pose_deg;
        else
            j["pose_deg"] = nullptr;
        j["provenance"] = r.provenance;
        j["seed"] = r.seed;
        if (!r.source_id.empty()) j["source_id"] = r.source_id;
        out << j.dump() << '\n';
    }
}

DatasetManifest DatasetManifest::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("manifest: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("manifest: empty file " + path);
    json header = json::parse(line);
    if (header.value("schema", "") != "dapper-manifest-v1")
        throw std::runtime_error("manifest: unknown schema in " + path);

    DatasetManifest m;
    m.label_set = header.at("label_set").get<std::vector<std::string>>();
    m.generator_seed = header.at("generator_seed").get<uint64_t>();
    m.split = header.value("split", "all");

    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        ManifestRecord r;
        r.id = j.at("id").get<std::string>();
        r.path = j.at("path").get<std::string>();
        r.mask_path = j.value("mask_path", "");
        if (!j.at("label").is_null()) r.label = j.at("label").get<int>();
        if (!j.at("pose_deg").is_null()) r.pose_deg = j.at("pose_deg").get<float>();
        r.provenance = j.at("provenance").get<std::string>();
        r.seed = j.at("seed").get<uint64_t>();
        r.source_id = j.value("source_id", "");
        m.records.push_back(std::move(r));
    }
    m.validate();
    return m;
}

std::vector<size_t> DatasetManifest::indices_of_label(int label) const {
    std::vector<size_t> out;
    for (size_t i = 0; i < records.size(); ++i)
        if (records[i].label && *records[i].label == label) out.push_back(i);
    return out;
}

std::map<int, int> DatasetManifest::label_counts() const {
    std::map<int, int> counts;
    for (const auto& r : records)
        if (r.label) counts[*r.label]++;
    return counts;
}

Image DiskImageStore::get(const std::string& ref) const {
    return read_png((fs::path(root_) / ref).string());
}

void DiskImageStore::put(const std::string& ref, const Image& img) {
    const fs::path p = fs::path(root_) / ref;
    fs::create_directories(p.parent_path());
    write_png(p.string(), img);
}

Image MemoryImageStore::get(const std::string& ref) const {
    auto it = images_.find(ref);
    if (it != images_.end()) return it->second;
    if (fallback_) return fallback_->get(ref);
    throw std::runtime_error("image store: no image for ref " + ref);
}

void MemoryImageStore::put(const std::string& ref, const Image& img) { images_[ref] = img; }

}  // namespace dapper
