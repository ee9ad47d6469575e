#include "dapper/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "dapper/rng.hpp"

namespace dapper {

Param& ParamStore::add(const std::string& name, Array value, bool frozen) {
    if (entries_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
    Param p;
    p.grad = zeros_like(value);
    p.value = std::move(value);
    p.frozen = frozen;
    return entries_.emplace(name, std::move(p)).first->second;
}

Param& ParamStore::at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParamStore: no entry " + name);
    return it->second;
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::out_of_range("ParamStore: no entry " + name);
    return it->second;
}

void ParamStore::zero_grads() {
    for (auto& [name, p] : entries_) p.grad.fill(0.f);
}

void ParamStore::set_all_frozen(bool frozen) {
    for (auto& [name, p] : entries_) p.frozen = frozen;
}

size_t ParamStore::total_params() const {
    size_t n = 0;
    for (const auto& [name, p] : entries_) n += p.value.numel();
    return n;
}

uint64_t ParamStore::value_checksum() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, p] : entries_) {
        h = stable_hash(name, h);
        const char* bytes = reinterpret_cast<const char*>(p.value.ptr());
        h = stable_hash(std::string_view(bytes, p.value.numel() * sizeof(float)), h);
    }
    return h;
}

void ParamStore::save(const std::string& path) const {
    nlohmann::json header;
    header["format"] = "dapper-checkpoint-v1";
    size_t offset = 0;
    nlohmann::json arrays = nlohmann::json::array();
    for (const auto& [name, p] : entries_) {
        nlohmann::json a;
        a["name"] = name;
        a["shape"] = p.value.shape;
        a["offset"] = offset;
        a["frozen"] = p.frozen;
        arrays.push_back(a);
        offset += p.value.numel() * sizeof(float);
    }
    header["arrays"] = arrays;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out << header.dump() << '\n';
    for (const auto& [name, p] : entries_) {
        out.write(reinterpret_cast<const char*>(p.value.ptr()),
                  std::streamsize(p.value.numel() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

ParamStore ParamStore::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string header_line;
    if (!std::getline(in, header_line)) throw std::runtime_error("checkpoint: missing header in " + path);
    nlohmann::json header = nlohmann::json::parse(header_line);
    if (header.value("format", "") != "dapper-checkpoint-v1")
        throw std::runtime_error("checkpoint: unknown format in " + path);

    const std::streampos blob_start = in.tellg();
    ParamStore store;
    for (const auto& a : header.at("arrays")) {
        const std::string name = a.at("name").get<std::string>();
        Array arr(a.at("shape").get<std::vector<int>>());
        in.seekg(blob_start + std::streampos(a.at("offset").get<size_t>()));
        in.read(reinterpret_cast<char*>(arr.ptr()), std::streamsize(arr.numel() * sizeof(float)));
        if (!in) throw std::runtime_error("checkpoint: truncated blob for " + name);
        store.add(name, std::move(arr), a.at("frozen").get<bool>());
    }
    return store;
}

void Adam::step(ParamStore& params) {
    ++step_count_;
    const float bc1 = 1.f - std::pow(beta1_, float(step_count_));
    const float bc2 = 1.f - std::pow(beta2_, float(step_count_));
    for (auto& [name, p] : params.entries()) {
        if (p.frozen) continue;
        auto& mom = moments_[name];
        if (mom.m.empty()) {
            mom.m = zeros_like(p.value);
            mom.v = zeros_like(p.value);
        }
        if (!p.grad.same_shape(p.value)) throw std::invalid_argument("adam: grad shape mismatch for " + name);
        float* w = p.value.ptr();
        const float* g = p.grad.ptr();
        float* m = mom.m.ptr();
        float* v = mom.v.ptr();
        const size_t n = p.value.numel();
        for (size_t i = 0; i < n; ++i) {
            m[i] = beta1_ * m[i] + (1.f - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.f - beta2_) * g[i] * g[i];
            const float mhat = m[i] / bc1;
            const float vhat = v[i] / bc2;
            w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

GradCheckReport grad_check(const std::function<double(bool)>& loss, ParamStore& params, float eps,
                           int min_coords, uint64_t seed) {
    if (eps <= 0.f) throw std::invalid_argument("grad_check: eps must be positive");
    // One analytic pass fills every grad buffer.
    loss(true);

    GradCheckReport report;
    for (auto& [name, p] : params.entries()) {
        if (p.frozen) continue;
        GradCheckReport::Entry entry;
        entry.name = name;

        const size_t n = p.value.numel();
        std::vector<size_t> coords;
        if (n <= size_t(min_coords)) {
            coords.resize(n);
            for (size_t i = 0; i < n; ++i) coords[i] = i;
        } else {
            Rng rng(derive_seed(seed, name));
            coords.resize(size_t(min_coords));
            for (auto& c : coords) c = rng.below(n);
        }

        for (size_t c : coords) {
            const float keep = p.value[c];
            p.value[c] = keep + eps;
            const double fp = loss(false);
            p.value[c] = keep - eps;
            const double fm = loss(false);
            p.value[c] = keep;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::runtime_error("grad_check: non-finite loss perturbing " + name);
            const double fd = (fp - fm) / (2.0 * double(eps));
            const double ga = double(p.grad[c]);
            const double rel = std::abs(ga - fd) / std::max(1e-8, std::abs(ga) + std::abs(fd));
            entry.max_rel_err = std::max(entry.max_rel_err, float(rel));
            ++entry.checked_coords;
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace dapper
