#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dapper/array.hpp"

namespace dapper {

// One named tensor with its gradient buffer. Frozen entries are never
// touched by the optimizer; a checksum over the values lets callers assert
// that (used by the projector to prove the generator stayed frozen).
struct Param {
    Array value;
    Array grad;
    bool frozen = false;
};

class ParamStore {
public:
    Param& add(const std::string& name, Array value, bool frozen = false);
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    bool contains(const std::string& name) const { return entries_.count(name) > 0; }

    std::map<std::string, Param>& entries() { return entries_; }
    const std::map<std::string, Param>& entries() const { return entries_; }

    void zero_grads();
    void set_all_frozen(bool frozen);
    size_t total_params() const;

    // FNV-1a over the raw float bytes of every value array, in name order.
    uint64_t value_checksum() const;

    // Checkpoint container: single-line UTF-8 JSON header (names, shapes,
    // byte offsets, frozen flags) terminated by '\n', then raw little-endian
    // float32 blobs. Round-trips byte-exactly.
    void save(const std::string& path) const;
    static ParamStore load(const std::string& path);

private:
    std::map<std::string, Param> entries_;
};

// Adaptive-moment optimizer over a ParamStore. Moment buffers are keyed by
// entry name; frozen entries are skipped entirely.
class Adam {
public:
    Adam(float lr = 1e-3f, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void set_lr(float lr) { lr_ = lr; }
    float lr() const { return lr_; }

    // Applies one update from the grads currently stored in `params`.
    void step(ParamStore& params);

private:
    struct Moments {
        Array m, v;
    };
    float lr_, beta1_, beta2_, eps_;
    long step_count_ = 0;
    std::map<std::string, Moments> moments_;
};

struct GradCheckReport {
    struct Entry {
        std::string name;
        float max_rel_err = 0.f;
        int checked_coords = 0;
    };
    std::vector<Entry> entries;
    float max_rel_err = 0.f;
    bool passed(float tol) const { return max_rel_err < tol; }
};

// Central-difference gradient check. `loss` must be pure; when called with
// `true` it must also populate the grad buffers of every trainable entry.
// Large arrays are spot-checked on >= `min_coords` deterministically sampled
// coordinates. Relative error: |ga - gfd| / max(1e-8, |ga| + |gfd|).
GradCheckReport grad_check(const std::function<double(bool compute_grads)>& loss,
                           ParamStore& params, float eps, int min_coords = 32,
                           uint64_t seed = 0x9e3779b9ull);

}  // namespace dapper
