#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dapper {

// Append-only run ledger (JSONL). A stage is re-run only when its input
// fingerprint (config section + upstream artifact hashes) changes or its
// outputs are missing.
struct LedgerEntry {
    std::string stage;
    std::string status;  // "ok" | "cached" | "failed"
    uint64_t input_hash = 0;
    std::map<std::string, uint64_t> outputs;  // artifact path -> content hash
    double wall_time_s = 0.0;
};

class RunLedger {
public:
    static RunLedger open(const std::string& path);

    void append(const LedgerEntry& entry);
    // newest successful entry for the stage, if any
    const LedgerEntry* last_ok(const std::string& stage) const;
    const std::vector<LedgerEntry>& entries() const { return entries_; }

private:
    std::string path_;
    std::vector<LedgerEntry> entries_;
};

// FNV-1a over file bytes; throws when the file cannot be read.
uint64_t hash_file(const std::string& path);

}  // namespace dapper
