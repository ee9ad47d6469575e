#include "dapper/ledger.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "dapper/rng.hpp"

using nlohmann::json;

namespace dapper {

RunLedger RunLedger::open(const std::string& path) {
    RunLedger ledger;
    ledger.path_ = path;
    std::ifstream in(path);
    std::string line;
    while (in && std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        LedgerEntry e;
        e.stage = j.at("stage").get<std::string>();
        e.status = j.at("status").get<std::string>();
        e.input_hash = j.at("input_hash").get<uint64_t>();
        for (auto& [k, v] : j.at("outputs").items()) e.outputs[k] = v.get<uint64_t>();
        e.wall_time_s = j.at("wall_time_s").get<double>();
        ledger.entries_.push_back(std::move(e));
    }
    return ledger;
}

void RunLedger::append(const LedgerEntry& entry) {
    entries_.push_back(entry);
    std::filesystem::create_directories(std::filesystem::path(path_).parent_path());
    std::ofstream out(path_, std::ios::app);
    if (!out) throw std::runtime_error("ledger: cannot append to " + path_);
    json j;
    j["stage"] = entry.stage;
    j["status"] = entry.status;
    j["input_hash"] = entry.input_hash;
    j["outputs"] = entry.outputs;
    j["wall_time_s"] = entry.wall_time_s;
    out << j.dump() << '\n';
}

const LedgerEntry* RunLedger::last_ok(const std::string& stage) const {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it)
        if (it->stage == stage && (it->status == "ok" || it->status == "cached")) return &*it;
    return nullptr;
}

uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("hash_file: cannot open " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        const std::streamsize got = in.gcount();
        h = stable_hash(std::string_view(buf, size_t(got)), h);
    }
    return h;
}

}  // namespace dapper
