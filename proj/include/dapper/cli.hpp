#pragma once

#include <string>
#include <vector>

namespace dapper::cli {

// Entry point of the `dapper` tool: dapper <stage> --config <path> [--out dir]
// [--seed n] [--stage-force]. Exit codes: 0 success, 1 stage failure,
// 2 usage/config error.
int run(const std::vector<std::string>& args);

}  // namespace dapper::cli
