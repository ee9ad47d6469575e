#include <string>
#include <vector>

#include "dapper/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dapper::cli::run(args);
}
