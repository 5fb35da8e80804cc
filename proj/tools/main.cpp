#include <string>
#include <vector>

#include "defend/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return defend::cli::run(args);
}
