#pragma once

#include <string>
#include <vector>

namespace defend::cli {

// Exit codes: 0 success, 1 config error, 2 data error, 3 numeric failure.
int run(const std::vector<std::string>& args);

}  // namespace defend::cli
