#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mslr {

// Exit codes: 0 success, 1 runtime failure (including a failed gradient
// check), 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mslr
