#pragma once

#include <ostream>

namespace rrrn {

/// Entry point of the `rrrn` tool. Returns 0 on success, 1 on a runtime
/// failure and 2 on a usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rrrn
