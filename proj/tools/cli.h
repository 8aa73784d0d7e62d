#pragma once

#include <ostream>

namespace rfhit::cli {

/// Entry point of the `rfhit` tool. Returns the process exit code: 0 on
/// success, nonzero when any error fired.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rfhit::cli
