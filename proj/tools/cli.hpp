#pragma once

#include <ostream>

namespace densecount::cli {

// Runs one subcommand. Exit codes: 0 success, 1 usage error, 2 data error,
// 3 numeric abort.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace densecount::cli
