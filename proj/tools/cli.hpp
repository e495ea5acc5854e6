#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cgdro::cli {

/// Exit codes: 0 success, 1 usage/validation/parse/IO error, 2 numerical failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cgdro::cli
