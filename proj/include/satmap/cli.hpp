#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace satmap::cli {

// Exit codes: 0 success, 1 usage error, 2 data error, 3 failed check.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace satmap::cli
