#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pdm::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 invalid config / usage /
/// out-of-order invocation. On failure a one-line JSON error record is
/// written to `err`; on success a JSON summary goes to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int main(int argc, char** argv);

}  // namespace pdm::cli
