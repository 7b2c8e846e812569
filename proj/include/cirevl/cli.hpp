#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cirevl::cli {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitPartial = 3;

/// Entry point for the `cirevl` tool. `args` excludes the program name.
int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cirevl::cli
