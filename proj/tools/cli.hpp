#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace h2m::cli {

// Exit codes: 0 success, 1 validation or usage error, 2 runtime failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int main(int argc, char** argv);

}  // namespace h2m::cli
