#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "dualpath/config.hpp"

namespace dualpath {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Runs one command. args excludes the program name. Diagnostics go to err as
// a single line; --help text goes to out.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// One ablation cell: the keys that vary and the resolved config.
struct AblationCell {
  std::vector<std::pair<std::string, std::string>> settings;
  RunConfig config;
};

// Matrix file: "key = v1 | v2 | ..." per line; "k1,k2 = ..." sets several
// keys to the same value. Cells enumerate the cartesian product with the
// first line varying slowest.
std::vector<AblationCell> expand_ablation_matrix(const std::string& text, const RunConfig& base);

extern const std::vector<std::string> kAblationHeader;

}  // namespace dualpath
