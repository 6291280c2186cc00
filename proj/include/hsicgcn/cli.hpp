#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hsicgcn {

/// Runs one CLI invocation. `args` excludes the program name. Returns the
/// process exit status; failures print one line `error: <message>` to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hsicgcn
