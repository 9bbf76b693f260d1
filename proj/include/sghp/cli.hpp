#pragma once
// Command-line front end: simulate, train, evaluate, export-kernels,
// validate. Lives in the library so tests can drive it in-process.
#include <iosfwd>
#include <string>
#include <vector>

namespace sghp::cli {

/// args excludes the program name. Errors are reported on `err` as one
/// `code: message` line; files written by a failed run are removed.
/// Returns the process exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sghp::cli
