#pragma once

#include <string>

namespace catreid::cli {

inline constexpr const char* kToolkitVersion = "0.1.0";

/// Runs the command line; returns the process exit code. Failures print one
/// line to stderr: `catreid: error kind=<kind> code=<n> message="<text>"`.
int run(int argc, char** argv);

/// Markdown reference of every subcommand flag and training config key.
std::string reference_markdown();

}  // namespace catreid::cli
