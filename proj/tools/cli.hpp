#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dynhd::cli {

enum ExitCode : int {
    kOk = 0,
    kInternal = 1,
    kUsage = 2,
    kIo = 3,
    kValidation = 4,
    kTraining = 5,
};

/// Runs one subcommand. Failures print a single line
/// `dynhd: error code=<n> kind=<kind>: <message>` to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int dispatch(int argc, char** argv);

}  // namespace dynhd::cli
