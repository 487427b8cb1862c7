#pragma once

#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace partloc::cli {

/// Process exit status of a command; each failure class has its own value.
enum ExitCode : int {
  kOk = 0,
  kUsage = 2,           // unknown flag, bad flag value, missing argument
  kMissingProject = 3,  // no project.yaml at the given path
  kPrecondition = 4,    // an earlier workflow step has not been run
  kInvalidData = 5,     // malformed config, labels, weights or reports
  kEnvironment = 6,     // external tool missing or failing
  kFailure = 7,         // anything else
};

/// Code names used in the error line "error code=<name> exit=<n>: <message>".
std::string exit_code_name(int code);

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::vector<std::string> subcommands();

struct OptionDoc {
  std::string name;
  std::string description;
};

/// Every flag and positional a subcommand accepts, with its help text.
std::vector<OptionDoc> option_docs(const std::string& subcommand);

}  // namespace partloc::cli
