#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "deformreg/error.hpp"

namespace deformreg {

// Process exit codes.
enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitValidation = 2,
    kExitNumerical = 3,
    kExitIo = 4,
};

int exit_code_for(ErrorKind kind);

// Runs one command line (args[0] is the program name). Never throws.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

// "<hash>  <name>" for every regular file under dir (sorted by name),
// skipping the manifest itself and timing.txt.
std::string build_manifest(const std::filesystem::path& dir);

} // namespace deformreg
