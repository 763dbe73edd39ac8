#pragma once

#include <stdexcept>
#include <string>

namespace sphere_ssm {

// Error taxonomy mirrored by CLI exit codes:
//   UsageError -> 1 (bad flags, bad config, shape/contract misuse)
//   DataError  -> 2 (missing/corrupt files, malformed inputs)
//   NumericError -> 3 (non-finite values, divergence, degenerate statistics)
class SsmError : public std::runtime_error {
public:
    SsmError(std::string msg, int exit_code)
        : std::runtime_error(std::move(msg)), exit_code_(exit_code) {}
    int exit_code() const noexcept { return exit_code_; }

private:
    int exit_code_;
};

class UsageError : public SsmError {
public:
    explicit UsageError(std::string msg) : SsmError(std::move(msg), 1) {}
};

class DataError : public SsmError {
public:
    explicit DataError(std::string msg) : SsmError(std::move(msg), 2) {}
};

class NumericError : public SsmError {
public:
    explicit NumericError(std::string msg) : SsmError(std::move(msg), 3) {}
};

} // namespace sphere_ssm
