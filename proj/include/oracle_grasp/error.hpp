#pragma once

#include <stdexcept>
#include <string>

namespace oracle_grasp {

/// Broad failure category. The CLI maps these onto exit codes.
enum class ErrorKind {
    kInvalidArgument,  // precondition or type invariant violated
    kConfig,           // bad configuration or usage
    kIo,               // file missing, unreadable, or malformed
    kOracle,           // oracle transport, parse, or replay failure
    kPipeline,         // pipeline could not produce a result
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace oracle_grasp
