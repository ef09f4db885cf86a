// errors.hpp: exception taxonomy shared by the whole library.
//
// Three kinds, matching the CLI exit-code contract: usage errors (bad config,
// bad schema, exit 2), data errors (a dataset that violates its invariants),
// and numeric errors (solver failures, degenerate neighborhoods, divergence).
// Data and numeric errors both map to exit 1; they are separate kinds so the
// structured error output can say which stage rejected the run.
#pragma once

#include <stdexcept>
#include <string>

namespace civet {

enum class ErrorKind { usage, data, numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

    const char* kind_name() const {
        switch (kind_) {
            case ErrorKind::usage: return "usage";
            case ErrorKind::data: return "data";
            case ErrorKind::numeric: return "numeric";
        }
        return "unknown";
    }

private:
    ErrorKind kind_;
};

inline Error usage_error(const std::string& msg) { return Error(ErrorKind::usage, msg); }
inline Error data_error(const std::string& msg) { return Error(ErrorKind::data, msg); }
inline Error numeric_error(const std::string& msg) { return Error(ErrorKind::numeric, msg); }

} // namespace civet
