#pragma once

#include <stdexcept>
#include <string>

namespace clear {

// Error taxonomy used across the pipeline. The CLI maps kinds onto exit
// codes: config -> 1 (validation), service -> 3, everything else -> 2.
enum class ErrorKind {
    config,      // bad configuration / usage
    parse,       // malformed input file or service payload
    contract,    // violated call contract (dims, ranges, unresolved state)
    capacity,    // not enough data to satisfy a request
    service,     // remote service failure
    data,        // inconsistent pipeline artifact
    divergence,  // non-finite loss during training
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

  private:
    ErrorKind kind_;
};

inline const char* error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::config: return "config";
        case ErrorKind::parse: return "parse";
        case ErrorKind::contract: return "contract";
        case ErrorKind::capacity: return "capacity";
        case ErrorKind::service: return "service";
        case ErrorKind::data: return "data";
        case ErrorKind::divergence: return "divergence";
    }
    return "unknown";
}

}  // namespace clear
