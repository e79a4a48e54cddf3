#pragma once

#include <stdexcept>
#include <string>

namespace sacvit {

enum class ErrorCode {
    invalid_argument,
    shape_mismatch,
    io,
    format,
    truncated,
    tolerance,
    internal,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

    ErrorCode code() const { return code_; }

  private:
    ErrorCode code_;
};

[[noreturn]] inline void throw_invalid(const std::string& msg) {
    throw Error(ErrorCode::invalid_argument, msg);
}

[[noreturn]] inline void throw_shape(const std::string& msg) {
    throw Error(ErrorCode::shape_mismatch, msg);
}

[[noreturn]] inline void throw_io(const std::string& msg) {
    throw Error(ErrorCode::io, msg);
}

[[noreturn]] inline void throw_format(const std::string& msg) {
    throw Error(ErrorCode::format, msg);
}

[[noreturn]] inline void throw_truncated(const std::string& msg) {
    throw Error(ErrorCode::truncated, msg);
}

[[noreturn]] inline void throw_internal(const std::string& msg) {
    throw Error(ErrorCode::internal, msg);
}

} // namespace sacvit
