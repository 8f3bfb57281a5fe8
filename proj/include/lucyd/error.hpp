#pragma once

#include <stdexcept>
#include <string>

namespace lucyd {

// Categories map one-to-one onto the C API status codes and CLI exit codes.
enum class ErrorKind {
  usage = 1,      // invalid argument or precondition violation
  data = 2,       // unreadable, malformed or missing data
  numerical = 3,  // non-finite values or failed numerical check
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail_usage(const std::string& what) {
  throw Error(ErrorKind::usage, what);
}

[[noreturn]] inline void fail_data(const std::string& what) {
  throw Error(ErrorKind::data, what);
}

[[noreturn]] inline void fail_numerical(const std::string& what) {
  throw Error(ErrorKind::numerical, what);
}

}  // namespace lucyd
