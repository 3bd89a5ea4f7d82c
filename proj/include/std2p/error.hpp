#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace std2p {

enum class ErrorKind {
  validation,  // bad input data or configuration
  io,          // unreadable/unwritable files, malformed containers
  internal     // an invariant that should hold by construction did not
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const noexcept { return kind_; }
  // Short machine-readable identifier, e.g. "shape-mismatch".
  const std::string& code() const noexcept { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}

}  // namespace detail

template <typename... Args>
[[noreturn]] void fail(std::string code, Args&&... args) {
  throw Error(ErrorKind::validation, std::move(code), detail::concat(std::forward<Args>(args)...));
}

template <typename... Args>
[[noreturn]] void fail_io(Args&&... args) {
  throw Error(ErrorKind::io, "io-error", detail::concat(std::forward<Args>(args)...));
}

template <typename... Args>
[[noreturn]] void fail_internal(Args&&... args) {
  throw Error(ErrorKind::internal, "internal", detail::concat(std::forward<Args>(args)...));
}

}  // namespace std2p
