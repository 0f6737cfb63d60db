#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dolfin {

enum class ErrorKind {
  validation,
  capacity,
  range,
  config,
  shape,
  domain,
  ordering,
  io,
  parse,
  unsupported,
  numeric,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Base error for the toolkit. `kind()` is stable and machine-readable; the
/// message carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace dolfin
