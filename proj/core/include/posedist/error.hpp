#pragma once

#include <stdexcept>
#include <string>

namespace posedist {

enum class ErrorKind {
  Shape,       // operand shapes do not conform
  Degenerate,  // geometrically degenerate input (collinear 6D, coincident points)
  Numeric,     // non-finite values, failed factorizations
  Config,      // invalid or unknown configuration
  Data,        // missing or malformed files, schema mismatch
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace posedist
