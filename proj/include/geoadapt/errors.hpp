#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace geoadapt {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument or violated precondition at an API boundary.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// A cloud whose points are all identical cannot be scaled to the unit ball.
class DegenerateCloudError : public Error {
 public:
  using Error::Error;
};

// An internal contract was violated (stale cache, coordinate out of the
// normalized range, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed file. Carries the byte offset at which parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t byte_offset)
      : Error(what + " (at byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}

  std::size_t byte_offset() const { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

// Checkpoint is corrupt or does not match the expected model shapes.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace geoadapt
