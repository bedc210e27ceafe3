#pragma once

#include <stdexcept>
#include <string>

namespace toothbox {

// Malformed on-disk data (bad magic, truncated payload, bad header field).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A value that parsed fine but violates a domain invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem failure; the message always carries the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Division refused for a specific box (empty band, one-sided surface).
class DivisionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace toothbox
