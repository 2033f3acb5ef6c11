#pragma once

#include <stdexcept>
#include <string>

namespace arraybit {

/// Caller supplied something malformed: bad coordinates, unknown names,
/// mismatched lengths, unparsable query text.
class input_error : public std::invalid_argument {
 public:
  explicit input_error(const std::string& what) : std::invalid_argument(what) {}
};

/// Stored data is unreadable or inconsistent (truncated files, bad magic,
/// schema mismatch between an index and its array).
class data_error : public std::runtime_error {
 public:
  explicit data_error(const std::string& what) : std::runtime_error(what) {}
};

/// An internal invariant was found broken. Always a bug.
class invariant_error : public std::logic_error {
 public:
  explicit invariant_error(const std::string& what) : std::logic_error(what) {}
};

}  // namespace arraybit
