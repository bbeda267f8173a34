#pragma once

#include <stdexcept>
#include <string>

namespace tokensieve {

// Base for every error the toolkit raises. The CLI maps these to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke an operation's precondition (missing labels, bad sizes, ...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Input values outside an operation's mathematical domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Malformed on-disk or in-memory data (bad spans, unparsable records).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Missing or unreadable files. Kept distinct so the CLI can exit with 2.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace tokensieve
