#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace cormult {

// Every failure raised by the library derives from Error so callers can
// catch the family at once; the concrete type names the failure kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CORMULT_DEFINE_ERROR(Name)            \
  class Name : public Error {                 \
   public:                                    \
    explicit Name(const std::string& what)    \
        : Error(#Name ": " + what) {}         \
  };

CORMULT_DEFINE_ERROR(ShapeMismatch)
CORMULT_DEFINE_ERROR(NotScalar)
CORMULT_DEFINE_ERROR(TooShort)
CORMULT_DEFINE_ERROR(BadFftSize)
CORMULT_DEFINE_ERROR(BadRange)
CORMULT_DEFINE_ERROR(EmptyCorpus)
CORMULT_DEFINE_ERROR(BatchTooSmall)
CORMULT_DEFINE_ERROR(NotSPD)
CORMULT_DEFINE_ERROR(EmptyBatch)
CORMULT_DEFINE_ERROR(NotPretrained)
CORMULT_DEFINE_ERROR(NotTrained)
CORMULT_DEFINE_ERROR(BadConfig)
CORMULT_DEFINE_ERROR(BadRatios)
CORMULT_DEFINE_ERROR(OutOfRange)
CORMULT_DEFINE_ERROR(MissingFile)
CORMULT_DEFINE_ERROR(LengthMismatch)
CORMULT_DEFINE_ERROR(Empty)
CORMULT_DEFINE_ERROR(ZeroVariance)
CORMULT_DEFINE_ERROR(FormatError)

#undef CORMULT_DEFINE_ERROR

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("ParseError: line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Raised for configuration problems; `key` names the offending entry.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error("ConfigError: " + key + ": " + what), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace cormult
