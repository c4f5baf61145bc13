#ifndef HABIT_ERROR_HPP
#define HABIT_ERROR_HPP

#include <stdexcept>
#include <string>

namespace habit {

enum class ErrorKind {
  ZeroRow,
  DimensionMismatch,
  DegenerateBatch,
  Domain,
  Config,
  Io,
  Format,
  MissingTarget,
  LengthMismatch,
  Numeric,
};

const char* to_string(ErrorKind kind) noexcept;

/// Base exception for every failure raised by the library. The kind drives
/// the CLI exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define HABIT_DEFINE_ERROR(Name, Kind)                                     \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

HABIT_DEFINE_ERROR(ZeroRowError, ZeroRow)
HABIT_DEFINE_ERROR(DimensionMismatchError, DimensionMismatch)
HABIT_DEFINE_ERROR(DegenerateBatchError, DegenerateBatch)
HABIT_DEFINE_ERROR(DomainError, Domain)
HABIT_DEFINE_ERROR(ConfigError, Config)
HABIT_DEFINE_ERROR(IoError, Io)
HABIT_DEFINE_ERROR(FormatError, Format)
HABIT_DEFINE_ERROR(MissingTargetError, MissingTarget)
HABIT_DEFINE_ERROR(LengthMismatchError, LengthMismatch)
HABIT_DEFINE_ERROR(NumericError, Numeric)

#undef HABIT_DEFINE_ERROR

inline const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::ZeroRow: return "ZeroRow";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::DegenerateBatch: return "DegenerateBatch";
    case ErrorKind::Domain: return "DomainError";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::Io: return "IoError";
    case ErrorKind::Format: return "FormatError";
    case ErrorKind::MissingTarget: return "MissingTarget";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::Numeric: return "NumericError";
  }
  return "Unknown";
}

}  // namespace habit

#endif  // HABIT_ERROR_HPP
