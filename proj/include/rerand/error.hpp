#pragma once

#include <stdexcept>
#include <string>

namespace rerand {

// Process exit codes used by the command-line tool. Each error type maps to
// exactly one code so scripts can branch on the failure class.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kParse = 3,
  kSingularCovariates = 4,
  kInvalidArm = 5,
  kUnitMismatch = 6,
  kArmTooSmall = 7,
  kDomain = 8,
  kConfig = 9,
  kInternal = 10,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

// Covariate matrix (or the augmented outcome/covariate matrix) is rank
// deficient or too ill-conditioned to factor.
class SingularCovariates : public Error {
 public:
  explicit SingularCovariates(const std::string& what)
      : Error(ExitCode::kSingularCovariates, what) {}
};

class InvalidArm : public Error {
 public:
  explicit InvalidArm(const std::string& what)
      : Error(ExitCode::kInvalidArm, what) {}
};

class ArmTooSmall : public Error {
 public:
  explicit ArmTooSmall(const std::string& what)
      : Error(ExitCode::kArmTooSmall, what) {}
};

class UnitMismatch : public Error {
 public:
  explicit UnitMismatch(const std::string& what)
      : Error(ExitCode::kUnitMismatch, what) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what)
      : Error(ExitCode::kDomain, what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what)
      : Error(ExitCode::kParse, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ExitCode::kConfig, what) {}
};

}  // namespace rerand
