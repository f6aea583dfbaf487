#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace irbnn {

// Category strings are part of the CLI contract: failures are reported on
// stderr as `error: category=<category>: <message>`.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& message)
      : std::runtime_error(message), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};

// Constant weights (zero standard deviation or zero L1 norm) are a hard
// error: they indicate broken initialization, not a case to patch over.
struct DegenerateWeightsError : Error {
  explicit DegenerateWeightsError(const std::string& m) : Error("degenerate_weights", m) {}
};

struct DomainError : Error {
  explicit DomainError(const std::string& m) : Error("domain", m) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error("format", m) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};

struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io", m) {}
};

struct ExportError : Error {
  explicit ExportError(const std::string& m) : Error("export", m) {}
};

struct InternalError : Error {
  explicit InternalError(const std::string& m) : Error("internal", m) {}
};

}  // namespace irbnn
