#pragma once

#include <stdexcept>
#include <string>

namespace qpburst {

// Every error raised by the library derives from Error so the CLI can map it
// onto a machine-readable category.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}
  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

struct DomainError : Error {
  explicit DomainError(const std::string& w) : Error("domain", w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};
struct IntegrationError : Error {
  explicit IntegrationError(const std::string& w) : Error("integration", w) {}
};
struct FeatureError : Error {
  explicit FeatureError(const std::string& w) : Error("feature", w) {}
};
struct AlignmentError : Error {
  explicit AlignmentError(const std::string& w) : Error("alignment", w) {}
};
struct PreconditionError : Error {
  explicit PreconditionError(const std::string& w) : Error("precondition", w) {}
};
struct FitError : Error {
  explicit FitError(const std::string& w) : Error("fit", w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error("io", w) {}
};
struct SchemaError : Error {
  explicit SchemaError(const std::string& w) : Error("schema", w) {}
};
struct DependencyError : Error {
  explicit DependencyError(const std::string& w) : Error("dependency", w) {}
};

}  // namespace qpburst
