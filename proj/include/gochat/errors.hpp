#pragma once

#include <stdexcept>
#include <string>

namespace gochat {

/// Malformed input, config, or violated precondition. CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A required file or checkpoint is absent. CLI exit code 3.
class MissingArtifactError : public std::runtime_error {
 public:
  explicit MissingArtifactError(const std::string& path)
      : std::runtime_error("missing artifact: " + path), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace gochat
