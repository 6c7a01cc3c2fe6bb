#pragma once

// Checkpoint container shared by every model:
//
//   bytes 0..7   magic "GOCHATC1"
//   bytes 8..15  little-endian uint64 header length L
//   next L bytes UTF-8 JSON header {"version", "meta", "arrays": [{name, rows, cols}]}
//   payload      each array's doubles, column-major, in header order
//
// Reloading and re-saving an unchanged container reproduces it byte for byte.

#include "gochat/autodiff.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace gochat {

class Container {
 public:
  static constexpr int kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();

  void add(const std::string& name, const Mat& value);
  void add(const ParameterSet& set);

  const Mat* find(const std::string& name) const;
  const std::vector<Parameter>& arrays() const { return arrays_; }

  /// Overwrites every slot of `set` from the array with the same name and shape.
  void restore_into(ParameterSet& set) const;

  std::string to_bytes() const;
  static Container from_bytes(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  /// Throws MissingArtifactError when the file is absent.
  static Container load(const std::filesystem::path& path);

 private:
  std::vector<Parameter> arrays_;
};

}  // namespace gochat
