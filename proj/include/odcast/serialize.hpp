#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "odcast/tensor.hpp"

namespace odcast {

/// Versioned binary container: an 8-byte magic, a format version, a JSON
/// metadata document, and an ordered list of named tensors. One layout
/// serves graph sets, demand cubes and checkpoints; byte layout is
/// documented in docs/FORMATS.md. Writing is atomic (temp file + rename)
/// and fully deterministic: the same contents always produce the same
/// bytes.
struct Container {
  std::string magic;
  uint32_t version = 1;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  bool has(const std::string& name) const;
  const Tensor& tensor(const std::string& name) const;
};

void save_container(const std::filesystem::path& path, const Container& c);

/// Loads and validates a container. expect_magic, when non-empty, must
/// match the file's magic exactly.
Container load_container(const std::filesystem::path& path, const std::string& expect_magic = "");

/// Writes bytes to path via a temp file + rename, so readers never see a
/// partial file and reruns replace artifacts in one step.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace odcast
