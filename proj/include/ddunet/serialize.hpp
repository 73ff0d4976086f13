#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ddunet/nn.hpp"

namespace ddunet {

struct ArchiveEntry {
  std::string name;
  std::string dtype;  // "f64" written; "f64"/"f32" accepted on read
  Shape shape;
  std::vector<double> data;
};

using NamedTensorRefs = std::vector<std::pair<std::string, Tensor*>>;

/// Flattens a collected sink into (name, tensor) destinations: parameters
/// first, then buffers, in registration order.
NamedTensorRefs named_tensors(const ParamSink& sink);

/// Binary container: 8-byte magic, little-endian u64 manifest size, JSON
/// manifest (name/dtype/shape/offset/nbytes per entry), then packed
/// little-endian buffers. Writing the same tensors twice yields identical
/// bytes.
void write_tensor_archive(const std::filesystem::path& path, const NamedTensorRefs& tensors);

std::vector<ArchiveEntry> read_tensor_archive(const std::filesystem::path& path);

struct LoadReport {
  std::vector<std::string> matched;
  std::vector<std::string> missing;  // wanted by the model, absent from the archive
  std::vector<std::string> unused;   // present in the archive, not wanted

  bool fully_matched() const { return missing.empty(); }
};

/// Copies every archive entry whose name matches a destination. A matched
/// name with a different shape is a hard error naming the tensor; names
/// missing from the archive are reported and keep their current values.
LoadReport apply_archive(const std::vector<ArchiveEntry>& entries,
                         const NamedTensorRefs& destinations);

}  // namespace ddunet
