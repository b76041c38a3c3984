// Copyright 2026 The ReKo Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reko/tensor.hpp"

namespace reko {

/// Raised for unreadable, truncated or malformed files. The message always
/// names the offending path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor record, little-endian:
//   "RKTN" | u32 rank | u64 extents[rank] | f64 payload[numel]
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// Hex SHA-256 of a byte buffer / a file's contents.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Writes `bytes` to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path,
                       std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// One `<name>.rktn` file per tensor in `dir`, plus `manifest.json` mapping
/// name → file and checksum. `meta` is stored verbatim under "meta".
/// Returns the manifest path.
std::filesystem::path save_checkpoint(const std::filesystem::path& dir,
                                      const std::vector<NamedTensor>& tensors,
                                      const nlohmann::json& meta);

struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors;
};

/// Accepts the manifest path or its directory. Checksums are verified.
Checkpoint load_checkpoint(const std::filesystem::path& manifest);

}  // namespace reko
