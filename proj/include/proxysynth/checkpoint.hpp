#pragma once

// Single-file archive of named tensors with a JSON manifest.
//
// Layout (little-endian):
//   "PSYNCKPT"            8-byte magic
//   u32 version           currently 1
//   u64 manifest_bytes
//   manifest              UTF-8 JSON: {"format", "version", "meta", "tensors": [
//                           {"name", "dtype", "shape", "offset", "nbytes"}, ...]}
//   blob                  raw tensor data; offsets are relative to the blob start
//   u32 crc32             zlib CRC-32 of every preceding byte

#include <cstdint>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace proxysynth {

struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, torch::Tensor> tensors;
};

void save_archive(const Archive& archive, const std::string& path);
// Throws CorruptArchiveError on truncation, bad magic, checksum or manifest
// errors; IoError when the file cannot be opened.
Archive load_archive(const std::string& path);

// First 16 hex digits of the SHA-256 of the archive file.
std::string archive_digest(const std::string& path);

}  // namespace proxysynth
