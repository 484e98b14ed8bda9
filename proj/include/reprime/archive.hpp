// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Named-tensor archive.
//
//   bytes [0, 8)        little-endian u64 header length L
//   bytes [8, 8+L)      UTF-8 JSON object: name -> {"dtype":"f32","offsets":[b,e],"shape":[...]}
//   bytes [8+L, end)    little-endian f32 payload, row-major
//
// Offsets are relative to the payload. The writer emits names in lexicographic
// order and lays the payload out in that same order, so the output bytes depend
// only on the tensor map.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "reprime/tensor.hpp"

namespace reprime {

enum class ArchiveErrorKind {
  io,
  empty,
  truncated,
  header_overflow,
  malformed_header,
  unsupported_dtype,
  invalid_name,
  invalid_shape,
  duplicate_name,
  length_mismatch,
  overlapping_offsets,
  non_contiguous,
};

const char* to_string(ArchiveErrorKind kind);

class ArchiveError : public std::runtime_error {
 public:
  ArchiveError(ArchiveErrorKind kind, const std::string& what);
  ArchiveErrorKind kind() const noexcept { return kind_; }

 private:
  ArchiveErrorKind kind_;
};

struct TensorEntry {
  Shape shape;
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
};

using NamedTensor = std::pair<std::string, Tensor>;

std::vector<std::uint8_t> encode_archive(const TensorMap& tensors);
/// Same as the map overload, but reports duplicate names instead of merging them.
std::vector<std::uint8_t> encode_archive(std::span<const NamedTensor> tensors);

/// Parses and fully validates an archive image.
TensorMap decode_archive(std::span<const std::uint8_t> bytes);
/// Header-only view (validated the same way as decode_archive).
std::map<std::string, TensorEntry> decode_archive_index(std::span<const std::uint8_t> bytes);

void write_archive(const TensorMap& tensors, const std::filesystem::path& path);
void write_archive(std::span<const NamedTensor> tensors, const std::filesystem::path& path);
TensorMap read_archive(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace reprime
