// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#include "reprime/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "json.hpp"

namespace reprime {
namespace {

using nlohmann::json;

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void put_f32_le(std::uint8_t* dst, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) dst[i] = static_cast<std::uint8_t>(bits >> (8 * i));
}

float get_f32_le(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<float>(bits);
}

[[noreturn]] void fail(ArchiveErrorKind kind, const std::string& what) { throw ArchiveError(kind, what); }

void check_tensor(const std::string& name, const Tensor& t) {
  if (name.empty()) fail(ArchiveErrorKind::invalid_name, "tensor names must be non-empty");
  for (auto d : t.shape()) {
    if (d == 0) fail(ArchiveErrorKind::invalid_shape, "tensor '" + name + "' has a zero-sized dimension");
  }
  if (t.numel() != shape_numel(t.shape())) {
    fail(ArchiveErrorKind::length_mismatch, "tensor '" + name + "' data does not match its shape");
  }
}

std::vector<std::uint8_t> encode_sorted(const std::vector<const NamedTensor*>& items) {
  if (items.empty()) fail(ArchiveErrorKind::empty, "an archive needs at least one tensor");
  json header = json::object();
  std::uint64_t offset = 0;
  for (const NamedTensor* item : items) {
    check_tensor(item->first, item->second);
    const std::uint64_t bytes = 4ULL * item->second.numel();
    header[item->first] = {{"dtype", "f32"}, {"shape", item->second.shape()}, {"offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  const std::string text = header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(8 + text.size() + offset);
  put_u64_le(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t base = out.size();
  out.resize(base + offset);
  std::uint8_t* dst = out.data() + base;
  for (const NamedTensor* item : items) {
    for (float v : item->second.data()) {
      put_f32_le(dst, v);
      dst += 4;
    }
  }
  return out;
}

struct Parsed {
  std::map<std::string, TensorEntry> entries;
  std::size_t payload_start = 0;
};

Shape parse_shape(const std::string& name, const json& j) {
  if (!j.is_array()) fail(ArchiveErrorKind::malformed_header, "'" + name + "': shape must be an array");
  Shape shape;
  for (const auto& d : j) {
    if (!d.is_number_unsigned()) {
      fail(ArchiveErrorKind::malformed_header, "'" + name + "': shape entries must be non-negative integers");
    }
    const auto v = d.get<std::uint64_t>();
    if (v == 0) fail(ArchiveErrorKind::invalid_shape, "'" + name + "' has a zero-sized dimension");
    shape.push_back(static_cast<std::size_t>(v));
  }
  return shape;
}

Parsed parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) {
    fail(ArchiveErrorKind::truncated, "archive is " + std::to_string(bytes.size()) + " bytes, shorter than its 8-byte prefix");
  }
  const std::uint64_t header_len = get_u64_le(bytes.data());
  if (header_len > bytes.size() - 8) {
    fail(ArchiveErrorKind::header_overflow, "header length " + std::to_string(header_len) + " exceeds the " +
                                               std::to_string(bytes.size() - 8) + " bytes that follow it");
  }
  const char* text = reinterpret_cast<const char*>(bytes.data() + 8);

  std::set<std::string> seen;
  bool duplicate = false;
  std::string duplicate_name;
  json::parser_callback_t track = [&](int depth, json::parse_event_t event, json& parsed) {
    if (depth == 1 && event == json::parse_event_t::key) {
      auto key = parsed.get<std::string>();
      if (!seen.insert(key).second && !duplicate) {
        duplicate = true;
        duplicate_name = key;
      }
    }
    return true;
  };
  json header;
  try {
    header = json::parse(text, text + header_len, track);
  } catch (const json::exception& e) {
    fail(ArchiveErrorKind::malformed_header, std::string("header is not valid JSON: ") + e.what());
  }
  if (duplicate) fail(ArchiveErrorKind::duplicate_name, "tensor '" + duplicate_name + "' appears twice");
  if (!header.is_object()) fail(ArchiveErrorKind::malformed_header, "header must be a JSON object");
  if (header.empty()) fail(ArchiveErrorKind::empty, "archive holds no tensors");

  Parsed out;
  out.payload_start = 8 + static_cast<std::size_t>(header_len);
  const std::uint64_t payload = bytes.size() - out.payload_start;

  for (const auto& [name, spec] : header.items()) {
    if (name.empty()) fail(ArchiveErrorKind::invalid_name, "tensor names must be non-empty");
    if (!spec.is_object()) fail(ArchiveErrorKind::malformed_header, "'" + name + "': entry must be an object");
    for (const auto& [key, _] : spec.items()) {
      if (key != "dtype" && key != "shape" && key != "offsets") {
        fail(ArchiveErrorKind::malformed_header, "'" + name + "': unexpected field '" + key + "'");
      }
    }
    if (!spec.contains("dtype") || !spec.contains("shape") || !spec.contains("offsets")) {
      fail(ArchiveErrorKind::malformed_header, "'" + name + "': entry needs dtype, shape and offsets");
    }
    if (!spec["dtype"].is_string()) fail(ArchiveErrorKind::malformed_header, "'" + name + "': dtype must be a string");
    if (spec["dtype"].get<std::string>() != "f32") {
      fail(ArchiveErrorKind::unsupported_dtype, "'" + name + "': dtype " + spec["dtype"].get<std::string>() +
                                                    " is not supported (only f32)");
    }
    TensorEntry entry;
    entry.shape = parse_shape(name, spec["shape"]);
    const json& off = spec["offsets"];
    if (!off.is_array() || off.size() != 2 || !off[0].is_number_unsigned() || !off[1].is_number_unsigned()) {
      fail(ArchiveErrorKind::malformed_header, "'" + name + "': offsets must be [begin, end]");
    }
    entry.begin = off[0].get<std::uint64_t>();
    entry.end = off[1].get<std::uint64_t>();
    if (entry.end < entry.begin) {
      fail(ArchiveErrorKind::malformed_header, "'" + name + "': offsets end before they begin");
    }
    // Guard the multiplication below against absurd shapes.
    std::uint64_t numel = 1;
    for (auto d : entry.shape) {
      if (numel > std::numeric_limits<std::uint64_t>::max() / 4 / d) {
        fail(ArchiveErrorKind::length_mismatch, "'" + name + "': shape is too large");
      }
      numel *= d;
    }
    if (entry.end - entry.begin != 4 * numel) {
      fail(ArchiveErrorKind::length_mismatch, "'" + name + "': shape " + shape_str(entry.shape) + " needs " +
                                                  std::to_string(4 * numel) + " bytes, offsets span " +
                                                  std::to_string(entry.end - entry.begin));
    }
    out.entries.emplace(name, std::move(entry));
  }

  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (const auto& [_, e] : out.entries) spans.emplace_back(e.begin, e.end);
  std::sort(spans.begin(), spans.end());
  std::uint64_t cursor = 0;
  for (const auto& [b, e] : spans) {
    if (b < cursor) fail(ArchiveErrorKind::overlapping_offsets, "tensor byte ranges overlap at offset " + std::to_string(b));
    if (b > cursor) fail(ArchiveErrorKind::non_contiguous, "gap in the payload at offset " + std::to_string(cursor));
    cursor = e;
  }
  if (cursor > payload) {
    fail(ArchiveErrorKind::truncated, "payload has " + std::to_string(payload) + " bytes, header expects " +
                                          std::to_string(cursor));
  }
  if (cursor < payload) {
    fail(ArchiveErrorKind::non_contiguous, std::to_string(payload - cursor) + " trailing bytes after the last tensor");
  }
  return out;
}

}  // namespace

const char* to_string(ArchiveErrorKind kind) {
  switch (kind) {
    case ArchiveErrorKind::io: return "io";
    case ArchiveErrorKind::empty: return "empty";
    case ArchiveErrorKind::truncated: return "truncated";
    case ArchiveErrorKind::header_overflow: return "header_overflow";
    case ArchiveErrorKind::malformed_header: return "malformed_header";
    case ArchiveErrorKind::unsupported_dtype: return "unsupported_dtype";
    case ArchiveErrorKind::invalid_name: return "invalid_name";
    case ArchiveErrorKind::invalid_shape: return "invalid_shape";
    case ArchiveErrorKind::duplicate_name: return "duplicate_name";
    case ArchiveErrorKind::length_mismatch: return "length_mismatch";
    case ArchiveErrorKind::overlapping_offsets: return "overlapping_offsets";
    case ArchiveErrorKind::non_contiguous: return "non_contiguous";
  }
  return "unknown";
}

ArchiveError::ArchiveError(ArchiveErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

std::vector<std::uint8_t> encode_archive(const TensorMap& tensors) {
  std::vector<NamedTensor> items(tensors.begin(), tensors.end());
  std::vector<const NamedTensor*> ptrs;
  for (const auto& item : items) ptrs.push_back(&item);
  return encode_sorted(ptrs);
}

std::vector<std::uint8_t> encode_archive(std::span<const NamedTensor> tensors) {
  std::vector<const NamedTensor*> ptrs;
  for (const auto& item : tensors) ptrs.push_back(&item);
  std::sort(ptrs.begin(), ptrs.end(), [](const NamedTensor* a, const NamedTensor* b) { return a->first < b->first; });
  for (std::size_t i = 1; i < ptrs.size(); ++i) {
    if (ptrs[i]->first == ptrs[i - 1]->first) {
      fail(ArchiveErrorKind::duplicate_name, "tensor '" + ptrs[i]->first + "' appears twice");
    }
  }
  return encode_sorted(ptrs);
}

std::map<std::string, TensorEntry> decode_archive_index(std::span<const std::uint8_t> bytes) {
  return parse(bytes).entries;
}

TensorMap decode_archive(std::span<const std::uint8_t> bytes) {
  Parsed parsed = parse(bytes);
  TensorMap out;
  const std::uint8_t* payload = bytes.data() + parsed.payload_start;
  for (auto& [name, entry] : parsed.entries) {
    Tensor t(entry.shape);
    const std::uint8_t* src = payload + entry.begin;
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = get_f32_le(src + 4 * i);
    out.emplace(name, std::move(t));
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ArchiveErrorKind::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ArchiveErrorKind::io, "read error on " + path.string());
  return bytes;
}

namespace {

void write_bytes(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ArchiveErrorKind::io, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ArchiveErrorKind::io, "write error on " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ArchiveErrorKind::io, "cannot move archive into place at " + path.string() + ": " + ec.message());
}

}  // namespace

void write_archive(const TensorMap& tensors, const std::filesystem::path& path) {
  write_bytes(encode_archive(tensors), path);
}

void write_archive(std::span<const NamedTensor> tensors, const std::filesystem::path& path) {
  write_bytes(encode_archive(tensors), path);
}

TensorMap read_archive(const std::filesystem::path& path) { return decode_archive(read_file_bytes(path)); }

}  // namespace reprime
