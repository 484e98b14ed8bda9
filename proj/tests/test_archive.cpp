// Copyright (c) 2026, The reprime authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "archive_cases.hpp"
#include "oracles.hpp"
#include "reprime/archive.hpp"

using namespace reprime;
namespace fs = std::filesystem;

namespace {

using archive_case::raw;

ArchiveErrorKind kind_of(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_archive(bytes);
  } catch (const ArchiveError& e) {
    return e.kind();
  }
  FAIL("archive was accepted");
  return ArchiveErrorKind::io;
}

fs::path temp_file(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "reprime_archive_tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("golden two-float archive") {
  const auto bytes = encode_archive(TensorMap{{"a", Tensor::from({1.0f, 2.0f})}});
  CHECK(bytes == raw(archive_case::kGoldenHeader, archive_case::kGoldenPayload));
  CHECK(bit_equal(decode_archive(bytes).at("a"), Tensor::from({1.0f, 2.0f})));
}

TEST_CASE("file round trip is bit exact and deterministic") {
  Rng rng(1);
  TensorMap m{{"block0.conv.weight", oracle::uniform({4, 3, 3, 3}, rng)},
              {"scalar", Tensor(Shape{}, 3.5f)},
              {"z", Tensor::from({-0.0f, 1e-40f})}};
  const fs::path p = temp_file("roundtrip.rpa");
  write_archive(m, p);
  CHECK(bit_equal(read_archive(p), m));
  CHECK(read_file_bytes(p) == encode_archive(m));
}

TEST_CASE("ordered write sorts names") {
  std::vector<NamedTensor> items{{"b", Tensor::from({1.0f})}, {"a", Tensor::from({2.0f})}};
  TensorMap m{{"a", Tensor::from({2.0f})}, {"b", Tensor::from({1.0f})}};
  CHECK(encode_archive(items) == encode_archive(m));
  items.push_back({"a", Tensor::from({3.0f})});
  CHECK_THROWS_AS(encode_archive(items), ArchiveError);
}

TEST_CASE("write guards") {
  CHECK_THROWS_AS(encode_archive(TensorMap{}), ArchiveError);
  CHECK_THROWS_AS(encode_archive(TensorMap{{"", Tensor::from({1.0f})}}), ArchiveError);
  CHECK_THROWS_AS(encode_archive(TensorMap{{"x", Tensor({0})}}), ArchiveError);
}

TEST_CASE("index reports contiguous offsets") {
  const auto idx = decode_archive_index(encode_archive(TensorMap{{"a", Tensor({2, 3})}, {"b", Tensor({4})}}));
  CHECK(idx.at("a").begin == 0);
  CHECK(idx.at("a").end == 24);
  CHECK(idx.at("b").begin == 24);
  CHECK(idx.at("b").end == 40);
}

TEST_CASE("malformed archives map to distinct error kinds") {
  for (const auto& c : archive_case::malformed()) {
    CAPTURE(c.label);
    CHECK(kind_of(c.bytes) == c.kind);
  }
}

TEST_CASE("missing file is an io error") {
  try {
    read_archive(temp_file("does_not_exist.rpa"));
    FAIL("expected an error");
  } catch (const ArchiveError& e) {
    CHECK(e.kind() == ArchiveErrorKind::io);
  }
}

TEST_CASE("externally produced archive with key order and spacing of its own") {
  // A writer outside this library: pretty JSON, unsorted keys, payload in
  // a different order than the keys appear.
  const std::string header =
      "{\n  \"fc.bias\": {\"shape\": [2], \"dtype\": \"f32\", \"offsets\": [24, 32]},\n"
      "  \"conv.weight\": {\"dtype\": \"f32\", \"shape\": [1, 1, 1, 2], \"offsets\": [0, 8]},\n"
      "  \"bn.gamma\": {\"dtype\": \"f32\", \"shape\": [1], \"offsets\": [8, 12]},\n"
      "  \"fc.weight\": {\"dtype\": \"f32\", \"shape\": [3], \"offsets\": [12, 24]}\n}";
  std::vector<std::uint8_t> payload;
  for (float v : {0.5f, -1.0f, 1.0f, 0.25f, 2.0f, -3.0f, 4.0f, 8.0f}) {
    std::uint8_t b[4];
    std::memcpy(b, &v, 4);
    payload.insert(payload.end(), b, b + 4);
  }
  const TensorMap m = decode_archive(raw(header, payload));
  REQUIRE(m.size() == 4);
  CHECK(bit_equal(m.at("conv.weight"), Tensor({1, 1, 1, 2}, {0.5f, -1.0f})));
  CHECK(bit_equal(m.at("bn.gamma"), Tensor::from({1.0f})));
  CHECK(bit_equal(m.at("fc.weight"), Tensor::from({0.25f, 2.0f, -3.0f})));
  CHECK(bit_equal(m.at("fc.bias"), Tensor::from({4.0f, 8.0f})));
}

TEST_CASE("random tensor maps round trip") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    TensorMap m;
    const int n = 1 + static_cast<int>(rng() % 5);
    for (int i = 0; i < n; ++i) {
      Shape s;
      for (std::size_t r = rng() % 4; r > 0; --r) s.push_back(1 + rng() % 4);
      m["t" + std::to_string(rng() % 1000) + "/\xc3\xa9"] = oracle::uniform(s, rng, -1e3f, 1e3f);
    }
    CHECK(bit_equal(decode_archive(encode_archive(m)), m));
  }
}
