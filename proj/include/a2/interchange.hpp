// Copyright 2026 The a2align Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// APA2 named-record container.
//
// Layout (all integers little-endian):
//   "APA2" | u16 version (=1) | u32 record count | records...
// Each record:
//   u16 name length | UTF-8 name | u8 dtype | u8 rank | u32 dims[rank] | payload
// Payload is row-major, little-endian, product(dims) elements of dtype.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace a2::interchange {

inline constexpr char kMagic[4] = {'A', 'P', 'A', '2'};
inline constexpr std::uint16_t kVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1, u32 = 2, u8 = 3 };

std::size_t dtype_size(DType dtype);

struct TensorRecord {
  using Storage =
      std::variant<std::vector<float>, std::vector<double>, std::vector<std::uint32_t>, std::vector<std::uint8_t>>;

  std::string name;
  std::vector<std::uint32_t> shape;
  Storage data;

  DType dtype() const { return static_cast<DType>(data.index()); }
  std::size_t element_count() const;
  std::size_t shape_product() const;

  template <class T>
  const std::vector<T>& as() const { return std::get<std::vector<T>>(data); }
  template <class T>
  std::vector<T>& as() { return std::get<std::vector<T>>(data); }

  static TensorRecord f32(std::string name, std::vector<std::uint32_t> shape, std::vector<float> values);
  static TensorRecord f64(std::string name, std::vector<std::uint32_t> shape, std::vector<double> values);
  static TensorRecord u32(std::string name, std::vector<std::uint32_t> shape, std::vector<std::uint32_t> values);
  static TensorRecord bytes(std::string name, std::string_view text);

  std::string text() const;  // u8 payload as string

  bool operator==(const TensorRecord&) const = default;
};

// Throws ValidationError for shape/element-count mismatch or duplicate names.
void validate_records(std::span<const TensorRecord> records);

std::vector<std::uint8_t> encode_records(std::span<const TensorRecord> records);
std::vector<TensorRecord> decode_records(std::span<const std::uint8_t> bytes);

void write_records(const std::filesystem::path& path, std::span<const TensorRecord> records);
std::vector<TensorRecord> read_records(const std::filesystem::path& path);

enum class CandidateKind : std::uint8_t { pick = 0, place = 1 };
std::string_view kind_name(CandidateKind kind);
CandidateKind parse_kind(std::string_view name);

inline constexpr std::size_t kActionDim = 10;

struct SceneBundle {
  std::uint32_t n = 0;    // points
  std::uint32_t dim = 0;  // feature dimension D
  std::uint32_t l = 0;    // candidates

  std::vector<float> points;                 // n x 3, meters, world frame
  std::vector<float> features;               // n x D
  std::vector<float> similarities;           // n
  std::vector<float> candidates;             // L x 10
  CandidateKind candidate_kind = CandidateKind::pick;
  std::vector<float> instruction_embedding;  // D
  std::string instruction_text;
  std::optional<std::vector<std::uint8_t>> labels;  // L, values in {0, 1}
  std::map<std::string, std::string> meta;
  std::vector<TensorRecord> extras;  // records this reader does not interpret

  bool operator==(const SceneBundle&) const = default;
};

void validate_bundle(const SceneBundle& bundle);
std::vector<TensorRecord> bundle_to_records(const SceneBundle& bundle);
SceneBundle bundle_from_records(std::vector<TensorRecord> records);

void write_bundle(const SceneBundle& bundle, const std::filesystem::path& path);
SceneBundle read_bundle(const std::filesystem::path& path);

}  // namespace a2::interchange
