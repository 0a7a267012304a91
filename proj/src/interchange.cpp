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

#include "a2/interchange.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "a2/errors.hpp"

namespace a2::interchange {

static_assert(std::endian::native == std::endian::little, "APA2 writer assumes a little-endian host");

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u32: return 4;
    case DType::u8: return 1;
  }
  throw ValidationError("dtype", "unknown dtype " + std::to_string(static_cast<int>(dtype)));
}

std::size_t TensorRecord::element_count() const {
  return std::visit([](const auto& v) { return v.size(); }, data);
}

std::size_t TensorRecord::shape_product() const {
  std::size_t p = 1;
  for (auto d : shape) p *= d;
  return p;
}

TensorRecord TensorRecord::f32(std::string name, std::vector<std::uint32_t> shape, std::vector<float> values) {
  return {std::move(name), std::move(shape), std::move(values)};
}
TensorRecord TensorRecord::f64(std::string name, std::vector<std::uint32_t> shape, std::vector<double> values) {
  return {std::move(name), std::move(shape), std::move(values)};
}
TensorRecord TensorRecord::u32(std::string name, std::vector<std::uint32_t> shape,
                               std::vector<std::uint32_t> values) {
  return {std::move(name), std::move(shape), std::move(values)};
}
TensorRecord TensorRecord::bytes(std::string name, std::string_view text) {
  std::vector<std::uint8_t> payload(text.begin(), text.end());
  const auto size = static_cast<std::uint32_t>(payload.size());
  return {std::move(name), {size}, std::move(payload)};
}

std::string TensorRecord::text() const {
  const auto& b = as<std::uint8_t>();
  return std::string(b.begin(), b.end());
}

void validate_records(std::span<const TensorRecord> records) {
  std::set<std::string_view> names;
  for (const auto& r : records) {
    if (r.name.empty()) throw ValidationError("record", "empty record name");
    if (r.name.size() > 0xFFFF) throw ValidationError(r.name, "name longer than 65535 bytes");
    if (r.shape.size() > 0xFF) throw ValidationError(r.name, "rank above 255");
    if (!names.insert(r.name).second) throw ValidationError(r.name, "duplicate record name");
    if (r.shape_product() != r.element_count())
      throw ValidationError(r.name, "shape product " + std::to_string(r.shape_product()) + " != element count " +
                                        std::to_string(r.element_count()));
  }
}

namespace {

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    T v;
    need(sizeof(T), what);
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void get_bytes(void* dst, std::size_t n, const char* what) {
    need(n, what);
    if (n > 0) std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw IoError(std::string("truncated file while reading ") + what);
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_records(std::span<const TensorRecord> records) {
  validate_records(records);
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint16_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(r.name.size()));
    w.put_bytes(r.name.data(), r.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.dtype()));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.shape.size()));
    for (auto d : r.shape) w.put<std::uint32_t>(d);
    std::visit([&](const auto& v) { w.put_bytes(v.data(), v.size() * sizeof(v[0])); }, r.data);
  }
  return w.take();
}

std::vector<TensorRecord> decode_records(std::span<const std::uint8_t> bytes) {
  Reader rd(bytes);
  char magic[4];
  rd.get_bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw IoError("bad magic: not an APA2 file");
  const auto version = rd.get<std::uint16_t>("version");
  if (version != kVersion) throw IoError("unsupported APA2 version " + std::to_string(version));
  const auto count = rd.get<std::uint32_t>("record count");
  std::vector<TensorRecord> records;
  records.reserve(std::min<std::uint32_t>(count, 4096));
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord r;
    const auto name_len = rd.get<std::uint16_t>("name length");
    r.name.resize(name_len);
    rd.get_bytes(r.name.data(), name_len, "record name");
    const auto dtype = rd.get<std::uint8_t>("dtype");
    const auto rank = rd.get<std::uint8_t>("rank");
    r.shape.resize(rank);
    std::size_t count_elems = 1;
    for (auto& d : r.shape) {
      d = rd.get<std::uint32_t>("dims");
      count_elems *= d;
    }
    auto load = [&](auto tag) {
      using T = decltype(tag);
      std::vector<T> v(count_elems);
      rd.get_bytes(v.data(), count_elems * sizeof(T), "payload");
      r.data = std::move(v);
    };
    switch (static_cast<DType>(dtype)) {
      case DType::f32: load(float{}); break;
      case DType::f64: load(double{}); break;
      case DType::u32: load(std::uint32_t{}); break;
      case DType::u8: load(std::uint8_t{}); break;
      default: throw ValidationError(r.name, "unknown dtype " + std::to_string(dtype));
    }
    records.push_back(std::move(r));
  }
  if (!rd.at_end()) throw IoError("trailing bytes after last record");
  validate_records(records);
  return records;
}

void write_records(const std::filesystem::path& path, std::span<const TensorRecord> records) {
  const auto bytes = encode_records(records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<TensorRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_records(bytes);
}

std::string_view kind_name(CandidateKind kind) { return kind == CandidateKind::pick ? "pick" : "place"; }

CandidateKind parse_kind(std::string_view name) {
  if (name == "pick") return CandidateKind::pick;
  if (name == "place") return CandidateKind::place;
  throw ValidationError("candidate_kind", "expected pick or place, got '" + std::string(name) + "'");
}

void validate_bundle(const SceneBundle& b) {
  if (b.n < 1) throw ValidationError("points", "bundle needs at least one point");
  if (b.dim < 1) throw ValidationError("features", "feature dimension must be >= 1");
  if (b.l < 1) throw ValidationError("candidates", "bundle needs at least one candidate");
  if (b.points.size() != std::size_t{b.n} * 3) throw ValidationError("points", "expected n x 3 values");
  if (b.features.size() != std::size_t{b.n} * b.dim) throw ValidationError("features", "expected n x D values");
  if (b.similarities.size() != b.n) throw ValidationError("similarities", "expected n values");
  for (float s : b.similarities)
    if (!(s >= -1.0f && s <= 1.0f)) throw ValidationError("similarities", "value outside [-1, 1]");
  if (b.candidates.size() != std::size_t{b.l} * kActionDim)
    throw ValidationError("candidates", "expected L x 10 values");
  if (b.instruction_embedding.size() != b.dim)
    throw ValidationError("instruction_embedding", "expected D values");
  for (float v : b.points)
    if (!std::isfinite(v)) throw ValidationError("points", "non-finite coordinate");
  for (float v : b.features)
    if (!std::isfinite(v)) throw ValidationError("features", "non-finite value");
  for (float v : b.candidates)
    if (!std::isfinite(v)) throw ValidationError("candidates", "non-finite value");
  if (b.labels) {
    if (b.labels->size() != b.l) throw ValidationError("labels", "expected L values");
    bool any = false;
    for (auto y : *b.labels) {
      if (y > 1) throw ValidationError("labels", "label outside {0, 1}");
      any = any || y == 1;
    }
    if (!any) throw ValidationError("labels", "at least one label must be 1");
  }
  for (const auto& [k, v] : b.meta)
    if (k.empty() || k.find('/') != std::string::npos) throw ValidationError("meta", "invalid key '" + k + "'");
}

namespace {

constexpr std::string_view kMetaPrefix = "meta/";

const TensorRecord& require(const std::map<std::string, TensorRecord>& by_name, const std::string& name,
                            DType dtype) {
  auto it = by_name.find(name);
  if (it == by_name.end()) throw ValidationError(name, "missing record");
  if (it->second.dtype() != dtype) throw ValidationError(name, "unexpected dtype");
  return it->second;
}

}  // namespace

std::vector<TensorRecord> bundle_to_records(const SceneBundle& b) {
  validate_bundle(b);
  std::vector<TensorRecord> r;
  r.push_back(TensorRecord::f32("points", {b.n, 3}, b.points));
  r.push_back(TensorRecord::f32("features", {b.n, b.dim}, b.features));
  r.push_back(TensorRecord::f32("similarities", {b.n}, b.similarities));
  r.push_back(TensorRecord::f32("candidates", {b.l, static_cast<std::uint32_t>(kActionDim)}, b.candidates));
  r.push_back(TensorRecord::bytes("candidate_kind", kind_name(b.candidate_kind)));
  r.push_back(TensorRecord::f32("instruction_embedding", {b.dim}, b.instruction_embedding));
  r.push_back(TensorRecord::bytes("instruction_text", b.instruction_text));
  if (b.labels) r.push_back({"labels", {b.l}, *b.labels});
  for (const auto& [k, v] : b.meta) r.push_back(TensorRecord::bytes(std::string(kMetaPrefix) + k, v));
  for (const auto& e : b.extras) r.push_back(e);
  validate_records(r);
  return r;
}

SceneBundle bundle_from_records(std::vector<TensorRecord> records) {
  std::map<std::string, TensorRecord> by_name;
  std::vector<std::string> order;
  for (auto& rec : records) {
    std::string name = rec.name;
    order.push_back(name);
    if (!by_name.emplace(name, std::move(rec)).second) throw ValidationError(name, "duplicate record name");
  }
  SceneBundle b;
  const auto& pts = require(by_name, "points", DType::f32);
  if (pts.shape.size() != 2 || pts.shape[1] != 3) throw ValidationError("points", "expected shape [n, 3]");
  b.n = pts.shape[0];
  b.points = pts.as<float>();
  const auto& feats = require(by_name, "features", DType::f32);
  if (feats.shape.size() != 2 || feats.shape[0] != b.n) throw ValidationError("features", "expected shape [n, D]");
  b.dim = feats.shape[1];
  b.features = feats.as<float>();
  const auto& sims = require(by_name, "similarities", DType::f32);
  if (sims.shape.size() != 1 || sims.shape[0] != b.n) throw ValidationError("similarities", "expected shape [n]");
  b.similarities = sims.as<float>();
  const auto& cands = require(by_name, "candidates", DType::f32);
  if (cands.shape.size() != 2 || cands.shape[1] != kActionDim)
    throw ValidationError("candidates", "expected shape [L, 10]");
  b.l = cands.shape[0];
  b.candidates = cands.as<float>();
  b.candidate_kind = parse_kind(require(by_name, "candidate_kind", DType::u8).text());
  const auto& emb = require(by_name, "instruction_embedding", DType::f32);
  if (emb.shape.size() != 1) throw ValidationError("instruction_embedding", "expected shape [D]");
  b.instruction_embedding = emb.as<float>();
  b.instruction_text = require(by_name, "instruction_text", DType::u8).text();

  static const std::set<std::string> known = {"points",         "features",  "similarities", "candidates",
                                              "candidate_kind", "instruction_embedding", "instruction_text"};
  for (const auto& name : order) {
    auto& rec = by_name.at(name);
    if (known.count(name)) continue;
    if (name == "labels") {
      if (rec.dtype() != DType::u8) throw ValidationError("labels", "expected u8 labels");
      if (rec.shape.size() != 1) throw ValidationError("labels", "expected shape [L]");
      b.labels = rec.as<std::uint8_t>();
    } else if (name.starts_with(kMetaPrefix)) {
      if (rec.dtype() != DType::u8) throw ValidationError(name, "meta values are u8 text");
      b.meta[name.substr(kMetaPrefix.size())] = rec.text();
    } else {
      b.extras.push_back(std::move(rec));
    }
  }
  validate_bundle(b);
  return b;
}

void write_bundle(const SceneBundle& bundle, const std::filesystem::path& path) {
  write_records(path, bundle_to_records(bundle));
}

SceneBundle read_bundle(const std::filesystem::path& path) { return bundle_from_records(read_records(path)); }

}  // namespace a2::interchange
