#pragma once

// Checkpoint container:
//
//   "WMCK"  u32 format_version  u32 header_len  header (JSON, UTF-8)
//   u32 blob_count, then per blob:
//     u32 name_len  name  u32 rank  u32 dims[rank]  f32 data[prod(dims)]
//
// All integers and floats little-endian; blobs in parameter-name order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"
#include "wmc/bodymap.hpp"
#include "wmc/error.hpp"
#include "wmc/models.hpp"

namespace wmc {

inline constexpr char kCheckpointMagic[4] = {'W', 'M', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail(ErrorCode::parse, "checkpoint is truncated");
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Model& model) {
  nlohmann::json header{{"format_version", kCheckpointVersion},
                        {"model_spec", to_json(model.spec())},
                        {"class_set", model.class_set},
                        {"vocab_ordered_codes", model.vocab.ordered_codes()}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  const auto& entries = model.network.params().entries();
  detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, e] : entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    detail::put_u32(out, static_cast<std::uint32_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : e.value.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline Model deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    fail(ErrorCode::version, "not a checkpoint (bad magic bytes)");
  }
  detail::ByteReader in(bytes);
  in.str(4);
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    fail(ErrorCode::version, "unsupported checkpoint format version " + std::to_string(version));
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.str(in.u32()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("checkpoint header: ") + e.what());
  }
  ModelSpec spec;
  std::vector<std::string> class_set;
  LocationVocabulary vocab;
  try {
    if (header.at("format_version").get<std::uint32_t>() != version) {
      fail(ErrorCode::version, "checkpoint header version disagrees with preamble");
    }
    spec = model_spec_from_json(header.at("model_spec"));
    class_set = header.at("class_set").get<std::vector<std::string>>();
    vocab = LocationVocabulary::from_ordered(header.at("vocab_ordered_codes").get<std::vector<int>>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("checkpoint header: ") + e.what());
  }
  if (static_cast<int>(class_set.size()) != spec.n_classes) fail(ErrorCode::validation, "class set size mismatch");
  if (spec.uses_location_branch() && vocab.fingerprint() != spec.vocab_fingerprint) {
    fail(ErrorCode::fingerprint, "stored vocabulary does not match the stored model spec");
  }

  nn::ParameterSet<float> params;
  const std::uint32_t count = in.u32();
  for (std::uint32_t b = 0; b < count; ++b) {
    const std::string name = in.str(in.u32());
    const std::uint32_t rank = in.u32();
    if (rank > 8) fail(ErrorCode::parse, "checkpoint blob rank too large");
    nn::Shape shape(rank);
    for (auto& d : shape) d = in.u32();
    const std::size_t n = nn::shape_size(shape);
    in.need(n * 4);
    nn::Tensor<float> t(shape);
    for (std::size_t i = 0; i < n; ++i) t[i] = in.f32();
    params.add(name, std::move(t));
  }
  if (!in.done()) fail(ErrorCode::parse, "trailing bytes after checkpoint blobs");
  return Model{Network<float>(spec, std::move(params)), std::move(class_set), std::move(vocab)};
}

inline void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::io, "failed writing checkpoint " + path.string());
}

inline Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace wmc
