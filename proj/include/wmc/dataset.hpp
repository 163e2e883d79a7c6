#pragma once

// ROI manifests: line-delimited ingestion, per-class splitting, augmentation
// and index-aligned batch assembly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "wmc/base64.hpp"
#include "wmc/bodymap.hpp"
#include "wmc/error.hpp"
#include "wmc/image.hpp"
#include "wmc/nn/tensor.hpp"
#include "wmc/random.hpp"

namespace wmc {

enum class Augmentation { none, hflip, vflip, rot25, rot45, rot90 };
enum class Split { train, val, test, unassigned };

inline const char* to_string(Augmentation a) {
  switch (a) {
    case Augmentation::none: return "none";
    case Augmentation::hflip: return "hflip";
    case Augmentation::vflip: return "vflip";
    case Augmentation::rot25: return "rot25";
    case Augmentation::rot45: return "rot45";
    case Augmentation::rot90: return "rot90";
  }
  return "none";
}

inline Augmentation parse_augmentation(const std::string& s) {
  for (auto a : {Augmentation::none, Augmentation::hflip, Augmentation::vflip, Augmentation::rot25,
                 Augmentation::rot45, Augmentation::rot90}) {
    if (s == to_string(a)) return a;
  }
  fail(ErrorCode::parse, "unknown augmentation '" + s + "'");
}

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
  }
  return "unassigned";
}

inline Split parse_split(const std::string& s) {
  for (auto v : {Split::train, Split::val, Split::test, Split::unassigned}) {
    if (s == to_string(v)) return v;
  }
  fail(ErrorCode::parse, "unknown split '" + s + "'");
}

inline constexpr Augmentation kAugmentations[] = {Augmentation::hflip, Augmentation::vflip, Augmentation::rot25,
                                                  Augmentation::rot45, Augmentation::rot90};

inline Image apply_augmentation(const Image& img, Augmentation a) {
  switch (a) {
    case Augmentation::none: return img;
    case Augmentation::hflip: return hflip(img);
    case Augmentation::vflip: return vflip(img);
    case Augmentation::rot25: return rotate(img, 25.0);
    case Augmentation::rot45: return rotate(img, 45.0);
    case Augmentation::rot90: return rot90(img);
  }
  return img;
}

struct RoiRecord {
  std::string id;
  std::string image_path;       // relative paths resolve against Manifest::base_dir
  std::optional<Image> image;   // embedded pixels, take precedence over image_path
  int location_code = kBackgroundCode;
  std::string class_label;
  std::optional<std::string> parent_id;
  Augmentation augmentation = Augmentation::none;
  Split split = Split::unassigned;
  std::vector<float> features;  // precomputed backbone features, may be empty

  bool has_image() const { return image.has_value() || !image_path.empty(); }
};

struct Manifest {
  std::vector<RoiRecord> records;
  std::vector<std::string> class_set;
  std::string provenance;
  std::filesystem::path base_dir;

  std::size_t class_index(const std::string& label) const {
    auto it = std::find(class_set.begin(), class_set.end(), label);
    if (it == class_set.end()) fail(ErrorCode::validation, "class '" + label + "' not in class set");
    return static_cast<std::size_t>(it - class_set.begin());
  }

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [s](const RoiRecord& r) { return r.split == s; }));
  }

  /// Checks id uniqueness and class membership.
  void validate() const {
    std::set<std::string> ids;
    std::set<std::string> classes(class_set.begin(), class_set.end());
    if (classes.size() != class_set.size()) fail(ErrorCode::duplicate, "duplicate class in class set");
    for (const auto& r : records) {
      if (r.id.empty()) fail(ErrorCode::validation, "record with empty id");
      if (!ids.insert(r.id).second) fail(ErrorCode::duplicate, "duplicate record id '" + r.id + "'");
      if (!classes.count(r.class_label)) {
        fail(ErrorCode::validation, "record '" + r.id + "' has class '" + r.class_label + "' outside the class set");
      }
    }
  }
};

/// Resolves a record's pixels. Swappable so callers can observe or redirect reads.
using ImageLoader = std::function<Image(const RoiRecord&)>;

inline ImageLoader default_image_loader(std::filesystem::path base_dir) {
  return [base = std::move(base_dir)](const RoiRecord& r) -> Image {
    if (r.image) return *r.image;
    if (r.image_path.empty()) fail(ErrorCode::validation, "record '" + r.id + "' has no image data");
    std::filesystem::path p(r.image_path);
    if (p.is_relative()) p = base / p;
    return read_image_file(p);
  };
}

inline ImageLoader default_image_loader(const Manifest& m) { return default_image_loader(m.base_dir); }

// ---------------------------------------------------------------------------
// Line-delimited format

inline nlohmann::json record_to_json(const RoiRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  if (r.image) {
    j["image_b64"] = base64::encode(encode_pnm(*r.image));
  } else if (!r.image_path.empty()) {
    j["image_path"] = r.image_path;
  }
  j["location_code"] = r.location_code;
  j["class_label"] = r.class_label;
  if (r.parent_id) j["parent_id"] = *r.parent_id;
  if (r.augmentation != Augmentation::none) j["augmentation"] = to_string(r.augmentation);
  if (r.split != Split::unassigned) j["split"] = to_string(r.split);
  if (!r.features.empty()) j["features"] = r.features;
  return j;
}

inline RoiRecord record_from_json(const nlohmann::json& j) {
  RoiRecord r;
  r.id = j.at("id").get<std::string>();
  if (j.contains("image_b64")) {
    r.image = decode_pnm(base64::decode(j.at("image_b64").get<std::string>()));
  } else if (j.contains("image_path")) {
    r.image_path = j.at("image_path").get<std::string>();
  }
  r.location_code = j.at("location_code").get<int>();
  r.class_label = j.at("class_label").get<std::string>();
  if (j.contains("parent_id") && !j["parent_id"].is_null()) r.parent_id = j["parent_id"].get<std::string>();
  if (j.contains("augmentation")) r.augmentation = parse_augmentation(j["augmentation"].get<std::string>());
  if (j.contains("split")) r.split = parse_split(j["split"].get<std::string>());
  if (j.contains("features")) r.features = j["features"].get<std::vector<float>>();
  return r;
}

/// One JSON object per line. An optional first line {"class_set": [...],
/// "provenance": "..."} declares the classes; otherwise `class_set` is used,
/// and failing that classes are collected in order of first appearance.
inline Manifest load_manifest_text(const std::string& text, std::filesystem::path base_dir = {},
                                   const std::vector<std::string>& class_set = {}) {
  Manifest m;
  m.base_dir = std::move(base_dir);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool declared = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object()) fail(ErrorCode::parse, "expected an object");
      if (!j.contains("id") && j.contains("class_set")) {
        if (!m.records.empty() || declared) fail(ErrorCode::parse, "header must be the first line");
        m.class_set = j["class_set"].get<std::vector<std::string>>();
        m.provenance = j.value("provenance", std::string{});
        declared = true;
        continue;
      }
      m.records.push_back(record_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::parse, "manifest line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!declared) {
    if (!class_set.empty()) {
      m.class_set = class_set;
    } else {
      for (const auto& r : m.records)
        if (std::find(m.class_set.begin(), m.class_set.end(), r.class_label) == m.class_set.end())
          m.class_set.push_back(r.class_label);
    }
  } else if (!class_set.empty() && class_set != m.class_set) {
    fail(ErrorCode::validation, "manifest class set differs from the requested one");
  }
  m.validate();
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path, const std::vector<std::string>& class_set = {}) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return load_manifest_text(ss.str(), path.parent_path(), class_set);
}

inline std::string manifest_to_text(const Manifest& m) {
  std::string out = nlohmann::json{{"class_set", m.class_set}, {"provenance", m.provenance}}.dump() + "\n";
  for (const auto& r : m.records) out += record_to_json(r).dump() + "\n";
  return out;
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write manifest " + path.string());
  out << manifest_to_text(m);
}

// ---------------------------------------------------------------------------
// Splitting and augmentation

struct SplitConfig {
  double train_fraction = 0.60;
  double val_fraction = 0.15;
  double test_fraction = 0.25;
  std::uint64_t seed = 0;

  void validate() const {
    if (train_fraction < 0 || val_fraction < 0 || test_fraction < 0) {
      fail(ErrorCode::validation, "split fractions must be nonnegative");
    }
    if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
      fail(ErrorCode::validation, "split fractions must sum to 1");
    }
  }
};

/// Per class: order by id, seeded shuffle, take round(test·n) for test, then
/// round(val·n) for val; the remainder is train.
inline Manifest split_manifest(const Manifest& m, const SplitConfig& cfg) {
  cfg.validate();
  for (const auto& r : m.records) {
    if (r.augmentation != Augmentation::none || r.parent_id) {
      fail(ErrorCode::state, "split_manifest needs an unaugmented manifest (record '" + r.id + "')");
    }
  }
  Manifest out = m;
  for (std::size_t ci = 0; ci < m.class_set.size(); ++ci) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < m.records.size(); ++i)
      if (m.records[i].class_label == m.class_set[ci]) members.push_back(i);
    std::sort(members.begin(), members.end(),
              [&](std::size_t a, std::size_t b) { return m.records[a].id < m.records[b].id; });
    Rng rng(derive_seed(cfg.seed, ci));
    shuffle(members.begin(), members.end(), rng);
    const std::size_t n = members.size();
    const std::size_t n_test = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(cfg.test_fraction * n)));
    const std::size_t n_val =
        std::min<std::size_t>(n - n_test, static_cast<std::size_t>(std::llround(cfg.val_fraction * n)));
    for (std::size_t k = 0; k < n; ++k) {
      out.records[members[k]].split = k < n_test ? Split::test : (k < n_test + n_val ? Split::val : Split::train);
    }
  }
  return out;
}

/// Each train/val record is followed by its five augmented children, which
/// carry embedded pixels and inherit location, label, split and features.
/// Test records pass through unchanged.
inline Manifest augment_manifest(const Manifest& m, const ImageLoader& loader) {
  Manifest out;
  out.class_set = m.class_set;
  out.provenance = m.provenance;
  out.base_dir = m.base_dir;
  out.records.reserve(m.records.size() * 6);
  for (const auto& r : m.records) {
    if (r.split == Split::unassigned) fail(ErrorCode::state, "augment_manifest needs split assignments");
    if (r.augmentation != Augmentation::none) fail(ErrorCode::state, "record '" + r.id + "' is already augmented");
    out.records.push_back(r);
    if (r.split == Split::test) continue;
    if (!r.has_image()) fail(ErrorCode::validation, "record '" + r.id + "' has no image data");
    const Image base = loader(r);
    for (Augmentation a : kAugmentations) {
      RoiRecord child;
      child.id = r.id + "__" + to_string(a);
      child.image = apply_augmentation(base, a);
      child.location_code = r.location_code;
      child.class_label = r.class_label;
      child.parent_id = r.id;
      child.augmentation = a;
      child.split = r.split;
      child.features = r.features;
      out.records.push_back(std::move(child));
    }
  }
  out.validate();
  return out;
}

inline Manifest augment_manifest(const Manifest& m) { return augment_manifest(m, default_image_loader(m)); }

/// Keeps only records whose class is in `classes`; the class set becomes `classes`.
inline Manifest filter_classes(const Manifest& m, const std::vector<std::string>& classes) {
  Manifest out;
  out.class_set = classes;
  out.provenance = m.provenance;
  out.base_dir = m.base_dir;
  for (const auto& c : classes) {
    if (std::find(m.class_set.begin(), m.class_set.end(), c) == m.class_set.end()) {
      fail(ErrorCode::not_found, "class '" + c + "' not in manifest");
    }
  }
  const std::set<std::string> keep(classes.begin(), classes.end());
  for (const auto& r : m.records)
    if (keep.count(r.class_label)) out.records.push_back(r);
  return out;
}

// ---------------------------------------------------------------------------
// Aligned batches

struct ImageShape {
  int channels = 3;
  int height = 32;
  int width = 32;

  std::size_t size() const { return static_cast<std::size_t>(channels) * height * width; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// Row i of every field comes from record_ids[i].
struct AlignedBatch {
  nn::Tensor<float> images;     // [B, C, H, W], empty when images were not requested
  nn::Tensor<float> features;   // [B, D], empty unless precomputed features were requested
  nn::Tensor<float> locations;  // [B, vocab.dimension]
  std::vector<int> labels;
  std::vector<std::string> record_ids;

  std::size_t size() const { return record_ids.size(); }
};

struct BatchInputs {
  bool images = true;
  bool features = false;
  std::size_t feature_dim = 0;
};

/// Decoded, resized and encoded records of one split, ordered by id.
struct PreparedSplit {
  ImageShape image_shape;
  std::size_t vocab_dim = 0;
  std::size_t feature_dim = 0;
  bool has_images = false;
  bool has_features = false;
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<int> location_codes;
  std::vector<std::size_t> location_index;
  std::vector<float> images;    // ids.size() * image_shape.size()
  std::vector<float> features;  // ids.size() * feature_dim

  std::size_t size() const { return ids.size(); }

  AlignedBatch gather(const std::vector<std::size_t>& rows) const {
    AlignedBatch b;
    const std::size_t B = rows.size();
    const std::size_t isz = image_shape.size();
    if (has_images) {
      b.images = nn::Tensor<float>({B, static_cast<std::size_t>(image_shape.channels),
                                    static_cast<std::size_t>(image_shape.height),
                                    static_cast<std::size_t>(image_shape.width)});
    }
    if (has_features) b.features = nn::Tensor<float>({B, feature_dim});
    b.locations = nn::Tensor<float>({B, vocab_dim});
    for (std::size_t i = 0; i < B; ++i) {
      const std::size_t r = rows[i];
      if (has_images) std::copy_n(images.begin() + r * isz, isz, b.images.data() + i * isz);
      if (has_features) std::copy_n(features.begin() + r * feature_dim, feature_dim, b.features.data() + i * feature_dim);
      b.locations.at(i, location_index[r]) = 1.0f;
      b.labels.push_back(labels[r]);
      b.record_ids.push_back(ids[r]);
    }
    return b;
  }
};

inline PreparedSplit prepare_split(const Manifest& m, const LocationVocabulary& vocab, std::optional<Split> split,
                                   const ImageShape& shape, const BatchInputs& inputs, const ImageLoader& loader) {
  PreparedSplit p;
  p.image_shape = shape;
  p.vocab_dim = vocab.dimension();
  p.has_images = inputs.images;
  p.has_features = inputs.features;
  p.feature_dim = inputs.features ? inputs.feature_dim : 0;
  std::vector<const RoiRecord*> chosen;
  for (const auto& r : m.records)
    if (!split || r.split == *split) chosen.push_back(&r);
  std::sort(chosen.begin(), chosen.end(), [](const RoiRecord* a, const RoiRecord* b) { return a->id < b->id; });
  for (const RoiRecord* r : chosen) {
    if (!vocab.contains(r->location_code)) {
      fail(ErrorCode::not_found,
           "record '" + r->id + "': location code " + std::to_string(r->location_code) + " not in vocabulary");
    }
    p.ids.push_back(r->id);
    p.labels.push_back(static_cast<int>(m.class_index(r->class_label)));
    p.location_codes.push_back(r->location_code);
    p.location_index.push_back(vocab.index_of(r->location_code));
    if (inputs.images) {
      if (!r->has_image()) fail(ErrorCode::validation, "record '" + r->id + "' has no image data");
      const auto planar = resize_to_planar(loader(*r), shape.channels, shape.height, shape.width);
      p.images.insert(p.images.end(), planar.begin(), planar.end());
    }
    if (inputs.features) {
      if (r->features.size() != inputs.feature_dim) {
        fail(ErrorCode::shape, "record '" + r->id + "' has " + std::to_string(r->features.size()) +
                                   " features, expected " + std::to_string(inputs.feature_dim));
      }
      p.features.insert(p.features.end(), r->features.begin(), r->features.end());
    }
  }
  return p;
}

/// One seeded shuffle of the id-ordered rows, cut into batches (last may be short).
inline std::vector<AlignedBatch> make_batches(const PreparedSplit& p, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) fail(ErrorCode::validation, "batch size must be at least 1");
  std::vector<std::size_t> order(p.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  shuffle(order.begin(), order.end(), rng);
  std::vector<AlignedBatch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.push_back(p.gather(std::vector<std::size_t>(order.begin() + start, order.begin() + end)));
  }
  return out;
}

/// Batches in a fixed id order, for evaluation.
inline std::vector<AlignedBatch> make_ordered_batches(const PreparedSplit& p, std::size_t batch_size) {
  if (batch_size == 0) fail(ErrorCode::validation, "batch size must be at least 1");
  std::vector<AlignedBatch> out;
  for (std::size_t start = 0; start < p.size(); start += batch_size) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(p.size(), start + batch_size); ++i) rows.push_back(i);
    out.push_back(p.gather(rows));
  }
  return out;
}

inline std::vector<AlignedBatch> build_aligned_batches(const Manifest& m, const LocationVocabulary& vocab, Split split,
                                                       std::size_t batch_size, std::uint64_t seed,
                                                       const ImageShape& shape, const BatchInputs& inputs = {},
                                                       const ImageLoader& loader = {}) {
  if (batch_size == 0) fail(ErrorCode::validation, "batch size must be at least 1");
  const auto prepared = prepare_split(m, vocab, split, shape, inputs, loader ? loader : default_image_loader(m));
  return make_batches(prepared, batch_size, seed);
}

}  // namespace wmc
