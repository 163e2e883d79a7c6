#pragma once

// Seeded synthetic multi-modal manifests. Each class pairs an image pattern
// with a location-code distribution; in synergy mode the class is the
// (pattern, location group) pair, so neither modality alone identifies it.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "wmc/dataset.hpp"
#include "wmc/error.hpp"
#include "wmc/image.hpp"
#include "wmc/random.hpp"

namespace wmc {

enum class PatternFamily { radial, checker };

struct SyntheticClass {
  std::string name;
  int pattern = 0;
  std::vector<int> codes;
};

struct SyntheticSpec {
  std::size_t n_records = 0;
  int image_size = 16;
  int channels = 1;
  PatternFamily family = PatternFamily::radial;
  double noise = 0.08;
  /// Probability that a record's location is drawn from all classes' codes.
  double overlap = 0.0;
  std::vector<SyntheticClass> classes;
  std::string provenance = "synthetic";
  /// Optional (train, val, test) counts assigned in generation order; must sum to n_records.
  std::optional<std::array<std::size_t, 3>> split_counts;

  void validate() const {
    if (classes.empty()) fail(ErrorCode::validation, "synthetic spec has no classes");
    if (image_size < 4) fail(ErrorCode::validation, "synthetic image size must be at least 4");
    if (channels != 1 && channels != 3) fail(ErrorCode::validation, "synthetic channels must be 1 or 3");
    if (overlap < 0.0 || overlap > 1.0) fail(ErrorCode::validation, "overlap must lie in [0, 1]");
    if (noise < 0.0) fail(ErrorCode::validation, "noise must be nonnegative");
    if (split_counts && (*split_counts)[0] + (*split_counts)[1] + (*split_counts)[2] != n_records) {
      fail(ErrorCode::validation, "split_counts must sum to n_records");
    }
    std::set<std::string> names;
    for (const auto& c : classes) {
      if (c.codes.empty()) fail(ErrorCode::validation, "class '" + c.name + "' has an empty location distribution");
      if (c.pattern < 0) fail(ErrorCode::validation, "pattern index must be nonnegative");
      if (!names.insert(c.name).second) fail(ErrorCode::duplicate, "duplicate synthetic class '" + c.name + "'");
    }
  }

  std::vector<int> all_codes() const {
    std::set<int> s;
    for (const auto& c : classes) s.insert(c.codes.begin(), c.codes.end());
    return {s.begin(), s.end()};
  }
};

/// Classes named "p<pattern>g<group>", pattern-major.
inline SyntheticSpec synergy_spec(int patterns, const std::vector<std::vector<int>>& location_groups) {
  if (patterns < 1 || location_groups.empty()) fail(ErrorCode::validation, "synergy needs patterns and groups");
  SyntheticSpec spec;
  for (int p = 0; p < patterns; ++p)
    for (std::size_t g = 0; g < location_groups.size(); ++g)
      spec.classes.push_back({"p" + std::to_string(p) + "g" + std::to_string(g), p, location_groups[g]});
  return spec;
}

namespace detail {

/// Pattern intensity in [0, 1] at centred pixel offset (dx, dy).
inline double pattern_value(PatternFamily family, int pattern, double dx, double dy, double radius, double phase) {
  if (family == PatternFamily::radial) {
    const double d = std::sqrt(dx * dx + dy * dy);
    if (d >= radius) return 0.0;
    const int band = static_cast<int>(std::floor(2.0 * (pattern + 1) * d / radius));
    return band % 2 == 0 ? 1.0 : 0.0;
  }
  const double period = static_cast<double>(1 << (pattern + 1));
  const auto cx = static_cast<long>(std::floor((dx + phase) / period));
  const auto cy = static_cast<long>(std::floor((dy + phase) / period));
  return ((cx + cy) % 2 == 0) ? 1.0 : 0.0;
}

}  // namespace detail

inline Image synth_image(const SyntheticSpec& spec, int pattern, Rng& rng) {
  const int S = spec.image_size;
  Image img(S, S, spec.channels);
  const double cx = (S - 1) / 2.0 + rng.uniform(-1.0, 1.0);
  const double cy = (S - 1) / 2.0 + rng.uniform(-1.0, 1.0);
  const double radius = S * rng.uniform(0.38, 0.46);
  const double phase = rng.uniform(0.0, 4.0);
  const double background = rng.uniform(0.1, 0.3);
  const double amplitude = rng.uniform(0.5, 0.7);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double v = background + amplitude * detail::pattern_value(spec.family, pattern, x - cx, y - cy, radius, phase) +
                       spec.noise * rng.normal();
      const auto byte = static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
      for (int c = 0; c < spec.channels; ++c) img.at(y, x, c) = byte;
    }
  return img;
}

/// Record i has class i mod K; ids are zero-padded so id order equals index order.
/// With split_counts, every split is class-balanced up to one record per class.
inline Manifest synth_generate(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Manifest m;
  m.provenance = spec.provenance;
  for (const auto& c : spec.classes) m.class_set.push_back(c.name);
  const auto pool = spec.all_codes();
  Rng rng(seed);
  for (std::size_t i = 0; i < spec.n_records; ++i) {
    const auto& cls = spec.classes[i % spec.classes.size()];
    RoiRecord r;
    char id[32];
    std::snprintf(id, sizeof(id), "syn_%06zu", i);
    r.id = id;
    r.class_label = cls.name;
    r.image = synth_image(spec, cls.pattern, rng);
    const bool from_pool = spec.overlap > 0.0 && rng.bernoulli(spec.overlap);
    const auto& codes = from_pool ? pool : cls.codes;
    r.location_code = codes[rng.below(codes.size())];
    if (spec.split_counts) {
      const auto& c = *spec.split_counts;
      r.split = i < c[0] ? Split::train : i < c[0] + c[1] ? Split::val : Split::test;
    }
    m.records.push_back(std::move(r));
  }
  m.validate();
  return m;
}

struct ModalityCeiling {
  double image_only = 0.0;
  double location_only = 0.0;
};

/// Bayes-optimal accuracy of a classifier that sees only one modality,
/// assuming patterns are perfectly recognisable and classes are balanced.
inline ModalityCeiling synth_modality_ceiling(const SyntheticSpec& spec) {
  spec.validate();
  const double K = static_cast<double>(spec.classes.size());
  ModalityCeiling out;
  std::set<int> patterns;
  for (const auto& c : spec.classes) patterns.insert(c.pattern);
  out.image_only = static_cast<double>(patterns.size()) / K;
  const auto pool = spec.all_codes();
  double sum = 0.0;
  for (int code : pool) {
    double best = 0.0;
    for (const auto& c : spec.classes) {
      const double in_class =
          static_cast<double>(std::count(c.codes.begin(), c.codes.end(), code)) / static_cast<double>(c.codes.size());
      best = std::max(best, (1.0 - spec.overlap) * in_class + spec.overlap / static_cast<double>(pool.size()));
    }
    sum += best;
  }
  out.location_only = sum / K;
  return out;
}

inline PatternFamily parse_pattern_family(const std::string& s) {
  if (s == "radial") return PatternFamily::radial;
  if (s == "checker") return PatternFamily::checker;
  fail(ErrorCode::parse, "unknown pattern family '" + s + "'");
}

/// {"mode": "synergy", "patterns": 2, "location_groups": [[...], ...]} or
/// {"mode": "per_class", "classes": [{"name", "pattern", "codes"}]}, plus
/// n_records, image_size, channels, pattern_family, noise, overlap, class_names,
/// split_counts.
inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  try {
    SyntheticSpec spec;
    const std::string mode = j.value("mode", std::string{"synergy"});
    if (mode == "synergy") {
      spec = synergy_spec(j.at("patterns").get<int>(), j.at("location_groups").get<std::vector<std::vector<int>>>());
    } else if (mode == "per_class") {
      for (const auto& c : j.at("classes")) {
        spec.classes.push_back({c.at("name").get<std::string>(), c.at("pattern").get<int>(),
                                c.at("codes").get<std::vector<int>>()});
      }
    } else {
      fail(ErrorCode::parse, "unknown synthetic mode '" + mode + "'");
    }
    if (j.contains("class_names")) {
      const auto names = j["class_names"].get<std::vector<std::string>>();
      if (names.size() != spec.classes.size()) fail(ErrorCode::validation, "class_names length mismatch");
      for (std::size_t i = 0; i < names.size(); ++i) spec.classes[i].name = names[i];
    }
    spec.n_records = j.value("n_records", std::size_t{0});
    spec.image_size = j.value("image_size", 16);
    spec.channels = j.value("channels", 1);
    spec.family = parse_pattern_family(j.value("pattern_family", std::string{"radial"}));
    spec.noise = j.value("noise", 0.08);
    spec.overlap = j.value("overlap", 0.0);
    spec.provenance = j.value("provenance", std::string{"synthetic"});
    if (j.contains("split_counts")) spec.split_counts = j["split_counts"].get<std::array<std::size_t, 3>>();
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("synthetic spec: ") + e.what());
  }
}

inline SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open synthetic spec " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("synthetic spec: ") + e.what());
  }
  return synthetic_spec_from_json(j);
}

}  // namespace wmc
