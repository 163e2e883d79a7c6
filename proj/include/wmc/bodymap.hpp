#pragma once

// Coded body map: region registry, location vocabulary and polygon hit-testing.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "wmc/error.hpp"

namespace wmc {

inline constexpr int kBackgroundCode = -1;
inline constexpr int kMaxRegionCode = 484;

enum class View { full_body, detailed };

inline const char* to_string(View v) { return v == View::full_body ? "full_body" : "detailed"; }

inline View parse_view(const std::string& s) {
  if (s == "full_body") return View::full_body;
  if (s == "detailed") return View::detailed;
  fail(ErrorCode::parse, "unknown view '" + s + "'");
}

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct Region {
  int code = 0;
  std::string name;
  View view = View::full_body;
  std::vector<Point> polygon;
  std::string group;
};

/// Even-odd ray casting. Points exactly on an edge may land on either side.
inline bool polygon_contains(const std::vector<Point>& poly, double x, double y) {
  bool inside = false;
  const std::size_t n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if ((a.y > y) != (b.y > y)) {
      const double x_cross = (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x;
      if (x < x_cross) inside = !inside;
    }
  }
  return inside;
}

/// Area centroid; falls back to the vertex mean for degenerate polygons.
inline Point polygon_centroid(const std::vector<Point>& poly) {
  double area2 = 0.0, cx = 0.0, cy = 0.0;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const double cross = poly[j].x * poly[i].y - poly[i].x * poly[j].y;
    area2 += cross;
    cx += (poly[j].x + poly[i].x) * cross;
    cy += (poly[j].y + poly[i].y) * cross;
  }
  if (std::abs(area2) < 1e-15) {
    Point m;
    for (const auto& p : poly) {
      m.x += p.x;
      m.y += p.y;
    }
    m.x /= static_cast<double>(poly.size());
    m.y /= static_cast<double>(poly.size());
    return m;
  }
  return {cx / (3.0 * area2), cy / (3.0 * area2)};
}

class BodyMap {
 public:
  BodyMap() = default;

  BodyMap(std::string version, std::vector<Region> regions) : version_(std::move(version)) {
    if (regions.size() > static_cast<std::size_t>(kMaxRegionCode)) {
      fail(ErrorCode::validation, "body map has more than 484 regions");
    }
    for (auto& r : regions) {
      if (r.code < 1 || r.code > kMaxRegionCode) {
        fail(ErrorCode::range, "region code " + std::to_string(r.code) + " outside 1..484");
      }
      if (r.polygon.size() < 3) {
        fail(ErrorCode::validation,
             "region " + std::to_string(r.code) + " polygon has fewer than 3 vertices");
      }
      for (const auto& p : r.polygon) {
        if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0)) {
          fail(ErrorCode::range,
               "region " + std::to_string(r.code) + " has a vertex outside [0,1]^2");
        }
      }
      if (!index_.emplace(r.code, regions_.size()).second) {
        fail(ErrorCode::duplicate, "duplicate region code " + std::to_string(r.code));
      }
      regions_.push_back(std::move(r));
    }
  }

  const std::string& version() const { return version_; }
  const std::vector<Region>& regions() const { return regions_; }
  static constexpr int background_code() { return kBackgroundCode; }

  bool contains(int code) const { return index_.count(code) != 0; }

  const Region& lookup(int code) const {
    auto it = index_.find(code);
    if (it == index_.end()) fail(ErrorCode::not_found, "unknown region code " + std::to_string(code));
    return regions_[it->second];
  }

  /// Smallest code whose polygon in `view` contains (x, y).
  std::optional<int> region_for_point(View view, double x, double y) const {
    if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0)) {
      fail(ErrorCode::range, "point outside [0,1]^2");
    }
    std::optional<int> best;
    for (const auto& r : regions_) {
      if (r.view != view) continue;
      if (best && r.code >= *best) continue;
      if (polygon_contains(r.polygon, x, y)) best = r.code;
    }
    return best;
  }

 private:
  std::string version_;
  std::vector<Region> regions_;
  std::map<int, std::size_t> index_;
};

inline BodyMap bodymap_from_json(const nlohmann::json& doc) {
  try {
    std::vector<Region> regions;
    const std::string version = doc.at("version").get<std::string>();
    for (const auto& item : doc.at("regions")) {
      Region r;
      r.code = item.at("code").get<int>();
      r.name = item.at("name").get<std::string>();
      r.view = parse_view(item.at("view").get<std::string>());
      r.group = item.value("group", std::string{});
      for (const auto& xy : item.at("polygon")) {
        if (!xy.is_array() || xy.size() != 2) fail(ErrorCode::parse, "polygon vertex must be [x, y]");
        r.polygon.push_back({xy[0].get<double>(), xy[1].get<double>()});
      }
      regions.push_back(std::move(r));
    }
    return BodyMap(version, std::move(regions));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("body map: ") + e.what());
  }
}

inline nlohmann::json bodymap_to_json(const BodyMap& map) {
  nlohmann::json regions = nlohmann::json::array();
  for (const auto& r : map.regions()) {
    nlohmann::json poly = nlohmann::json::array();
    for (const auto& p : r.polygon) poly.push_back({p.x, p.y});
    regions.push_back({{"code", r.code},
                       {"name", r.name},
                       {"view", to_string(r.view)},
                       {"group", r.group},
                       {"polygon", poly}});
  }
  return {{"version", map.version()}, {"background_code", kBackgroundCode}, {"regions", regions}};
}

inline BodyMap load_bodymap_text(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("body map: ") + e.what());
  }
  return bodymap_from_json(doc);
}

inline BodyMap load_bodymap(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open body map " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return load_bodymap_text(ss.str());
}

/// Stable 64-bit FNV-1a over a sequence of codes (little-endian int32 each).
inline std::string fingerprint_codes(const std::vector<int>& codes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (int c : codes) {
    const auto u = static_cast<std::uint32_t>(c);
    for (int b = 0; b < 4; ++b) {
      h ^= (u >> (8 * b)) & 0xFF;
      h *= 0x100000001b3ull;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// One-hot index assignment: background at 0, then region codes ascending.
class LocationVocabulary {
 public:
  LocationVocabulary() : LocationVocabulary(std::vector<int>{}) {}

  /// `codes` are region codes; the background slot is added here.
  explicit LocationVocabulary(std::vector<int> codes) {
    std::sort(codes.begin(), codes.end());
    codes.erase(std::unique(codes.begin(), codes.end()), codes.end());
    ordered_.push_back(kBackgroundCode);
    for (int c : codes) {
      if (c <= 0) fail(ErrorCode::range, "vocabulary codes must be positive");
      ordered_.push_back(c);
    }
    for (std::size_t i = 0; i < ordered_.size(); ++i) index_.emplace(ordered_[i], i);
  }

  static LocationVocabulary from_bodymap(const BodyMap& map) {
    std::vector<int> codes;
    for (const auto& r : map.regions()) codes.push_back(r.code);
    return LocationVocabulary(std::move(codes));
  }

  /// Rebuild from a stored ordered_codes list (background first).
  static LocationVocabulary from_ordered(const std::vector<int>& ordered) {
    if (ordered.empty() || ordered.front() != kBackgroundCode) {
      fail(ErrorCode::validation, "stored vocabulary must start with the background code");
    }
    LocationVocabulary v(std::vector<int>(ordered.begin() + 1, ordered.end()));
    if (v.ordered_ != ordered) fail(ErrorCode::validation, "stored vocabulary is not sorted");
    return v;
  }

  const std::vector<int>& ordered_codes() const { return ordered_; }
  std::size_t dimension() const { return ordered_.size(); }
  bool contains(int code) const { return index_.count(code) != 0; }

  std::size_t index_of(int code) const {
    auto it = index_.find(code);
    if (it == index_.end()) {
      fail(ErrorCode::not_found, "location code " + std::to_string(code) + " not in vocabulary");
    }
    return it->second;
  }

  int code_at(std::size_t index) const { return ordered_.at(index); }

  std::vector<float> encode(int code) const {
    std::vector<float> v(dimension(), 0.0f);
    v[index_of(code)] = 1.0f;
    return v;
  }

  std::string fingerprint() const { return fingerprint_codes(ordered_); }

 private:
  std::vector<int> ordered_;
  std::map<int, std::size_t> index_;
};

inline std::vector<float> encode_location(const LocationVocabulary& vocab, int code) {
  return vocab.encode(code);
}

}  // namespace wmc
