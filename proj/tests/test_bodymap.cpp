#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "wmc/bodymap.hpp"
#include "wmc/random.hpp"

using namespace wmc;

namespace {

BodyMap demo() { return load_bodymap(std::string(WMC_DATA_DIR) + "/bodymap_demo.json"); }
BodyMap overlap() { return load_bodymap(std::string(WMC_FIXTURE_DIR) + "/bodymap_overlap.json"); }

std::string region_json(int code, const std::string& polygon = "[[0.1,0.1],[0.2,0.1],[0.2,0.2]]") {
  return R"({"code":)" + std::to_string(code) + R"(,"name":"r","view":"full_body","group":"g","polygon":)" + polygon + "}";
}

ErrorCode code_of(const std::string& text) {
  try {
    load_bodymap_text(text);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::state;
}

// Winding-number containment, independent of the even-odd implementation.
bool winding_contains(const std::vector<Point>& poly, double x, double y) {
  int wn = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point& a = poly[i];
    const Point& b = poly[(i + 1) % poly.size()];
    const double cross = (b.x - a.x) * (y - a.y) - (x - a.x) * (b.y - a.y);
    if (a.y <= y) {
      if (b.y > y && cross > 0) ++wn;
    } else if (b.y <= y && cross < 0) {
      --wn;
    }
  }
  return wn != 0;
}

}  // namespace

TEST(BodyMap, DemoFixtureNames) {
  const auto map = demo();
  const std::vector<std::pair<int, std::string>> rows{
      {152, "Left Dorsal Wrist"},
      {153, "Left Proximal Lateral Dorsal Hand"},
      {154, "Left Proximal Medial Dorsal Hand"},
      {184, "Left Distal Phlanax of Dorsal Little Finger"},
      {217, "Right Distal Plantar First Toe"},
      {226, "Right Proximal Plantar First Toe"},
      {232, "Right Distal Lateral Mid Plantar Foot"},
      {237, "Right Medial Heel"},
      {305, "Left Posterior Lower Back"},
      {311, "Superior Gluteal"},
      {312, "Inferior Gluteal"},
      {320, "Left Gluteal Fold"},
  };
  for (const auto& [code, name] : rows) EXPECT_EQ(map.lookup(code).name, name) << code;
}

TEST(BodyMap, UnknownCodeIsNotFound) {
  try {
    demo().lookup(9999);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::not_found);
  }
}

TEST(BodyMap, EmptyMapHasBackgroundOnlyVocabulary) {
  const auto map = load_bodymap_text(R"({"version":"0","regions":[]})");
  EXPECT_EQ(LocationVocabulary::from_bodymap(map).dimension(), 1u);
}

TEST(BodyMap, RejectsMalformedDefinitions) {
  EXPECT_EQ(code_of(R"({"version":"0","regions":[)" + region_json(311) + "," + region_json(311) + "]}"),
            ErrorCode::duplicate);
  EXPECT_EQ(code_of(R"({"version":"0","regions":[)" + region_json(5, "[[0.1,0.1],[0.2,0.2]]") + "]}"),
            ErrorCode::validation);
  EXPECT_EQ(code_of(R"({"version":"0","regions":[)" + region_json(0) + "]}"), ErrorCode::range);
  EXPECT_EQ(code_of(R"({"version":"0","regions":[)" + region_json(485) + "]}"), ErrorCode::range);
  EXPECT_EQ(code_of(R"({"version":"0","regions":[)" + region_json(5, "[[0.1,0.1],[1.2,0.1],[0.2,0.2]]") + "]}"),
            ErrorCode::range);
  EXPECT_EQ(code_of("{not json"), ErrorCode::parse);
  EXPECT_EQ(code_of(R"({"version":"0"})"), ErrorCode::parse);
}

TEST(BodyMap, JsonRoundTrip) {
  const auto map = demo();
  const auto again = bodymap_from_json(bodymap_to_json(map));
  ASSERT_EQ(again.regions().size(), map.regions().size());
  for (std::size_t i = 0; i < map.regions().size(); ++i) {
    EXPECT_EQ(again.regions()[i].code, map.regions()[i].code);
    EXPECT_EQ(again.regions()[i].name, map.regions()[i].name);
    EXPECT_EQ(again.regions()[i].polygon.size(), map.regions()[i].polygon.size());
  }
  EXPECT_EQ(bodymap_to_json(map)["background_code"], -1);
}

TEST(Vocabulary, BackgroundAtIndexZeroThenAscending) {
  const auto vocab = LocationVocabulary::from_bodymap(demo());
  EXPECT_EQ(vocab.dimension(), 13u);
  const auto bg = encode_location(vocab, kBackgroundCode);
  EXPECT_EQ(bg[0], 1.0f);
  EXPECT_EQ(std::accumulate(bg.begin(), bg.end(), 0.0f), 1.0f);
  EXPECT_EQ(vocab.index_of(152), 1u);
  EXPECT_EQ(vocab.index_of(320), 12u);
  for (std::size_t i = 1; i < vocab.dimension(); ++i) EXPECT_LT(vocab.code_at(i - 1), vocab.code_at(i));
}

TEST(Vocabulary, OneHotInjectiveAndUnitNorm) {
  const auto vocab = LocationVocabulary::from_bodymap(demo());
  std::set<std::size_t> hot;
  for (int code : vocab.ordered_codes()) {
    const auto v = encode_location(vocab, code);
    ASSERT_EQ(v.size(), vocab.dimension());
    double l1 = 0.0;
    std::size_t at = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      l1 += std::abs(v[i]);
      if (v[i] == 1.0f) at = i;
      EXPECT_TRUE(v[i] == 0.0f || v[i] == 1.0f);
    }
    EXPECT_EQ(l1, 1.0);
    hot.insert(at);
  }
  EXPECT_EQ(hot.size(), vocab.dimension());
}

TEST(Vocabulary, DeterministicAcrossLoadsAndFingerprintFrozen) {
  const auto a = LocationVocabulary::from_bodymap(demo());
  const auto b = LocationVocabulary::from_bodymap(demo());
  EXPECT_EQ(a.ordered_codes(), b.ordered_codes());
  // FNV-1a 64 over little-endian int32 codes, computed independently.
  EXPECT_EQ(a.fingerprint(), "b1cb913c94fc2ed2");
  EXPECT_EQ(LocationVocabulary().fingerprint(), "994f76653e2a3951");
}

TEST(Vocabulary, StaleVocabularyRejectsCodeFromNewerMap) {
  const LocationVocabulary stale({152, 153});
  EXPECT_TRUE(demo().contains(237));
  EXPECT_THROW(encode_location(stale, 237), Error);
}

TEST(Vocabulary, FromOrderedValidates) {
  EXPECT_NO_THROW(LocationVocabulary::from_ordered({-1, 3, 7}));
  EXPECT_THROW(LocationVocabulary::from_ordered({3, 7}), Error);
  EXPECT_THROW(LocationVocabulary::from_ordered({-1, 7, 3}), Error);
}

TEST(HitTest, CentroidOfConvexRegionHitsItself) {
  const auto map = demo();
  for (const auto& r : map.regions()) {
    const Point c = polygon_centroid(r.polygon);
    EXPECT_EQ(map.region_for_point(r.view, c.x, c.y), r.code) << r.code;
  }
}

TEST(HitTest, EmptyHitAndRangeCheck) {
  const auto map = demo();
  EXPECT_FALSE(map.region_for_point(View::full_body, 0.0, 0.0).has_value());
  EXPECT_THROW(map.region_for_point(View::full_body, 1.5, 0.2), Error);
  EXPECT_THROW(map.region_for_point(View::detailed, 0.2, -0.1), Error);
}

TEST(HitTest, OverlapGoesToSmallestCode) {
  const auto map = overlap();
  EXPECT_EQ(map.region_for_point(View::full_body, 0.5, 0.5), 10);
  EXPECT_EQ(map.region_for_point(View::full_body, 0.3, 0.3), 20);
  EXPECT_EQ(map.region_for_point(View::full_body, 0.8, 0.8), 10);
  // Only the triangle lives in the detailed view.
  EXPECT_EQ(map.region_for_point(View::detailed, 0.5, 0.5), 30);
}

TEST(HitTest, AgreesWithWindingNumberOracle) {
  for (const auto& map : {demo(), overlap()}) {
    Rng rng(11);
    for (int i = 0; i < 4000; ++i) {
      const View view = rng.bernoulli(0.5) ? View::full_body : View::detailed;
      const double x = rng.uniform(), y = rng.uniform();
      const auto hit = map.region_for_point(view, x, y);
      std::optional<int> expected;
      for (const auto& r : map.regions()) {
        if (r.view == view && winding_contains(r.polygon, x, y) && (!expected || r.code < *expected)) expected = r.code;
      }
      EXPECT_EQ(hit, expected) << x << "," << y;
    }
  }
}
