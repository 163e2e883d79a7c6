#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "wmc/metrics.hpp"
#include "wmc/random.hpp"

using namespace wmc;

namespace {

struct Recount {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
};

// Straight from raw pairs, without a confusion matrix.
Recount recount_one_vs_rest(const std::vector<int>& pred, const std::vector<int>& label, int positive) {
  double tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == positive, l = label[i] == positive;
    tp += p && l;
    tn += !p && !l;
    fp += p && !l;
    fn += !p && l;
  }
  Recount r;
  r.accuracy = pred.empty() ? 0 : (tp + tn) / static_cast<double>(pred.size());
  r.precision = tp + fp > 0 ? tp / (tp + fp) : 0;
  r.recall = tp + fn > 0 ? tp / (tp + fn) : 0;
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0;
  return r;
}

double recount_accuracy(const std::vector<int>& pred, const std::vector<int>& label) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == label[i];
  return pred.empty() ? 0 : static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace

TEST(Confusion, HandCountedExample) {
  const auto cm = confusion_matrix({0, 1, 1, 1}, {0, 0, 1, 1}, 2);
  EXPECT_EQ(cm.counts, (std::vector<std::vector<std::uint64_t>>{{1, 1}, {0, 2}}));
  EXPECT_EQ(cm.trace(), 3u);
}

TEST(Confusion, PerfectAndEmpty) {
  const auto cm = confusion_matrix({2, 0, 1, 2}, {2, 0, 1, 2}, 3);
  EXPECT_EQ(cm.trace(), 4u);
  EXPECT_EQ(cm.total(), 4u);
  const auto empty = confusion_matrix({}, {}, 3);
  EXPECT_EQ(empty.total(), 0u);
  EXPECT_EQ(metrics_from_confusion(empty, std::nullopt).accuracy, 0.0);
}

TEST(Confusion, RejectsBadInput) {
  EXPECT_THROW(confusion_matrix({0, 1}, {0}, 2), Error);
  EXPECT_THROW(confusion_matrix({0, 2}, {0, 1}, 2), Error);
  EXPECT_THROW(confusion_matrix({0, -1}, {0, 1}, 2), Error);
}

TEST(Metrics, PerfectBinaryClassifier) {
  const auto r = metrics_from_counts({5, 5, 0, 0});
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
  EXPECT_EQ(r.f1, 1.0);
}

TEST(Metrics, ZeroDenominatorIsFlaggedNotThrown) {
  const auto r = metrics_from_counts({0, 7, 0, 3});
  EXPECT_EQ(r.precision, 0.0);
  EXPECT_TRUE(r.precision_degenerate);
  EXPECT_FALSE(r.recall_degenerate);
  EXPECT_EQ(r.f1, 0.0);
  EXPECT_TRUE(r.f1_degenerate);
}

TEST(Metrics, F1FromPublishedPrecisionAndRecall) {
  bool degenerate = false;
  const double f1 = harmonic_f1(0.75, 0.9706, degenerate);
  EXPECT_FALSE(degenerate);
  EXPECT_EQ(format_percent(f1), "84.62%");
  EXPECT_EQ(format_percent(0.75), "75.00%");
  EXPECT_EQ(format_percent(0.8291), "82.91%");
}

TEST(Metrics, AgreesWithBruteForceRecount) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const int K = 2 + static_cast<int>(rng.below(5));
    const std::size_t N = rng.below(60);
    std::vector<int> pred(N), label(N);
    for (std::size_t i = 0; i < N; ++i) {
      label[i] = static_cast<int>(rng.below(K));
      pred[i] = rng.bernoulli(0.6) ? label[i] : static_cast<int>(rng.below(K));
    }
    const auto cm = confusion_matrix(pred, label, K);

    const int positive = static_cast<int>(rng.below(K));
    const auto bin = metrics_from_confusion(cm, static_cast<std::size_t>(positive));
    const auto ref = recount_one_vs_rest(pred, label, positive);
    EXPECT_NEAR(bin.accuracy, recount_accuracy(pred, label), 1e-12);
    EXPECT_NEAR(bin.precision, ref.precision, 1e-12);
    EXPECT_NEAR(bin.recall, ref.recall, 1e-12);
    EXPECT_NEAR(bin.f1, ref.f1, 1e-12);
    if (K == 2) EXPECT_NEAR(bin.accuracy, ref.accuracy, 1e-12);

    const auto macro = metrics_from_confusion(cm, std::nullopt);
    double p = 0, r = 0, f = 0;
    for (int k = 0; k < K; ++k) {
      const auto one = recount_one_vs_rest(pred, label, k);
      p += one.precision;
      r += one.recall;
      f += one.f1;
    }
    EXPECT_NEAR(macro.accuracy, recount_accuracy(pred, label), 1e-12);
    EXPECT_NEAR(macro.precision, p / K, 1e-12);
    EXPECT_NEAR(macro.recall, r / K, 1e-12);
    EXPECT_NEAR(macro.f1, f / K, 1e-12);
  }
}

TEST(Metrics, F1IsHarmonicMeanForBinaryReports) {
  Rng rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    BinaryCounts c{rng.below(20), rng.below(20), rng.below(20), rng.below(20)};
    const auto r = metrics_from_counts(c);
    if (r.f1_degenerate) {
      EXPECT_EQ(r.f1, 0.0);
    } else {
      EXPECT_EQ(r.f1, 2 * r.precision * r.recall / (r.precision + r.recall));
    }
  }
}

TEST(Metrics, JsonCarriesFlagsAndConfusion) {
  const auto r = metrics_from_confusion(confusion_matrix({0, 1, 1, 1}, {0, 0, 1, 1}, 2), 0);
  const auto j = to_json(r);
  EXPECT_EQ(j["positive_class"], 0);
  EXPECT_EQ(j["confusion"][0][1], 1);
  EXPECT_DOUBLE_EQ(j["precision"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(j["recall"].get<double>(), 0.5);
}
