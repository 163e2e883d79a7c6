#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wmc/error.hpp"

namespace wmc {

/// counts[m][n] = records of true class m predicted as n.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::vector<std::uint64_t>> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t k) : classes(k), counts(k, std::vector<std::uint64_t>(k, 0)) {}

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts)
      for (auto v : row) t += v;
    return t;
  }

  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < classes; ++i) t += counts[i][i];
    return t;
  }
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& predictions, const std::vector<int>& labels,
                                        std::size_t classes) {
  if (predictions.size() != labels.size()) fail(ErrorCode::shape, "predictions and labels differ in length");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = predictions[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= classes || static_cast<std::size_t>(p) >= classes) {
      fail(ErrorCode::range, "class index outside 0.." + std::to_string(classes - 1));
    }
    ++cm.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  return cm;
}

/// One-vs-rest counts for `positive` read off a confusion matrix.
struct BinaryCounts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
};

inline BinaryCounts binary_counts(const ConfusionMatrix& cm, std::size_t positive) {
  if (positive >= cm.classes) fail(ErrorCode::range, "positive class out of range");
  BinaryCounts c;
  for (std::size_t m = 0; m < cm.classes; ++m)
    for (std::size_t n = 0; n < cm.classes; ++n) {
      const auto v = cm.counts[m][n];
      if (m == positive && n == positive) c.tp += v;
      else if (m == positive) c.fn += v;
      else if (n == positive) c.fp += v;
      else c.tn += v;
    }
  return c;
}

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  /// Zero denominators are reported as 0 with these flags set.
  bool precision_degenerate = false;
  bool recall_degenerate = false;
  bool f1_degenerate = false;
  std::optional<std::size_t> positive_class;
  ConfusionMatrix confusion;
  std::string experiment_name;
  std::string model_name;
};

inline double safe_ratio(double num, double den, bool& degenerate) {
  degenerate = den == 0.0;
  return degenerate ? 0.0 : num / den;
}

inline double harmonic_f1(double precision, double recall, bool& degenerate) {
  return safe_ratio(2.0 * precision * recall, precision + recall, degenerate);
}

/// Accuracy = (TP+TN)/total, precision = TP/(TP+FP), recall = TP/(TP+FN),
/// F1 = 2PR/(P+R), from binary counts.
inline MetricsReport metrics_from_counts(const BinaryCounts& c) {
  MetricsReport r;
  const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
  const double fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  bool acc_degenerate = false;
  r.accuracy = safe_ratio(tp + tn, tp + tn + fp + fn, acc_degenerate);
  r.precision = safe_ratio(tp, tp + fp, r.precision_degenerate);
  r.recall = safe_ratio(tp, tp + fn, r.recall_degenerate);
  r.f1 = harmonic_f1(r.precision, r.recall, r.f1_degenerate);
  return r;
}

/// Binary reports (positive given) use one-vs-rest counts for the positive
/// class; multiclass reports give diagonal accuracy and macro-averaged P/R/F1.
inline MetricsReport metrics_from_confusion(const ConfusionMatrix& cm, std::optional<std::size_t> positive) {
  MetricsReport r;
  if (positive) {
    r = metrics_from_counts(binary_counts(cm, *positive));
    // Accuracy from the full matrix: identical for 2 classes, exact for more.
    bool d = false;
    r.accuracy = safe_ratio(static_cast<double>(cm.trace()), static_cast<double>(cm.total()), d);
  } else {
    bool d = false;
    r.accuracy = safe_ratio(static_cast<double>(cm.trace()), static_cast<double>(cm.total()), d);
    double p = 0, rc = 0, f = 0;
    for (std::size_t k = 0; k < cm.classes; ++k) {
      const auto one = metrics_from_counts(binary_counts(cm, k));
      p += one.precision;
      rc += one.recall;
      f += one.f1;
      r.precision_degenerate = r.precision_degenerate || one.precision_degenerate;
      r.recall_degenerate = r.recall_degenerate || one.recall_degenerate;
      r.f1_degenerate = r.f1_degenerate || one.f1_degenerate;
    }
    if (cm.classes) {
      const double k = static_cast<double>(cm.classes);
      r.precision = p / k;
      r.recall = rc / k;
      r.f1 = f / k;
    }
  }
  r.positive_class = positive;
  r.confusion = cm;
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j{{"accuracy", r.accuracy},
                   {"precision", r.precision},
                   {"recall", r.recall},
                   {"f1", r.f1},
                   {"precision_degenerate", r.precision_degenerate},
                   {"recall_degenerate", r.recall_degenerate},
                   {"f1_degenerate", r.f1_degenerate},
                   {"confusion", r.confusion.counts},
                   {"experiment", r.experiment_name},
                   {"model", r.model_name}};
  if (r.positive_class) j["positive_class"] = *r.positive_class;
  return j;
}

/// "82.91%": fraction rendered as a percentage with two decimals.
inline std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", fraction * 100.0);
  return buf;
}

}  // namespace wmc
