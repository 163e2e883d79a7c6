#pragma once

// Training loop with the two rolling checkpoints (best validation accuracy,
// best mean of training and validation accuracy) and test-set evaluation.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "wmc/dataset.hpp"
#include "wmc/error.hpp"
#include "wmc/metrics.hpp"
#include "wmc/models.hpp"
#include "wmc/nn/params.hpp"
#include "wmc/random.hpp"

namespace wmc {

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
};

enum class CheckpointPolicy { best_val, best_combined };

inline const char* to_string(CheckpointPolicy p) { return p == CheckpointPolicy::best_val ? "best_val" : "best_combined"; }

struct TrainConfig {
  int epochs = 250;
  std::size_t batch_size = 25;
  nn::AdamConfig adam;
  std::uint64_t seed = 0;
  std::function<void(const EpochRecord&)> on_epoch;

  void validate() const {
    if (epochs < 1) fail(ErrorCode::validation, "epochs must be at least 1");
    if (batch_size < 1) fail(ErrorCode::validation, "batch size must be at least 1");
    adam.validate();
  }
};

/// Zero-based indices into history.epochs; earlier epochs win ties.
struct CheckpointSelection {
  std::optional<std::size_t> best_val;
  std::optional<std::size_t> best_combined;
};

inline double combined_accuracy(const EpochRecord& e) { return (e.train_accuracy + e.val_accuracy) / 2.0; }

inline CheckpointSelection select_checkpoints(const TrainingHistory& h) {
  CheckpointSelection s;
  for (std::size_t i = 0; i < h.epochs.size(); ++i) {
    if (!s.best_val || h.epochs[i].val_accuracy > h.epochs[*s.best_val].val_accuracy) s.best_val = i;
    if (!s.best_combined || combined_accuracy(h.epochs[i]) > combined_accuracy(h.epochs[*s.best_combined])) {
      s.best_combined = i;
    }
  }
  return s;
}

struct TrainResult {
  TrainingHistory history;
  CheckpointSelection selection;
  nn::ParameterSet<float> best_val;
  nn::ParameterSet<float> best_combined;
};

struct InferenceOutput {
  std::vector<int> predictions;
  std::vector<int> labels;
  std::vector<std::string> ids;
  double loss = 0.0;  // mean per record
};

inline InferenceOutput run_inference(const Network<float>& net, const std::vector<AlignedBatch>& batches) {
  InferenceOutput out;
  double loss_sum = 0.0;
  for (const auto& b : batches) {
    const auto probs = net.predict(b);
    const auto pred = predicted_classes(probs, net.spec());
    out.predictions.insert(out.predictions.end(), pred.begin(), pred.end());
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    out.ids.insert(out.ids.end(), b.record_ids.begin(), b.record_ids.end());
    if (net.spec().task == Task::multiclass) {
      loss_sum += nn::sparse_categorical_cross_entropy(probs, b.labels) * static_cast<double>(b.size());
    } else {
      std::vector<int> targets(b.labels.size());
      for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = b.labels[i] == net.spec().positive_index;
      loss_sum += nn::binary_cross_entropy(probs, targets) * static_cast<double>(b.size());
    }
  }
  if (!out.labels.empty()) out.loss = loss_sum / static_cast<double>(out.labels.size());
  return out;
}

inline double accuracy_of(const std::vector<int>& pred, const std::vector<int>& labels) {
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

/// Per epoch: one seeded shuffle, an Adam step per batch, then inference-mode
/// validation. Deterministic for a fixed seed.
inline TrainResult train(Network<float>& net, const PreparedSplit& train_split, const PreparedSplit& val_split,
                         TrainConfig cfg) {
  cfg.validate();
  if (train_split.size() == 0) fail(ErrorCode::validation, "empty training set");
  if (net.spec().uses_location_branch() && train_split.vocab_dim != net.spec().vocab_dim) {
    fail(ErrorCode::fingerprint, "training batches and model use different location vocabularies");
  }
  TrainResult result;
  const auto val_batches = make_ordered_batches(val_split, cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto batches = make_batches(train_split, cfg.batch_size, derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    Rng dropout_rng(derive_seed(cfg.seed ^ 0xD50F'0000'0000'0000ull, static_cast<std::uint64_t>(epoch)));
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      const auto inputs = NetInputs<float>::from_batch(batch);
      nn::Tape<float> tape;
      nn::Var probs = net.forward(tape, inputs, nn::Mode::train, dropout_rng);
      nn::Var loss = net.loss(tape, probs, batch.labels);
      const double lv = tape.value(loss)[0];
      if (!std::isfinite(lv)) {
        fail(ErrorCode::numeric, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi) +
                                     " (first record " + batch.record_ids.front() + ")");
      }
      tape.backward(loss);
      nn::adam_update(net.params(), cfg.adam);
      const auto pred = predicted_classes(tape.value(probs), net.spec());
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
      seen += batch.size();
      loss_sum += lv * static_cast<double>(batch.size());
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    const auto val = run_inference(net, val_batches);
    rec.val_loss = val.loss;
    rec.val_accuracy = accuracy_of(val.predictions, val.labels);
    result.history.epochs.push_back(rec);

    const auto sel = select_checkpoints(result.history);
    const std::size_t idx = result.history.epochs.size() - 1;
    if (sel.best_val == idx) result.best_val = net.params();
    if (sel.best_combined == idx) result.best_combined = net.params();
    result.selection = sel;
    if (cfg.on_epoch) cfg.on_epoch(rec);
  }
  return result;
}

/// Multiclass: diagonal accuracy plus macro P/R/F1. Binary: counts relative
/// to `positive_class`, which is then required.
inline MetricsReport evaluate(const Network<float>& net, const std::vector<AlignedBatch>& batches,
                              std::optional<std::size_t> positive_class) {
  if (net.spec().task == Task::binary && !positive_class) {
    fail(ErrorCode::validation, "binary evaluation needs a positive class");
  }
  const auto out = run_inference(net, batches);
  const auto cm = confusion_matrix(out.predictions, out.labels, static_cast<std::size_t>(net.spec().n_classes));
  return metrics_from_confusion(cm, positive_class);
}

}  // namespace wmc
