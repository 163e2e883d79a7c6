#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "wmc/synth.hpp"
#include "wmc/train.hpp"

using namespace wmc;

namespace {

TrainingHistory history(const std::vector<std::pair<double, double>>& train_val) {
  TrainingHistory h;
  int epoch = 0;
  for (const auto& [t, v] : train_val) {
    EpochRecord e;
    e.epoch = ++epoch;
    e.train_accuracy = t;
    e.val_accuracy = v;
    h.epochs.push_back(e);
  }
  return h;
}

struct Fixture {
  Manifest manifest;
  LocationVocabulary vocab;
  PreparedSplit train, val, test;
};

// Location alone decides the class here, so a location model can learn it.
Fixture location_fixture(std::size_t n = 120) {
  SyntheticSpec spec;
  spec.n_records = n;
  spec.image_size = 8;
  spec.classes = {{"A", 0, {1, 2}}, {"B", 0, {3, 4}}, {"C", 0, {5}}};
  Fixture f;
  f.manifest = split_manifest(synth_generate(spec, 3), SplitConfig{});
  f.vocab = LocationVocabulary(spec.all_codes());
  const BatchInputs no_images{false, false, 0};
  const auto loader = default_image_loader(f.manifest);
  f.train = prepare_split(f.manifest, f.vocab, Split::train, {1, 8, 8}, no_images, loader);
  f.val = prepare_split(f.manifest, f.vocab, Split::val, {1, 8, 8}, no_images, loader);
  f.test = prepare_split(f.manifest, f.vocab, Split::test, {1, 8, 8}, no_images, loader);
  return f;
}

TrainConfig config(int epochs, std::uint64_t seed = 1) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 10;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(CheckpointPolicy, BestValidationAccuracy) {
  const auto s = select_checkpoints(history({{0.1, 0.5}, {0.1, 0.9}, {0.1, 0.7}}));
  EXPECT_EQ(s.best_val, 1u);
}

TEST(CheckpointPolicy, BestMeanOfTrainAndValidation) {
  const auto s = select_checkpoints(history({{0.6, 0.5}, {0.9, 0.5}}));
  EXPECT_EQ(s.best_combined, 1u);
  EXPECT_EQ(s.best_val, 0u);
}

TEST(CheckpointPolicy, EarliestEpochWinsTies) {
  const auto s = select_checkpoints(history({{0.4, 0.8}, {0.8, 0.4}, {0.6, 0.8}, {0.2, 0.8}}));
  EXPECT_EQ(s.best_val, 0u);
  EXPECT_EQ(s.best_combined, 2u);
  EXPECT_FALSE(select_checkpoints({}).best_val.has_value());
}

TEST(CheckpointPolicy, MatchesArgmaxOnRandomHistories) {
  Rng rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::pair<double, double>> tv;
    const std::size_t n = 1 + rng.below(12);
    // Coarse grid so ties are common.
    for (std::size_t i = 0; i < n; ++i) tv.emplace_back(rng.below(5) / 4.0, rng.below(5) / 4.0);
    const auto h = history(tv);
    const auto s = select_checkpoints(h);
    std::size_t bv = 0, bc = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (tv[i].second > tv[bv].second) bv = i;
      if (tv[i].first + tv[i].second > tv[bc].first + tv[bc].second) bc = i;
    }
    EXPECT_EQ(s.best_val, bv);
    EXPECT_EQ(s.best_combined, bc);
    for (const auto& e : h.epochs) EXPECT_GE(h.epochs[*s.best_val].val_accuracy, e.val_accuracy);
  }
}

TEST(Train, HistoryLengthAndLearning) {
  auto f = location_fixture();
  auto net = build_wlc(WlcVariant::mlp, f.vocab, Task::multiclass, 3, 2);
  int callbacks = 0;
  auto cfg = config(8);
  cfg.on_epoch = [&](const EpochRecord& e) { EXPECT_EQ(e.epoch, ++callbacks); };
  const auto r = train(net, f.train, f.val, cfg);
  EXPECT_EQ(r.history.epochs.size(), 8u);
  EXPECT_EQ(callbacks, 8);
  ASSERT_TRUE(r.selection.best_val && r.selection.best_combined);
  EXPECT_LT(r.history.epochs.back().train_loss, r.history.epochs.front().train_loss);

  Network<float> best(net.spec(), r.best_val);
  const auto m = evaluate(best, make_ordered_batches(f.test, 25), std::nullopt);
  EXPECT_EQ(m.accuracy, 1.0);
  // The stored best_val parameters reproduce the recorded validation accuracy.
  const auto val = run_inference(best, make_ordered_batches(f.val, 7));
  EXPECT_EQ(accuracy_of(val.predictions, val.labels), r.history.epochs[*r.selection.best_val].val_accuracy);
}

TEST(Train, DeterministicForFixedSeed) {
  auto f = location_fixture(60);
  auto a = build_wlc(WlcVariant::lstm, f.vocab, Task::multiclass, 3, 4);
  auto b = build_wlc(WlcVariant::lstm, f.vocab, Task::multiclass, 3, 4);
  auto c = build_wlc(WlcVariant::lstm, f.vocab, Task::multiclass, 3, 4);
  const auto ra = train(a, f.train, f.val, config(3, 5));
  const auto rb = train(b, f.train, f.val, config(3, 5));
  const auto rc = train(c, f.train, f.val, config(3, 6));
  EXPECT_TRUE(a.params().same_values(b.params()));
  EXPECT_FALSE(a.params().same_values(c.params()));
  ASSERT_EQ(ra.history.epochs.size(), rb.history.epochs.size());
  for (std::size_t i = 0; i < ra.history.epochs.size(); ++i) {
    EXPECT_EQ(ra.history.epochs[i].train_loss, rb.history.epochs[i].train_loss);
    EXPECT_EQ(ra.history.epochs[i].val_accuracy, rb.history.epochs[i].val_accuracy);
  }
}

TEST(Train, RejectsEmptyTrainingSetAndBadConfig) {
  auto f = location_fixture(30);
  auto net = build_wlc(WlcVariant::mlp, f.vocab, Task::multiclass, 3);
  EXPECT_THROW(train(net, PreparedSplit{}, f.val, config(1)), Error);
  EXPECT_THROW(train(net, f.train, f.val, config(0)), Error);
  auto zero_batch = config(1);
  zero_batch.batch_size = 0;
  EXPECT_THROW(train(net, f.train, f.val, zero_batch), Error);
  auto other = build_wlc(WlcVariant::mlp, LocationVocabulary({1, 2}), Task::multiclass, 3);
  EXPECT_THROW(train(other, f.train, f.val, config(1)), Error);
}

TEST(Train, NonFiniteLossNamesTheBatch) {
  PreparedSplit p;
  p.vocab_dim = 0;
  p.has_features = true;
  p.feature_dim = 2;
  p.ids = {"r1", "r2"};
  p.labels = {0, 1};
  p.location_codes = {-1, -1};
  p.location_index = {0, 0};
  p.features = {1.0f, std::numeric_limits<float>::quiet_NaN(), 0.5f, 0.5f};
  p.vocab_dim = 1;
  auto net = build_wic({BackboneKind::precomputed, 2}, {}, Task::multiclass, 2);
  try {
    train(net, p, p, config(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::numeric);
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Evaluate, BinaryNeedsPositiveClass) {
  SyntheticSpec spec;
  spec.n_records = 20;
  spec.image_size = 8;
  spec.classes = {{"D", 0, {1}}, {"P", 0, {2}}};
  const auto m = synth_generate(spec, 1);
  const LocationVocabulary vocab({1, 2});
  const auto p = prepare_split(m, vocab, std::nullopt, {1, 8, 8}, {false, false, 0}, default_image_loader(m));
  const auto net = build_wlc(WlcVariant::mlp, vocab, Task::binary, 2);
  const auto batches = make_ordered_batches(p, 25);
  EXPECT_THROW(evaluate(net, batches, std::nullopt), Error);
  const auto r = evaluate(net, batches, 0);
  EXPECT_EQ(r.positive_class, 0u);
  EXPECT_EQ(r.confusion.total(), 20u);
}
