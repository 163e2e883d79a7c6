#pragma once

// Image-branch (WIC), location-branch (WLC) and fusion (WMC) classifiers.
//
// Parameter names are shared between the stand-alone branches and the fused
// network ("wic.*", "wlc.*"), so branch checkpoints can warm-start a WMC.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wmc/bodymap.hpp"
#include "wmc/dataset.hpp"
#include "wmc/error.hpp"
#include "wmc/nn/lstm.hpp"
#include "wmc/nn/ops.hpp"
#include "wmc/nn/params.hpp"
#include "wmc/nn/tape.hpp"

namespace wmc {

enum class Task { binary, multiclass };
enum class BranchKind { wic_only, wlc_only, wmc };
enum class WlcVariant { mlp, lstm };
enum class BackboneKind { smallcnn, precomputed };
enum class FusionPoint { hidden, probability };

inline const char* to_string(Task v) { return v == Task::binary ? "binary" : "multiclass"; }
inline const char* to_string(BranchKind v) {
  return v == BranchKind::wic_only ? "wic_only" : v == BranchKind::wlc_only ? "wlc_only" : "wmc";
}
inline const char* to_string(WlcVariant v) { return v == WlcVariant::mlp ? "mlp" : "lstm"; }
inline const char* to_string(BackboneKind v) { return v == BackboneKind::smallcnn ? "smallcnn" : "precomputed"; }
inline const char* to_string(FusionPoint v) { return v == FusionPoint::hidden ? "hidden" : "probability"; }

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<E> options, const char* what) {
  for (E e : options)
    if (s == to_string(e)) return e;
  fail(ErrorCode::parse, std::string("unknown ") + what + " '" + s + "'");
}

inline constexpr std::size_t kSmallCnnWidths[] = {16, 32, 64};
inline constexpr std::size_t kHiddenWidth = 512;
inline constexpr std::size_t kWlcMlpWidths[] = {128, 128, 128, 256, 256, 256, 512, 512, 512};
inline constexpr std::size_t kWlcLstmUnits[] = {32, 32, 64, 64};
inline constexpr std::size_t kFusionWidths[] = {512, 256};

struct BackboneSpec {
  BackboneKind kind = BackboneKind::smallcnn;
  std::size_t feature_dim = 0;  // precomputed only
};

struct ModelSpec {
  Task task = Task::multiclass;
  int n_classes = 2;
  BranchKind branch = BranchKind::wmc;
  WlcVariant wlc_variant = WlcVariant::mlp;
  BackboneSpec backbone;
  FusionPoint fusion_point = FusionPoint::hidden;
  float dropout_rate = 0.5f;
  std::string vocab_fingerprint;
  std::size_t vocab_dim = 1;
  ImageShape image_shape{3, 32, 32};
  /// Binary tasks: class index whose probability the sigmoid unit outputs.
  int positive_index = 0;

  std::size_t output_width() const { return task == Task::binary ? 1 : static_cast<std::size_t>(n_classes); }
  bool uses_image_branch() const { return branch != BranchKind::wlc_only; }
  bool uses_location_branch() const { return branch != BranchKind::wic_only; }
  bool uses_raw_images() const { return uses_image_branch() && backbone.kind == BackboneKind::smallcnn; }
  bool uses_features() const { return uses_image_branch() && backbone.kind == BackboneKind::precomputed; }

  void validate() const {
    if (n_classes < 2) fail(ErrorCode::validation, "a classifier needs at least 2 classes");
    if (task == Task::binary && n_classes != 2) fail(ErrorCode::validation, "binary task needs exactly 2 classes");
    if (positive_index < 0 || positive_index >= n_classes) fail(ErrorCode::range, "positive class index out of range");
    if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) fail(ErrorCode::range, "dropout rate must lie in [0, 1)");
    if (uses_location_branch() && vocab_dim == 0) fail(ErrorCode::validation, "empty location vocabulary");
    if (uses_features() && backbone.feature_dim == 0) fail(ErrorCode::validation, "feature dimension must be positive");
    if (uses_raw_images()) {
      if (image_shape.channels != 1 && image_shape.channels != 3) fail(ErrorCode::validation, "images need 1 or 3 channels");
      if (image_shape.height < 8 || image_shape.width < 8) {
        fail(ErrorCode::validation, "smallcnn needs images of at least 8x8");
      }
    }
  }

  friend bool operator==(const ModelSpec& a, const ModelSpec& b) {
    return a.task == b.task && a.n_classes == b.n_classes && a.branch == b.branch && a.wlc_variant == b.wlc_variant &&
           a.backbone.kind == b.backbone.kind && a.backbone.feature_dim == b.backbone.feature_dim &&
           a.fusion_point == b.fusion_point && a.dropout_rate == b.dropout_rate &&
           a.vocab_fingerprint == b.vocab_fingerprint && a.vocab_dim == b.vocab_dim && a.image_shape == b.image_shape &&
           a.positive_index == b.positive_index;
  }
};

inline nlohmann::json to_json(const ModelSpec& s) {
  return {{"task", to_string(s.task)},
          {"n_classes", s.n_classes},
          {"branch", to_string(s.branch)},
          {"wlc_variant", to_string(s.wlc_variant)},
          {"backbone", {{"kind", to_string(s.backbone.kind)}, {"feature_dim", s.backbone.feature_dim}}},
          {"fusion_point", to_string(s.fusion_point)},
          {"dropout_rate", s.dropout_rate},
          {"vocab_fingerprint", s.vocab_fingerprint},
          {"vocab_dim", s.vocab_dim},
          {"image_shape", {s.image_shape.channels, s.image_shape.height, s.image_shape.width}},
          {"positive_index", s.positive_index}};
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  try {
    ModelSpec s;
    s.task = parse_enum(j.at("task").get<std::string>(), {Task::binary, Task::multiclass}, "task");
    s.n_classes = j.at("n_classes").get<int>();
    s.branch = parse_enum(j.at("branch").get<std::string>(), {BranchKind::wic_only, BranchKind::wlc_only, BranchKind::wmc},
                          "branch");
    s.wlc_variant = parse_enum(j.at("wlc_variant").get<std::string>(), {WlcVariant::mlp, WlcVariant::lstm}, "variant");
    s.backbone.kind = parse_enum(j.at("backbone").at("kind").get<std::string>(),
                                 {BackboneKind::smallcnn, BackboneKind::precomputed}, "backbone");
    s.backbone.feature_dim = j.at("backbone").at("feature_dim").get<std::size_t>();
    s.fusion_point = parse_enum(j.at("fusion_point").get<std::string>(), {FusionPoint::hidden, FusionPoint::probability},
                                "fusion point");
    s.dropout_rate = j.at("dropout_rate").get<float>();
    s.vocab_fingerprint = j.at("vocab_fingerprint").get<std::string>();
    s.vocab_dim = j.at("vocab_dim").get<std::size_t>();
    const auto shape = j.at("image_shape").get<std::vector<int>>();
    if (shape.size() != 3) fail(ErrorCode::parse, "image_shape must be [C, H, W]");
    s.image_shape = {shape[0], shape[1], shape[2]};
    s.positive_index = j.value("positive_index", 0);
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::parse, std::string("model spec: ") + e.what());
  }
}

struct LayerInfo {
  std::string name;
  std::string kind;  // conv, dense, lstm, output
  std::size_t in = 0;
  std::size_t out = 0;
};

/// Network inputs in the network's scalar type.
template <typename T>
struct NetInputs {
  nn::Tensor<T> images;     // [B,C,H,W]
  nn::Tensor<T> features;   // [B,D]
  nn::Tensor<T> locations;  // [B,V]

  static NetInputs from_batch(const AlignedBatch& b) {
    return {b.images.template cast<T>(), b.features.template cast<T>(), b.locations.template cast<T>()};
  }
};

template <typename T>
class Network {
 public:
  /// Builds the layer plan and initialises parameters from `seed`.
  Network(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    plan();
    params_ = nn::init_parameters<T>(param_specs_, seed);
  }

  /// Adopts stored parameters; names and shapes must match the plan exactly.
  Network(ModelSpec spec, nn::ParameterSet<T> params) : spec_(std::move(spec)) {
    spec_.validate();
    plan();
    if (params.size() != param_specs_.size()) fail(ErrorCode::validation, "parameter count does not match model spec");
    for (const auto& ps : param_specs_) {
      if (!params.contains(ps.name)) fail(ErrorCode::validation, "missing parameter '" + ps.name + "'");
      if (params.at(ps.name).value.shape() != ps.shape) {
        fail(ErrorCode::shape, "parameter '" + ps.name + "' has shape " +
                                   nn::shape_string(params.at(ps.name).value.shape()) + ", expected " +
                                   nn::shape_string(ps.shape));
      }
    }
    params_ = std::move(params);
  }

  const ModelSpec& spec() const { return spec_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }
  const std::vector<LayerInfo>& layers() const { return layers_; }

  const LayerInfo& layer(const std::string& name) const {
    for (const auto& l : layers_)
      if (l.name == name) return l;
    fail(ErrorCode::not_found, "no layer '" + name + "'");
  }

  /// Output widths of dense/output layers whose names start with `prefix`, in order.
  std::vector<std::size_t> dense_widths(const std::string& prefix) const {
    std::vector<std::size_t> out;
    for (const auto& l : layers_)
      if ((l.kind == "dense" || l.kind == "output") && l.name.rfind(prefix, 0) == 0) out.push_back(l.out);
    return out;
  }

  /// Records the forward pass with gradients flowing into params(). Returns probabilities.
  nn::Var forward(nn::Tape<T>& tape, const NetInputs<T>& in, nn::Mode mode, Rng& rng) {
    return forward_impl(tape, in, mode, &rng, [&](const std::string& n) { return tape.param(params_, n); });
  }

  /// Inference-mode probabilities, [B, n_classes] or [B, 1] for binary tasks.
  nn::Tensor<T> predict(const NetInputs<T>& in) const {
    nn::Tape<T> tape;
    nn::Var p = forward_impl(tape, in, nn::Mode::infer, nullptr,
                             [&](const std::string& n) { return tape.constant_ref(params_.at(n).value); });
    return tape.value(p);
  }

  nn::Tensor<T> predict(const AlignedBatch& batch) const { return predict(NetInputs<T>::from_batch(batch)); }

  /// Cross-entropy for multiclass, binary cross-entropy against (label == positive_index) otherwise.
  nn::Var loss(nn::Tape<T>& tape, nn::Var probs, const std::vector<int>& labels) const {
    if (spec_.task == Task::multiclass) return nn::ops::sparse_categorical_cross_entropy(tape, probs, labels);
    std::vector<int> targets(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= spec_.n_classes) fail(ErrorCode::range, "label out of range");
      targets[i] = labels[i] == spec_.positive_index ? 1 : 0;
    }
    return nn::ops::binary_cross_entropy(tape, probs, targets);
  }

  template <typename U>
  Network<U> cast() const {
    return Network<U>(spec_, params_.template cast<U>());
  }

 private:
  using Binder = std::function<nn::Var(const std::string&)>;

  void add_dense(const std::string& name, std::size_t in, std::size_t out, const char* kind = "dense") {
    param_specs_.push_back({name + ".W", {in, out}, nn::InitKind::glorot_uniform});
    param_specs_.push_back({name + ".b", {out}, nn::InitKind::zeros});
    layers_.push_back({name, kind, in, out});
  }

  void plan() {
    const std::size_t out_w = spec_.output_width();
    const bool branch_outputs = spec_.branch != BranchKind::wmc || spec_.fusion_point == FusionPoint::probability;
    std::size_t fused = 0;

    if (spec_.uses_image_branch()) {
      std::size_t feat = spec_.backbone.feature_dim;
      if (spec_.backbone.kind == BackboneKind::smallcnn) {
        std::size_t ch = static_cast<std::size_t>(spec_.image_shape.channels);
        std::size_t h = static_cast<std::size_t>(spec_.image_shape.height);
        std::size_t w = static_cast<std::size_t>(spec_.image_shape.width);
        for (std::size_t i = 0; i < 3; ++i) {
          const std::string name = "wic.conv" + std::to_string(i + 1);
          param_specs_.push_back({name + ".K", {kSmallCnnWidths[i], ch, 3, 3}, nn::InitKind::glorot_uniform});
          param_specs_.push_back({name + ".b", {kSmallCnnWidths[i]}, nn::InitKind::zeros});
          layers_.push_back({name, "conv", ch, kSmallCnnWidths[i]});
          ch = kSmallCnnWidths[i];
          h /= 2;
          w /= 2;
        }
        add_dense("wic.backbone_fc", ch * h * w, kHiddenWidth);
        feat = kHiddenWidth;
      }
      if (feat == 0) fail(ErrorCode::validation, "image feature dimension must be positive");
      add_dense("wic.fc1", feat, kHiddenWidth);
      add_dense("wic.fc2", kHiddenWidth, kHiddenWidth);
      add_dense("wic.fc3", kHiddenWidth, kHiddenWidth);
      if (branch_outputs) {
        add_dense("wic.out", kHiddenWidth, out_w, "output");
        fused += out_w;
      } else {
        fused += kHiddenWidth;
      }
    }

    if (spec_.uses_location_branch()) {
      std::size_t in = spec_.vocab_dim;
      if (spec_.wlc_variant == WlcVariant::mlp) {
        for (std::size_t i = 0; i < std::size(kWlcMlpWidths); ++i) {
          add_dense("wlc.fc" + std::to_string(i + 1), in, kWlcMlpWidths[i]);
          in = kWlcMlpWidths[i];
        }
      } else {
        for (std::size_t i = 0; i < std::size(kWlcLstmUnits); ++i) {
          const std::string name = "wlc.lstm" + std::to_string(i + 1);
          for (auto& ps : nn::lstm_param_specs(name, in, kWlcLstmUnits[i])) param_specs_.push_back(ps);
          layers_.push_back({name, "lstm", in, kWlcLstmUnits[i]});
          in = kWlcLstmUnits[i];
        }
        add_dense("wlc.fc", in, kHiddenWidth);
        in = kHiddenWidth;
      }
      if (branch_outputs) {
        add_dense("wlc.out", in, out_w, "output");
        fused += out_w;
      } else {
        fused += in;
      }
    }

    if (spec_.branch == BranchKind::wmc) {
      add_dense("wmc.fc1", fused, kFusionWidths[0]);
      add_dense("wmc.fc2", kFusionWidths[0], kFusionWidths[1]);
      add_dense("wmc.out", kFusionWidths[1], out_w, "output");
    }
  }

  nn::Var dense(nn::Tape<T>& tape, const Binder& bind, const std::string& name, nn::Var x) const {
    return nn::ops::dense(tape, x, bind(name + ".W"), bind(name + ".b"));
  }

  nn::Var output(nn::Tape<T>& tape, const Binder& bind, const std::string& name, nn::Var x) const {
    nn::Var logits = dense(tape, bind, name, x);
    return spec_.task == Task::binary ? nn::ops::sigmoid(tape, logits) : nn::ops::softmax(tape, logits);
  }

  nn::Var image_branch(nn::Tape<T>& tape, const NetInputs<T>& in, nn::Mode mode, Rng* rng, const Binder& bind,
                       bool with_output) const {
    nn::Var x;
    if (spec_.backbone.kind == BackboneKind::smallcnn) {
      if (in.images.empty()) fail(ErrorCode::validation, "model needs images but the batch has none");
      const auto& s = spec_.image_shape;
      if (in.images.rank() != 4 || in.images.dim(1) != static_cast<std::size_t>(s.channels) ||
          in.images.dim(2) != static_cast<std::size_t>(s.height) || in.images.dim(3) != static_cast<std::size_t>(s.width)) {
        fail(ErrorCode::shape, "image batch " + nn::shape_string(in.images.shape()) + " does not match model input");
      }
      x = tape.constant_ref(in.images);
      for (int i = 1; i <= 3; ++i) {
        const std::string name = "wic.conv" + std::to_string(i);
        x = nn::ops::conv2d(tape, x, bind(name + ".K"), bind(name + ".b"), 1, 1);
        x = nn::ops::maxpool2d(tape, nn::ops::relu(tape, x), 2, 2);
      }
      x = nn::ops::relu(tape, dense(tape, bind, "wic.backbone_fc", nn::ops::flatten(tape, x)));
    } else {
      if (in.features.empty()) fail(ErrorCode::validation, "model needs precomputed features but the batch has none");
      if (in.features.rank() != 2 || in.features.dim(1) != spec_.backbone.feature_dim) {
        fail(ErrorCode::shape, "feature batch " + nn::shape_string(in.features.shape()) + " does not match model input");
      }
      x = tape.constant_ref(in.features);
    }
    for (int i = 1; i <= 3; ++i) {
      x = nn::ops::relu(tape, dense(tape, bind, "wic.fc" + std::to_string(i), x));
      x = dropout(tape, x, mode, rng);
    }
    return with_output ? output(tape, bind, "wic.out", x) : x;
  }

  nn::Var location_branch(nn::Tape<T>& tape, const NetInputs<T>& in, const Binder& bind, bool with_output) const {
    if (in.locations.rank() != 2 || in.locations.dim(1) != spec_.vocab_dim) {
      fail(ErrorCode::shape, "location batch " + nn::shape_string(in.locations.shape()) + " does not match vocabulary of " +
                                 std::to_string(spec_.vocab_dim));
    }
    nn::Var x = tape.constant_ref(in.locations);
    if (spec_.wlc_variant == WlcVariant::mlp) {
      for (std::size_t i = 1; i <= std::size(kWlcMlpWidths); ++i)
        x = nn::ops::relu(tape, dense(tape, bind, "wlc.fc" + std::to_string(i), x));
    } else {
      // The one-hot is a single time step; every layer starts from zero state.
      const std::size_t B = in.locations.dim(0);
      for (std::size_t i = 1; i <= std::size(kWlcLstmUnits); ++i) {
        const std::string name = "wlc.lstm" + std::to_string(i);
        nn::Var zero = tape.constant(nn::Tensor<T>({B, kWlcLstmUnits[i - 1]}));
        nn::LstmParams p{bind(name + ".Wx"), bind(name + ".Wh"), bind(name + ".b")};
        x = nn::lstm_cell_step(tape, x, zero, zero, p).first;
      }
      x = nn::ops::relu(tape, dense(tape, bind, "wlc.fc", x));
    }
    return with_output ? output(tape, bind, "wlc.out", x) : x;
  }

  nn::Var dropout(nn::Tape<T>& tape, nn::Var x, nn::Mode mode, Rng* rng) const {
    if (mode == nn::Mode::infer || spec_.dropout_rate == 0.0f) return x;
    if (!rng) fail(ErrorCode::state, "training forward pass needs a random generator");
    return nn::ops::dropout(tape, x, spec_.dropout_rate, mode, *rng);
  }

  nn::Var forward_impl(nn::Tape<T>& tape, const NetInputs<T>& in, nn::Mode mode, Rng* rng, const Binder& bind) const {
    const bool branch_outputs = spec_.branch != BranchKind::wmc || spec_.fusion_point == FusionPoint::probability;
    if (spec_.uses_location_branch() && in.locations.empty()) fail(ErrorCode::validation, "batch has no locations");
    switch (spec_.branch) {
      case BranchKind::wic_only: return image_branch(tape, in, mode, rng, bind, true);
      case BranchKind::wlc_only: return location_branch(tape, in, bind, true);
      case BranchKind::wmc: break;
    }
    nn::Var img = image_branch(tape, in, mode, rng, bind, branch_outputs);
    nn::Var loc = location_branch(tape, in, bind, branch_outputs);
    if (tape.value(img).dim(0) != tape.value(loc).dim(0)) fail(ErrorCode::shape, "image and location batch sizes differ");
    nn::Var x = nn::ops::concat_cols(tape, {img, loc});
    x = nn::ops::relu(tape, dense(tape, bind, "wmc.fc1", x));
    x = nn::ops::relu(tape, dense(tape, bind, "wmc.fc2", x));
    return output(tape, bind, "wmc.out", x);
  }

  ModelSpec spec_;
  std::vector<nn::ParamSpec> param_specs_;
  std::vector<LayerInfo> layers_;
  nn::ParameterSet<T> params_;
};

/// Class index per row: argmax for multiclass; threshold 0.5 for binary.
template <typename T>
std::vector<int> predicted_classes(const nn::Tensor<T>& probs, const ModelSpec& spec) {
  std::vector<int> out(probs.dim(0));
  for (std::size_t r = 0; r < probs.dim(0); ++r) {
    if (spec.task == Task::binary) {
      out[r] = probs[r] >= T(0.5) ? spec.positive_index : 1 - spec.positive_index;
    } else {
      const T* row = probs.data() + r * probs.dim(1);
      out[r] = static_cast<int>(std::max_element(row, row + probs.dim(1)) - row);
    }
  }
  return out;
}

/// A trained network plus what is needed to interpret its inputs and outputs.
struct Model {
  Network<float> network;
  std::vector<std::string> class_set;
  LocationVocabulary vocab;

  const ModelSpec& spec() const { return network.spec(); }

  void check_vocab(const LocationVocabulary& other) const {
    if (other.fingerprint() != spec().vocab_fingerprint) {
      fail(ErrorCode::fingerprint, "location vocabulary fingerprint " + other.fingerprint() +
                                       " does not match the model's " + spec().vocab_fingerprint);
    }
  }

  /// Batch inputs this model needs.
  BatchInputs inputs() const {
    return {spec().uses_raw_images(), spec().uses_features(), spec().backbone.feature_dim};
  }
};

inline ModelSpec base_spec(Task task, int n_classes, const LocationVocabulary& vocab) {
  ModelSpec s;
  s.task = task;
  s.n_classes = n_classes;
  s.vocab_dim = vocab.dimension();
  s.vocab_fingerprint = vocab.fingerprint();
  return s;
}

inline Network<float> build_wlc(WlcVariant variant, const LocationVocabulary& vocab, Task task, int n_classes,
                                std::uint64_t seed = 0) {
  if (vocab.dimension() == 0) fail(ErrorCode::validation, "empty vocabulary");
  ModelSpec s = base_spec(task, n_classes, vocab);
  s.branch = BranchKind::wlc_only;
  s.wlc_variant = variant;
  return Network<float>(s, seed);
}

inline Network<float> build_wic(const BackboneSpec& backbone, const ImageShape& shape, Task task, int n_classes,
                                float dropout_rate = 0.5f, std::uint64_t seed = 0) {
  ModelSpec s;
  s.task = task;
  s.n_classes = n_classes;
  s.branch = BranchKind::wic_only;
  s.backbone = backbone;
  s.image_shape = shape;
  s.dropout_rate = dropout_rate;
  s.vocab_dim = 0;
  return Network<float>(s, seed);
}

/// spec.branch must be wmc; an empty spec fingerprint is filled from `vocab`.
inline Network<float> build_wmc(ModelSpec spec, const LocationVocabulary& vocab, std::uint64_t seed = 0) {
  if (spec.branch != BranchKind::wmc) fail(ErrorCode::validation, "build_wmc needs a wmc model spec");
  if (spec.vocab_fingerprint.empty()) {
    spec.vocab_fingerprint = vocab.fingerprint();
    spec.vocab_dim = vocab.dimension();
  }
  if (spec.vocab_fingerprint != vocab.fingerprint()) {
    fail(ErrorCode::fingerprint, "model spec vocabulary fingerprint does not match the supplied vocabulary");
  }
  if (spec.vocab_dim != vocab.dimension()) fail(ErrorCode::shape, "model spec vocabulary size mismatch");
  return Network<float>(spec, seed);
}

/// Copies every parameter of `source` whose name and shape exist in `target`.
template <typename T>
std::size_t warm_start(Network<T>& target, const nn::ParameterSet<T>& source) {
  std::size_t copied = 0;
  for (auto& [name, entry] : target.params().entries()) {
    if (!source.contains(name)) continue;
    const auto& src = source.at(name).value;
    if (src.shape() != entry.value.shape()) continue;
    entry.value = src;
    ++copied;
  }
  return copied;
}

}  // namespace wmc
