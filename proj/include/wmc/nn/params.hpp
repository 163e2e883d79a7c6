#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wmc/error.hpp"
#include "wmc/nn/tensor.hpp"
#include "wmc/random.hpp"

namespace wmc::nn {

template <typename T>
struct ParamEntry {
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> adam_m;
  Tensor<T> adam_v;
};

/// Named trainable tensors with gradients and Adam moments. Iteration order is
/// by name, which fixes the serialization and update order.
template <typename T>
class ParameterSet {
 public:
  using Entries = std::map<std::string, ParamEntry<T>>;

  ParamEntry<T>& add(const std::string& name, Tensor<T> value) {
    if (entries_.count(name)) fail(ErrorCode::duplicate, "duplicate parameter '" + name + "'");
    ParamEntry<T> e;
    e.grad = Tensor<T>(value.shape());
    e.adam_m = Tensor<T>(value.shape());
    e.adam_v = Tensor<T>(value.shape());
    e.value = std::move(value);
    return entries_.emplace(name, std::move(e)).first->second;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  ParamEntry<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) fail(ErrorCode::not_found, "unknown parameter '" + name + "'");
    return it->second;
  }
  const ParamEntry<T>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) fail(ErrorCode::not_found, "unknown parameter '" + name + "'");
    return it->second;
  }

  Entries& entries() { return entries_; }
  const Entries& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, e] : entries_) e.grad.fill(T{0});
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [name, e] : entries_) {
      auto& d = out.add(name, e.value.template cast<U>());
      d.adam_m = e.adam_m.template cast<U>();
      d.adam_v = e.adam_v.template cast<U>();
    }
    return out;
  }

  /// Equality of values only.
  bool same_values(const ParameterSet& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    auto a = entries_.begin();
    auto b = other.entries_.begin();
    for (; a != entries_.end(); ++a, ++b) {
      if (a->first != b->first || !(a->second.value == b->second.value)) return false;
    }
    return true;
  }

 private:
  Entries entries_;
};

enum class InitKind { glorot_uniform, zeros, lstm_bias };

/// Declares one parameter for init_parameters. For glorot_uniform, fans are
/// taken from the shape: [in, out] for matrices, [out, in, kh, kw] for kernels.
/// lstm_bias expects shape [4u] in gate order (i, f, g, o) and sets f to 1.
struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init = InitKind::glorot_uniform;
};

inline double glorot_limit(const Shape& shape) {
  double fan_in = 0, fan_out = 0;
  if (shape.size() == 2) {
    fan_in = static_cast<double>(shape[0]);
    fan_out = static_cast<double>(shape[1]);
  } else if (shape.size() == 4) {
    const double receptive = static_cast<double>(shape[2] * shape[3]);
    fan_in = static_cast<double>(shape[1]) * receptive;
    fan_out = static_cast<double>(shape[0]) * receptive;
  } else {
    fail(ErrorCode::shape, "glorot init needs a rank-2 or rank-4 shape");
  }
  return std::sqrt(6.0 / (fan_in + fan_out));
}

/// Deterministic per seed; specs are initialised in the order given.
template <typename T>
ParameterSet<T> init_parameters(const std::vector<ParamSpec>& specs, std::uint64_t seed) {
  ParameterSet<T> params;
  Rng rng(seed);
  for (const auto& spec : specs) {
    Tensor<T> value(spec.shape);
    switch (spec.init) {
      case InitKind::glorot_uniform: {
        const double limit = glorot_limit(spec.shape);
        for (auto& v : value.values()) v = static_cast<T>(rng.uniform(-limit, limit));
        break;
      }
      case InitKind::zeros:
        break;
      case InitKind::lstm_bias: {
        if (spec.shape.size() != 1 || spec.shape[0] % 4 != 0) {
          fail(ErrorCode::shape, "lstm bias must have shape [4u]");
        }
        const std::size_t u = spec.shape[0] / 4;
        for (std::size_t i = u; i < 2 * u; ++i) value[i] = T{1};
        break;
      }
    }
    params.add(spec.name, std::move(value));
  }
  return params;
}

struct AdamConfig {
  float learning_rate = 0.001f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  std::uint64_t step = 0;

  void validate() const {
    if (!(learning_rate > 0.0f)) fail(ErrorCode::validation, "learning rate must be positive");
    if (!(beta1 >= 0.0f && beta1 < 1.0f) || !(beta2 >= 0.0f && beta2 < 1.0f)) {
      fail(ErrorCode::validation, "Adam betas must lie in [0, 1)");
    }
  }
};

/// One bias-corrected Adam step over every entry, then gradients are cleared.
template <typename T>
void adam_update(ParameterSet<T>& params, AdamConfig& cfg) {
  cfg.validate();
  if (params.empty()) fail(ErrorCode::state, "Adam step on an empty parameter set");
  ++cfg.step;
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.learning_rate), eps = static_cast<T>(cfg.epsilon);
  const T c1 = T{1} - static_cast<T>(std::pow(static_cast<double>(cfg.beta1), static_cast<double>(cfg.step)));
  const T c2 = T{1} - static_cast<T>(std::pow(static_cast<double>(cfg.beta2), static_cast<double>(cfg.step)));
  for (auto& [_, e] : params.entries()) {
    T* w = e.value.data();
    T* g = e.grad.data();
    T* m = e.adam_m.data();
    T* v = e.adam_v.data();
    for (std::size_t i = 0, n = e.value.size(); i < n; ++i) {
      m[i] = b1 * m[i] + (T{1} - b1) * g[i];
      v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
      const T mhat = m[i] / c1;
      const T vhat = v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      g[i] = T{0};
    }
  }
}

}  // namespace wmc::nn
