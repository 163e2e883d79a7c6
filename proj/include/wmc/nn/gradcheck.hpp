#pragma once

// Central-difference gradient checking in double precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>

#include "wmc/nn/params.hpp"
#include "wmc/nn/tape.hpp"
#include "wmc/random.hpp"

namespace wmc::nn {

using LossBuilder = std::function<Var(Tape<double>&, ParameterSet<double>&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Compares analytic gradients against (L(θ+ε) - L(θ-ε)) / 2ε for up to
/// `samples_per_param` coordinates of every parameter. The loss builder must
/// be deterministic (dropout off). Relative errors are taken against
/// max(|analytic|, |numeric|, scale_floor), so gradients far below the
/// difference quotient's roundoff do not dominate.
inline GradCheckResult grad_check(const LossBuilder& loss_fn, ParameterSet<double>& params, double epsilon = 1e-5,
                                  std::size_t samples_per_param = 16, std::uint64_t seed = 0,
                                  double scale_floor = 1e-8) {
  auto eval = [&]() {
    Tape<double> tape;
    const double v = tape.value(loss_fn(tape, params))[0];
    if (!std::isfinite(v)) fail(ErrorCode::numeric, "grad_check: non-finite loss");
    return v;
  };

  params.zero_grad();
  {
    Tape<double> tape;
    Var loss = loss_fn(tape, params);
    if (!std::isfinite(tape.value(loss)[0])) fail(ErrorCode::numeric, "grad_check: non-finite loss");
    tape.backward(loss);
  }

  GradCheckResult result;
  Rng rng(seed);
  for (auto& [name, entry] : params.entries()) {
    const std::size_t n = entry.value.size();
    std::vector<std::size_t> picks(n);
    for (std::size_t i = 0; i < n; ++i) picks[i] = i;
    if (n > samples_per_param) {
      shuffle(picks.begin(), picks.end(), rng);
      picks.resize(samples_per_param);
    }
    for (std::size_t idx : picks) {
      const double original = entry.value[idx];
      entry.value[idx] = original + epsilon;
      const double up = eval();
      entry.value[idx] = original - epsilon;
      const double down = eval();
      entry.value[idx] = original;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double analytic = entry.grad[idx];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), scale_floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++result.checked;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_parameter = name;
        result.worst_index = idx;
      }
    }
  }
  return result;
}

}  // namespace wmc::nn
