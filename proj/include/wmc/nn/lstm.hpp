#pragma once

#include <string>
#include <utility>
#include <vector>

#include "wmc/nn/ops.hpp"

namespace wmc::nn {

/// Gate order within the stacked 4u columns: input, forget, candidate, output.
struct LstmParams {
  Var input_weights;      // [in, 4u]
  Var recurrent_weights;  // [u, 4u]
  Var bias;               // [4u]
};

inline std::vector<ParamSpec> lstm_param_specs(const std::string& prefix, std::size_t in, std::size_t units) {
  return {{prefix + ".Wx", {in, 4 * units}, InitKind::glorot_uniform},
          {prefix + ".Wh", {units, 4 * units}, InitKind::glorot_uniform},
          {prefix + ".b", {4 * units}, InitKind::lstm_bias}};
}

/// One step: c' = f*c + i*g, h' = o*tanh(c'). Returns (h', c').
template <typename T>
std::pair<Var, Var> lstm_cell_step(Tape<T>& tape, Var x, Var h, Var c, const LstmParams& p) {
  const Tensor<T>& Wh = tape.value(p.recurrent_weights);
  const Tensor<T>& hv = tape.value(h);
  const Tensor<T>& cv = tape.value(c);
  require_rank(Wh, 2, "lstm recurrent weight");
  const std::size_t units = Wh.dim(0);
  if (Wh.dim(1) != 4 * units || tape.value(p.input_weights).dim(1) != 4 * units) {
    fail(ErrorCode::shape, "lstm: weight widths must equal 4 * units");
  }
  if (hv.rank() != 2 || hv.dim(1) != units || cv.shape() != hv.shape()) {
    fail(ErrorCode::shape, "lstm: state shape " + shape_string(hv.shape()) + " does not match " +
                               std::to_string(units) + " units");
  }
  Var z = ops::add(tape, ops::dense(tape, x, p.input_weights, p.bias), ops::dense(tape, h, p.recurrent_weights));
  Var i = ops::sigmoid(tape, ops::slice_cols(tape, z, 0, units));
  Var f = ops::sigmoid(tape, ops::slice_cols(tape, z, units, 2 * units));
  Var g = ops::tanh(tape, ops::slice_cols(tape, z, 2 * units, 3 * units));
  Var o = ops::sigmoid(tape, ops::slice_cols(tape, z, 3 * units, 4 * units));
  Var c_next = ops::add(tape, ops::mul(tape, f, c), ops::mul(tape, i, g));
  Var h_next = ops::mul(tape, o, ops::tanh(tape, c_next));
  return {h_next, c_next};
}

}  // namespace wmc::nn
