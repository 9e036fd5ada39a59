// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode autodiff over row-major matrices. A Tape records the
// nodes of one forward pass in creation order; backward() replays them in
// reverse. Parameters live outside the tape and receive accumulated gradients.
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mixt/mixt_operator.hpp"
#include "mixt/tensor.hpp"

namespace mixt::ad {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value once touched by backward()

  void zero_grad() { grad = Tensor(value.shape()); }
};

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  // With record = false no backward closures are kept and parameters are
  // treated as constants.
  explicit Tape(bool record = true) : record_(record) {}

  Var constant(Tensor value);
  Var param(Parameter& p);

  const Tensor& value(Var v) const;
  // Gradient buffer of a node, allocated on first use.
  Tensor& grad(Var v);
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  bool recording() const noexcept { return record_; }

  // Seeds d(loss)/d(loss) = 1 for a single-element loss and propagates.
  void backward(Var loss);

  // Used by op implementations.
  Var push(Tensor value, std::vector<Var> inputs, std::function<void(Tape&, Var)> backward_fn);

 private:
  struct Node {
    Tensor value;
    const Tensor* ref = nullptr;
    Tensor grad;
    Parameter* param = nullptr;
    bool needs_grad = false;
    std::function<void(Tape&, Var)> backward_fn;
  };

  std::vector<Node> nodes_;
  bool record_;
};

// Rows of `table` selected by ids: [ids.size(), table.cols].
Var embedding(Tape& t, Var table, std::span<const int> ids);
Var add(Tape& t, Var a, Var b);
// x [rows, in] times w^T where w is [out, in].
Var linear(Tape& t, Var x, Var w);
// Tensor-mixture map with branch parameters taken from the tape.
Var mixt_linear(Tape& t, Var x, std::span<const Var> branches, const MixtSpec& spec);
// Per-row RMS normalization with elementwise gain.
Var rms_norm(Tape& t, Var x, Var gain, double eps = 1e-6);
// silu(gate) * up, elementwise.
Var swiglu(Tape& t, Var gate, Var up);
// Causal multi-head attention over `batch` sequences of length `seq`.
// q, k, v: [batch*seq, hidden] with heads laid out contiguously.
Var causal_attention(Tape& t, Var q, Var k, Var v, std::size_t batch, std::size_t seq, std::size_t heads);
Var take_rows(Tape& t, Var x, std::span<const std::size_t> rows);
// Mean over rows of -log softmax(logits)[target]; returns a [1] tensor.
Var cross_entropy(Tape& t, Var logits, std::span<const int> targets);
// Sum of squared differences to a fixed target; returns a [1] tensor.
Var squared_error(Tape& t, Var pred, const Tensor& target);

}  // namespace mixt::ad
