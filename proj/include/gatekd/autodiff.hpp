// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Parameters enter as
// leaves that alias their storage; their gradients accumulate straight into
// Param::grad when backward() runs. Nodes whose inputs carry no gradient are
// recorded as plain values, so a frozen model costs nothing on the reverse
// sweep.

#include "gatekd/common.hpp"

#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

namespace gatekd {

template <typename T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct Var {
  int id = -1;
  [[nodiscard]] bool valid() const { return id >= 0; }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat<T>& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {
    nodes_.reserve(512);
  }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  [[nodiscard]] bool grad_enabled() const { return grad_enabled_; }

  Var constant(Mat<T> value);
  /// Trainable leaf; gradient flows into p.grad (which must be sized).
  Var leaf(Param<T>& p);
  /// Read-only leaf; never receives gradient.
  Var frozen(const Param<T>& p);

  /// Records an op result. `fn` runs during backward only when at least one
  /// input requires gradient.
  Var record(Mat<T> value, std::initializer_list<Var> inputs, Backward fn);
  Var record(Mat<T> value, const std::vector<Var>& inputs, Backward fn);

  [[nodiscard]] const Mat<T>& value(Var v) const;
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  /// Gradient accumulator for v, zero-initialized on first access.
  Mat<T>& grad(Var v);

  /// Runs the reverse sweep from a 1x1 node.
  void backward(Var loss, T seed = T(1));

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<T> value;
    const Mat<T>* alias = nullptr;
    Param<T>* param = nullptr;
    Mat<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

namespace ad {

template <typename T> Var matmul(Tape<T>& t, Var a, Var b);
/// a * b^T
template <typename T> Var matmul_nt(Tape<T>& t, Var a, Var b);
template <typename T> Var add(Tape<T>& t, Var a, Var b);
/// Adds a 1 x m row to every row of a.
template <typename T> Var add_row(Tape<T>& t, Var a, Var row);
template <typename T> Var add_const(Tape<T>& t, Var a, const Mat<T>& c);
template <typename T> Var scale(Tape<T>& t, Var a, T s);
template <typename T> Var gelu(Tape<T>& t, Var a);
template <typename T> Var layer_norm(Tape<T>& t, Var x, Var gain, Var bias);
template <typename T> Var slice_cols(Tape<T>& t, Var a, int start, int count);
template <typename T> Var concat_cols(Tape<T>& t, const std::vector<Var>& parts);
/// Row softmax; with `causal`, entry (i, j) for j > i is exactly zero.
template <typename T> Var softmax_rows(Tape<T>& t, Var a, bool causal);
template <typename T> Var embed(Tape<T>& t, Var table, std::span<const Token> ids);
/// Mean token cross-entropy of row logits against integer targets. 1x1.
template <typename T> Var cross_entropy(Tape<T>& t, Var logits, std::span<const Token> targets);
/// sum_i w_i * x_i over 1x1 nodes.
template <typename T> Var weighted_sum(Tape<T>& t, const std::vector<Var>& xs, const std::vector<T>& ws);

}  // namespace ad

/// Numerically stable row-wise softmax on plain matrices.
template <typename T>
Mat<T> softmax_rows(const Mat<T>& logits);

}  // namespace gatekd
