// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode differentiation over rank-3 tensors.
//
// A Tape records every operation of one forward pass as a node holding the
// op, its input node ids and its output value. backward() walks the nodes in
// reverse and accumulates vector-Jacobian products. replay() re-runs every op
// forward from the recorded leaves. A tape is single use: one forward, at most
// one backward.
#pragma once

#include "simeq/tensor.hpp"

#include <deque>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace simeq::ad {

/// A named trainable tensor. Modules own their parameters by value.
struct Parameter {
  std::string name;
  Tensor value;
};

class Op {
 public:
  virtual ~Op() = default;
  virtual const char* name() const = 0;
  virtual Tensor forward(std::span<const Tensor* const> inputs) = 0;
  /// Accumulates (+=) into grad_inputs[k]; entries are nullptr for inputs
  /// that need no gradient.
  virtual void backward(std::span<const Tensor* const> inputs, const Tensor& output,
                        const Tensor& grad_output, std::span<Tensor* const> grad_inputs) const = 0;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
};

class Tape {
 public:
  explicit Tape(bool track_gradients = true) : track_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool tracking() const { return track_; }

  Var constant(Tensor value);
  /// Leaf that receives a gradient (when tracking).
  Var input(Tensor value);
  /// Binds a parameter once per tape; later calls return the same node.
  Var parameter(const Parameter& p);
  Var record(std::unique_ptr<Op> op, std::vector<Var> inputs);

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }
  /// Gradient of the last backward() root with respect to v; zeros if none reached v.
  Tensor grad(Var v) const;
  /// Zeros if the parameter was never bound or never reached.
  Tensor parameter_grad(const Parameter& p) const;

  /// Root must hold exactly one element. Throws std::logic_error otherwise.
  void backward(Var root);
  /// Recomputes every non-leaf node from its inputs.
  void replay();

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::unique_ptr<Op> op;
    std::vector<int> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
  };

  std::size_t check(Var v) const;
  Var push(Node node);

  bool track_;
  std::deque<Node> nodes_;  // stable references across push_back
  std::unordered_map<const Parameter*, int> bound_;
};

// Elementwise, numpy-style broadcasting over the three axes (each axis equal or 1).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var add_constant(Var a, double c);
Var sqrt(Var a);
/// max(a, lo); zero gradient where clamped.
Var clamp_min(Var a, double lo);
Var leaky_relu(Var a, double negative_slope);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }

/// Reduction keeping the axis with extent 1.
Var sum(Var a, std::size_t axis);
Var mean(Var a, std::size_t axis);
Var sum_all(Var a);
Var mean_all(Var a);
/// Euclidean norm over axis 2; gradient at a zero vector is zero.
Var norm3(Var a);

/// w {Dout, Din, 1}, x {M, Din, C} -> {M, Dout, C}: out[m] = w * x[m].
Var channel_mix(Var w, Var x);
/// Adds (1 - row_sum) / Din to every entry so each row sums to one.
Var affine_rows(Var w);

/// out[r] = x[index[r]] (whole tokens).
Var gather_tokens(Var x, std::vector<std::size_t> index);
/// index has out_tokens * D entries; out[m, d, :] = x[index[m * D + d], d, :].
Var gather_channels(Var x, std::vector<std::size_t> index, std::size_t out_tokens);
/// Concatenation along axis 0 or 1.
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var reshape(Var x, Shape shape);
Var slice(Var x, std::size_t axis, std::size_t start, std::size_t count);

/// q {Mq, D, C}, k {Mk, D, C} -> {Mq, Mk, 1} Frobenius inner products.
Var frob_gram(Var q, Var k);
/// Softmax over axis 1 of {A, B, 1}, with per-row max subtraction.
Var softmax_rows(Var logits);
/// a {Mq, Mk, 1}, v {Mk, D, C} -> {Mq, D, C}: out[i] = sum_j a[i, j] v[j].
Var mix_tokens(Var a, Var v);
/// Per (channel, component) max over tokens: {M, D, C} -> {1, D, C}; ties to lowest index.
Var max_over_tokens(Var x);

}  // namespace simeq::ad
