// SPDX-License-Identifier: Apache-2.0
#include "simeq/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace simeq::ad {

const Tensor& Var::value() const {
  if (tape == nullptr) throw std::logic_error("Var is not attached to a tape");
  return tape->value(*this);
}

std::size_t Tape::check(Var v) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::logic_error("Var does not belong to this tape");
  }
  return static_cast<std::size_t>(v.id);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::input(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = track_;
  return push(std::move(n));
}

Var Tape::parameter(const Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var{this, it->second};
  Var v = input(p.value);
  bound_.emplace(&p, v.id);
  return v;
}

Var Tape::record(std::unique_ptr<Op> op, std::vector<Var> inputs) {
  Node n;
  std::vector<const Tensor*> in;
  in.reserve(inputs.size());
  for (Var v : inputs) {
    const std::size_t id = check(v);
    n.inputs.push_back(static_cast<int>(id));
    in.push_back(&nodes_[id].value);
    n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
  }
  n.value = op->forward(in);
  n.op = std::move(op);
  return push(std::move(n));
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[check(v)];
  return n.has_grad ? n.grad : Tensor(n.value.shape());
}

Tensor Tape::parameter_grad(const Parameter& p) const {
  auto it = bound_.find(&p);
  if (it == bound_.end()) return Tensor(p.value.shape());
  return grad(Var{const_cast<Tape*>(this), it->second});
}

void Tape::backward(Var root) {
  if (!track_) throw std::logic_error("backward on a tape that does not track gradients");
  const std::size_t r = check(root);
  if (nodes_[r].value.size() != 1) {
    throw std::logic_error("backward: root must be a scalar, got shape " +
                           to_string(nodes_[r].value.shape()));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  nodes_[r].grad = Tensor(nodes_[r].value.shape(), 1.0);
  nodes_[r].has_grad = true;

  std::vector<const Tensor*> in;
  std::vector<Tensor*> gin;
  for (std::size_t idx = r + 1; idx-- > 0;) {
    Node& n = nodes_[idx];
    if (!n.op || !n.has_grad || !n.requires_grad) continue;
    in.clear();
    gin.clear();
    for (int k : n.inputs) {
      Node& src = nodes_[static_cast<std::size_t>(k)];
      in.push_back(&src.value);
      if (src.requires_grad) {
        if (!src.has_grad) {
          src.grad = Tensor(src.value.shape());
          src.has_grad = true;
        }
        gin.push_back(&src.grad);
      } else {
        gin.push_back(nullptr);
      }
    }
    n.op->backward(in, n.value, n.grad, gin);
  }
}

void Tape::replay() {
  std::vector<const Tensor*> in;
  for (Node& n : nodes_) {
    if (!n.op) continue;
    in.clear();
    for (int k : n.inputs) in.push_back(&nodes_[static_cast<std::size_t>(k)].value);
    n.value = n.op->forward(in);
  }
}

namespace {

Tape* same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw std::logic_error("operands live on different tapes");
  return a.tape;
}

std::array<std::size_t, 3> strides_for(const Shape& s, const Shape& out) {
  std::array<std::size_t, 3> st{s[1] * s[2], s[2], 1};
  for (int k = 0; k < 3; ++k)
    if (s[k] == 1 && out[k] != 1) st[k] = 0;
  return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* what) {
  Shape out{};
  for (int k = 0; k < 3; ++k) {
    if (a[k] == b[k] || b[k] == 1) {
      out[k] = a[k];
    } else if (a[k] == 1) {
      out[k] = b[k];
    } else {
      throw std::invalid_argument(std::string(what) + ": cannot broadcast " + to_string(a) +
                                  " with " + to_string(b));
    }
  }
  return out;
}

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

class BinaryOp final : public Op {
 public:
  explicit BinaryOp(BinaryKind kind) : kind_(kind) {}
  const char* name() const override {
    switch (kind_) {
      case BinaryKind::kAdd: return "add";
      case BinaryKind::kSub: return "sub";
      case BinaryKind::kMul: return "mul";
      case BinaryKind::kDiv: return "div";
    }
    return "binary";
  }

  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& a = *in[0];
    const Tensor& b = *in[1];
    const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name());
    Tensor out(out_shape);
    if (a.shape() == b.shape()) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(a[i], b[i]);
      return out;
    }
    const auto sa = strides_for(a.shape(), out_shape);
    const auto sb = strides_for(b.shape(), out_shape);
    std::size_t o = 0;
    for (std::size_t i = 0; i < out_shape[0]; ++i)
      for (std::size_t j = 0; j < out_shape[1]; ++j)
        for (std::size_t k = 0; k < out_shape[2]; ++k, ++o)
          out[o] = apply(a[i * sa[0] + j * sa[1] + k * sa[2]], b[i * sb[0] + j * sb[1] + k * sb[2]]);
    return out;
  }

  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& g,
                std::span<Tensor* const> gin) const override {
    const Tensor& a = *in[0];
    const Tensor& b = *in[1];
    const Shape& os = out.shape();
    const auto sa = strides_for(a.shape(), os);
    const auto sb = strides_for(b.shape(), os);
    Tensor* ga = gin[0];
    Tensor* gb = gin[1];
    if (a.shape() == b.shape()) {
      backward_same_shape(a, b, g, ga, gb);
      return;
    }
    std::size_t o = 0;
    for (std::size_t i = 0; i < os[0]; ++i)
      for (std::size_t j = 0; j < os[1]; ++j)
        for (std::size_t k = 0; k < os[2]; ++k, ++o) {
          const std::size_t ia = i * sa[0] + j * sa[1] + k * sa[2];
          const std::size_t ib = i * sb[0] + j * sb[1] + k * sb[2];
          const double go = g[o];
          switch (kind_) {
            case BinaryKind::kAdd:
              if (ga) (*ga)[ia] += go;
              if (gb) (*gb)[ib] += go;
              break;
            case BinaryKind::kSub:
              if (ga) (*ga)[ia] += go;
              if (gb) (*gb)[ib] -= go;
              break;
            case BinaryKind::kMul:
              if (ga) (*ga)[ia] += go * b[ib];
              if (gb) (*gb)[ib] += go * a[ia];
              break;
            case BinaryKind::kDiv:
              if (ga) (*ga)[ia] += go / b[ib];
              if (gb) (*gb)[ib] -= go * a[ia] / (b[ib] * b[ib]);
              break;
          }
        }
  }

 private:
  void backward_same_shape(const Tensor& a, const Tensor& b, const Tensor& g, Tensor* ga, Tensor* gb) const {
    const std::size_t n = g.size();
    switch (kind_) {
      case BinaryKind::kAdd:
        if (ga) for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i];
        if (gb) for (std::size_t i = 0; i < n; ++i) (*gb)[i] += g[i];
        break;
      case BinaryKind::kSub:
        if (ga) for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i];
        if (gb) for (std::size_t i = 0; i < n; ++i) (*gb)[i] -= g[i];
        break;
      case BinaryKind::kMul:
        if (ga) for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] * b[i];
        if (gb) for (std::size_t i = 0; i < n; ++i) (*gb)[i] += g[i] * a[i];
        break;
      case BinaryKind::kDiv:
        if (ga) for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] / b[i];
        if (gb) for (std::size_t i = 0; i < n; ++i) (*gb)[i] -= g[i] * a[i] / (b[i] * b[i]);
        break;
    }
  }

  double apply(double x, double y) const {
    switch (kind_) {
      case BinaryKind::kAdd: return x + y;
      case BinaryKind::kSub: return x - y;
      case BinaryKind::kMul: return x * y;
      case BinaryKind::kDiv: return x / y;
    }
    return 0.0;
  }
  BinaryKind kind_;
};

Var binary(BinaryKind kind, Var a, Var b) {
  return same_tape(a, b)->record(std::make_unique<BinaryOp>(kind), {a, b});
}

enum class UnaryKind { kScale, kAddConstant, kSqrt, kClampMin, kLeakyRelu };

class UnaryOp final : public Op {
 public:
  UnaryOp(UnaryKind kind, double c) : kind_(kind), c_(c) {}
  const char* name() const override { return "unary"; }

  Tensor forward(std::span<const Tensor* const> in) override {
    Tensor out(in[0]->shape());
    const Tensor& a = *in[0];
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double x = a[i];
      switch (kind_) {
        case UnaryKind::kScale: out[i] = c_ * x; break;
        case UnaryKind::kAddConstant: out[i] = x + c_; break;
        case UnaryKind::kSqrt: out[i] = std::sqrt(x); break;
        case UnaryKind::kClampMin: out[i] = x > c_ ? x : c_; break;
        case UnaryKind::kLeakyRelu: out[i] = x > 0.0 ? x : c_ * x; break;
      }
    }
    return out;
  }

  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& g,
                std::span<Tensor* const> gin) const override {
    Tensor* ga = gin[0];
    if (!ga) return;
    const Tensor& a = *in[0];
    for (std::size_t i = 0; i < a.size(); ++i) {
      switch (kind_) {
        case UnaryKind::kScale: (*ga)[i] += c_ * g[i]; break;
        case UnaryKind::kAddConstant: (*ga)[i] += g[i]; break;
        case UnaryKind::kSqrt:
          if (out[i] > 0.0) (*ga)[i] += g[i] / (2.0 * out[i]);
          break;
        case UnaryKind::kClampMin:
          if (a[i] > c_) (*ga)[i] += g[i];
          break;
        case UnaryKind::kLeakyRelu: (*ga)[i] += a[i] > 0.0 ? g[i] : c_ * g[i]; break;
      }
    }
  }

 private:
  UnaryKind kind_;
  double c_;
};

Var unary(UnaryKind kind, Var a, double c) {
  return a.tape->record(std::make_unique<UnaryOp>(kind, c), {a});
}

class SumOp final : public Op {
 public:
  explicit SumOp(std::size_t axis) : axis_(axis) {}
  const char* name() const override { return "sum"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& a = *in[0];
    Shape s = a.shape();
    s[axis_] = 1;
    Tensor out(s);
    for (std::size_t i = 0; i < a.dim(0); ++i)
      for (std::size_t j = 0; j < a.dim(1); ++j)
        for (std::size_t k = 0; k < a.dim(2); ++k)
          out(axis_ == 0 ? 0 : i, axis_ == 1 ? 0 : j, axis_ == 2 ? 0 : k) += a(i, j, k);
    return out;
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                std::span<Tensor* const> gin) const override {
    Tensor* ga = gin[0];
    if (!ga) return;
    const Tensor& a = *in[0];
    for (std::size_t i = 0; i < a.dim(0); ++i)
      for (std::size_t j = 0; j < a.dim(1); ++j)
        for (std::size_t k = 0; k < a.dim(2); ++k)
          (*ga)(i, j, k) += g(axis_ == 0 ? 0 : i, axis_ == 1 ? 0 : j, axis_ == 2 ? 0 : k);
  }

 private:
  std::size_t axis_;
};

class Norm3Op final : public Op {
 public:
  const char* name() const override { return "norm3"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& a = *in[0];
    Tensor out({a.dim(0), a.dim(1), 1});
    const std::size_t c = a.dim(2);
    for (std::size_t r = 0; r < out.size(); ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) s += a[r * c + k] * a[r * c + k];
      out[r] = std::sqrt(s);
    }
    return out;
  }
  void backward(std::span<const Tensor* const> in, const Tensor& out, const Tensor& g,
                std::span<Tensor* const> gin) const override {
    Tensor* ga = gin[0];
    if (!ga) return;
    const Tensor& a = *in[0];
    const std::size_t c = a.dim(2);
    for (std::size_t r = 0; r < out.size(); ++r) {
      if (out[r] == 0.0) continue;
      const double f = g[r] / out[r];
      for (std::size_t k = 0; k < c; ++k) (*ga)[r * c + k] += f * a[r * c + k];
    }
  }
};

// {m, d, c} row-major <-> d x (m * c) column-major, so one GEMM covers all tokens.
Eigen::MatrixXd channel_major(const Tensor& x) {
  const std::size_t m = x.dim(0), d = x.dim(1), c = x.dim(2);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(m * c));
  const double* xp = x.data();
  for (std::size_t t = 0; t < m; ++t)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t k = 0; k < c; ++k)
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t * c + k)) = xp[(t * d + i) * c + k];
  return out;
}

void add_token_major(const Eigen::MatrixXd& a, std::size_t m, std::size_t c, Tensor& out) {
  const std::size_t d = static_cast<std::size_t>(a.rows());
  double* op = out.data();
  for (std::size_t t = 0; t < m; ++t)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t k = 0; k < c; ++k)
        op[(t * d + i) * c + k] += a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t * c + k));
}

using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

class ChannelMixOp final : public Op {
 public:
  const char* name() const override { return "channel_mix"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& w = *in[0];
    const Tensor& x = *in[1];
    const std::size_t dout = w.dim(0), din = w.dim(1), m = x.dim(0), c = x.dim(2);
    if (w.dim(2) != 1 || x.dim(1) != din) {
      throw std::invalid_argument("channel_mix: weight " + to_string(w.shape()) +
                                  " does not match input " + to_string(x.shape()));
    }
    const RowMajorMap wm(w.data(), static_cast<Eigen::Index>(dout), static_cast<Eigen::Index>(din));
    const Eigen::MatrixXd y = wm * channel_major(x);
    Tensor out({m, dout, c});
    add_token_major(y, m, c, out);
    return out;
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                std::span<Tensor* const> gin) const override {
    const Tensor& w = *in[0];
    const Tensor& x = *in[1];
    const std::size_t dout = w.dim(0), din = w.dim(1), m = x.dim(0), c = x.dim(2);
    const Eigen::MatrixXd gm = channel_major(g);
    if (Tensor* gw = gin[0]) {
      const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dw = gm * channel_major(x).transpose();
      for (std::size_t e = 0; e < dout * din; ++e) (*gw)[e] += dw.data()[e];
    }
    if (Tensor* gx = gin[1]) {
      const RowMajorMap wm(w.data(), static_cast<Eigen::Index>(dout), static_cast<Eigen::Index>(din));
      add_token_major(wm.transpose() * gm, m, c, *gx);
    }
  }
};

class AffineRowsOp final : public Op {
 public:
  const char* name() const override { return "affine_rows"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& w = *in[0];
    const std::size_t rows = w.dim(0), cols = w.dim(1);
    if (cols == 0 || w.dim(2) != 1) throw std::invalid_argument("affine_rows: need {rows, cols>=1, 1}");
    Tensor out = w;
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) s += w[r * cols + c];
      const double shift = (1.0 - s) / static_cast<double>(cols);
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += shift;
    }
    return out;
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                std::span<Tensor* const> gin) const override {
    Tensor* gw = gin[0];
    if (!gw) return;
    const std::size_t rows = in[0]->dim(0), cols = in[0]->dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) s += g[r * cols + c];
      const double shift = s / static_cast<double>(cols);
      for (std::size_t c = 0; c < cols; ++c) (*gw)[r * cols + c] += g[r * cols + c] - shift;
    }
  }
};

class GatherTokensOp final : public Op {
 public:
  explicit GatherTokensOp(std::vector<std::size_t> index) : index_(std::move(index)) {}
  const char* name() const override { return "gather_tokens"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& x = *in[0];
    const std::size_t row = x.dim(1) * x.dim(2);
    Tensor out({index_.size(), x.dim(1), x.dim(2)});
    for (std::size_t r = 0; r < index_.size(); ++r) {
      if (index_[r] >= x.dim(0)) throw std::out_of_range("gather_tokens: index out of range");
      std::copy_n(x.data() + index_[r] * row, row, out.data() + r * row);
    }
    return out;
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                std::span<Tensor* const> gin) const override {
    Tensor* gx = gin[0];
    if (!gx) return;
    const std::size_t row = in[0]->dim(1) * in[0]->dim(2);
    for (std::size_t r = 0; r < index_.size(); ++r) {
      double* dst = gx->data() + index_[r] * row;
      const double* src = g.data() + r * row;
      for (std::size_t k = 0; k < row; ++k) dst[k] += src[k];
    }
  }

 private:
  std::vector<std::size_t> index_;
};

class GatherChannelsOp final : public Op {
 public:
  GatherChannelsOp(std::vector<std::size_t> index, std::size_t out_tokens)
      : index_(std::move(index)), out_tokens_(out_tokens) {}
  const char* name() const override { return "gather_channels"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& x = *in[0];
    const std::size_t d = x.dim(1), c = x.dim(2);
    if (index_.size() != out_tokens_ * d) throw std::invalid_argument("gather_channels: index size");
    Tensor out({out_tokens_, d, c});
    for (std::size_t m = 0; m < out_tokens_; ++m)
      for (std::size_t ch = 0; ch < d; ++ch) {
        const std::size_t src = index_[m * d + ch];
        if (src >= x.dim(0)) throw std::out_of_range("gather_channels: index out of range");
        for (std::size_t k = 0; k < c; ++k) out(m, ch, k) = x(src, ch, k);
      }
    return out;
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                std::span<Tensor* const> gin) const override {
    Tensor* gx = gin[0];
    if (!gx) return;
    const std::size_t d = in[0]->dim(1), c = in[0]->dim(2);
    for (std::size_t m = 0; m < out_tokens_; ++m)
      for (std::size_t ch = 0; ch < d; ++ch) {
        const std::size_t src = index_[m * d + ch];
        for (std::size_t k = 0; k < c; ++k) (*gx)(src, ch, k) += g(m, ch, k);
      }
  }

 private:
  std::vector<std::size_t> index_;
  std::size_t out_tokens_;
};

class ConcatOp final : public Op {
 public:
  explicit ConcatOp(std::size_t axis) : axis_(axis) {}
  const char* name() const override { return "concat"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    Shape s = in[0]->shape();
    s[axis_] = 0;
    for (const Tensor* t : in) {
      for (std::size_t k = 0; k < 3; ++k)
        if (k != axis_ && t->dim(k) != in[0]->dim(k))
          throw std::invalid_argument("concat: shape mismatch " + to_string(t->shape()) + " vs " +
                                      to_string(in[0]->shape()));
      s[axis_] += t->dim(axis_);
    }
    Tensor out(s);
    std::size_t offset = 0;
    for (const Tensor* t : in) {
      for (std::size_t i = 0; i < t->dim(0); ++i)
        for (std::size_t j = 0; j < t->dim(1); ++j)
          for (std::size_t k = 0; k < t->dim(2); ++k)
            out(axis_ == 0 ? i + offset : i, axis_ == 1 ? j + offset : j, axis_ == 2 ? k + offset : k) =
                (*t)(i, j, k);
      offset += t->dim(axis_);
    }
    return out;
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                std::span<Tensor* const> gin) const override {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < in.size(); ++p) {
      const Tensor& t = *in[p];
      if (Tensor* gt = gin[p]) {
        for (std::size_t i = 0; i < t.dim(0); ++i)
          for (std::size_t j = 0; j < t.dim(1); ++j)
            for (std::size_t k = 0; k < t.dim(2); ++k)
              (*gt)(i, j, k) +=
                  g(axis_ == 0 ? i + offset : i, axis_ == 1 ? j + offset : j, axis_ == 2 ? k + offset : k);
      }
      offset += t.dim(axis_);
    }
  }

 private:
  std::size_t axis_;
};

class ReshapeOp final : public Op {
 public:
  explicit ReshapeOp(Shape shape) : shape_(shape) {}
  const char* name() const override { return "reshape"; }
  Tensor forward(std::span<const Tensor* const> in) override { return in[0]->reshaped(shape_); }
  void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& g,
                std::span<Tensor* const> gin) const override {
    if (Tensor* gx = gin[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  }

 private:
  Shape shape_;
};

class SliceOp final : public Op {
 public:
  SliceOp(std::size_t axis, std::size_t start, std::size_t count) : axis_(axis), start_(start), count_(count) {}
  const char* name() const override { return "slice"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& x = *in[0];
    if (start_ + count_ > x.dim(axis_)) throw std::out_of_range("slice: range exceeds extent");
    Shape s = x.shape();
    s[axis_] = count_;
    Tensor out(s);
    for (std::size_t i = 0; i < s[0]; ++i)
      for (std::size_t j = 0; j < s[1]; ++j)
        for (std::size_t k = 0; k < s[2]; ++k)
          out(i, j, k) = x(axis_ == 0 ? i + start_ : i, axis_ == 1 ? j + start_ : j, axis_ == 2 ? k + start_ : k);
    return out;
  }
  void backward(std::span<const Tensor* const>, const Tensor& out, const Tensor& g,
                std::span<Tensor* const> gin) const override {
    Tensor* gx = gin[0];
    if (!gx) return;
    const Shape& s = out.shape();
    for (std::size_t i = 0; i < s[0]; ++i)
      for (std::size_t j = 0; j < s[1]; ++j)
        for (std::size_t k = 0; k < s[2]; ++k)
          (*gx)(axis_ == 0 ? i + start_ : i, axis_ == 1 ? j + start_ : j, axis_ == 2 ? k + start_ : k) += g(i, j, k);
  }

 private:
  std::size_t axis_, start_, count_;
};

class FrobGramOp final : public Op {
 public:
  const char* name() const override { return "frob_gram"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& q = *in[0];
    const Tensor& k = *in[1];
    if (q.dim(1) != k.dim(1) || q.dim(2) != k.dim(2)) throw std::invalid_argument("frob_gram: width mismatch");
    const std::size_t row = q.dim(1) * q.dim(2);
    Tensor out({q.dim(0), k.dim(0), 1});
    for (std::size_t i = 0; i < q.dim(0); ++i)
      for (std::size_t j = 0; j < k.dim(0); ++j) {
        double s = 0.0;
        const double* a = q.data() + i * row;
        const double* b = k.data() + j * row;
        for (std::size_t r = 0; r < row; ++r) s += a[r] * b[r];
        out(i, j, 0) = s;
      }
    return out;
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                std::span<Tensor* const> gin) const override {
    const Tensor& q = *in[0];
    const Tensor& k = *in[1];
    const std::size_t row = q.dim(1) * q.dim(2);
    for (std::size_t i = 0; i < q.dim(0); ++i)
      for (std::size_t j = 0; j < k.dim(0); ++j) {
        const double go = g(i, j, 0);
        if (go == 0.0) continue;
        if (gin[0]) {
          double* dst = gin[0]->data() + i * row;
          const double* src = k.data() + j * row;
          for (std::size_t r = 0; r < row; ++r) dst[r] += go * src[r];
        }
        if (gin[1]) {
          double* dst = gin[1]->data() + j * row;
          const double* src = q.data() + i * row;
          for (std::size_t r = 0; r < row; ++r) dst[r] += go * src[r];
        }
      }
  }
};

class SoftmaxRowsOp final : public Op {
 public:
  const char* name() const override { return "softmax_rows"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& x = *in[0];
    if (x.dim(2) != 1) throw std::invalid_argument("softmax_rows: expected {A, B, 1}");
    Tensor out(x.shape());
    const std::size_t cols = x.dim(1);
    for (std::size_t i = 0; i < x.dim(0); ++i) {
      const double* xr = x.data() + i * cols;
      double* orow = out.data() + i * cols;
      const double mx = *std::max_element(xr, xr + cols);
      double z = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        orow[j] = std::exp(xr[j] - mx);
        z += orow[j];
      }
      for (std::size_t j = 0; j < cols; ++j) orow[j] /= z;
    }
    return out;
  }
  void backward(std::span<const Tensor* const>, const Tensor& out, const Tensor& g,
                std::span<Tensor* const> gin) const override {
    Tensor* gx = gin[0];
    if (!gx) return;
    const std::size_t cols = out.dim(1);
    for (std::size_t i = 0; i < out.dim(0); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[i * cols + j] * out[i * cols + j];
      for (std::size_t j = 0; j < cols; ++j) (*gx)[i * cols + j] += out[i * cols + j] * (g[i * cols + j] - dot);
    }
  }
};

class MixTokensOp final : public Op {
 public:
  const char* name() const override { return "mix_tokens"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& a = *in[0];
    const Tensor& v = *in[1];
    if (a.dim(1) != v.dim(0) || a.dim(2) != 1) throw std::invalid_argument("mix_tokens: shape mismatch");
    const std::size_t row = v.dim(1) * v.dim(2);
    Tensor out({a.dim(0), v.dim(1), v.dim(2)});
    for (std::size_t i = 0; i < a.dim(0); ++i) {
      double* dst = out.data() + i * row;
      for (std::size_t j = 0; j < a.dim(1); ++j) {
        const double w = a(i, j, 0);
        const double* src = v.data() + j * row;
        for (std::size_t r = 0; r < row; ++r) dst[r] += w * src[r];
      }
    }
    return out;
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                std::span<Tensor* const> gin) const override {
    const Tensor& a = *in[0];
    const Tensor& v = *in[1];
    const std::size_t row = v.dim(1) * v.dim(2);
    for (std::size_t i = 0; i < a.dim(0); ++i) {
      const double* gi = g.data() + i * row;
      for (std::size_t j = 0; j < a.dim(1); ++j) {
        const double* vj = v.data() + j * row;
        if (gin[0]) {
          double s = 0.0;
          for (std::size_t r = 0; r < row; ++r) s += gi[r] * vj[r];
          (*gin[0])(i, j, 0) += s;
        }
        if (gin[1]) {
          const double w = a(i, j, 0);
          double* dst = gin[1]->data() + j * row;
          for (std::size_t r = 0; r < row; ++r) dst[r] += w * gi[r];
        }
      }
    }
  }
};

class MaxOverTokensOp final : public Op {
 public:
  const char* name() const override { return "max_over_tokens"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& x = *in[0];
    const std::size_t row = x.dim(1) * x.dim(2);
    if (x.dim(0) == 0) throw std::invalid_argument("max_over_tokens: no tokens");
    Tensor out({1, x.dim(1), x.dim(2)});
    argmax_.assign(row, 0);
    for (std::size_t r = 0; r < row; ++r) out[r] = x[r];
    for (std::size_t m = 1; m < x.dim(0); ++m)
      for (std::size_t r = 0; r < row; ++r)
        if (x[m * row + r] > out[r]) {
          out[r] = x[m * row + r];
          argmax_[r] = m;
        }
    return out;
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& g,
                std::span<Tensor* const> gin) const override {
    Tensor* gx = gin[0];
    if (!gx) return;
    const std::size_t row = in[0]->dim(1) * in[0]->dim(2);
    for (std::size_t r = 0; r < row; ++r) (*gx)[argmax_[r] * row + r] += g[r];
  }

 private:
  std::vector<std::size_t> argmax_;
};

}  // namespace

Var add(Var a, Var b) { return binary(BinaryKind::kAdd, a, b); }
Var sub(Var a, Var b) { return binary(BinaryKind::kSub, a, b); }
Var mul(Var a, Var b) { return binary(BinaryKind::kMul, a, b); }
Var div(Var a, Var b) { return binary(BinaryKind::kDiv, a, b); }
Var scale(Var a, double c) { return unary(UnaryKind::kScale, a, c); }
Var add_constant(Var a, double c) { return unary(UnaryKind::kAddConstant, a, c); }
Var sqrt(Var a) { return unary(UnaryKind::kSqrt, a, 0.0); }
Var clamp_min(Var a, double lo) { return unary(UnaryKind::kClampMin, a, lo); }
Var leaky_relu(Var a, double negative_slope) { return unary(UnaryKind::kLeakyRelu, a, negative_slope); }

Var sum(Var a, std::size_t axis) {
  if (axis > 2) throw std::invalid_argument("sum: axis must be 0, 1 or 2");
  return a.tape->record(std::make_unique<SumOp>(axis), {a});
}
Var mean(Var a, std::size_t axis) {
  const std::size_t n = a.dim(axis);
  return scale(sum(a, axis), 1.0 / static_cast<double>(n));
}
Var sum_all(Var a) { return sum(sum(sum(a, 0), 1), 2); }
Var mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size())); }
Var norm3(Var a) { return a.tape->record(std::make_unique<Norm3Op>(), {a}); }

Var channel_mix(Var w, Var x) { return same_tape(w, x)->record(std::make_unique<ChannelMixOp>(), {w, x}); }
Var affine_rows(Var w) { return w.tape->record(std::make_unique<AffineRowsOp>(), {w}); }

Var gather_tokens(Var x, std::vector<std::size_t> index) {
  return x.tape->record(std::make_unique<GatherTokensOp>(std::move(index)), {x});
}
Var gather_channels(Var x, std::vector<std::size_t> index, std::size_t out_tokens) {
  return x.tape->record(std::make_unique<GatherChannelsOp>(std::move(index), out_tokens), {x});
}
Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  if (axis > 2) throw std::invalid_argument("concat: axis must be 0, 1 or 2");
  if (parts.size() == 1) return parts.front();
  return parts.front().tape->record(std::make_unique<ConcatOp>(axis), parts);
}
Var reshape(Var x, Shape shape) { return x.tape->record(std::make_unique<ReshapeOp>(shape), {x}); }
Var slice(Var x, std::size_t axis, std::size_t start, std::size_t count) {
  if (axis > 2) throw std::invalid_argument("slice: axis must be 0, 1 or 2");
  return x.tape->record(std::make_unique<SliceOp>(axis, start, count), {x});
}

Var frob_gram(Var q, Var k) { return same_tape(q, k)->record(std::make_unique<FrobGramOp>(), {q, k}); }
Var softmax_rows(Var logits) { return logits.tape->record(std::make_unique<SoftmaxRowsOp>(), {logits}); }
Var mix_tokens(Var a, Var v) { return same_tape(a, v)->record(std::make_unique<MixTokensOp>(), {a, v}); }
Var max_over_tokens(Var x) { return x.tape->record(std::make_unique<MaxOverTokensOp>(), {x}); }

}  // namespace simeq::ad
