#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rho/errors.hpp"
#include "rho/tensor.hpp"

// Reverse-mode automatic differentiation over rank-2 tensors.
//
// A Tape records every intermediate value together with a closure that pushes
// the node's gradient back to its inputs. Nodes are appended in evaluation
// order, so walking the tape backwards is a valid topological order.

namespace rho::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  const Tensor& value() const;
  const Tensor& grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, std::size_t self)>;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }
  Var parameter(Tensor value) { return push(std::move(value), true, nullptr); }

  Var record(Tensor value, bool requires_grad, Backprop backprop) {
    return push(std::move(value), requires_grad, std::move(backprop));
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient of node `id`; zeros if nothing flowed into it.
  const Tensor& grad(std::size_t id) {
    ensure_grad(id);
    return nodes_[id].grad;
  }

  void accumulate(std::size_t id, const Tensor& g) {
    if (!nodes_[id].requires_grad) return;
    ensure_grad(id);
    auto dst = nodes_[id].grad.values();
    auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  /// Mutable access for ops that scatter gradient element by element.
  Tensor& grad_buffer(std::size_t id) {
    ensure_grad(id);
    return nodes_[id].grad;
  }

  /// Back-propagates from a scalar root (any tensor with exactly one element).
  void backward(Var root) {
    if (nodes_[root.id()].value.size() != 1) throw DimensionError("backward: root must hold a single value");
    for (auto& node : nodes_) node.grad = Tensor();
    ensure_grad(root.id());
    nodes_[root.id()].grad[0] = 1.0;
    for (std::size_t id = root.id() + 1; id-- > 0;) {
      auto& node = nodes_[id];
      if (node.backprop && node.requires_grad && !node.grad.empty()) node.backprop(*this, id);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backprop backprop;
  };

  Var push(Tensor value, bool requires_grad, Backprop backprop) {
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, std::move(backprop)});
    return Var(this, nodes_.size() - 1);
  }

  void ensure_grad(std::size_t id) {
    auto& node = nodes_[id];
    if (node.grad.empty() && !node.value.empty()) node.grad = Tensor(node.value.shape(), 0.0);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }

inline Var matmul(Var a, Var b) {
  Tape& t = a.tape();
  const std::size_t ia = a.id(), ib = b.id();
  const bool rg = t.requires_grad(ia) || t.requires_grad(ib);
  return t.record(rho::matmul(a.value(), b.value()), rg, [ia, ib](Tape& tape, std::size_t self) {
    const Tensor& g = tape.grad(self);
    if (tape.requires_grad(ia)) tape.accumulate(ia, matmul_nt(g, tape.value(ib)));
    if (tape.requires_grad(ib)) tape.accumulate(ib, matmul_tn(tape.value(ia), g));
  });
}

/// x (n x c) + bias (c), broadcast over rows.
inline Var add_row_vector(Var x, Var bias) {
  Tape& t = x.tape();
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.size() != xv.cols()) throw DimensionError("add_row_vector: bias length does not match column count");
  Tensor out = xv;
  const std::size_t c = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += bv[j];
  const std::size_t ix = x.id(), ib = bias.id();
  const bool rg = t.requires_grad(ix) || t.requires_grad(ib);
  return t.record(std::move(out), rg, [ix, ib, c](Tape& tape, std::size_t self) {
    const Tensor& g = tape.grad(self);
    tape.accumulate(ix, g);
    if (tape.requires_grad(ib)) {
      Tensor& gb = tape.grad_buffer(ib);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
    }
  });
}

inline Var relu(Var x) {
  Tape& t = x.tape();
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  const std::size_t ix = x.id();
  return t.record(std::move(out), t.requires_grad(ix), [ix](Tape& tape, std::size_t self) {
    const Tensor& g = tape.grad(self);
    const Tensor& in = tape.value(ix);
    Tensor& gx = tape.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] > 0.0) gx[i] += g[i];
  });
}

/// Elementwise product with a fixed (non-differentiated) mask; used for dropout.
inline Var multiply_mask(Var x, Tensor mask) {
  Tape& t = x.tape();
  require_same_shape(x.value(), mask, "multiply_mask");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  const std::size_t ix = x.id();
  return t.record(std::move(out), t.requires_grad(ix),
                  [ix, mask = std::move(mask)](Tape& tape, std::size_t self) {
                    const Tensor& g = tape.grad(self);
                    Tensor& gx = tape.grad_buffer(ix);
                    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                  });
}

/// Per-feature batch statistics produced by a batch-normalisation node.
struct BatchMoments {
  std::vector<double> mean;
  std::vector<double> variance;  // biased (divide by n)
};

/// Batch normalisation using the statistics of the rows of `x` itself.
inline Var batch_norm_batch_stats(Var x, Var gamma, Var beta, double eps, BatchMoments* moments_out = nullptr) {
  Tape& t = x.tape();
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), c = xv.cols();
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw DimensionError("batch_norm: gamma/beta length does not match feature count");
  }
  if (n == 0) throw DimensionError("batch_norm: empty batch");
  std::vector<double> mean(c, 0.0), var(c, 0.0), inv_std(c);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) mean[j] += xv[r * c + j];
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xv[r * c + j] - mean[j];
      var[j] += d * d;
    }
  for (double& v : var) v /= static_cast<double>(n);
  for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);

  Tensor xhat = Tensor::matrix(n, c);
  Tensor out = Tensor::matrix(n, c);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xv[r * c + j] - mean[j]) * inv_std[j];
      xhat[r * c + j] = h;
      out[r * c + j] = gv[j] * h + bv[j];
    }
  if (moments_out) *moments_out = BatchMoments{mean, var};

  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  const bool rg = t.requires_grad(ix) || t.requires_grad(ig) || t.requires_grad(ib);
  return t.record(std::move(out), rg,
                  [ix, ig, ib, n, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tape,
                                                                                           std::size_t self) {
                    const Tensor& g = tape.grad(self);
                    const Tensor& gamma_v = tape.value(ig);
                    std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t j = 0; j < c; ++j) {
                        sum_g[j] += g[r * c + j];
                        sum_gx[j] += g[r * c + j] * xhat[r * c + j];
                      }
                    if (tape.requires_grad(ig)) {
                      Tensor& gg = tape.grad_buffer(ig);
                      for (std::size_t j = 0; j < c; ++j) gg[j] += sum_gx[j];
                    }
                    if (tape.requires_grad(ib)) {
                      Tensor& gb = tape.grad_buffer(ib);
                      for (std::size_t j = 0; j < c; ++j) gb[j] += sum_g[j];
                    }
                    if (tape.requires_grad(ix)) {
                      Tensor& gx = tape.grad_buffer(ix);
                      const double inv_n = 1.0 / static_cast<double>(n);
                      for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t j = 0; j < c; ++j) {
                          const double dxhat = g[r * c + j] * gamma_v[j];
                          gx[r * c + j] += inv_std[j] * (dxhat - inv_n * gamma_v[j] * sum_g[j] -
                                                         inv_n * xhat[r * c + j] * gamma_v[j] * sum_gx[j]);
                        }
                    }
                  });
}

/// Batch normalisation with externally supplied (running) statistics; an
/// affine map per feature, so rows do not interact.
inline Var batch_norm_fixed_stats(Var x, Var gamma, Var beta, std::span<const double> mean,
                                  std::span<const double> variance, double eps) {
  Tape& t = x.tape();
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), c = xv.cols();
  if (gamma.value().size() != c || beta.value().size() != c || mean.size() != c || variance.size() != c) {
    throw DimensionError("batch_norm: statistics length does not match feature count");
  }
  std::vector<double> inv_std(c);
  for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(variance[j] + eps);
  Tensor xhat = Tensor::matrix(n, c);
  Tensor out = Tensor::matrix(n, c);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xv[r * c + j] - mean[j]) * inv_std[j];
      xhat[r * c + j] = h;
      out[r * c + j] = gv[j] * h + bv[j];
    }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  const bool rg = t.requires_grad(ix) || t.requires_grad(ig) || t.requires_grad(ib);
  return t.record(std::move(out), rg,
                  [ix, ig, ib, n, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tape,
                                                                                           std::size_t self) {
                    const Tensor& g = tape.grad(self);
                    const Tensor& gamma_v = tape.value(ig);
                    if (tape.requires_grad(ig)) {
                      Tensor& gg = tape.grad_buffer(ig);
                      for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t j = 0; j < c; ++j) gg[j] += g[r * c + j] * xhat[r * c + j];
                    }
                    if (tape.requires_grad(ib)) {
                      Tensor& gb = tape.grad_buffer(ib);
                      for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
                    }
                    if (tape.requires_grad(ix)) {
                      Tensor& gx = tape.grad_buffer(ix);
                      for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += g[r * c + j] * gamma_v[j] * inv_std[j];
                    }
                  });
}

/// Weighted mean cross-entropy: (1/n) * sum_i w_i * (-log softmax(logits_i)[label_i]).
/// An empty `weights` span means unit weights.
inline Var mean_cross_entropy(Var logits, std::span<const int> labels, std::span<const double> weights = {}) {
  Tape& t = logits.tape();
  const Tensor& z = logits.value();
  const std::size_t n = z.rows(), c = z.cols();
  if (labels.size() != n) throw DimensionError("cross_entropy: label count does not match batch size");
  if (!weights.empty() && weights.size() != n) throw DimensionError("cross_entropy: weight count does not match batch");
  if (n == 0) throw DimensionError("cross_entropy: empty batch");
  Tensor probs = softmax_rows(z);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw DomainError("cross_entropy: label out of range");
    const double w = weights.empty() ? 1.0 : weights[r];
    total += w * (log_sum_exp(z.row(r)) - z[r * c + static_cast<std::size_t>(y)]);
  }
  std::vector<int> ys(labels.begin(), labels.end());
  std::vector<double> ws(weights.begin(), weights.end());
  const std::size_t iz = logits.id();
  return t.record(Tensor({1}, total / static_cast<double>(n)), t.requires_grad(iz),
                  [iz, n, c, probs = std::move(probs), ys = std::move(ys), ws = std::move(ws)](Tape& tape,
                                                                                               std::size_t self) {
                    const double g = tape.grad(self)[0] / static_cast<double>(n);
                    Tensor& gz = tape.grad_buffer(iz);
                    for (std::size_t r = 0; r < n; ++r) {
                      const double w = ws.empty() ? 1.0 : ws[r];
                      for (std::size_t j = 0; j < c; ++j) {
                        const double target = static_cast<std::size_t>(ys[r]) == j ? 1.0 : 0.0;
                        gz[r * c + j] += g * w * (probs[r * c + j] - target);
                      }
                    }
                  });
}

}  // namespace rho::ad
