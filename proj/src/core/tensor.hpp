// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense-tensor engine with reverse-mode differentiation. Tensors are
// value-semantic handles onto graph nodes; an op records its parents and a
// backprop closure only when some input requires gradients. backward() walks
// the recorded tape once, deposits gradients on the requiring leaves, and
// then releases the tape.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "core/common.hpp"

namespace carf {

struct TensorNode {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until used; same length as values after
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t id = 0;  // creation order; reverse order is a topo order
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Propagates this node's gradient buffer into the parents' buffers.
  std::function<void(const std::vector<double>& self_grad,
                     std::vector<std::vector<double>*>& parent_grads)>
      backprop;

  std::size_t size() const { return values.size(); }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor from_values(std::vector<std::size_t> shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double v);
  /// Flattens n rows of xyz into an [n, 3] constant.
  static Tensor from_points(const std::vector<Vec3>& pts, bool requires_grad = false);

  bool valid() const { return node_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t dim(std::size_t i) const;
  std::size_t rank() const;
  std::size_t size() const;
  const std::vector<double>& values() const;
  /// Mutable access for leaf tensors (parameter updates). Throws on non-leaf.
  std::vector<double>& mutable_values();
  double item() const;  // value of a 1-element tensor

  bool requires_grad() const;
  /// Leaf-only toggle; interior nodes derive the flag from their parents.
  void set_requires_grad(bool v);
  const std::vector<double>& grad() const;
  bool has_grad() const;
  void zero_grad();
  void accumulate_grad(std::span<const double> g);

  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& node_ptr() const { return node_; }

  std::vector<Vec3> rows3() const;  // [n,3] -> vector of Vec3

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode> node_;

  friend Tensor make_op_result(std::vector<std::size_t> shape, std::vector<double> values,
                               std::vector<Tensor> inputs,
                               std::function<void(const std::vector<double>&,
                                                  std::vector<std::vector<double>*>&)>
                                   backprop,
                               const char* op_name);
};

// ---- forward ops ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double s);
/// x: [..., c] plus bias [c] broadcast over leading axes.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor relu(const Tensor& x);
/// Numerically stable softmax along `axis`; denominators use canonical sums
/// so permuting entries along the axis permutes outputs bitwise.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor reduce_sum(const Tensor& x);                     // -> scalar
Tensor reduce_sum_axis(const Tensor& x, std::size_t axis);
/// Elementwise max along `axis`; ties route gradient to the lowest index.
Tensor reduce_max_axis(const Tensor& x, std::size_t axis);
/// [..., d] -> [...]: Euclidean norm of the trailing axis. Zero rows get a
/// zero subgradient.
Tensor l2_norm_last_axis(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// src: [n, c]; picks rows by index -> [idx.size(), c]. Gradient scatter-adds.
Tensor gather_rows(const Tensor& src, const std::vector<std::uint32_t>& idx);
Tensor reshape(const Tensor& x, std::vector<std::size_t> new_shape);
/// [n, c] -> [n, k, c] by repetition; gradient sums over the middle axis.
Tensor repeat_mid(const Tensor& x, std::size_t k);
/// Three-point interpolation: out[i] = sum_t w[i][t] * src[idx[i][t]].
Tensor interp3(const Tensor& src, const std::vector<std::array<std::uint32_t, 3>>& idx,
               const std::vector<Vec3>& w);

// ---- backward -------------------------------------------------------------

/// Reverse-mode sweep from a scalar root. Every requires_grad leaf reachable
/// from the root accumulates d(root)/d(leaf) into its grad buffer, and the
/// recorded tape is released.
void backward(const Tensor& root);

/// As backward(), but deposits leaf gradients into `sinks` (parallel to
/// `leaves`) instead of the shared leaf buffers. Lets concurrent tapes over
/// shared parameters run without touching each other; the caller sums the
/// per-tape results in a fixed order.
void backward_collect(const Tensor& root, const std::vector<Tensor>& leaves,
                      std::vector<std::vector<double>>& sinks);

}  // namespace carf
