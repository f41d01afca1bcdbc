// SPDX-License-Identifier: Apache-2.0
#include "core/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_map>
#include <unordered_set>

namespace carf {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw InvalidArgument("tensor shape has zero extent");
    n *= d;
  }
  return n;
}

void check_finite(const std::vector<double>& values, const char* op_name) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite result in op '") + op_name + "'");
    }
  }
}

std::shared_ptr<TensorNode> make_leaf(std::vector<std::size_t> shape,
                                      std::vector<double> values, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  n->is_leaf = true;
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

// (outer, axis_len, inner) decomposition around `axis`.
struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const std::vector<std::size_t>& shape, std::size_t axis) {
  if (axis >= shape.size()) throw InvalidArgument("axis out of range");
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor make_op_result(std::vector<std::size_t> shape, std::vector<double> values,
                      std::vector<Tensor> inputs,
                      std::function<void(const std::vector<double>&,
                                         std::vector<std::vector<double>*>&)>
                          backprop,
                      const char* op_name) {
  check_finite(values, op_name);
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  bool any_grad = false;
  for (const Tensor& t : inputs) any_grad = any_grad || t.requires_grad();
  if (any_grad) {
    n->requires_grad = true;
    n->is_leaf = false;
    n->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) n->parents.push_back(t.node_ptr());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  std::size_t n = shape_product(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::from_values(std::vector<std::size_t> shape, std::vector<double> values,
                           bool requires_grad) {
  if (shape_product(shape) != values.size()) {
    throw InvalidArgument("from_values: shape/value count mismatch");
  }
  check_finite(values, "from_values");
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double v) { return from_values({1}, {v}); }

Tensor Tensor::from_points(const std::vector<Vec3>& pts, bool requires_grad) {
  std::vector<double> v;
  v.reserve(pts.size() * 3);
  for (const Vec3& p : pts) {
    v.push_back(p[0]);
    v.push_back(p[1]);
    v.push_back(p[2]);
  }
  return from_values({pts.size(), 3}, std::move(v), requires_grad);
}

const std::vector<std::size_t>& Tensor::shape() const {
  if (!node_) throw InvalidArgument("empty tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t i) const {
  const auto& s = shape();
  if (i >= s.size()) throw InvalidArgument("dim index out of range");
  return s[i];
}

std::size_t Tensor::rank() const { return shape().size(); }

std::size_t Tensor::size() const { return node_ ? node_->values.size() : 0; }

const std::vector<double>& Tensor::values() const {
  if (!node_) throw InvalidArgument("empty tensor");
  return node_->values;
}

std::vector<double>& Tensor::mutable_values() {
  if (!node_) throw InvalidArgument("empty tensor");
  if (!node_->is_leaf) throw InvalidArgument("mutable_values: not a leaf tensor");
  return node_->values;
}

double Tensor::item() const {
  if (size() != 1) throw InvalidArgument("item: tensor is not a scalar");
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  if (!node_) throw InvalidArgument("empty tensor");
  if (!node_->is_leaf) throw InvalidArgument("set_requires_grad: not a leaf tensor");
  node_->requires_grad = v;
}

const std::vector<double>& Tensor::grad() const {
  if (!node_) throw InvalidArgument("empty tensor");
  if (node_->grad.size() != node_->values.size()) {
    throw InvalidArgument("grad: gradient not populated");
  }
  return node_->grad;
}

bool Tensor::has_grad() const {
  return node_ && node_->grad.size() == node_->values.size();
}

void Tensor::zero_grad() {
  if (!node_) throw InvalidArgument("empty tensor");
  node_->grad.assign(node_->values.size(), 0.0);
}

void Tensor::accumulate_grad(std::span<const double> g) {
  if (!node_) throw InvalidArgument("empty tensor");
  if (g.size() != node_->values.size()) throw InvalidArgument("accumulate_grad: size mismatch");
  if (node_->grad.size() != node_->values.size()) node_->grad.assign(node_->values.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) node_->grad[i] += g[i];
}

std::vector<Vec3> Tensor::rows3() const {
  if (rank() != 2 || dim(1) != 3) throw InvalidArgument("rows3: tensor is not [n,3]");
  std::vector<Vec3> out(dim(0));
  const auto& v = values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
  return out;
}

// ---- ops -------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op_result(
      a.shape(), std::move(out), {a, b},
      [](const std::vector<double>& g, std::vector<std::vector<double>*>& pg) {
        if (pg[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
        if (pg[1])
          for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] += g[i];
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op_result(
      a.shape(), std::move(out), {a, b},
      [](const std::vector<double>& g, std::vector<std::vector<double>*>& pg) {
        if (pg[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
        if (pg[1])
          for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] -= g[i];
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  TensorNode* an = a.node();
  TensorNode* bn = b.node();
  return make_op_result(
      a.shape(), std::move(out), {a, b},
      [an, bn](const std::vector<double>& g, std::vector<std::vector<double>*>& pg) {
        if (pg[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * bn->values[i];
        if (pg[1])
          for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] += g[i] * an->values[i];
      },
      "mul");
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  return make_op_result(
      a.shape(), std::move(out), {a},
      [s](const std::vector<double>& g, std::vector<std::vector<double>*>& pg) {
        if (pg[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * s;
      },
      "scale");
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1) throw InvalidArgument("add_bias: bias must be rank 1");
  const std::size_t c = bias.dim(0);
  if (x.rank() < 1 || x.shape().back() != c) {
    throw InvalidArgument("add_bias: trailing axis mismatch");
  }
  const std::size_t rows = x.size() / c;
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  const auto& bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = xv[r * c + j] + bv[j];
  return make_op_result(
      x.shape(), std::move(out), {x, bias},
      [rows, c](const std::vector<double>& g, std::vector<std::vector<double>*>& pg) {
        if (pg[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
        if (pg[1]) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < c; ++j) (*pg[1])[j] += g[r * c + j];
        }
      },
      "add_bias");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw InvalidArgument("matmul: rank-2 tensors required");
  const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw InvalidArgument("matmul: inner dimensions differ (" + std::to_string(k) + " vs " +
                          std::to_string(k2) + ")");
  }
  std::vector<double> out(m * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  TensorNode* an = a.node();
  TensorNode* bn = b.node();
  return make_op_result(
      {m, n}, std::move(out), {a, b},
      [m, k, n, an, bn](const std::vector<double>& g, std::vector<std::vector<double>*>& pg) {
        if (pg[0]) {
          auto& da = *pg[0];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double* brow = &bn->values[p * n];
              const double* grow = &g[i * n];
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              da[i * k + p] += acc;
            }
        }
        if (pg[1]) {
          auto& db = *pg[1];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = an->values[i * k + p];
              if (aip == 0.0) continue;
              const double* grow = &g[i * n];
              double* drow = &db[p * n];
              for (std::size_t j = 0; j < n; ++j) drow[j] += aip * grow[j];
            }
        }
      },
      "matmul");
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  TensorNode* xn = x.node();
  return make_op_result(
      x.shape(), std::move(out), {x},
      [xn](const std::vector<double>& g, std::vector<std::vector<double>*>& pg) {
        if (pg[0])
          for (std::size_t i = 0; i < g.size(); ++i)
            if (xn->values[i] > 0.0) (*pg[0])[i] += g[i];
      },
      "relu");
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  std::vector<double> terms(s.len);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t kk = 0; kk < s.len; ++kk) mx = std::max(mx, xv[base + kk * s.inner]);
      for (std::size_t kk = 0; kk < s.len; ++kk)
        terms[kk] = std::exp(xv[base + kk * s.inner] - mx);
      std::vector<double> scratch = terms;
      const double denom = canonical_sum_inplace(scratch);
      for (std::size_t kk = 0; kk < s.len; ++kk) out[base + kk * s.inner] = terms[kk] / denom;
    }
  }
  auto result = make_op_result(
      x.shape(), std::move(out), {x},
      [s](const std::vector<double>& g, std::vector<std::vector<double>*>& pg) {
        (void)s;
        // placeholder; replaced below (needs result values)
      },
      "softmax");
  // The gradient needs the softmax output itself; rebind the closure with the
  // result node captured.
  TensorNode* yn = result.node();
  if (yn->backprop) {
    yn->backprop = [s, yn](const std::vector<double>& g,
                           std::vector<std::vector<double>*>& pg) {
      if (!pg[0]) return;
      auto& dx = *pg[0];
      const auto& y = yn->values;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          const std::size_t base = o * s.len * s.inner + i;
          double dot = 0.0;
          for (std::size_t kk = 0; kk < s.len; ++kk) {
            const std::size_t ix = base + kk * s.inner;
            dot += g[ix] * y[ix];
          }
          for (std::size_t kk = 0; kk < s.len; ++kk) {
            const std::size_t ix = base + kk * s.inner;
            dx[ix] += y[ix] * (g[ix] - dot);
          }
        }
      }
    };
  }
  return result;
}

Tensor reduce_sum(const Tensor& x) {
  std::vector<double> scratch(x.values());
  const double total = canonical_sum_inplace(scratch);
  return make_op_result(
      {1}, {total}, {x},
      [](const std::vector<double>& g, std::vector<std::vector<double>*>& pg) {
        if (pg[0])
          for (double& d : *pg[0]) d += g[0];
      },
      "reduce_sum");
}

Tensor reduce_sum_axis(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<std::size_t> out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.shape()[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(s.outer * s.inner);
  const auto& xv = x.values();
  std::vector<double> terms(s.len);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      for (std::size_t kk = 0; kk < s.len; ++kk) terms[kk] = xv[base + kk * s.inner];
      std::vector<double> scratch = terms;
      out[o * s.inner + i] = canonical_sum_inplace(scratch);
    }
  }
  return make_op_result(
      std::move(out_shape), std::move(out), {x},
      [s](const std::vector<double>& g, std::vector<std::vector<double>*>& pg) {
        if (!pg[0]) return;
        auto& dx = *pg[0];
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t i = 0; i < s.inner; ++i) {
            const double gv = g[o * s.inner + i];
            const std::size_t base = o * s.len * s.inner + i;
            for (std::size_t kk = 0; kk < s.len; ++kk) dx[base + kk * s.inner] += gv;
          }
      },
      "reduce_sum_axis");
}

Tensor reduce_max_axis(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<std::size_t> out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.shape()[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(s.outer * s.inner);
  auto argmax = std::make_shared<std::vector<std::size_t>>(s.outer * s.inner);
  const auto& xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double best = xv[base];
      std::size_t best_k = 0;
      for (std::size_t kk = 1; kk < s.len; ++kk) {
        const double v = xv[base + kk * s.inner];
        if (v > best) {
          best = v;
          best_k = kk;
        }
      }
      out[o * s.inner + i] = best;
      (*argmax)[o * s.inner + i] = best_k;
    }
  }
  return make_op_result(
      std::move(out_shape), std::move(out), {x},
      [s, argmax](const std::vector<double>& g, std::vector<std::vector<double>*>& pg) {
        if (!pg[0]) return;
        auto& dx = *pg[0];
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t lane = o * s.inner + i;
            const std::size_t base = o * s.len * s.inner + i;
            dx[base + (*argmax)[lane] * s.inner] += g[lane];
          }
      },
      "reduce_max_axis");
}

Tensor l2_norm_last_axis(const Tensor& x) {
  if (x.rank() < 1) throw InvalidArgument("l2_norm_last_axis: rank >= 1 required");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  std::vector<std::size_t> out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape.push_back(1);
  std::vector<double> out(rows);
  const auto& xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double v = xv[r * d + j];
      acc += v * v;
    }
    out[r] = std::sqrt(acc);
  }
  TensorNode* xn = x.node();
  auto norms = std::make_shared<std::vector<double>>(out);
  return make_op_result(
      std::move(out_shape), std::move(out), {x},
      [xn, norms, d, rows](const std::vector<double>& g, std::vector<std::vector<double>*>& pg) {
        if (!pg[0]) return;
        auto& dx = *pg[0];
        for (std::size_t r = 0; r < rows; ++r) {
          const double nr = (*norms)[r];
          if (nr == 0.0) continue;  // subgradient 0 at the kink
          const double gv = g[r] / nr;
          for (std::size_t j = 0; j < d; ++j) dx[r * d + j] += gv * xn->values[r * d + j];
        }
      },
      "l2_norm_last_axis");
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw InvalidArgument("concat: no inputs");
  const std::size_t rank = parts[0].rank();
  if (axis >= rank) throw InvalidArgument("concat: axis out of range");
  std::vector<std::size_t> out_shape = parts[0].shape();
  std::size_t axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank) throw InvalidArgument("concat: rank mismatch");
    for (std::size_t i = 0; i < rank; ++i) {
      if (i != axis && p.shape()[i] != out_shape[i]) {
        throw InvalidArgument("concat: non-axis extent mismatch");
      }
    }
    axis_total += p.shape()[axis];
  }
  out_shape[axis] = axis_total;
  const AxisSplit s = split_axis(out_shape, axis);
  std::vector<double> out(s.outer * axis_total * s.inner);
  std::vector<std::size_t> part_len(parts.size());
  for (std::size_t pi = 0; pi < parts.size(); ++pi) part_len[pi] = parts[pi].shape()[axis];
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const auto& pv = parts[pi].values();
      const std::size_t chunk = part_len[pi] * s.inner;
      std::memcpy(&out[(o * axis_total + off) * s.inner], &pv[o * chunk], chunk * sizeof(double));
      off += part_len[pi];
    }
  }
  return make_op_result(
      std::move(out_shape), std::move(out), parts,
      [s, part_len, axis_total](const std::vector<double>& g,
                                std::vector<std::vector<double>*>& pg) {
        for (std::size_t o = 0; o < s.outer; ++o) {
          std::size_t off = 0;
          for (std::size_t pi = 0; pi < part_len.size(); ++pi) {
            const std::size_t chunk = part_len[pi] * s.inner;
            if (pg[pi]) {
              double* dst = &(*pg[pi])[o * chunk];
              const double* src = &g[(o * axis_total + off) * s.inner];
              for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
            }
            off += part_len[pi];
          }
        }
      },
      "concat");
}

Tensor gather_rows(const Tensor& src, const std::vector<std::uint32_t>& idx) {
  if (src.rank() < 1) throw InvalidArgument("gather_rows: rank >= 1 required");
  const std::size_t n = src.dim(0);
  const std::size_t row = src.size() / n;
  for (std::uint32_t i : idx) {
    if (i >= n) {
      throw InvalidArgument("gather_rows: index " + std::to_string(i) + " out of range (n=" +
                            std::to_string(n) + ")");
    }
  }
  std::vector<std::size_t> out_shape = src.shape();
  out_shape[0] = idx.size();
  std::vector<double> out(idx.size() * row);
  const auto& sv = src.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::memcpy(&out[r * row], &sv[static_cast<std::size_t>(idx[r]) * row], row * sizeof(double));
  }
  auto idx_copy = std::make_shared<std::vector<std::uint32_t>>(idx);
  return make_op_result(
      std::move(out_shape), std::move(out), {src},
      [idx_copy, row](const std::vector<double>& g, std::vector<std::vector<double>*>& pg) {
        if (!pg[0]) return;
        auto& dx = *pg[0];
        for (std::size_t r = 0; r < idx_copy->size(); ++r) {
          double* dst = &dx[static_cast<std::size_t>((*idx_copy)[r]) * row];
          const double* src = &g[r * row];
          for (std::size_t j = 0; j < row; ++j) dst[j] += src[j];
        }
      },
      "gather_rows");
}

Tensor reshape(const Tensor& x, std::vector<std::size_t> new_shape) {
  if (shape_product(new_shape) != x.size()) throw InvalidArgument("reshape: size mismatch");
  std::vector<double> out = x.values();
  return make_op_result(
      std::move(new_shape), std::move(out), {x},
      [](const std::vector<double>& g, std::vector<std::vector<double>*>& pg) {
        if (pg[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
      },
      "reshape");
}

Tensor repeat_mid(const Tensor& x, std::size_t k) {
  if (x.rank() != 2) throw InvalidArgument("repeat_mid: rank-2 input required");
  if (k == 0) throw InvalidArgument("repeat_mid: k must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1);
  std::vector<double> out(n * k * c);
  const auto& xv = x.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t kk = 0; kk < k; ++kk)
      std::memcpy(&out[(i * k + kk) * c], &xv[i * c], c * sizeof(double));
  return make_op_result(
      {n, k, c}, std::move(out), {x},
      [n, k, c](const std::vector<double>& g, std::vector<std::vector<double>*>& pg) {
        if (!pg[0]) return;
        auto& dx = *pg[0];
        std::vector<double> terms(k);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            for (std::size_t kk = 0; kk < k; ++kk) terms[kk] = g[(i * k + kk) * c + j];
            std::vector<double> scratch = terms;
            dx[i * c + j] += canonical_sum_inplace(scratch);
          }
      },
      "repeat_mid");
}

Tensor interp3(const Tensor& src, const std::vector<std::array<std::uint32_t, 3>>& idx,
               const std::vector<Vec3>& w) {
  if (src.rank() != 2) throw InvalidArgument("interp3: rank-2 source required");
  if (idx.size() != w.size()) throw InvalidArgument("interp3: index/weight count mismatch");
  const std::size_t m = src.dim(0), c = src.dim(1), n = idx.size();
  for (const auto& row : idx)
    for (std::uint32_t i : row)
      if (i >= m) throw InvalidArgument("interp3: index out of range");
  std::vector<double> out(n * c, 0.0);
  const auto& sv = src.values();
  for (std::size_t r = 0; r < n; ++r) {
    for (int t = 0; t < 3; ++t) {
      const double wt = w[r][t];
      const double* srow = &sv[static_cast<std::size_t>(idx[r][t]) * c];
      double* orow = &out[r * c];
      for (std::size_t j = 0; j < c; ++j) orow[j] += wt * srow[j];
    }
  }
  auto idx_copy = std::make_shared<std::vector<std::array<std::uint32_t, 3>>>(idx);
  auto w_copy = std::make_shared<std::vector<Vec3>>(w);
  return make_op_result(
      {n, c}, std::move(out), {src},
      [idx_copy, w_copy, c](const std::vector<double>& g, std::vector<std::vector<double>*>& pg) {
        if (!pg[0]) return;
        auto& dx = *pg[0];
        for (std::size_t r = 0; r < idx_copy->size(); ++r) {
          for (int t = 0; t < 3; ++t) {
            const double wt = (*w_copy)[r][t];
            double* drow = &dx[static_cast<std::size_t>((*idx_copy)[r][t]) * c];
            const double* grow = &g[r * c];
            for (std::size_t j = 0; j < c; ++j) drow[j] += wt * grow[j];
          }
        }
      },
      "interp3");
}

// ---- backward --------------------------------------------------------------

namespace {

void run_backward(const Tensor& root, const std::vector<Tensor>* leaves,
                  std::vector<std::vector<double>>* sinks) {
  if (!root.valid()) throw InvalidArgument("backward: empty tensor");
  if (root.size() != 1) throw InvalidArgument("backward: root must be a scalar");

  // Reachable set over parents. Strong references: clearing the tape below
  // must not free nodes the sweep still visits.
  std::vector<std::shared_ptr<TensorNode>> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::shared_ptr<TensorNode>> stack{root.node_ptr()};
  while (!stack.empty()) {
    std::shared_ptr<TensorNode> n = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    for (const auto& p : n->parents) stack.push_back(p);
    order.push_back(std::move(n));
  }
  // Children always have larger ids than their parents, so descending id is a
  // topological order of the reachable DAG.
  std::sort(order.begin(), order.end(),
            [](const std::shared_ptr<TensorNode>& a, const std::shared_ptr<TensorNode>& b) {
              return a->id > b->id;
            });

  std::unordered_map<TensorNode*, std::vector<double>> gbuf;
  gbuf[root.node()] = {1.0};
  std::vector<std::vector<double>*> pg;
  for (const auto& np : order) {
    TensorNode* n = np.get();
    auto it = gbuf.find(n);
    if (it == gbuf.end() || !n->backprop) continue;
    // Bind the value before inserting below: rehashing invalidates iterators
    // but element references stay put.
    std::vector<double>& gout = it->second;
    pg.clear();
    pg.reserve(n->parents.size());
    for (const auto& p : n->parents) {
      if (!p->requires_grad) {
        pg.push_back(nullptr);
        continue;
      }
      auto& buf = gbuf[p.get()];
      if (buf.size() != p->size()) buf.assign(p->size(), 0.0);
      pg.push_back(&buf);
    }
    n->backprop(gout, pg);
  }

  if (leaves == nullptr) {
    for (const auto& np : order) {
      TensorNode* n = np.get();
      if (!n->is_leaf || !n->requires_grad) continue;
      auto it = gbuf.find(n);
      if (it == gbuf.end()) continue;
      if (n->grad.size() != n->values.size()) n->grad.assign(n->values.size(), 0.0);
      for (std::size_t i = 0; i < n->values.size(); ++i) n->grad[i] += it->second[i];
    }
  } else {
    sinks->resize(leaves->size());
    for (std::size_t li = 0; li < leaves->size(); ++li) {
      TensorNode* n = (*leaves)[li].node();
      auto it = gbuf.find(n);
      if (it != gbuf.end() && it->second.size() == n->size()) {
        (*sinks)[li] = std::move(it->second);
      } else {
        (*sinks)[li].assign(n->size(), 0.0);
      }
    }
  }

  // Release the tape: interior nodes drop their parents and closures.
  for (const auto& np : order) {
    if (np->is_leaf) continue;
    np->parents.clear();
    np->backprop = nullptr;
  }
}

}  // namespace

void backward(const Tensor& root) { run_backward(root, nullptr, nullptr); }

void backward_collect(const Tensor& root, const std::vector<Tensor>& leaves,
                      std::vector<std::vector<double>>& sinks) {
  run_backward(root, &leaves, &sinks);
}

}  // namespace carf
