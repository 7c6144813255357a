#include "atmgcn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "atmgcn/errors.hpp"

namespace atmgcn {

namespace {

constexpr std::size_t kUntracked = std::numeric_limits<std::size_t>::max();

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

void require_rank(const char* op, const Var& a, std::size_t rank) {
  if (a.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(a.shape()));
  }
}

void require_nonscalar(const char* op, const Var& a) {
  if (a.shape().empty()) {
    throw DimensionError(std::string(op) + ": needs rank >= 1, got a scalar");
  }
}

// out[i][j] = sum_k a[i][k] * b[k][j]
void gemm_nn(const double* a, const double* b, double* out, std::size_t n,
             std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += av * brow[j];
    }
  }
}

// out[i][j] += sum_p a[i][p] * b[j][p]   (a: n x k, b: m x k)
void gemm_nt(const double* a, const double* b, double* out, std::size_t n,
             std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out[i * m + j] += acc;
    }
  }
}

// out[i][j] += sum_p a[p][i] * b[p][j]   (a: k x n, b: k x m)
void gemm_tn(const double* a, const double* b, double* out, std::size_t n,
             std::size_t k, std::size_t m) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * n;
    const double* brow = b + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* row = out + i * m;
      for (std::size_t j = 0; j < m; ++j) row[j] += av * brow[j];
    }
  }
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <class F>
Var unary(const Var& a, F&& forward_fn, std::function<double(double, double)> deriv) {
  // deriv(x, y) returns dy/dx given input x and output y.
  Tensor out(a.shape());
  const auto in = a.value().values();
  auto ov = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) ov[i] = forward_fn(in[i]);
  auto result_holder = std::make_shared<Tensor>(out);
  const Var inputs[] = {a};
  return make_result(std::move(out), inputs,
                     [a, result_holder, deriv](const Tensor& g, std::span<Tensor* const> gi) {
                       if (!gi[0]) return;
                       const auto x = a.value().values();
                       const auto y = result_holder->values();
                       auto ga = gi[0]->values();
                       const auto gv = g.values();
                       for (std::size_t i = 0; i < x.size(); ++i) ga[i] += gv[i] * deriv(x[i], y[i]);
                     });
}

}  // namespace

Var constant(Tensor value) {
  Var v;
  v.value_ = std::make_shared<const Tensor>(std::move(value));
  return v;
}

Var Tape::leaf(Tensor value) {
  Var v;
  v.value_ = std::make_shared<const Tensor>(std::move(value));
  v.tape_ = this;
  v.node_ = nodes_.size();
  Node n;
  n.shape = v.shape();
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return v;
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node n;
  n.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape_ != nullptr && in.tape_ != this) {
      throw UsageError("tape: operand recorded on a different tape");
    }
    n.inputs.push_back(in.tape_ ? in.node_ : kUntracked);
  }
  n.backward = std::move(backward);
  n.shape = value.shape();
  Var v;
  v.value_ = std::make_shared<const Tensor>(std::move(value));
  v.tape_ = this;
  v.node_ = nodes_.size();
  nodes_.push_back(std::move(n));
  return v;
}

Gradients Tape::backward(const Var& output) const {
  if (output.tape_ != this) {
    throw UsageError("backward: output is not recorded on this tape");
  }
  if (output.value().size() != 1 || !output.shape().empty()) {
    throw UsageError("backward: output must be a rank-0 tensor, got shape " +
                     shape_string(output.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  std::vector<bool> live(nodes_.size(), false);
  grads[output.node_] = Tensor::scalar(1.0);
  live[output.node_] = true;
  std::vector<Tensor*> slots;
  for (std::size_t id = output.node_ + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!live[id] || n.is_leaf) continue;
    slots.assign(n.inputs.size(), nullptr);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      const std::size_t src = n.inputs[k];
      if (src == kUntracked) continue;
      if (!live[src]) {
        grads[src] = Tensor(nodes_[src].shape);
        live[src] = true;
      }
      slots[k] = &grads[src];
    }
    n.backward(grads[id], slots);
    grads[id] = Tensor();  // release intermediate storage
  }
  Gradients out;
  out.tape_ = this;
  out.grads_.resize(nodes_.size());
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (!nodes_[id].is_leaf) continue;
    out.grads_[id] = live[id] ? std::move(grads[id]) : Tensor(nodes_[id].shape);
  }
  return out;
}

const Tensor& Gradients::of(const Var& leaf) const {
  if (leaf.tape() != tape_ || leaf.node() >= grads_.size()) {
    throw UsageError("gradients: variable does not belong to this tape");
  }
  const Tensor& g = grads_[leaf.node()];
  if (g.shape() != leaf.shape()) {
    throw UsageError("gradients: variable is not a leaf");
  }
  return g;
}

Var make_result(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  for (const Var& in : inputs) {
    if (in.tracked()) return in.tape()->record(std::move(value), inputs, std::move(backward));
  }
  return constant(std::move(value));
}

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  Tensor out({a.dim(0), b.dim(1)});
  gemm_nn(a.data(), b.data(), out.data(), a.dim(0), a.dim(1), b.dim(1));
  return out;
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  auto ov = out.values();
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
  const Var in[] = {a, b};
  return make_result(std::move(out), in, [](const Tensor& g, std::span<Tensor* const> gi) {
    for (Tensor* t : gi) {
      if (!t) continue;
      auto tv = t->values();
      const auto gv = g.values();
      for (std::size_t i = 0; i < tv.size(); ++i) tv[i] += gv[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  auto ov = out.values();
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] -= bv[i];
  const Var in[] = {a, b};
  return make_result(std::move(out), in, [](const Tensor& g, std::span<Tensor* const> gi) {
    const auto gv = g.values();
    if (gi[0]) {
      auto tv = gi[0]->values();
      for (std::size_t i = 0; i < tv.size(); ++i) tv[i] += gv[i];
    }
    if (gi[1]) {
      auto tv = gi[1]->values();
      for (std::size_t i = 0; i < tv.size(); ++i) tv[i] -= gv[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  auto ov = out.values();
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] *= bv[i];
  const Var in[] = {a, b};
  return make_result(std::move(out), in, [a, b](const Tensor& g, std::span<Tensor* const> gi) {
    const auto gv = g.values();
    if (gi[0]) {
      auto tv = gi[0]->values();
      const auto bv = b.value().values();
      for (std::size_t i = 0; i < tv.size(); ++i) tv[i] += gv[i] * bv[i];
    }
    if (gi[1]) {
      auto tv = gi[1]->values();
      const auto av = a.value().values();
      for (std::size_t i = 0; i < tv.size(); ++i) tv[i] += gv[i] * av[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape("div", a, b);
  const auto bv = b.value().values();
  for (double d : bv) {
    if (d == 0.0) throw DomainError("div: division by zero");
  }
  Tensor out = a.value();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] /= bv[i];
  auto result = std::make_shared<Tensor>(out);
  const Var in[] = {a, b};
  return make_result(std::move(out), in,
                     [b, result](const Tensor& g, std::span<Tensor* const> gi) {
                       const auto gv = g.values();
                       const auto den = b.value().values();
                       if (gi[0]) {
                         auto tv = gi[0]->values();
                         for (std::size_t i = 0; i < tv.size(); ++i) tv[i] += gv[i] / den[i];
                       }
                       if (gi[1]) {
                         auto tv = gi[1]->values();
                         const auto yv = result->values();
                         for (std::size_t i = 0; i < tv.size(); ++i) {
                           tv[i] -= gv[i] * yv[i] / den[i];
                         }
                       }
                     });
}

Var scalar_mul(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= s;
  const Var in[] = {a};
  return make_result(std::move(out), in, [s](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    auto tv = gi[0]->values();
    const auto gv = g.values();
    for (std::size_t i = 0; i < tv.size(); ++i) tv[i] += s * gv[i];
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.values()) v += s;
  const Var in[] = {a};
  return make_result(std::move(out), in, [](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    auto tv = gi[0]->values();
    const auto gv = g.values();
    for (std::size_t i = 0; i < tv.size(); ++i) tv[i] += gv[i];
  });
}

Var matmul(const Var& a, const Var& b) {
  Tensor out = matmul(a.value(), b.value());
  const Var in[] = {a, b};
  return make_result(std::move(out), in, [a, b](const Tensor& g, std::span<Tensor* const> gi) {
    const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
    if (gi[0]) gemm_nt(g.data(), b.value().data(), gi[0]->data(), n, m, k);
    if (gi[1]) gemm_tn(a.value().data(), g.data(), gi[1]->data(), k, n, m);
  });
}

Var transpose(const Var& a) {
  require_rank("transpose", a, 2);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor out({c, r});
  const Tensor& av = a.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  const Var in[] = {a};
  return make_result(std::move(out), in, [r, c](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gi[0]->at(i, j) += g.at(j, i);
  });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var arccos_clamped(const Var& a) {
  static constexpr double lo = -1.0 + kArccosEps;
  static constexpr double hi = 1.0 - kArccosEps;
  return unary(
      a, [](double x) { return std::acos(std::clamp(x, lo, hi)); },
      [](double x, double) {
        if (x <= lo || x >= hi) return 0.0;
        return -1.0 / std::sqrt(1.0 - x * x);
      });
}

Var softmax_lastdim(const Var& a) {
  require_nonscalar("softmax_lastdim", a);
  const std::size_t cols = a.shape().back();
  const std::size_t rows = cols ? a.value().size() / cols : 0;
  Tensor out(a.shape());
  const double* x = a.value().data();
  double* y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cols;
    double* yr = y + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= total;
  }
  auto result = std::make_shared<Tensor>(out);
  const Var in[] = {a};
  return make_result(std::move(out), in,
                     [result, rows, cols](const Tensor& g, std::span<Tensor* const> gi) {
                       if (!gi[0]) return;
                       const double* y = result->data();
                       const double* gv = g.data();
                       double* ga = gi[0]->data();
                       for (std::size_t r = 0; r < rows; ++r) {
                         const std::size_t o = r * cols;
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) dot += gv[o + c] * y[o + c];
                         for (std::size_t c = 0; c < cols; ++c) {
                           ga[o + c] += y[o + c] * (gv[o + c] - dot);
                         }
                       }
                     });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  const Var in[] = {a};
  return make_result(Tensor::scalar(total), in,
                     [](const Tensor& g, std::span<Tensor* const> gi) {
                       if (!gi[0]) return;
                       const double gv = g.item();
                       for (double& v : gi[0]->values()) v += gv;
                     });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw DimensionError("mean: empty tensor");
  return scalar_mul(sum(a), 1.0 / n);
}

Var max_lastdim(const Var& a) {
  require_nonscalar("max_lastdim", a);
  const std::size_t cols = a.shape().back();
  if (cols == 0) throw DimensionError("max_lastdim: empty last dimension");
  const std::size_t rows = a.value().size() / cols;
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  Tensor out(out_shape);
  auto argmax = std::make_shared<std::vector<std::size_t>>(rows);
  const double* x = a.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cols;
    const std::size_t best = static_cast<std::size_t>(std::max_element(xr, xr + cols) - xr);
    (*argmax)[r] = best;
    out[r] = xr[best];
  }
  const Var in[] = {a};
  return make_result(std::move(out), in,
                     [argmax, cols](const Tensor& g, std::span<Tensor* const> gi) {
                       if (!gi[0]) return;
                       for (std::size_t r = 0; r < argmax->size(); ++r) {
                         (*gi[0])[r * cols + (*argmax)[r]] += g[r];
                       }
                     });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw DimensionError("concat: shape mismatch " + shape_string(first) + " vs " +
                           shape_string(s));
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_at(out_shape, axis);
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    offsets.push_back(offset);
    const AxisSplit ps = split_at(p.shape(), axis);
    const std::size_t chunk = ps.len * ps.inner;
    for (std::size_t o = 0; o < ps.outer; ++o) {
      std::copy_n(p.value().data() + o * chunk, chunk,
                  out.data() + o * os.len * os.inner + offset * os.inner);
    }
    offset += ps.len;
  }
  std::vector<Shape> shapes;
  for (const Var& p : parts) shapes.push_back(p.shape());
  return make_result(std::move(out), parts,
                     [shapes, offsets, axis, os](const Tensor& g, std::span<Tensor* const> gi) {
                       for (std::size_t k = 0; k < gi.size(); ++k) {
                         if (!gi[k]) continue;
                         const AxisSplit ps = split_at(shapes[k], axis);
                         const std::size_t chunk = ps.len * ps.inner;
                         for (std::size_t o = 0; o < ps.outer; ++o) {
                           const double* src = g.data() + o * os.len * os.inner + offsets[k] * os.inner;
                           double* dst = gi[k]->data() + o * chunk;
                           for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") on axis " + std::to_string(axis) +
                         " invalid for " + shape_string(s));
  }
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const AxisSplit is = split_at(s, axis);
  const std::size_t chunk = (end - begin) * is.inner;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < is.outer; ++o) {
    std::copy_n(a.value().data() + o * is.len * is.inner + begin * is.inner, chunk,
                out.data() + o * chunk);
  }
  const Var in[] = {a};
  return make_result(std::move(out), in,
                     [is, begin, chunk](const Tensor& g, std::span<Tensor* const> gi) {
                       if (!gi[0]) return;
                       for (std::size_t o = 0; o < is.outer; ++o) {
                         double* dst = gi[0]->data() + o * is.len * is.inner + begin * is.inner;
                         const double* src = g.data() + o * chunk;
                         for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                       }
                     });
}

Var broadcast(const Var& a, const Shape& shape) {
  const Shape& s = a.shape();
  if (s.size() > shape.size()) {
    throw DimensionError("broadcast: cannot broadcast " + shape_string(s) + " to " +
                         shape_string(shape));
  }
  const std::size_t lead = shape.size() - s.size();
  // Source stride for each output axis; 0 on broadcast axes.
  std::vector<std::size_t> src_stride(shape.size(), 0);
  std::size_t stride = 1;
  for (std::size_t d = s.size(); d-- > 0;) {
    const std::size_t od = d + lead;
    if (s[d] == shape[od]) {
      src_stride[od] = stride;
    } else if (s[d] != 1) {
      throw DimensionError("broadcast: cannot broadcast " + shape_string(s) + " to " +
                           shape_string(shape));
    }
    stride *= s[d];
  }
  const std::size_t total = shape_size(shape);
  auto index = std::make_shared<std::vector<std::size_t>>(total);
  std::vector<std::size_t> counter(shape.size(), 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < total; ++i) {
    (*index)[i] = src;
    for (std::size_t d = shape.size(); d-- > 0;) {
      ++counter[d];
      src += src_stride[d];
      if (counter[d] < shape[d]) break;
      src -= src_stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  Tensor out(shape);
  const double* av = a.value().data();
  for (std::size_t i = 0; i < total; ++i) out[i] = av[(*index)[i]];
  const Var in[] = {a};
  return make_result(std::move(out), in, [index](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    double* ga = gi[0]->data();
    for (std::size_t i = 0; i < index->size(); ++i) ga[(*index)[i]] += g[i];
  });
}

Var l2_norm_lastdim(const Var& a) {
  require_nonscalar("l2_norm_lastdim", a);
  const std::size_t cols = a.shape().back();
  const std::size_t rows = cols ? a.value().size() / cols : 0;
  Tensor out(Shape(a.shape().begin(), a.shape().end() - 1));
  const double* x = a.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += x[r * cols + c] * x[r * cols + c];
    out[r] = std::sqrt(acc);
  }
  auto result = std::make_shared<Tensor>(out);
  const Var in[] = {a};
  return make_result(std::move(out), in,
                     [a, result, rows, cols](const Tensor& g, std::span<Tensor* const> gi) {
                       if (!gi[0]) return;
                       const double* x = a.value().data();
                       double* ga = gi[0]->data();
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double n = (*result)[r];
                         if (n == 0.0) continue;
                         for (std::size_t c = 0; c < cols; ++c) {
                           ga[r * cols + c] += g[r] * x[r * cols + c] / n;
                         }
                       }
                     });
}

Var sum_axis(const Var& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) {
    throw DimensionError("sum_axis: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(s));
  }
  const AxisSplit sp = split_at(s, axis);
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(out_shape);
  const double* x = a.value().data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += x[(o * sp.len + l) * sp.inner + i];
  const Var in[] = {a};
  return make_result(std::move(out), in, [sp](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    double* ga = gi[0]->data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t l = 0; l < sp.len; ++l)
        for (std::size_t i = 0; i < sp.inner; ++i)
          ga[(o * sp.len + l) * sp.inner + i] += g[o * sp.inner + i];
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const Var in[] = {a};
  return make_result(std::move(out), in, [](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    double* ga = gi[0]->data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

}  // namespace ops

double check_gradients(const ScalarFunction& fn, std::span<const Tensor> point, double h) {
  if (!(h > 0.0)) throw UsageError("check_gradients: step h must be positive");
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& t : point) leaves.push_back(tape.leaf(t));
  const Var out = fn(leaves);
  if (!out.shape().empty()) {
    throw UsageError("check_gradients: function output must be rank-0, got " +
                     shape_string(out.shape()));
  }
  // An untracked output does not depend on any input; its gradient is zero.
  std::vector<Tensor> analytic;
  if (out.tracked()) {
    const Gradients grads = tape.backward(out);
    for (const Var& l : leaves) analytic.push_back(grads.of(l));
  } else {
    for (const Tensor& t : point) analytic.emplace_back(t.shape());
  }

  std::vector<Var> probe;
  for (const Tensor& t : point) probe.push_back(constant(t));
  double worst = 0.0;
  for (std::size_t k = 0; k < point.size(); ++k) {
    for (std::size_t i = 0; i < point[k].size(); ++i) {
      Tensor plus = point[k];
      Tensor minus = point[k];
      plus[i] += h;
      minus[i] -= h;
      probe[k] = constant(std::move(plus));
      const double fp = fn(probe).value().item();
      probe[k] = constant(std::move(minus));
      const double fm = fn(probe).value().item();
      probe[k] = constant(point[k]);
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace atmgcn
