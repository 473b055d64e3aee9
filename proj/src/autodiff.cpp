#include "flowcast/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <unordered_set>

#include "flowcast/rng.hpp"

namespace flowcast::ad {

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i)
    out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  std::size_t n = 1;
  for (std::size_t d : shape_) n *= d;
  data_.assign(n, fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  std::size_t n = 1;
  for (std::size_t d : shape_) n *= d;
  if (n != data_.size())
    throw ShapeError("tensor: " + std::to_string(data_.size()) +
                     " values for shape " + shape_str(shape_));
}

Tensor& Node::ensure_grad() {
  if (!has_grad) {
    grad = Tensor::zeros_like(value);
    has_grad = true;
  }
  return grad;
}

Tensor Var::grad() const {
  if (!node_->has_grad) return Tensor::zeros_like(node_->value);
  return node_->grad;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var param(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

namespace {

NodePtr make_op(const char* op, Tensor value, std::vector<NodePtr> inputs,
                std::function<void(Node&)> backfn) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  for (const auto& in : n->inputs)
    if (in->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backfn = std::move(backfn);
  return n;
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (!a.value().same_shape(b.value()))
    throw ShapeError(std::string(op) + ": shapes differ " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Decompose a shape around `axis` into (outer, len, inner) so axis-wise ops
// are rank-agnostic.
struct AxisView {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
  AxisView v;
  v.len = s[axis];
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

// C(m,n) += A(m,k) * B(k,n)
void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA(m,k) += dC(m,n) * B(k,n)^T
void gemm_acc_bt(const double* dc, const double* b, double* da, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* dcrow = dc + i * n;
    double* darow = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
      darow[p] += acc;
    }
  }
}

// dB(k,n) += A(m,k)^T * dC(m,n)
void gemm_acc_at(const double* a, const double* dc, double* db, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* dcrow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* dbrow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return Var(make_op("add", std::move(out), {a.node(), b.node()},
                     [](Node& self) {
                       for (int s = 0; s < 2; ++s) {
                         Node& in = *self.inputs[s];
                         if (!in.requires_grad) continue;
                         Tensor& g = in.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += self.grad[i];
                       }
                     }));
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return Var(make_op("sub", std::move(out), {a.node(), b.node()},
                     [](Node& self) {
                       if (self.inputs[0]->requires_grad) {
                         Tensor& g = self.inputs[0]->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += self.grad[i];
                       }
                       if (self.inputs[1]->requires_grad) {
                         Tensor& g = self.inputs[1]->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] -= self.grad[i];
                       }
                     }));
}

Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
  return Var(make_op("scale", std::move(out), {a.node()}, [c](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
  }));
}

Var matmul(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const auto fail = [&] {
    throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " x " +
                     shape_str(sb));
  };

  std::size_t batch = 1, m, k, n;
  bool a3 = sa.size() == 3, b3 = sb.size() == 3;
  if (sa.size() == 2 && sb.size() == 2) {
    m = sa[0], k = sa[1], n = sb[1];
    if (sb[0] != k) fail();
  } else if (a3 && sb.size() == 2) {
    batch = sa[0], m = sa[1], k = sa[2], n = sb[1];
    if (sb[0] != k) fail();
  } else if (a3 && b3) {
    batch = sa[0], m = sa[1], k = sa[2], n = sb[2];
    if (sb[0] != batch || sb[1] != k) fail();
  } else {
    fail();
    return Var();  // unreachable
  }

  Shape out_shape = a3 ? Shape{batch, m, n} : Shape{m, n};
  Tensor out(out_shape);
  for (std::size_t bi = 0; bi < batch; ++bi)
    gemm_acc(a.value().data() + bi * m * k,
             b.value().data() + (b3 ? bi * k * n : 0), out.data() + bi * m * n,
             m, k, n);

  return Var(make_op(
      "matmul", std::move(out), {a.node(), b.node()},
      [batch, m, k, n, b3](Node& self) {
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        for (std::size_t bi = 0; bi < batch; ++bi) {
          const double* dc = self.grad.data() + bi * m * n;
          if (na.requires_grad)
            gemm_acc_bt(dc, nb.value.data() + (b3 ? bi * k * n : 0),
                        na.ensure_grad().data() + bi * m * k, m, k, n);
          if (nb.requires_grad)
            gemm_acc_at(na.value.data() + bi * m * k, dc,
                        nb.ensure_grad().data() + (b3 ? bi * k * n : 0), m, k,
                        n);
        }
      }));
}

namespace {

void transpose_block(const double* src, double* dst, std::size_t r,
                     std::size_t c) {
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
}

}  // namespace

Var transpose(const Var& a) {
  const Shape& s = a.shape();
  if (s.size() < 2)
    throw ShapeError("transpose: needs rank >= 2, got " + shape_str(s));
  const std::size_t batch = s.size() == 3 ? s[0] : 1;
  const std::size_t r = s[s.size() - 2], c = s[s.size() - 1];
  Shape out_shape = s;
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  Tensor out(out_shape);
  for (std::size_t bi = 0; bi < batch; ++bi)
    transpose_block(a.value().data() + bi * r * c, out.data() + bi * r * c, r,
                    c);
  return Var(make_op("transpose", std::move(out), {a.node()},
                     [batch, r, c](Node& self) {
                       Node& in = *self.inputs[0];
                       if (!in.requires_grad) return;
                       Tensor& g = in.ensure_grad();
                       // transpose of the gradient routes it back
                       for (std::size_t bi = 0; bi < batch; ++bi) {
                         const double* src = self.grad.data() + bi * r * c;
                         double* dst = g.data() + bi * r * c;
                         for (std::size_t i = 0; i < c; ++i)
                           for (std::size_t j = 0; j < r; ++j)
                             dst[j * c + i] += src[i * r + j];
                       }
                     }));
}

Var concat_many(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size())
    throw ShapeError("concat: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(s0));
  std::size_t total_len = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size())
      throw ShapeError("concat: rank mismatch " + shape_str(s0) + " vs " +
                       shape_str(s));
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != s0[i])
        throw ShapeError("concat: shapes differ off-axis " + shape_str(s0) +
                         " vs " + shape_str(s));
    total_len += s[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total_len;
  Tensor out(out_shape);
  const AxisView v = axis_view(out_shape, axis);

  std::vector<NodePtr> inputs;
  std::vector<std::size_t> lens;
  inputs.reserve(parts.size());
  for (const auto& p : parts) {
    inputs.push_back(p.node());
    lens.push_back(p.shape()[axis]);
  }
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const double* src =
          parts[pi].value().data() + o * lens[pi] * v.inner;
      double* dst = out.data() + (o * v.len + off) * v.inner;
      std::memcpy(dst, src, lens[pi] * v.inner * sizeof(double));
      off += lens[pi];
    }
  }

  return Var(make_op("concat", std::move(out), std::move(inputs),
                     [v, lens](Node& self) {
                       for (std::size_t o = 0; o < v.outer; ++o) {
                         std::size_t off = 0;
                         for (std::size_t pi = 0; pi < self.inputs.size();
                              ++pi) {
                           Node& in = *self.inputs[pi];
                           if (in.requires_grad) {
                             Tensor& g = in.ensure_grad();
                             const double* src =
                                 self.grad.data() + (o * v.len + off) * v.inner;
                             double* dst = g.data() + o * lens[pi] * v.inner;
                             for (std::size_t i = 0; i < lens[pi] * v.inner;
                                  ++i)
                               dst[i] += src[i];
                           }
                           off += lens[pi];
                         }
                       }
                     }));
}

Var slice(const Var& a, std::size_t axis, std::size_t start,
          std::size_t stop) {
  const Shape& s = a.shape();
  if (axis >= s.size() || start >= stop || stop > s[axis])
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(stop) + ") on axis " +
                     std::to_string(axis) + " invalid for " + shape_str(s));
  Shape out_shape = s;
  out_shape[axis] = stop - start;
  const AxisView v = axis_view(s, axis);
  const std::size_t len = stop - start;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < v.outer; ++o)
    std::memcpy(out.data() + o * len * v.inner,
                a.value().data() + (o * v.len + start) * v.inner,
                len * v.inner * sizeof(double));
  return Var(make_op("slice", std::move(out), {a.node()},
                     [v, start, len](Node& self) {
                       Node& in = *self.inputs[0];
                       if (!in.requires_grad) return;
                       Tensor& g = in.ensure_grad();
                       for (std::size_t o = 0; o < v.outer; ++o) {
                         const double* src = self.grad.data() + o * len * v.inner;
                         double* dst = g.data() + (o * v.len + start) * v.inner;
                         for (std::size_t i = 0; i < len * v.inner; ++i)
                           dst[i] += src[i];
                       }
                     }));
}

Var mean_pool_axis(const Var& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size())
    throw ShapeError("mean_pool_axis: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(s));
  const AxisView v = axis_view(s, axis);
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t l = 0; l < v.len; ++l)
      for (std::size_t i = 0; i < v.inner; ++i)
        out[o * v.inner + i] +=
            a.value()[(o * v.len + l) * v.inner + i] / static_cast<double>(v.len);
  return Var(make_op("mean_pool_axis", std::move(out), {a.node()},
                     [v](Node& self) {
                       Node& in = *self.inputs[0];
                       if (!in.requires_grad) return;
                       Tensor& g = in.ensure_grad();
                       const double inv = 1.0 / static_cast<double>(v.len);
                       for (std::size_t o = 0; o < v.outer; ++o)
                         for (std::size_t l = 0; l < v.len; ++l)
                           for (std::size_t i = 0; i < v.inner; ++i)
                             g[(o * v.len + l) * v.inner + i] +=
                                 inv * self.grad[o * v.inner + i];
                     }));
}

Var softmax_lastaxis(const Var& a) {
  const Shape& s = a.shape();
  if (s.empty()) throw ShapeError("softmax: scalar input");
  const std::size_t d = s.back();
  const std::size_t rows = a.value().size() / d;
  Tensor out = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * d;
    double mx = row[0];
    for (std::size_t i = 1; i < d; ++i) mx = std::max(mx, row[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      row[i] = std::exp(row[i] - mx);
      sum += row[i];
    }
    for (std::size_t i = 0; i < d; ++i) row[i] /= sum;
  }
  return Var(make_op("softmax", std::move(out), {a.node()},
                     [d, rows](Node& self) {
                       Node& in = *self.inputs[0];
                       if (!in.requires_grad) return;
                       Tensor& g = in.ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = self.value.data() + r * d;
                         const double* dy = self.grad.data() + r * d;
                         double dot = 0.0;
                         for (std::size_t i = 0; i < d; ++i) dot += dy[i] * y[i];
                         double* dst = g.data() + r * d;
                         for (std::size_t i = 0; i < d; ++i)
                           dst[i] += y[i] * (dy[i] - dot);
                       }
                     }));
}

Var layer_norm(const Var& a, double eps) {
  const Shape& s = a.shape();
  if (s.empty()) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = s.back();
  const std::size_t rows = a.value().size() / d;
  Tensor out(s);
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.value().data() + r * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += x[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    double* y = out.data() + r * d;
    for (std::size_t i = 0; i < d; ++i) y[i] = (x[i] - mean) * is;
  }
  return Var(make_op(
      "layer_norm", std::move(out), {a.node()},
      [d, rows, inv_std = std::move(inv_std)](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        Tensor& g = in.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = self.value.data() + r * d;
          const double* dy = self.grad.data() + r * d;
          double mean_dy = 0.0, mean_dyy = 0.0;
          for (std::size_t i = 0; i < d; ++i) {
            mean_dy += dy[i];
            mean_dyy += dy[i] * y[i];
          }
          mean_dy /= static_cast<double>(d);
          mean_dyy /= static_cast<double>(d);
          double* dst = g.data() + r * d;
          const double is = inv_std[r];
          for (std::size_t i = 0; i < d; ++i)
            dst[i] += is * (dy[i] - mean_dy - y[i] * mean_dyy);
        }
      }));
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
  return Var(make_op("relu", std::move(out), {a.node()}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in.value[i] > 0.0) g[i] += self.grad[i];
  }));
}

Var gelu(const Var& a) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = out[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
  }
  return Var(make_op("gelu", std::move(out), {a.node()}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    constexpr double inv_sqrt2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = in.value[i];
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      g[i] += (cdf + x * pdf) * self.grad[i];
    }
  }));
}

Var dropout(const Var& a, double p, std::uint64_t seed, bool train) {
  if (p < 0.0 || p >= 1.0)
    throw DomainError("dropout: p must be in [0,1), got " + std::to_string(p));
  if (!train || p == 0.0) return a;  // exact identity, no node added
  const double keep = 1.0 - p;
  rng::Engine eng(seed);
  std::vector<double> mask(a.value().size());
  for (auto& m : mask) m = eng.uniform01() < keep ? 1.0 / keep : 0.0;
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return Var(make_op("dropout", std::move(out), {a.node()},
                     [mask = std::move(mask)](Node& self) {
                       Node& in = *self.inputs[0];
                       if (!in.requires_grad) return;
                       Tensor& g = in.ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += mask[i] * self.grad[i];
                     }));
}

Var unfold(const Var& a, std::size_t window, std::size_t stride) {
  const Shape& s = a.shape();
  if (s.size() != 2)
    throw ShapeError("unfold: expects (batch, length), got " + shape_str(s));
  if (window == 0 || stride == 0 || s[1] < window)
    throw ShapeError("unfold: window " + std::to_string(window) + " stride " +
                     std::to_string(stride) + " invalid for length " +
                     std::to_string(s[1]));
  const std::size_t batch = s[0], length = s[1];
  const std::size_t steps = (length - window) / stride + 1;
  Tensor out({batch, steps, window});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < steps; ++t)
      std::memcpy(out.data() + (b * steps + t) * window,
                  a.value().data() + b * length + t * stride,
                  window * sizeof(double));
  return Var(make_op("unfold", std::move(out), {a.node()},
                     [batch, length, steps, window, stride](Node& self) {
                       Node& in = *self.inputs[0];
                       if (!in.requires_grad) return;
                       Tensor& g = in.ensure_grad();
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t t = 0; t < steps; ++t) {
                           const double* src =
                               self.grad.data() + (b * steps + t) * window;
                           double* dst = g.data() + b * length + t * stride;
                           for (std::size_t i = 0; i < window; ++i)
                             dst[i] += src[i];
                         }
                     }));
}

Var embedding_lookup(const Var& table, const std::vector<std::size_t>& idx) {
  const Shape& s = table.shape();
  if (s.size() != 2)
    throw ShapeError("embedding_lookup: table must be rank 2, got " +
                     shape_str(s));
  for (std::size_t i : idx)
    if (i >= s[0])
      throw ShapeError("embedding_lookup: index " + std::to_string(i) +
                       " out of range " + std::to_string(s[0]));
  const std::size_t d = s[1];
  Tensor out({idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::memcpy(out.data() + r * d, table.value().data() + idx[r] * d,
                d * sizeof(double));
  return Var(make_op("embedding_lookup", std::move(out), {table.node()},
                     [idx, d](Node& self) {
                       Node& in = *self.inputs[0];
                       if (!in.requires_grad) return;
                       Tensor& g = in.ensure_grad();
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         const double* src = self.grad.data() + r * d;
                         double* dst = g.data() + idx[r] * d;
                         for (std::size_t i = 0; i < d; ++i) dst[i] += src[i];
                       }
                     }));
}

namespace {

void check_rowvec(const char* op, const Var& a, const Var& v) {
  if (v.shape().size() != 1 || a.shape().empty() ||
      a.shape().back() != v.shape()[0])
    throw ShapeError(std::string(op) + ": vector " + shape_str(v.shape()) +
                     " does not match last axis of " + shape_str(a.shape()));
}

}  // namespace

Var add_rowvec(const Var& a, const Var& v) {
  check_rowvec("add_rowvec", a, v);
  const std::size_t d = v.shape()[0];
  const std::size_t rows = a.value().size() / d;
  Tensor out = a.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] += v.value()[i];
  return Var(make_op("add_rowvec", std::move(out), {a.node(), v.node()},
                     [d, rows](Node& self) {
                       Node& na = *self.inputs[0];
                       Node& nv = *self.inputs[1];
                       if (na.requires_grad) {
                         Tensor& g = na.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += self.grad[i];
                       }
                       if (nv.requires_grad) {
                         Tensor& g = nv.ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t i = 0; i < d; ++i)
                             g[i] += self.grad[r * d + i];
                       }
                     }));
}

Var mul_rowvec(const Var& a, const Var& v) {
  check_rowvec("mul_rowvec", a, v);
  const std::size_t d = v.shape()[0];
  const std::size_t rows = a.value().size() / d;
  Tensor out = a.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] *= v.value()[i];
  return Var(make_op("mul_rowvec", std::move(out), {a.node(), v.node()},
                     [d, rows](Node& self) {
                       Node& na = *self.inputs[0];
                       Node& nv = *self.inputs[1];
                       if (na.requires_grad) {
                         Tensor& g = na.ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t i = 0; i < d; ++i)
                             g[r * d + i] +=
                                 nv.value[i] * self.grad[r * d + i];
                       }
                       if (nv.requires_grad) {
                         Tensor& g = nv.ensure_grad();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t i = 0; i < d; ++i)
                             g[i] += na.value[r * d + i] * self.grad[r * d + i];
                       }
                     }));
}

Var broadcast_batch(const Var& m, std::size_t batch) {
  const Shape& s = m.shape();
  if (s.size() != 2)
    throw ShapeError("broadcast_batch: expects rank 2, got " + shape_str(s));
  const std::size_t block = m.value().size();
  Tensor out({batch, s[0], s[1]});
  for (std::size_t b = 0; b < batch; ++b)
    std::memcpy(out.data() + b * block, m.value().data(),
                block * sizeof(double));
  return Var(make_op("broadcast_batch", std::move(out), {m.node()},
                     [batch, block](Node& self) {
                       Node& in = *self.inputs[0];
                       if (!in.requires_grad) return;
                       Tensor& g = in.ensure_grad();
                       for (std::size_t b = 0; b < batch; ++b) {
                         const double* src = self.grad.data() + b * block;
                         for (std::size_t i = 0; i < block; ++i)
                           g[i] += src[i];
                       }
                     }));
}

Var reshape(const Var& a, Shape shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  if (n != a.value().size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  Tensor out(std::move(shape), std::vector<double>(a.value().data(),
                                                   a.value().data() +
                                                       a.value().size()));
  return Var(make_op("reshape", std::move(out), {a.node()}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  }));
}

Var mse_loss(const Var& pred, const Var& target) {
  require_same_shape("mse_loss", pred, target);
  const std::size_t n = pred.value().size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.value()[i] - target.value()[i];
    acc += d * d;
  }
  Tensor out = Tensor::scalar(acc / static_cast<double>(n));
  return Var(make_op("mse_loss", std::move(out),
                     {pred.node(), target.node()}, [n](Node& self) {
                       const double up = self.grad[0];
                       Node& np = *self.inputs[0];
                       Node& nt = *self.inputs[1];
                       const double c = 2.0 * up / static_cast<double>(n);
                       if (np.requires_grad) {
                         Tensor& g = np.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i)
                           g[i] += c * (np.value[i] - nt.value[i]);
                       }
                       if (nt.requires_grad) {
                         Tensor& g = nt.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i)
                           g[i] -= c * (np.value[i] - nt.value[i]);
                       }
                     }));
}

Var conv1d(const Var& x, const Var& kernel, const Var& bias,
           std::size_t stride) {
  if (kernel.shape().size() != 2)
    throw ShapeError("conv1d: kernel must be (window, out), got " +
                     shape_str(kernel.shape()));
  Var patches = unfold(x, kernel.shape()[0], stride);
  return add_rowvec(matmul(patches, kernel), bias);
}

void backward(const Var& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined loss");
  Node* root = loss.node().get();
  if (root->value.size() != 1)
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(root->value.shape()));
  if (root->backward_done)
    throw ContractError(
        "backward: already run on this loss; rebuild the graph first");
  root->backward_done = true;
  if (!root->requires_grad) return;  // nothing reachable needs gradients

  // Iterative post-order DFS; the reversed order is topological.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    std::size_t next;
  };
  std::vector<Frame> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->inputs.size()) {
      Node* child = f.node->inputs[f.next++].get();
      if (child->requires_grad && visited.insert(child).second)
        stack.push_back({child, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backfn && node->has_grad) node->backfn(*node);
  }
}

namespace {

template <typename T>
void write_le(std::ofstream& out, T v) {
  // Little-endian byte layout regardless of host order.
  unsigned char buf[sizeof(T)];
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  T v;
  std::memcpy(&v, &bits, sizeof(T));
  return v;
}

constexpr char kMagic[8] = {'F', 'C', 'C', 'K', 'P', 'T', '0', '1'};

}  // namespace

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError(path + ": cannot open for writing");
  out.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape())
      write_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (std::size_t i = 0; i < tensor.size(); ++i)
      write_le<double>(out, tensor[i]);
  }
  if (!out) throw ValidationError(path + ": write failed");
}

std::vector<std::pair<std::string, Tensor>> load_tensors(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path + ": cannot open");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw ValidationError(path + ": not a checkpoint file (bad magic)");
  const auto count = read_le<std::uint32_t>(in);
  std::vector<std::pair<std::string, Tensor>> entries;
  entries.reserve(count);
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = read_le<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rank = read_le<std::uint32_t>(in);
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(read_le<std::uint64_t>(in));
      n *= d;
    }
    std::vector<double> values(n);
    for (auto& v : values) v = read_le<double>(in);
    if (!in) throw ValidationError(path + ": truncated checkpoint");
    entries.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return entries;
}

}  // namespace flowcast::ad
