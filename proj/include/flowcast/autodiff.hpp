#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "flowcast/common.hpp"

namespace flowcast::ad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

// Dense row-major 64-bit tensor, rank <= 3 in practice.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row-major accessors for the common ranks.
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Graph node: forward value plus the rule that routes its gradient to its
// inputs. Nodes form a DAG; backward() walks it once in reverse topological
// order.
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily on first accumulation
  bool has_grad = false;
  bool requires_grad = false;
  bool backward_done = false;  // set on the loss node after a backward pass
  const char* op = "leaf";
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backfn;

  Tensor& ensure_grad();
};

// Value-semantics handle to a graph node.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }

  // Gradient after backward(); a detached (non-param) node reports zeros.
  Tensor grad() const;

  NodePtr node() const { return node_; }

 private:
  NodePtr node_;
};

Var constant(Tensor value);
Var param(Tensor value);  // requires_grad leaf

// ---- primitives ----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double c);
// (m,k)x(k,n), (B,m,k)x(k,n) and (B,m,k)x(B,k,n)
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);  // swaps the last two axes
Var concat_many(const std::vector<Var>& parts, std::size_t axis);
inline Var concat(const Var& a, const Var& b, std::size_t axis) {
  return concat_many({a, b}, axis);
}
Var slice(const Var& a, std::size_t axis, std::size_t start, std::size_t stop);
Var mean_pool_axis(const Var& a, std::size_t axis);
Var softmax_lastaxis(const Var& a);
Var layer_norm(const Var& a, double eps = 1e-5);  // normalize last axis only
Var relu(const Var& a);
Var gelu(const Var& a);
// Inverted dropout, seeded per call; identity when !train or p == 0.
Var dropout(const Var& a, double p, std::uint64_t seed, bool train);
// (B, L) -> (B, L_p, window); trailing L mod stride steps dropped.
Var unfold(const Var& a, std::size_t window, std::size_t stride);
Var embedding_lookup(const Var& table, const std::vector<std::size_t>& idx);
Var add_rowvec(const Var& a, const Var& v);  // broadcast over the last axis
Var mul_rowvec(const Var& a, const Var& v);
Var broadcast_batch(const Var& m, std::size_t batch);  // (r,c) -> (B,r,c)
Var reshape(const Var& a, Shape shape);
Var mse_loss(const Var& pred, const Var& target);  // scalar mean sq. error

// conv1d as unfold + matmul + bias; kernel (window, out), bias (out).
Var conv1d(const Var& x, const Var& kernel, const Var& bias,
           std::size_t stride);

// Reverse-mode pass from a scalar loss. Gradients accumulate into every
// reachable requires_grad node; calling it twice on the same loss throws.
void backward(const Var& loss);

// ---- named-tensor checkpoint ----------------------------------------------
// Single binary file: magic "FCCKPT01", little-endian u32 entry count, then
// per entry u32 name length, name bytes, u32 rank, u64 dims, f64 values.
void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& entries);
std::vector<std::pair<std::string, Tensor>> load_tensors(
    const std::string& path);

}  // namespace flowcast::ad
