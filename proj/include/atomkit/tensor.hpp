#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "atomkit/errors.hpp"

namespace atomkit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad, accumulates into inputs' grads.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major float64 array with an optional reverse-mode tape.
///
/// A Tensor is a cheap handle; copies share storage. Leaves created with
/// requires_grad accumulate gradients across backward() calls until
/// zero_grad() is called.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Only valid for tensors that are not interior nodes of a live graph.
  std::span<double> mutable_data();
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  bool has_grad() const;

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  void zero_grad();

  // Copy of the values with no graph attached.
  Tensor detach() const;
  // Fresh deep copy preserving requires_grad (leaf).
  Tensor clone() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Runs reverse-mode accumulation from a scalar loss.
void backward(const Tensor& loss);

/// While alive, ops on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- differentiable ops ---------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// a * s where s holds a single element.
Tensor mul_scalar(const Tensor& a, const Tensor& s);
// a[..., n] + bias[n]
Tensor add_bias(const Tensor& a, const Tensor& bias);
Tensor square(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// [m,k]x[k,n] or batched [g,m,k]x[g,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T over the last two axes: [m,k]x[n,k] or [g,m,k]x[g,n,k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps = 1e-6);
/// Splits the last axis into halves (a, b) and returns a * silu(b).
Tensor swiglu(const Tensor& x);
/// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64& rng);

/// Concatenates rank-2 tensors with equal row counts along columns.
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Columns [begin, end) of a rank-2 tensor.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
/// Rows of a rank-2 table selected by index (embedding lookup).
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);
/// Stacks `copies` copies of a rank-2 tensor vertically.
Tensor tile_rows(const Tensor& x, std::size_t copies);

/// [g*t, h*d] -> [g*h, t, d] for `groups` independent row blocks.
Tensor split_heads(const Tensor& x, std::size_t heads, std::size_t groups = 1);
/// [g*h, t, d] -> [g*t, h*d]
Tensor merge_heads(const Tensor& x, std::size_t heads);

/// Pairwise rotation of the last axis of x = [g*h, t, d]: coordinates
/// (2k, 2k+1) of row r in group g are rotated by the angle whose cosine and
/// sine sit at [(g*t + r) * d/2 + k] in the tables. Shared by all heads.
Tensor rotate_pairs(const Tensor& x, std::span<const double> cos_table,
                    std::span<const double> sin_table, std::size_t heads);

/// Equivariant channel mix of stacked 3-vectors.
/// vectors: [t, 3*n_in], channel c at columns 3c..3c+2; weights: [n_in, n_out].
/// out[t, 3*o + a] = sum_c weights[c, o] * vectors[t, 3*c + a].
Tensor vector_mix(const Tensor& vectors, const Tensor& weights);

}  // namespace atomkit
