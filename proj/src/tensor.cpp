#include "atomkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace atomkit {

namespace {

thread_local bool g_grad_enabled = true;

#if defined(__GLIBC__)
// Tape buffers are freed and reallocated every step; keeping them on the heap
// instead of fresh mmap pages avoids a page-fault storm.
const int g_malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return 0;
}();
#endif

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

// C[m,n] += A[m,k] * B[k,n]. Each output row is accumulated in blocks of 8
// columns held in locals, reduction order over k fixed.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  constexpr std::size_t kBlock = 8;
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    std::size_t j = 0;
    for (; j + kBlock <= n; j += kBlock) {
      double acc[kBlock];
      for (std::size_t q = 0; q < kBlock; ++q) acc[q] = crow[j + q];
      for (std::size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* bp = b + p * n + j;
        for (std::size_t q = 0; q < kBlock; ++q) acc[q] += av * bp[q];
      }
      for (std::size_t q = 0; q < kBlock; ++q) crow[j + q] = acc[q];
    }
    for (; j < n; ++j) {
      double acc = crow[j];
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * b[p * n + j];
      crow[j] = acc;
    }
  }
}

// out[c, r] = in[r, c] for an r x c block.
const double* transposed(const double* in, std::size_t rows, std::size_t cols) {
  thread_local std::vector<double> scratch;
  scratch.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t q = 0; q < cols; ++q) scratch[q * rows + r] = in[r * cols + q];
  return scratch.data();
}

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  gemm_nn(a, transposed(b, n, k), c, m, k, n);
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  gemm_nn(transposed(a, m, k), b, c, k, m, n);
}

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

Tensor make_result(Shape shape, std::vector<double> data, std::vector<NodePtr> inputs,
                   bool track, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (track) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

// Grad buffer of an input node if it participates in the tape.
double* grad_of(const NodePtr& n) {
  if (!n->requires_grad) return nullptr;
  n->ensure_grad();
  return n->grad.data();
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
  auto node = std::make_shared<Node>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
  if (shape_numel(shape) != values.size())
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_string(shape));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("axis out of range");
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  require_defined(*this, "data");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  require_defined(*this, "mutable_data");
  return node_->data;
}

std::span<const double> Tensor::grad() const {
  require_defined(*this, "grad");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  require_defined(*this, "mutable_grad");
  node_->ensure_grad();
  return node_->grad;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_string(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= s[axis]) throw DimensionError("index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  require_defined(*this, "set_requires_grad");
  if (node_->backward) throw ContractError("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = flag;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

Tensor Tensor::clone() const { return from(shape(), node_->data, requires_grad()); }

// ---- tape -----------------------------------------------------------------

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.numel() != 1)
    throw ContractError("backward() requires a scalar loss, got " + shape_string(loss.shape()));
  const NodePtr& root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward) {
      n->ensure_grad();
      std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  bool track = any_requires_grad({&a, &b});
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, track, [](Node& self) {
    for (auto& in : self.inputs)
      if (double* g = grad_of(in))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  bool track = any_requires_grad({&a, &b});
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, track, [](Node& self) {
    if (double* g = grad_of(self.inputs[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = grad_of(self.inputs[1]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  bool track = any_requires_grad({&a, &b});
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, track, [](Node& self) {
    const auto& x = self.inputs[0]->data;
    const auto& y = self.inputs[1]->data;
    if (double* g = grad_of(self.inputs[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * y[i];
    if (double* g = grad_of(self.inputs[1]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * x[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  bool track = any_requires_grad({&a});
  return make_result(a.shape(), std::move(out), {a.node()}, track, [factor](Node& self) {
    if (double* g = grad_of(self.inputs[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("mul_scalar: second operand must hold one element");
  const double sv = s.data()[0];
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= sv;
  bool track = any_requires_grad({&a, &s});
  return make_result(a.shape(), std::move(out), {a.node(), s.node()}, track, [](Node& self) {
    const auto& x = self.inputs[0]->data;
    const double sv = self.inputs[1]->data[0];
    if (double* g = grad_of(self.inputs[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += sv * self.grad[i];
    if (double* g = grad_of(self.inputs[1])) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += x[i] * self.grad[i];
      g[0] += acc;
    }
  });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  const std::size_t n = bias.numel();
  if (a.rank() == 0 || a.shape().back() != n || bias.rank() != 1)
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) +
                         " does not match trailing axis of " + shape_string(a.shape()));
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bd = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i % n];
  bool track = any_requires_grad({&a, &bias});
  return make_result(a.shape(), std::move(out), {a.node(), bias.node()}, track, [n](Node& self) {
    if (double* g = grad_of(self.inputs[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = grad_of(self.inputs[1]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
  });
}

Tensor square(const Tensor& a) { return mul(a, a); }

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-ad[i]));
  bool track = any_requires_grad({&a});
  auto result = make_result(a.shape(), std::move(out), {a.node()}, track, nullptr);
  if (track) {
    result.node()->backward = [](Node& self) {
      if (double* g = grad_of(self.inputs[0]))
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double s = self.data[i];
          g[i] += self.grad[i] * s * (1.0 - s);
        }
    };
  }
  return result;
}

Tensor sum(const Tensor& a) {
  auto ad = a.data();
  double acc = std::accumulate(ad.begin(), ad.end(), 0.0);
  bool track = any_requires_grad({&a});
  return make_result({1}, {acc}, {a.node()}, track, [](Node& self) {
    if (double* g = grad_of(self.inputs[0])) {
      const double gv = self.grad[0];
      for (std::size_t i = 0; i < self.inputs[0]->data.size(); ++i) g[i] += gv;
    }
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  bool track = any_requires_grad({&a});
  return make_result(std::move(shape), std::move(out), {a.node()}, track, [](Node& self) {
    if (double* g = grad_of(self.inputs[0]))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

// ---- matmul ---------------------------------------------------------------

namespace {

struct MatDims {
  std::size_t groups, m, k, n;
};

MatDims matmul_dims(const Tensor& a, const Tensor& b, bool transpose_b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != sb.size() || (sa.size() != 2 && sa.size() != 3))
    throw DimensionError(std::string(op) + ": unsupported ranks " + shape_string(sa) + " x " +
                         shape_string(sb));
  const std::size_t off = sa.size() - 2;
  if (off == 1 && sa[0] != sb[0])
    throw DimensionError(std::string(op) + ": batch mismatch " + shape_string(sa) + " x " +
                         shape_string(sb));
  MatDims d{off ? sa[0] : 1, sa[off], sa[off + 1], transpose_b ? sb[off] : sb[off + 1]};
  const std::size_t bk = transpose_b ? sb[off + 1] : sb[off];
  if (bk != d.k)
    throw DimensionError(std::string(op) + ": inner dimension mismatch " + shape_string(sa) +
                         " x " + shape_string(sb));
  return d;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const MatDims d = matmul_dims(a, b, false, "matmul");
  std::vector<double> out(d.groups * d.m * d.n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t g = 0; g < d.groups; ++g)
    gemm_nn(ad + g * d.m * d.k, bd + g * d.k * d.n, out.data() + g * d.m * d.n, d.m, d.k, d.n);
  Shape shape = a.rank() == 3 ? Shape{d.groups, d.m, d.n} : Shape{d.m, d.n};
  bool track = any_requires_grad({&a, &b});
  return make_result(std::move(shape), std::move(out), {a.node(), b.node()}, track,
                     [d](Node& self) {
                       const double* ad = self.inputs[0]->data.data();
                       const double* bd = self.inputs[1]->data.data();
                       const double* gd = self.grad.data();
                       if (double* ga = grad_of(self.inputs[0]))
                         for (std::size_t g = 0; g < d.groups; ++g)
                           gemm_nt(gd + g * d.m * d.n, bd + g * d.k * d.n, ga + g * d.m * d.k,
                                   d.m, d.n, d.k);
                       if (double* gb = grad_of(self.inputs[1]))
                         for (std::size_t g = 0; g < d.groups; ++g)
                           gemm_tn(ad + g * d.m * d.k, gd + g * d.m * d.n, gb + g * d.k * d.n,
                                   d.m, d.k, d.n);
                     });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const MatDims d = matmul_dims(a, b, true, "matmul_nt");
  std::vector<double> out(d.groups * d.m * d.n, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t g = 0; g < d.groups; ++g)
    gemm_nt(ad + g * d.m * d.k, bd + g * d.n * d.k, out.data() + g * d.m * d.n, d.m, d.k, d.n);
  Shape shape = a.rank() == 3 ? Shape{d.groups, d.m, d.n} : Shape{d.m, d.n};
  bool track = any_requires_grad({&a, &b});
  return make_result(std::move(shape), std::move(out), {a.node(), b.node()}, track,
                     [d](Node& self) {
                       const double* ad = self.inputs[0]->data.data();
                       const double* bd = self.inputs[1]->data.data();
                       const double* gd = self.grad.data();
                       if (double* ga = grad_of(self.inputs[0]))
                         for (std::size_t g = 0; g < d.groups; ++g)
                           gemm_nn(gd + g * d.m * d.n, bd + g * d.n * d.k, ga + g * d.m * d.k,
                                   d.m, d.n, d.k);
                       if (double* gb = grad_of(self.inputs[1]))
                         for (std::size_t g = 0; g < d.groups; ++g)
                           gemm_tn(gd + g * d.m * d.n, ad + g * d.m * d.k, gb + g * d.n * d.k,
                                   d.m, d.n, d.k);
                     });
}

// ---- normalisation & activations -------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size()) throw DimensionError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = xd[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xd[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  bool track = any_requires_grad({&x});
  auto result = make_result(s, std::move(out), {x.node()}, track, nullptr);
  if (track) {
    result.node()->backward = [outer, inner, len](Node& self) {
      double* g = grad_of(self.inputs[0]);
      if (!g) return;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < len; ++j)
            dot += self.grad[base + j * inner] * self.data[base + j * inner];
          for (std::size_t j = 0; j < len; ++j) {
            const std::size_t idx = base + j * inner;
            g[idx] += self.data[idx] * (self.grad[idx] - dot);
          }
        }
    };
  }
  return result;
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  const std::size_t d = gain.numel();
  if (x.rank() == 0 || x.shape().back() != d || gain.rank() != 1)
    throw DimensionError("rms_norm: gain " + shape_string(gain.shape()) +
                         " does not match trailing axis of " + shape_string(x.shape()));
  const std::size_t rows = x.numel() / d;
  auto xd = x.data();
  auto gd = gain.data();
  std::vector<double> out(x.numel());
  std::vector<double> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += xd[r * d + j] * xd[r * d + j];
    const double rms = std::sqrt(ss / static_cast<double>(d) + eps);
    inv_rms[r] = rms > 0.0 ? 1.0 / rms : 0.0;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xd[r * d + j] * inv_rms[r] * gd[j];
  }
  bool track = any_requires_grad({&x, &gain});
  return make_result(
      x.shape(), std::move(out), {x.node(), gain.node()}, track,
      [d, rows, inv_rms = std::move(inv_rms)](Node& self) {
        const auto& xv = self.inputs[0]->data;
        const auto& gv = self.inputs[1]->data;
        double* gx = grad_of(self.inputs[0]);
        double* gg = grad_of(self.inputs[1]);
        for (std::size_t r = 0; r < rows; ++r) {
          const double ir = inv_rms[r];
          double dot = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double xhat = xv[r * d + j] * ir;
            const double dy = self.grad[r * d + j];
            if (gg) gg[j] += dy * xhat;
            dot += dy * gv[j] * xhat;
          }
          if (gx) {
            const double m = dot / static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double xhat = xv[r * d + j] * ir;
              gx[r * d + j] += (self.grad[r * d + j] * gv[j] - xhat * m) * ir;
            }
          }
        }
      });
}

Tensor swiglu(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() % 2 != 0)
    throw DimensionError("swiglu: trailing axis must be even, got " + shape_string(x.shape()));
  const std::size_t two_d = x.shape().back();
  const std::size_t d = two_d / 2;
  const std::size_t rows = x.numel() / two_d;
  Shape shape = x.shape();
  shape.back() = d;
  auto xd = x.data();
  std::vector<double> out(rows * d);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      const double a = xd[r * two_d + j];
      const double b = xd[r * two_d + d + j];
      const double sig = 1.0 / (1.0 + std::exp(-b));
      out[r * d + j] = a * b * sig;
    }
  bool track = any_requires_grad({&x});
  return make_result(std::move(shape), std::move(out), {x.node()}, track,
                     [rows, d, two_d](Node& self) {
                       double* g = grad_of(self.inputs[0]);
                       if (!g) return;
                       const auto& xv = self.inputs[0]->data;
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < d; ++j) {
                           const double a = xv[r * two_d + j];
                           const double b = xv[r * two_d + d + j];
                           const double sig = 1.0 / (1.0 + std::exp(-b));
                           const double dy = self.grad[r * d + j];
                           g[r * two_d + j] += dy * b * sig;
                           g[r * two_d + d + j] += dy * a * sig * (1.0 + b * (1.0 - sig));
                         }
                     });
}

Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const double factor = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = keep(rng) ? factor : 0.0;
  auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  bool track = any_requires_grad({&x});
  return make_result(x.shape(), std::move(out), {x.node()}, track,
                     [mask = std::move(mask)](Node& self) {
                       if (double* g = grad_of(self.inputs[0]))
                         for (std::size_t i = 0; i < mask.size(); ++i)
                           g[i] += self.grad[i] * mask[i];
                     });
}

// ---- layout ---------------------------------------------------------------

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  std::vector<NodePtr> inputs;
  bool track = false;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows)
      throw DimensionError("concat_cols: incompatible part " + shape_string(p.shape()));
    widths.push_back(p.dim(1));
    total += p.dim(1);
    inputs.push_back(p.node());
    track = track || (g_grad_enabled && p.requires_grad());
  }
  std::vector<double> out(rows * total);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pd = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pd.begin() + r * widths[k], widths[k], out.begin() + r * total + col);
    col += widths[k];
  }
  return make_result({rows, total}, std::move(out), std::move(inputs), track,
                     [rows, total, widths](Node& self) {
                       std::size_t col = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         if (double* g = grad_of(self.inputs[k]))
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < widths[k]; ++j)
                               g[r * widths[k] + j] += self.grad[r * total + col + j];
                         col += widths[k];
                       }
                     });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() != 2 || begin >= end || end > x.dim(1))
    throw DimensionError("slice_cols: bad range on " + shape_string(x.shape()));
  const std::size_t rows = x.dim(0);
  const std::size_t cols = x.dim(1);
  const std::size_t w = end - begin;
  auto xd = x.data();
  std::vector<double> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xd.begin() + r * cols + begin, w, out.begin() + r * w);
  bool track = any_requires_grad({&x});
  return make_result({rows, w}, std::move(out), {x.node()}, track,
                     [rows, cols, w, begin](Node& self) {
                       if (double* g = grad_of(self.inputs[0]))
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < w; ++j)
                             g[r * cols + begin + j] += self.grad[r * w + j];
                     });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  if (table.rank() != 2) throw DimensionError("gather_rows: table must be rank 2");
  if (rows.empty()) throw DimensionError("gather_rows: no rows requested");
  const std::size_t width = table.dim(1);
  auto td = table.data();
  std::vector<double> out(rows.size() * width);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= table.dim(0)) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(td.begin() + idx[r] * width, width, out.begin() + r * width);
  }
  bool track = any_requires_grad({&table});
  const std::size_t count = idx.size();
  return make_result({count, width}, std::move(out), {table.node()}, track,
                     [width, idx = std::move(idx)](Node& self) {
                       if (double* g = grad_of(self.inputs[0]))
                         for (std::size_t r = 0; r < idx.size(); ++r)
                           for (std::size_t j = 0; j < width; ++j)
                             g[idx[r] * width + j] += self.grad[r * width + j];
                     });
}

Tensor tile_rows(const Tensor& x, std::size_t copies) {
  if (x.rank() != 2 || copies == 0) throw DimensionError("tile_rows: rank-2 input and copies >= 1");
  const std::size_t block = x.numel();
  auto xd = x.data();
  std::vector<double> out(block * copies);
  for (std::size_t c = 0; c < copies; ++c) std::copy(xd.begin(), xd.end(), out.begin() + c * block);
  bool track = any_requires_grad({&x});
  return make_result({x.dim(0) * copies, x.dim(1)}, std::move(out), {x.node()}, track,
                     [block, copies](Node& self) {
                       if (double* g = grad_of(self.inputs[0]))
                         for (std::size_t c = 0; c < copies; ++c)
                           for (std::size_t i = 0; i < block; ++i)
                             g[i] += self.grad[c * block + i];
                     });
}

Tensor split_heads(const Tensor& x, std::size_t heads, std::size_t groups) {
  if (x.rank() != 2 || heads == 0 || groups == 0 || x.dim(1) % heads != 0 ||
      x.dim(0) % groups != 0)
    throw DimensionError("split_heads: " + shape_string(x.shape()) + " not divisible into " +
                         std::to_string(groups) + " groups of " + std::to_string(heads) +
                         " heads");
  const std::size_t t = x.dim(0) / groups;
  const std::size_t d = x.dim(1) / heads;
  const std::size_t width = heads * d;
  auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t r = 0; r < t; ++r)
        std::copy_n(xd.begin() + (g * t + r) * width + h * d, d,
                    out.begin() + ((g * heads + h) * t + r) * d);
  bool track = any_requires_grad({&x});
  return make_result({groups * heads, t, d}, std::move(out), {x.node()}, track,
                     [groups, heads, t, d, width](Node& self) {
                       if (double* gx = grad_of(self.inputs[0]))
                         for (std::size_t g = 0; g < groups; ++g)
                           for (std::size_t h = 0; h < heads; ++h)
                             for (std::size_t r = 0; r < t; ++r) {
                               const double* src =
                                   self.grad.data() + ((g * heads + h) * t + r) * d;
                               double* dst = gx + (g * t + r) * width + h * d;
                               for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                             }
                     });
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
  if (x.rank() != 3 || heads == 0 || x.dim(0) % heads != 0)
    throw DimensionError("merge_heads: expected [g*h, t, d], got " + shape_string(x.shape()));
  const std::size_t groups = x.dim(0) / heads, t = x.dim(1), d = x.dim(2);
  const std::size_t width = heads * d;
  auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t r = 0; r < t; ++r)
        std::copy_n(xd.begin() + ((g * heads + h) * t + r) * d, d,
                    out.begin() + (g * t + r) * width + h * d);
  bool track = any_requires_grad({&x});
  return make_result({groups * t, width}, std::move(out), {x.node()}, track,
                     [groups, heads, t, d, width](Node& self) {
                       if (double* gx = grad_of(self.inputs[0]))
                         for (std::size_t g = 0; g < groups; ++g)
                           for (std::size_t h = 0; h < heads; ++h)
                             for (std::size_t r = 0; r < t; ++r) {
                               const double* src = self.grad.data() + (g * t + r) * width + h * d;
                               double* dst = gx + ((g * heads + h) * t + r) * d;
                               for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                             }
                     });
}

Tensor rotate_pairs(const Tensor& x, std::span<const double> cos_table,
                    std::span<const double> sin_table, std::size_t heads) {
  if (x.rank() != 3 || x.dim(2) % 2 != 0 || heads == 0 || x.dim(0) % heads != 0)
    throw DimensionError("rotate_pairs: expected [g*h, t, d] with even d, got " +
                         shape_string(x.shape()));
  const std::size_t blocks = x.dim(0), t = x.dim(1), half = x.dim(2) / 2;
  const std::size_t groups = blocks / heads;
  if (cos_table.size() != groups * t * half || sin_table.size() != groups * t * half)
    throw DimensionError("rotate_pairs: angle table does not match " + shape_string(x.shape()));
  auto c = std::make_shared<std::vector<double>>(cos_table.begin(), cos_table.end());
  auto s = std::make_shared<std::vector<double>>(sin_table.begin(), sin_table.end());
  auto xd = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t row0 = (b / heads) * t;
    for (std::size_t r = 0; r < t; ++r)
      for (std::size_t k = 0; k < half; ++k) {
        const std::size_t i = ((b * t + r) * half + k) * 2;
        const std::size_t a = (row0 + r) * half + k;
        const double cv = (*c)[a], sv = (*s)[a];
        out[i] = cv * xd[i] - sv * xd[i + 1];
        out[i + 1] = sv * xd[i] + cv * xd[i + 1];
      }
  }
  bool track = any_requires_grad({&x});
  return make_result(x.shape(), std::move(out), {x.node()}, track,
                     [blocks, heads, t, half, c, s](Node& self) {
                       double* g = grad_of(self.inputs[0]);
                       if (!g) return;
                       for (std::size_t b = 0; b < blocks; ++b) {
                         const std::size_t row0 = (b / heads) * t;
                         for (std::size_t r = 0; r < t; ++r)
                           for (std::size_t k = 0; k < half; ++k) {
                             const std::size_t i = ((b * t + r) * half + k) * 2;
                             const std::size_t a = (row0 + r) * half + k;
                             const double cv = (*c)[a], sv = (*s)[a];
                             g[i] += cv * self.grad[i] + sv * self.grad[i + 1];
                             g[i + 1] += -sv * self.grad[i] + cv * self.grad[i + 1];
                           }
                       }
                     });
}

Tensor vector_mix(const Tensor& vectors, const Tensor& weights) {
  if (vectors.rank() != 2 || weights.rank() != 2 || vectors.dim(1) != 3 * weights.dim(0))
    throw DimensionError("vector_mix: " + shape_string(vectors.shape()) + " with weights " +
                         shape_string(weights.shape()));
  const std::size_t t = vectors.dim(0), n_in = weights.dim(0), n_out = weights.dim(1);
  auto vd = vectors.data();
  auto wd = weights.data();
  std::vector<double> out(t * 3 * n_out, 0.0);
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t c = 0; c < n_in; ++c)
      for (std::size_t o = 0; o < n_out; ++o) {
        const double w = wd[c * n_out + o];
        for (std::size_t a = 0; a < 3; ++a)
          out[r * 3 * n_out + 3 * o + a] += w * vd[r * 3 * n_in + 3 * c + a];
      }
  bool track = any_requires_grad({&vectors, &weights});
  return make_result({t, 3 * n_out}, std::move(out), {vectors.node(), weights.node()}, track,
                     [t, n_in, n_out](Node& self) {
                       const auto& vv = self.inputs[0]->data;
                       const auto& wv = self.inputs[1]->data;
                       double* gv = grad_of(self.inputs[0]);
                       double* gw = grad_of(self.inputs[1]);
                       for (std::size_t r = 0; r < t; ++r)
                         for (std::size_t c = 0; c < n_in; ++c)
                           for (std::size_t o = 0; o < n_out; ++o)
                             for (std::size_t a = 0; a < 3; ++a) {
                               const double go = self.grad[r * 3 * n_out + 3 * o + a];
                               if (gv) gv[r * 3 * n_in + 3 * c + a] += wv[c * n_out + o] * go;
                               if (gw) gw[c * n_out + o] += vv[r * 3 * n_in + 3 * c + a] * go;
                             }
                     });
}

}  // namespace atomkit
