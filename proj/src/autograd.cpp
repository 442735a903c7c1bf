#include "stdn/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace stdn::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

// Position of a given parent in the node, or nullptr when that parent does
// not take gradients. Parents are stored only when the op requires grad.
Node* grad_parent(Node& self, std::size_t i) {
  if (i >= self.parents.size()) return nullptr;
  Node& p = *self.parents[i];
  return p.requires_grad ? &p : nullptr;
}

std::size_t prefix_count(const Shape& x, const Shape& prefix, const char* op) {
  if (prefix.size() > x.size()) throw std::invalid_argument(std::string(op) + ": broadcast shape too long");
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (prefix[i] != x[i]) {
      throw std::invalid_argument(std::string(op) + ": " + shape_str(prefix) + " is not a prefix of " +
                                  shape_str(x));
    }
  }
  return shape_numel(prefix);
}

// im2col for one NHWC frame. cols is [Ho*Wo, kh*kw*Cin].
void im2col(const double* x, int h, int w, int cin, int kh, int kw, int stride, int pad, int ho, int wo,
            double* cols) {
  const std::size_t row_len = static_cast<std::size_t>(kh) * kw * cin;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      double* row = cols + (static_cast<std::size_t>(oy) * wo + ox) * row_len;
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride - pad + ky;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride - pad + kx;
          double* dst = row + (static_cast<std::size_t>(ky) * kw + kx) * cin;
          if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
            std::fill(dst, dst + cin, 0.0);
          } else {
            const double* src = x + (static_cast<std::size_t>(iy) * w + ix) * cin;
            std::copy(src, src + cin, dst);
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, int h, int w, int cin, int kh, int kw, int stride, int pad, int ho, int wo,
                double* dx) {
  const std::size_t row_len = static_cast<std::size_t>(kh) * kw * cin;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const double* row = cols + (static_cast<std::size_t>(oy) * wo + ox) * row_len;
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= w) continue;
          const double* src = row + (static_cast<std::size_t>(ky) * kw + kx) * cin;
          double* dst = dx + (static_cast<std::size_t>(iy) * w + ix) * cin;
          for (int c = 0; c < cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (!g_grad_enabled) return Var(std::move(node));
  for (const Var& p : parents) {
    if (p.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (const Var& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (!root.defined()) throw std::invalid_argument("backward: undefined root");
  if (root.value().size() != 1) throw std::invalid_argument("backward: root must be a scalar");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    node->backward(*node);
    // Interior gradients are no longer needed once propagated.
    node->grad = Tensor();
  }
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Node* p = grad_parent(self, k)) {
        Tensor& g = p->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    if (Node* p = grad_parent(self, 0)) {
      Tensor& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (Node* p = grad_parent(self, 1)) {
      Tensor& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = parent(self, 0).value;
    const Tensor& bv = parent(self, 1).value;
    if (Node* p = grad_parent(self, 0)) {
      Tensor& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (Node* p = grad_parent(self, 1)) {
      Tensor& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = x.value();
  for (double& v : out.values()) v *= factor;
  return make_op(std::move(out), {x}, [factor](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Var add_scalar(const Var& x, double c) {
  Tensor out = x.value();
  for (double& v : out.values()) v += c;
  return make_op(std::move(out), {x}, [](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_op(std::move(out), {x}, [](Node& self) {
    const Tensor& xv = parent(self, 0).value;
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return make_op(std::move(out), {x}, [](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = self.value[i];
      g[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Var log_eps(const Var& x, double eps) {
  Tensor out = x.value();
  for (double& v : out.values()) v = std::log(v + eps);
  return make_op(std::move(out), {x}, [eps](Node& self) {
    const Tensor& xv = parent(self, 0).value;
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / (xv[i] + eps);
  });
}

Var mul_prefix(const Var& x, const Var& s) {
  const std::size_t outer = prefix_count(x.shape(), s.shape(), "mul_prefix");
  const std::size_t inner = outer ? x.value().size() / outer : 0;
  Tensor out = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    const double f = s.value()[o];
    for (std::size_t j = 0; j < inner; ++j) out[o * inner + j] *= f;
  }
  return make_op(std::move(out), {x, s}, [outer, inner](Node& self) {
    const Tensor& xv = parent(self, 0).value;
    const Tensor& sv = parent(self, 1).value;
    if (Node* p = grad_parent(self, 0)) {
      Tensor& g = p->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < inner; ++j) g[o * inner + j] += self.grad[o * inner + j] * sv[o];
    }
    if (Node* p = grad_parent(self, 1)) {
      Tensor& g = p->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        double acc = 0.0;
        for (std::size_t j = 0; j < inner; ++j) acc += self.grad[o * inner + j] * xv[o * inner + j];
        g[o] += acc;
      }
    }
  });
}

Var div_prefix(const Var& x, const Var& s) {
  const std::size_t outer = prefix_count(x.shape(), s.shape(), "div_prefix");
  const std::size_t inner = outer ? x.value().size() / outer : 0;
  Tensor out = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    const double f = s.value()[o];
    for (std::size_t j = 0; j < inner; ++j) out[o * inner + j] /= f;
  }
  return make_op(std::move(out), {x, s}, [outer, inner](Node& self) {
    const Tensor& sv = parent(self, 1).value;
    if (Node* p = grad_parent(self, 0)) {
      Tensor& g = p->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < inner; ++j) g[o * inner + j] += self.grad[o * inner + j] / sv[o];
    }
    if (Node* p = grad_parent(self, 1)) {
      Tensor& g = p->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        // d(x/s)/ds = -(x/s)/s, and self.value already holds x/s.
        double acc = 0.0;
        for (std::size_t j = 0; j < inner; ++j) acc += self.grad[o * inner + j] * self.value[o * inner + j];
        g[o] -= acc / sv[o];
      }
    }
  });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return make_op(Tensor({}, std::vector<double>{total}), {x}, [](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    const double d = self.grad[0];
    for (double& v : g.values()) v += d;
  });
}

Var mean(const Var& x) {
  const std::size_t n = x.value().size();
  require(n > 0, "mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var sum_axis(const Var& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + normalize_axis(x.shape(), axis));
  Tensor out(out_shape, 0.0);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t l = 0; l < v.len; ++l)
      for (std::size_t i = 0; i < v.inner; ++i) out[o * v.inner + i] += xv[(o * v.len + l) * v.inner + i];
  return make_op(std::move(out), {x}, [v](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t l = 0; l < v.len; ++l)
        for (std::size_t i = 0; i < v.inner; ++i) g[(o * v.len + l) * v.inner + i] += self.grad[o * v.inner + i];
  });
}

Var mean_axis(const Var& x, int axis) {
  const int len = x.value().dim(axis);
  require(len > 0, "mean_axis: empty axis");
  return scale(sum_axis(x, axis), 1.0 / static_cast<double>(len));
}

Var softmax(const Var& x, int axis) {
  const AxisView v = axis_view(x.shape(), axis);
  Tensor out = x.value();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < v.len; ++l) mx = std::max(mx, out[(o * v.len + l) * v.inner + i]);
      double total = 0.0;
      for (std::size_t l = 0; l < v.len; ++l) {
        double& e = out[(o * v.len + l) * v.inner + i];
        e = std::exp(e - mx);
        total += e;
      }
      for (std::size_t l = 0; l < v.len; ++l) out[(o * v.len + l) * v.inner + i] /= total;
    }
  }
  return make_op(std::move(out), {x}, [v](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        double dot = 0.0;
        for (std::size_t l = 0; l < v.len; ++l) {
          const std::size_t k = (o * v.len + l) * v.inner + i;
          dot += self.grad[k] * self.value[k];
        }
        for (std::size_t l = 0; l < v.len; ++l) {
          const std::size_t k = (o * v.len + l) * v.inner + i;
          g[k] += self.value[k] * (self.grad[k] - dot);
        }
      }
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_op(std::move(out), {x}, [](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var concat(std::span<const Var> parts, int axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts[0].shape();
  axis = normalize_axis(first, axis);
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> lens;
  for (const Var& p : parts) {
    Shape s = p.shape();
    require(s.size() == first.size(), "concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (static_cast<int>(d) != axis && s[d] != first[d]) throw std::invalid_argument("concat: shape mismatch");
    }
    out_shape[axis] += s[axis];
    lens.push_back(static_cast<std::size_t>(s[axis]));
  }
  const AxisView ov = axis_view(out_shape, axis);
  Tensor out(out_shape, 0.0);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t o = 0; o < ov.outer; ++o) {
      const double* src = pv.data() + o * lens[k] * ov.inner;
      double* dst = out.data() + (o * ov.len + offset) * ov.inner;
      std::copy(src, src + lens[k] * ov.inner, dst);
    }
    offset += lens[k];
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_op(std::move(out), std::move(parents), [ov, lens](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < lens.size(); ++k) {
      if (Node* p = grad_parent(self, k)) {
        Tensor& g = p->grad_buffer();
        for (std::size_t o = 0; o < ov.outer; ++o) {
          const double* src = self.grad.data() + (o * ov.len + offset) * ov.inner;
          double* dst = g.data() + o * lens[k] * ov.inner;
          for (std::size_t j = 0; j < lens[k] * ov.inner; ++j) dst[j] += src[j];
        }
      }
      offset += lens[k];
    }
  });
}

Var index_select(const Var& x, int axis, std::span<const int> indices) {
  const AxisView v = axis_view(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[normalize_axis(x.shape(), axis)] = static_cast<int>(indices.size());
  std::vector<int> idx(indices.begin(), indices.end());
  for (int i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= v.len) throw std::out_of_range("index_select: index out of range");
  }
  Tensor out(out_shape, 0.0);
  const std::size_t m = idx.size();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t j = 0; j < m; ++j) {
      const double* src = x.value().data() + (o * v.len + idx[j]) * v.inner;
      std::copy(src, src + v.inner, out.data() + (o * m + j) * v.inner);
    }
  return make_op(std::move(out), {x}, [v, idx](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    const std::size_t m = idx.size();
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t j = 0; j < m; ++j) {
        const double* src = self.grad.data() + (o * m + j) * v.inner;
        double* dst = g.data() + (o * v.len + idx[j]) * v.inner;
        for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
      }
  });
}

namespace {

// Eigen's vectorised reductions pick their summation order from the buffer
// address, which makes results depend on the allocator. Plain loops do not.
void add_column_sums(const double* rows, int m, int n, double* out) {
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < n; ++c) out[c] += rows[static_cast<std::size_t>(r) * n + c];
  }
}

}  // namespace

Var linear(const Var& x, const Var& w, const Var& b) {
  require(x.value().rank() == 2 && w.value().rank() == 2, "linear: expects x[M,K] and w[K,N]");
  const int m = x.value().dim(0);
  const int k = x.value().dim(1);
  const int n = w.value().dim(1);
  if (w.value().dim(0) != k) {
    throw std::invalid_argument("linear: inner dimension mismatch " + shape_str(x.shape()) + " x " +
                                shape_str(w.shape()));
  }
  if (b.defined() && (b.value().rank() != 1 || b.value().dim(0) != n)) {
    throw std::invalid_argument("linear: bias shape mismatch");
  }
  Tensor out({m, n}, 0.0);
  MatMap om(out.data(), m, n);
  om.noalias() = ConstMatMap(x.value().data(), m, k) * ConstMatMap(w.value().data(), k, n);
  if (b.defined()) om.rowwise() += ConstVecMap(b.value().data(), n).transpose();
  std::vector<Var> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return make_op(std::move(out), std::move(parents), [m, k, n](Node& self) {
    ConstMatMap dout(self.grad.data(), m, n);
    const Tensor& xv = parent(self, 0).value;
    const Tensor& wv = parent(self, 1).value;
    if (Node* p = grad_parent(self, 0)) {
      MatMap(p->grad_buffer().data(), m, k).noalias() += dout * ConstMatMap(wv.data(), k, n).transpose();
    }
    if (Node* p = grad_parent(self, 1)) {
      MatMap(p->grad_buffer().data(), k, n).noalias() += ConstMatMap(xv.data(), m, k).transpose() * dout;
    }
    if (Node* p = grad_parent(self, 2)) {
      add_column_sums(self.grad.data(), m, n, p->grad_buffer().data());
    }
  });
}

Var bmm(const Var& a, const Var& b, bool transpose_a) {
  require(a.value().rank() == 3 && b.value().rank() == 3, "bmm: expects rank-3 operands");
  const int batch = a.value().dim(0);
  require(b.value().dim(0) == batch, "bmm: batch mismatch");
  const int m = transpose_a ? a.value().dim(2) : a.value().dim(1);
  const int k = transpose_a ? a.value().dim(1) : a.value().dim(2);
  const int n = b.value().dim(2);
  if (b.value().dim(1) != k) {
    throw std::invalid_argument("bmm: inner dimension mismatch " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  const std::size_t a_stride = static_cast<std::size_t>(m) * k;
  const std::size_t b_stride = static_cast<std::size_t>(k) * n;
  const std::size_t o_stride = static_cast<std::size_t>(m) * n;
  Tensor out({batch, m, n}, 0.0);
  for (int i = 0; i < batch; ++i) {
    MatMap om(out.data() + i * o_stride, m, n);
    ConstMatMap bm(b.value().data() + i * b_stride, k, n);
    if (transpose_a) {
      om.noalias() = ConstMatMap(a.value().data() + i * a_stride, k, m).transpose() * bm;
    } else {
      om.noalias() = ConstMatMap(a.value().data() + i * a_stride, m, k) * bm;
    }
  }
  return make_op(std::move(out), {a, b}, [=](Node& self) {
    const Tensor& av = parent(self, 0).value;
    const Tensor& bv = parent(self, 1).value;
    Node* pa = grad_parent(self, 0);
    Node* pb = grad_parent(self, 1);
    for (int i = 0; i < batch; ++i) {
      ConstMatMap dout(self.grad.data() + i * o_stride, m, n);
      ConstMatMap bm(bv.data() + i * b_stride, k, n);
      if (transpose_a) {
        ConstMatMap am(av.data() + i * a_stride, k, m);
        if (pa) MatMap(pa->grad_buffer().data() + i * a_stride, k, m).noalias() += bm * dout.transpose();
        if (pb) MatMap(pb->grad_buffer().data() + i * b_stride, k, n).noalias() += am * dout;
      } else {
        ConstMatMap am(av.data() + i * a_stride, m, k);
        if (pa) MatMap(pa->grad_buffer().data() + i * a_stride, m, k).noalias() += dout * bm.transpose();
        if (pb) MatMap(pb->grad_buffer().data() + i * b_stride, k, n).noalias() += am.transpose() * dout;
      }
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  require(x.value().rank() == 4, "conv2d: input must be [F,H,W,C]");
  require(w.value().rank() == 4, "conv2d: weight must be [kh,kw,Cin,Cout]");
  require(stride >= 1 && pad >= 0, "conv2d: invalid stride/pad");
  const int frames = x.value().dim(0);
  const int h = x.value().dim(1);
  const int wd = x.value().dim(2);
  const int cin = x.value().dim(3);
  const int kh = w.value().dim(0);
  const int kw = w.value().dim(1);
  const int cout = w.value().dim(3);
  if (w.value().dim(2) != cin) {
    throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(x.shape()) + " weight " +
                                shape_str(w.shape()));
  }
  if (b.defined() && (b.value().rank() != 1 || b.value().dim(0) != cout)) {
    throw std::invalid_argument("conv2d: bias shape mismatch");
  }
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  require(ho > 0 && wo > 0, "conv2d: kernel larger than padded input");
  const int patch = kh * kw * cin;
  const int pixels = ho * wo;
  const std::size_t in_stride = static_cast<std::size_t>(h) * wd * cin;
  const std::size_t out_stride = static_cast<std::size_t>(pixels) * cout;

  Tensor out({frames, ho, wo, cout}, 0.0);
  std::vector<double> cols(static_cast<std::size_t>(pixels) * patch);
  ConstMatMap wm(w.value().data(), patch, cout);
  for (int f = 0; f < frames; ++f) {
    im2col(x.value().data() + f * in_stride, h, wd, cin, kh, kw, stride, pad, ho, wo, cols.data());
    MatMap om(out.data() + f * out_stride, pixels, cout);
    om.noalias() = ConstMatMap(cols.data(), pixels, patch) * wm;
    if (b.defined()) om.rowwise() += ConstVecMap(b.value().data(), cout).transpose();
  }

  std::vector<Var> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return make_op(std::move(out), std::move(parents), [=](Node& self) {
    const Tensor& xv = parent(self, 0).value;
    const Tensor& wv = parent(self, 1).value;
    Node* px = grad_parent(self, 0);
    Node* pw = grad_parent(self, 1);
    Node* pb = grad_parent(self, 2);
    std::vector<double> buf(static_cast<std::size_t>(pixels) * patch);
    ConstMatMap wm(wv.data(), patch, cout);
    for (int f = 0; f < frames; ++f) {
      ConstMatMap dout(self.grad.data() + f * out_stride, pixels, cout);
      if (pw) {
        im2col(xv.data() + f * in_stride, h, wd, cin, kh, kw, stride, pad, ho, wo, buf.data());
        MatMap(pw->grad_buffer().data(), patch, cout).noalias() +=
            ConstMatMap(buf.data(), pixels, patch).transpose() * dout;
      }
      if (pb) add_column_sums(self.grad.data() + f * out_stride, pixels, cout, pb->grad_buffer().data());
      if (px) {
        MatMap(buf.data(), pixels, patch).noalias() = dout * wm.transpose();
        col2im_add(buf.data(), h, wd, cin, kh, kw, stride, pad, ho, wo, px->grad_buffer().data() + f * in_stride);
      }
    }
  });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
  require(x.value().rank() == 4, "group_norm: input must be [F,H,W,C]");
  const int frames = x.value().dim(0);
  const int c = x.value().dim(3);
  require(groups >= 1 && c % groups == 0, "group_norm: channels must divide into groups");
  require(gamma.value().size() == static_cast<std::size_t>(c) && beta.value().size() == static_cast<std::size_t>(c),
          "group_norm: affine parameter shape mismatch");
  const std::size_t pixels = static_cast<std::size_t>(x.value().dim(1)) * x.value().dim(2);
  const int cg = c / groups;
  const double count = static_cast<double>(pixels * cg);
  const std::size_t frame_stride = pixels * c;

  Tensor xhat(x.shape(), 0.0);
  std::vector<double> inv_std(static_cast<std::size_t>(frames) * groups);
  const Tensor& xv = x.value();
  for (int f = 0; f < frames; ++f) {
    for (int g = 0; g < groups; ++g) {
      double mu = 0.0;
      for (std::size_t p = 0; p < pixels; ++p)
        for (int j = 0; j < cg; ++j) mu += xv[f * frame_stride + p * c + g * cg + j];
      mu /= count;
      double var = 0.0;
      for (std::size_t p = 0; p < pixels; ++p)
        for (int j = 0; j < cg; ++j) {
          const double d = xv[f * frame_stride + p * c + g * cg + j] - mu;
          var += d * d;
        }
      var /= count;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(f) * groups + g] = is;
      for (std::size_t p = 0; p < pixels; ++p)
        for (int j = 0; j < cg; ++j) {
          const std::size_t k = f * frame_stride + p * c + g * cg + j;
          xhat[k] = (xv[k] - mu) * is;
        }
    }
  }
  Tensor out(x.shape(), 0.0);
  for (std::size_t k = 0; k < out.size(); ++k) {
    const std::size_t ch = k % c;
    out[k] = gamma.value()[ch] * xhat[k] + beta.value()[ch];
  }
  return make_op(std::move(out), {x, gamma, beta},
                 [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                   const Tensor& gv = parent(self, 1).value;
                   if (Node* p = grad_parent(self, 1)) {
                     Tensor& g = p->grad_buffer();
                     for (std::size_t k = 0; k < xhat.size(); ++k) g[k % c] += self.grad[k] * xhat[k];
                   }
                   if (Node* p = grad_parent(self, 2)) {
                     Tensor& g = p->grad_buffer();
                     for (std::size_t k = 0; k < xhat.size(); ++k) g[k % c] += self.grad[k];
                   }
                   Node* px = grad_parent(self, 0);
                   if (!px) return;
                   Tensor& dx = px->grad_buffer();
                   for (int f = 0; f < frames; ++f) {
                     for (int g = 0; g < groups; ++g) {
                       double sum_d = 0.0;
                       double sum_dx = 0.0;
                       for (std::size_t p = 0; p < pixels; ++p)
                         for (int j = 0; j < cg; ++j) {
                           const int ch = g * cg + j;
                           const std::size_t k = f * frame_stride + p * c + ch;
                           const double d = self.grad[k] * gv[ch];
                           sum_d += d;
                           sum_dx += d * xhat[k];
                         }
                       const double is = inv_std[static_cast<std::size_t>(f) * groups + g];
                       for (std::size_t p = 0; p < pixels; ++p)
                         for (int j = 0; j < cg; ++j) {
                           const int ch = g * cg + j;
                           const std::size_t k = f * frame_stride + p * c + ch;
                           const double d = self.grad[k] * gv[ch];
                           dx[k] += is * (d - sum_d / count - xhat[k] * sum_dx / count);
                         }
                     }
                   }
                 });
}

Var pairwise_distance(const Var& points, const Var& centers) {
  require(points.value().rank() == 3 && centers.value().rank() == 3, "pairwise_distance: expects rank-3 inputs");
  const int frames = points.value().dim(0);
  const int np = points.value().dim(1);
  const int d = points.value().dim(2);
  const int nk = centers.value().dim(1);
  require(centers.value().dim(0) == frames && centers.value().dim(2) == d, "pairwise_distance: shape mismatch");
  Tensor out({frames, np, nk}, 0.0);
  const Tensor& pv = points.value();
  const Tensor& cv = centers.value();
  for (int f = 0; f < frames; ++f)
    for (int i = 0; i < np; ++i)
      for (int k = 0; k < nk; ++k) {
        const double* z = pv.data() + (static_cast<std::size_t>(f) * np + i) * d;
        const double* a = cv.data() + (static_cast<std::size_t>(f) * nk + k) * d;
        double s = 0.0;
        for (int j = 0; j < d; ++j) {
          const double diff = z[j] - a[j];
          s += diff * diff;
        }
        out[(static_cast<std::size_t>(f) * np + i) * nk + k] = std::sqrt(s);
      }
  return make_op(std::move(out), {points, centers}, [=](Node& self) {
    const Tensor& pv = parent(self, 0).value;
    const Tensor& cv = parent(self, 1).value;
    Node* pp = grad_parent(self, 0);
    Node* pc = grad_parent(self, 1);
    for (int f = 0; f < frames; ++f)
      for (int i = 0; i < np; ++i)
        for (int k = 0; k < nk; ++k) {
          const std::size_t o = (static_cast<std::size_t>(f) * np + i) * nk + k;
          const double dist = self.value[o];
          // Zero distance has no unique gradient; use the zero subgradient.
          if (dist <= 0.0) continue;
          const double coef = self.grad[o] / dist;
          const std::size_t zo = (static_cast<std::size_t>(f) * np + i) * d;
          const std::size_t ao = (static_cast<std::size_t>(f) * nk + k) * d;
          for (int j = 0; j < d; ++j) {
            const double g = coef * (pv[zo + j] - cv[ao + j]);
            if (pp) pp->grad_buffer()[zo + j] += g;
            if (pc) pc->grad_buffer()[ao + j] -= g;
          }
        }
  });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  require(logits.value().rank() == 2, "cross_entropy: logits must be [M,C]");
  const int m = logits.value().dim(0);
  const int c = logits.value().dim(1);
  if (labels.size() != static_cast<std::size_t>(m)) throw std::invalid_argument("cross_entropy: label count mismatch");
  Tensor probs(logits.shape(), 0.0);
  double loss = 0.0;
  for (int i = 0; i < m; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= c) throw std::invalid_argument("cross_entropy: label out of range");
    const double* row = logits.value().data() + static_cast<std::size_t>(i) * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (int j = 0; j < c; ++j) total += std::exp(row[j] - mx);
    const double lse = mx + std::log(total);
    loss += lse - row[y];
    for (int j = 0; j < c; ++j) probs[static_cast<std::size_t>(i) * c + j] = std::exp(row[j] - lse);
  }
  loss /= m;
  std::vector<int> ys(labels.begin(), labels.end());
  return make_op(Tensor({}, std::vector<double>{loss}), {logits},
                 [m, c, ys, probs = std::move(probs)](Node& self) {
                   Tensor& g = parent(self, 0).grad_buffer();
                   const double scale = self.grad[0] / m;
                   for (int i = 0; i < m; ++i)
                     for (int j = 0; j < c; ++j) {
                       const std::size_t k = static_cast<std::size_t>(i) * c + j;
                       g[k] += scale * (probs[k] - (j == ys[i] ? 1.0 : 0.0));
                     }
                 });
}

}  // namespace stdn::ag
