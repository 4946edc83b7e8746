#include "core/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "core/fft.hpp"
#include "core/gemm.hpp"
#include "core/parallel.hpp"

namespace vqss::ag {

using core::parallel_chunks;
using core::parallel_for;

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

namespace {

thread_local int g_no_grad_depth = 0;

NodePtr leaf(Shape shape, std::vector<double> val, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->val = std::move(val);
  n->requires_grad = requires_grad;
  return n;
}

// Accumulate into a parent's gradient if it participates in the sweep.
inline bool wants_grad(const NodePtr& p) { return p && p->requires_grad; }

Var make_op(Shape shape, std::vector<double> val, std::vector<NodePtr> parents,
            std::function<void(Node&)> backward_fn) {
  bool any = false;
  if (g_no_grad_depth == 0)
    for (const auto& p : parents) any = any || (p && p->requires_grad);
  if (!any) return Var(leaf(std::move(shape), std::move(val), false));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->val = std::move(val);
  n->requires_grad = true;
  n->parents = std::move(parents);
  n->backward_fn = std::move(backward_fn);
  return Var(n);
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

Var Var::constant(Shape shape, std::vector<double> val) {
  if (numel(shape) != static_cast<int64_t>(val.size()))
    throw std::invalid_argument("Var::constant: value size does not match shape");
  return Var(leaf(std::move(shape), std::move(val), false));
}

Var Var::zeros(Shape shape) {
  std::vector<double> v(static_cast<size_t>(numel(shape)), 0.0);
  return Var(leaf(std::move(shape), std::move(v), false));
}

Var Var::param(Shape shape, std::vector<double> val) {
  if (numel(shape) != static_cast<int64_t>(val.size()))
    throw std::invalid_argument("Var::param: value size does not match shape");
  return Var(leaf(std::move(shape), std::move(val), true));
}

Var Var::scalar(double v) { return Var(leaf({1}, {v}, false)); }

bool grad_enabled() { return g_no_grad_depth == 0; }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

void backward(const Var& root) {
  if (!root.defined() || root.size() != 1)
    throw std::logic_error("backward: root must be a defined scalar");
  // iterative post-order DFS
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad();
  root.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---------------- elementwise ----------------

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  std::vector<double> v(a.val().size());
  parallel_chunks(static_cast<int64_t>(v.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) v[i] = a.val()[i] + b.val()[i];
  });
  NodePtr an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(v), {an, bn}, [an, bn](Node& self) {
    if (wants_grad(an)) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (wants_grad(bn)) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> v(a.val().size());
  parallel_chunks(static_cast<int64_t>(v.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) v[i] = a.val()[i] - b.val()[i];
  });
  NodePtr an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(v), {an, bn}, [an, bn](Node& self) {
    if (wants_grad(an)) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (wants_grad(bn)) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> v(a.val().size());
  parallel_chunks(static_cast<int64_t>(v.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) v[i] = a.val()[i] * b.val()[i];
  });
  NodePtr an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(v), {an, bn}, [an, bn](Node& self) {
    if (wants_grad(an)) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->val[i];
    }
    if (wants_grad(bn)) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->val[i];
    }
  });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var add_scalar(const Var& a, double c) {
  std::vector<double> v(a.val().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.val()[i] + c;
  NodePtr an = a.node();
  return make_op(a.shape(), std::move(v), {an}, [an](Node& self) {
    if (!wants_grad(an)) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

Var mul_scalar(const Var& a, double c) {
  std::vector<double> v(a.val().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.val()[i] * c;
  NodePtr an = a.node();
  return make_op(a.shape(), std::move(v), {an}, [an, c](Node& self) {
    if (!wants_grad(an)) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += c * self.grad[i];
  });
}

Var square(const Var& a) {
  std::vector<double> v(a.val().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.val()[i] * a.val()[i];
  NodePtr an = a.node();
  return make_op(a.shape(), std::move(v), {an}, [an](Node& self) {
    if (!wants_grad(an)) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += 2.0 * an->val[i] * self.grad[i];
  });
}

Var abs_of(const Var& a) {
  std::vector<double> v(a.val().size());
  parallel_chunks(static_cast<int64_t>(v.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) v[i] = std::abs(a.val()[i]);
  });
  NodePtr an = a.node();
  return make_op(a.shape(), std::move(v), {an}, [an](Node& self) {
    if (!wants_grad(an)) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double x = an->val[i];
      if (x > 0.0)
        an->grad[i] += self.grad[i];
      else if (x < 0.0)
        an->grad[i] -= self.grad[i];
    }
  });
}

Var log_plus(const Var& a, double eps) {
  std::vector<double> v(a.val().size());
  parallel_chunks(static_cast<int64_t>(v.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) v[i] = std::log(a.val()[i] + eps);
  });
  NodePtr an = a.node();
  return make_op(a.shape(), std::move(v), {an}, [an, eps](Node& self) {
    if (!wants_grad(an)) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += self.grad[i] / (an->val[i] + eps);
  });
}

Var rsqrt_plus(const Var& a, double eps) {
  std::vector<double> v(a.val().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / std::sqrt(a.val()[i] + eps);
  NodePtr an = a.node();
  return make_op(a.shape(), std::move(v), {an}, [an](Node& self) {
    if (!wants_grad(an)) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.val[i];
      an->grad[i] += -0.5 * y * y * y * self.grad[i];
    }
  });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var leaky_relu(const Var& a, double slope) {
  std::vector<double> v(a.val().size());
  parallel_chunks(static_cast<int64_t>(v.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const double x = a.val()[i];
      v[i] = x > 0.0 ? x : slope * x;
    }
  });
  NodePtr an = a.node();
  return make_op(a.shape(), std::move(v), {an}, [an, slope](Node& self) {
    if (!wants_grad(an)) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += (an->val[i] > 0.0 ? 1.0 : slope) * self.grad[i];
  });
}

Var softplus(const Var& a) {
  std::vector<double> v(a.val().size());
  parallel_chunks(static_cast<int64_t>(v.size()), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const double x = a.val()[i];
      v[i] = x > 30.0 ? x : (x < -30.0 ? std::exp(x) : std::log1p(std::exp(x)));
    }
  });
  NodePtr an = a.node();
  return make_op(a.shape(), std::move(v), {an}, [an](Node& self) {
    if (!wants_grad(an)) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double x = an->val[i];
      const double sig = x > 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      an->grad[i] += sig * self.grad[i];
    }
  });
}

// ---------------- reductions ----------------

Var sum(const Var& a) {
  double acc = 0.0;
  for (double x : a.val()) acc += x;
  NodePtr an = a.node();
  return make_op({1}, {acc}, {an}, [an](Node& self) {
    if (!wants_grad(an)) return;
    an->ensure_grad();
    const double g = self.grad[0];
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.size());
  double acc = 0.0;
  for (double x : a.val()) acc += x;
  NodePtr an = a.node();
  return make_op({1}, {acc / n}, {an}, [an, n](Node& self) {
    if (!wants_grad(an)) return;
    an->ensure_grad();
    const double g = self.grad[0] / n;
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
  });
}

// ---------------- linear algebra ----------------

Var matmul(const Var& a, const Var& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: incompatible shapes");
  const int64_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
  std::vector<double> v(static_cast<size_t>(M * N));
  core::gemm_nn(M, N, K, a.val().data(), b.val().data(), v.data(), false);
  NodePtr an = a.node(), bn = b.node();
  return make_op({M, N}, std::move(v), {an, bn}, [an, bn, M, K, N](Node& self) {
    if (wants_grad(an)) {
      an->ensure_grad();
      core::gemm_nt(M, K, N, self.grad.data(), bn->val.data(), an->grad.data(), true);
    }
    if (wants_grad(bn)) {
      bn->ensure_grad();
      core::gemm_tn(K, N, M, an->val.data(), self.grad.data(), bn->grad.data(), true);
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || x.shape()[1] != w.shape()[1])
    throw std::invalid_argument("linear: incompatible shapes");
  const int64_t B = x.shape()[0], F = x.shape()[1], O = w.shape()[0];
  std::vector<double> v(static_cast<size_t>(B * O));
  core::gemm_nt(B, O, F, x.val().data(), w.val().data(), v.data(), false);
  if (b.defined()) {
    if (b.size() != O) throw std::invalid_argument("linear: bias size mismatch");
    for (int64_t i = 0; i < B; ++i)
      for (int64_t o = 0; o < O; ++o) v[i * O + o] += b.val()[o];
  }
  NodePtr xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
  std::vector<NodePtr> parents{xn, wn};
  if (bn) parents.push_back(bn);
  return make_op({B, O}, std::move(v), std::move(parents), [xn, wn, bn, B, F, O](Node& self) {
    if (wants_grad(xn)) {
      xn->ensure_grad();
      core::gemm_nn(B, F, O, self.grad.data(), wn->val.data(), xn->grad.data(), true);
    }
    if (wants_grad(wn)) {
      wn->ensure_grad();
      core::gemm_tn(O, F, B, self.grad.data(), xn->val.data(), wn->grad.data(), true);
    }
    if (bn && wants_grad(bn)) {
      bn->ensure_grad();
      for (int64_t i = 0; i < B; ++i)
        for (int64_t o = 0; o < O; ++o) bn->grad[o] += self.grad[i * O + o];
    }
  });
}

Var row_normalize(const Var& x, double eps) {
  if (x.shape().size() != 2) throw std::invalid_argument("row_normalize: expected [B,D]");
  const int64_t B = x.shape()[0], D = x.shape()[1];
  std::vector<double> v(x.val().size());
  std::vector<double> norms(B);
  for (int64_t i = 0; i < B; ++i) {
    double s = 0.0;
    for (int64_t d = 0; d < D; ++d) s += x.val()[i * D + d] * x.val()[i * D + d];
    norms[i] = std::sqrt(s);
    const double inv = 1.0 / (norms[i] + eps);
    for (int64_t d = 0; d < D; ++d) v[i * D + d] = x.val()[i * D + d] * inv;
  }
  NodePtr xn = x.node();
  return make_op(x.shape(), std::move(v), {xn}, [xn, B, D, eps, norms](Node& self) {
    if (!wants_grad(xn)) return;
    xn->ensure_grad();
    for (int64_t i = 0; i < B; ++i) {
      const double n = norms[i];
      const double s = n + eps;
      double dot = 0.0;
      for (int64_t d = 0; d < D; ++d) dot += self.grad[i * D + d] * xn->val[i * D + d];
      const double k = dot / (s * s * std::max(n, 1e-300));
      for (int64_t d = 0; d < D; ++d)
        xn->grad[i * D + d] += self.grad[i * D + d] / s - xn->val[i * D + d] * k;
    }
  });
}

Var center_rows(const Var& x) {
  if (x.shape().size() != 2) throw std::invalid_argument("center_rows: expected [B,D]");
  const int64_t B = x.shape()[0], D = x.shape()[1];
  std::vector<double> v(x.val().size());
  for (int64_t i = 0; i < B; ++i) {
    double m = 0.0;
    for (int64_t d = 0; d < D; ++d) m += x.val()[i * D + d];
    m /= static_cast<double>(D);
    for (int64_t d = 0; d < D; ++d) v[i * D + d] = x.val()[i * D + d] - m;
  }
  NodePtr xn = x.node();
  return make_op(x.shape(), std::move(v), {xn}, [xn, B, D](Node& self) {
    if (!wants_grad(xn)) return;
    xn->ensure_grad();
    for (int64_t i = 0; i < B; ++i) {
      double gm = 0.0;
      for (int64_t d = 0; d < D; ++d) gm += self.grad[i * D + d];
      gm /= static_cast<double>(D);
      for (int64_t d = 0; d < D; ++d) xn->grad[i * D + d] += self.grad[i * D + d] - gm;
    }
  });
}

// ---------------- 4-D feature maps ----------------

namespace {

struct Dims4 {
  int64_t b, c, h, w;
};

Dims4 dims4(const Var& x, const char* op) {
  if (x.shape().size() != 4) throw std::invalid_argument(std::string(op) + ": expected [B,C,H,W]");
  return {x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]};
}

// col buffer layout: [C*kh*kw, OH*OW]
void im2col(const double* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t sh,
            int64_t sw, int64_t ph, int64_t pw, int64_t OH, int64_t OW, double* col) {
  parallel_for(C * kh * kw, [&](int64_t r) {
    const int64_t c = r / (kh * kw);
    const int64_t i = (r / kw) % kh;
    const int64_t j = r % kw;
    double* dst = col + r * OH * OW;
    for (int64_t oh = 0; oh < OH; ++oh) {
      const int64_t h = oh * sh - ph + i;
      if (h < 0 || h >= H) {
        for (int64_t ow = 0; ow < OW; ++ow) dst[oh * OW + ow] = 0.0;
        continue;
      }
      const double* src = x + (c * H + h) * W;
      for (int64_t ow = 0; ow < OW; ++ow) {
        const int64_t w = ow * sw - pw + j;
        dst[oh * OW + ow] = (w >= 0 && w < W) ? src[w] : 0.0;
      }
    }
  });
}

// 3-tap row primitive: dst[t] += w0*s[t-1] + w1*s[t] + w2*s[t+1], zero pad
inline void row_tap3(double* dst, const double* s, int64_t W, double w0, double w1, double w2) {
  if (W == 1) {
    dst[0] += w1 * s[0];
    return;
  }
  dst[0] += w1 * s[0] + w2 * s[1];
  for (int64_t t = 1; t < W - 1; ++t) dst[t] += w0 * s[t - 1] + w1 * s[t] + w2 * s[t + 1];
  dst[W - 1] += w0 * s[W - 2] + w1 * s[W - 1];
}

// direct stride-1 3x3 convolution: one fused pass per output row
void conv2d_s1_forward(const double* x, int64_t C, int64_t H, int64_t W, const double* w,
                       int64_t O, int64_t kh, int64_t kw, int64_t ph, int64_t pw, double* out) {
  (void)kw;
  (void)pw;
  // out arrives zero-initialized; accumulate straight into it
  parallel_for(O * H, [&](int64_t oh_flat) {
    const int64_t o = oh_flat / H;
    const int64_t h = oh_flat % H;
    double* dst = out + (o * H + h) * W;
    for (int64_t c = 0; c < C; ++c) {
      const double* wk = w + (o * C + c) * kh * 3;
      for (int64_t i = 0; i < kh; ++i) {
        const int64_t hi = h - ph + i;
        if (hi < 0 || hi >= H) continue;
        row_tap3(dst, x + (c * H + hi) * W, W, wk[i * 3], wk[i * 3 + 1], wk[i * 3 + 2]);
      }
    }
  });
}

// gradient w.r.t. input: correlate the cotangent with the flipped kernel
void conv2d_s1_backward_x(const double* g, int64_t C, int64_t H, int64_t W, const double* w,
                          int64_t O, int64_t kh, int64_t kw, int64_t ph, int64_t pw, double* gx) {
  (void)kw;
  (void)pw;
  parallel_for(C * H, [&](int64_t ch) {
    const int64_t c = ch / H;
    const int64_t h = ch % H;
    double* dst = gx + (c * H + h) * W;
    for (int64_t o = 0; o < O; ++o) {
      const double* wk = w + (o * C + c) * kh * 3;
      for (int64_t i = 0; i < kh; ++i) {
        const int64_t oh = h + ph - i;
        if (oh < 0 || oh >= H) continue;
        // flipped taps: dst[t] += w2*src[t-1] + w1*src[t] + w0*src[t+1]
        row_tap3(dst, g + (o * H + oh) * W, W, wk[i * 3 + 2], wk[i * 3 + 1], wk[i * 3]);
      }
    }
  });
}

// gradient w.r.t. weights: per (o,c) pair, one pass with nine accumulators
void conv2d_s1_backward_w(const double* g, const double* x, int64_t C, int64_t H, int64_t W,
                          int64_t O, int64_t kh, int64_t kw, int64_t ph, int64_t pw, double* gw) {
  (void)kw;
  (void)pw;
  parallel_for(O * C, [&](int64_t oc) {
    const int64_t o = oc / C;
    const int64_t c = oc % C;
    double acc[9] = {0};
    for (int64_t h = 0; h < H; ++h) {
      const double* grow = g + (o * H + h) * W;
      for (int64_t i = 0; i < kh; ++i) {
        const int64_t hi = h - ph + i;
        if (hi < 0 || hi >= H) continue;
        const double* xrow = x + (c * H + hi) * W;
        double a0 = 0.0, a1 = 0.0, a2 = 0.0;
        a1 += grow[0] * xrow[0];
        if (W > 1) a2 += grow[0] * xrow[1];
        for (int64_t t = 1; t < W - 1; ++t) {
          const double gv = grow[t];
          a0 += gv * xrow[t - 1];
          a1 += gv * xrow[t];
          a2 += gv * xrow[t + 1];
        }
        if (W > 1) {
          a0 += grow[W - 1] * xrow[W - 2];
          a1 += grow[W - 1] * xrow[W - 1];
        }
        acc[i * 3] += a0;
        acc[i * 3 + 1] += a1;
        acc[i * 3 + 2] += a2;
      }
    }
    for (int64_t k = 0; k < kh * 3; ++k) gw[(o * C + c) * kh * 3 + k] += acc[k];
  });
}

// gather formulation of col2im (deterministic under parallelism)
void col2im_gather(const double* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                   int64_t sh, int64_t sw, int64_t ph, int64_t pw, int64_t OH, int64_t OW,
                   double* gx /* accumulated */) {
  parallel_for(C * H, [&](int64_t ch) {
    const int64_t c = ch / H;
    const int64_t h = ch % H;
    for (int64_t w = 0; w < W; ++w) {
      double acc = 0.0;
      for (int64_t i = 0; i < kh; ++i) {
        const int64_t oh_num = h + ph - i;
        if (oh_num < 0 || oh_num % sh != 0) continue;
        const int64_t oh = oh_num / sh;
        if (oh >= OH) continue;
        for (int64_t j = 0; j < kw; ++j) {
          const int64_t ow_num = w + pw - j;
          if (ow_num < 0 || ow_num % sw != 0) continue;
          const int64_t ow = ow_num / sw;
          if (ow >= OW) continue;
          const int64_t r = (c * kh + i) * kw + j;
          acc += col[r * OH * OW + oh * OW + ow];
        }
      }
      gx[(c * H + h) * W + w] += acc;
    }
  });
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int sh, int sw, int ph, int pw) {
  const auto d = dims4(x, "conv2d");
  if (w.shape().size() != 4 || w.shape()[1] != d.c)
    throw std::invalid_argument("conv2d: weight shape mismatch");
  const int64_t O = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  const int64_t OH = (d.h + 2 * ph - kh) / sh + 1;
  const int64_t OW = (d.w + 2 * pw - kw) / sw + 1;
  if (OH <= 0 || OW <= 0) throw std::invalid_argument("conv2d: output would be empty");
  const int64_t CKK = d.c * kh * kw;
  const bool direct = sh == 1 && sw == 1 && kh == 3 && kw == 3 && ph == 1 && pw == 1 &&
                      OH == d.h && OW == d.w;

  std::vector<double> v(static_cast<size_t>(d.b * O * OH * OW));
  if (direct) {
    for (int64_t bi = 0; bi < d.b; ++bi)
      conv2d_s1_forward(x.val().data() + bi * d.c * d.h * d.w, d.c, d.h, d.w, w.val().data(), O,
                        kh, kw, ph, pw, v.data() + bi * O * OH * OW);
  } else {
    std::vector<double> col(static_cast<size_t>(CKK * OH * OW));
    for (int64_t bi = 0; bi < d.b; ++bi) {
      im2col(x.val().data() + bi * d.c * d.h * d.w, d.c, d.h, d.w, kh, kw, sh, sw, ph, pw, OH, OW,
             col.data());
      core::gemm_nn(O, OH * OW, CKK, w.val().data(), col.data(), v.data() + bi * O * OH * OW,
                    false);
    }
  }
  if (b.defined()) {
    if (b.size() != O) throw std::invalid_argument("conv2d: bias size mismatch");
    parallel_for(d.b * O, [&](int64_t bo) {
      const double bias = b.val()[bo % O];
      double* dst = v.data() + bo * OH * OW;
      for (int64_t i = 0; i < OH * OW; ++i) dst[i] += bias;
    });
  }

  NodePtr xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
  std::vector<NodePtr> parents{xn, wn};
  if (bn) parents.push_back(bn);
  const auto dd = d;
  return make_op({d.b, O, OH, OW}, std::move(v), std::move(parents),
                 [xn, wn, bn, dd, O, kh, kw, sh, sw, ph, pw, OH, OW, CKK, direct](Node& self) {
                   const int64_t spatial = OH * OW;
                   if (wants_grad(wn)) wn->ensure_grad();
                   if (wants_grad(xn)) xn->ensure_grad();
                   std::vector<double> col;
                   if (!direct) col.resize(static_cast<size_t>(CKK * spatial));
                   for (int64_t bi = 0; bi < dd.b; ++bi) {
                     const double* g = self.grad.data() + bi * O * spatial;
                     if (direct) {
                       if (wants_grad(wn))
                         conv2d_s1_backward_w(g, xn->val.data() + bi * dd.c * dd.h * dd.w, dd.c,
                                              dd.h, dd.w, O, kh, kw, ph, pw, wn->grad.data());
                       if (wants_grad(xn))
                         conv2d_s1_backward_x(g, dd.c, dd.h, dd.w, wn->val.data(), O, kh, kw, ph,
                                              pw, xn->grad.data() + bi * dd.c * dd.h * dd.w);
                       continue;
                     }
                     if (wants_grad(wn)) {
                       im2col(xn->val.data() + bi * dd.c * dd.h * dd.w, dd.c, dd.h, dd.w, kh, kw,
                              sh, sw, ph, pw, OH, OW, col.data());
                       core::gemm_nt(O, CKK, spatial, g, col.data(), wn->grad.data(), true);
                     }
                     if (wants_grad(xn)) {
                       core::gemm_tn(CKK, spatial, O, wn->val.data(), g, col.data(), false);
                       col2im_gather(col.data(), dd.c, dd.h, dd.w, kh, kw, sh, sw, ph, pw, OH, OW,
                                     xn->grad.data() + bi * dd.c * dd.h * dd.w);
                     }
                   }
                   if (bn && wants_grad(bn)) {
                     bn->ensure_grad();
                     for (int64_t bi = 0; bi < dd.b; ++bi)
                       for (int64_t o = 0; o < O; ++o) {
                         const double* g = self.grad.data() + (bi * O + o) * spatial;
                         double acc = 0.0;
                         for (int64_t i = 0; i < spatial; ++i) acc += g[i];
                         bn->grad[o] += acc;
                       }
                   }
                 });
}

Var upsample_nearest(const Var& x, int fh, int fw) {
  const auto d = dims4(x, "upsample_nearest");
  const int64_t OH = d.h * fh, OW = d.w * fw;
  std::vector<double> v(static_cast<size_t>(d.b * d.c * OH * OW));
  parallel_for(d.b * d.c, [&](int64_t bc) {
    const double* src = x.val().data() + bc * d.h * d.w;
    double* dst = v.data() + bc * OH * OW;
    for (int64_t oh = 0; oh < OH; ++oh)
      for (int64_t ow = 0; ow < OW; ++ow) dst[oh * OW + ow] = src[(oh / fh) * d.w + (ow / fw)];
  });
  NodePtr xn = x.node();
  const auto dd = d;
  return make_op({d.b, d.c, OH, OW}, std::move(v), {xn}, [xn, dd, fh, fw, OH, OW](Node& self) {
    if (!wants_grad(xn)) return;
    xn->ensure_grad();
    parallel_for(dd.b * dd.c, [&](int64_t bc) {
      const double* g = self.grad.data() + bc * OH * OW;
      double* dst = xn->grad.data() + bc * dd.h * dd.w;
      for (int64_t h = 0; h < dd.h; ++h)
        for (int64_t w = 0; w < dd.w; ++w) {
          double acc = 0.0;
          for (int64_t i = 0; i < fh; ++i)
            for (int64_t j = 0; j < fw; ++j) acc += g[(h * fh + i) * OW + (w * fw + j)];
          dst[h * dd.w + w] += acc;
        }
    });
  });
}

Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, double eps) {
  const auto d = dims4(x, "group_norm");
  if (d.c % groups != 0)
    throw std::invalid_argument("group_norm: channels not divisible by group count");
  if (gamma.size() != d.c || beta.size() != d.c)
    throw std::invalid_argument("group_norm: gamma/beta must have C elements");
  const int64_t cs = d.c / groups;
  const int64_t gn = cs * d.h * d.w;  // elements per group
  std::vector<double> mean_bg(static_cast<size_t>(d.b * groups));
  std::vector<double> istd_bg(static_cast<size_t>(d.b * groups));
  std::vector<double> v(x.val().size());
  parallel_for(d.b * groups, [&](int64_t bg) {
    const int64_t bi = bg / groups, gi = bg % groups;
    const double* src = x.val().data() + (bi * d.c + gi * cs) * d.h * d.w;
    double m = 0.0;
    for (int64_t i = 0; i < gn; ++i) m += src[i];
    m /= static_cast<double>(gn);
    double var = 0.0;
    for (int64_t i = 0; i < gn; ++i) var += (src[i] - m) * (src[i] - m);
    var /= static_cast<double>(gn);
    const double istd = 1.0 / std::sqrt(var + eps);
    mean_bg[bg] = m;
    istd_bg[bg] = istd;
    double* dst = v.data() + (bi * d.c + gi * cs) * d.h * d.w;
    for (int64_t ci = 0; ci < cs; ++ci) {
      const double g = gamma.val()[gi * cs + ci];
      const double b = beta.val()[gi * cs + ci];
      const double* s = src + ci * d.h * d.w;
      double* o = dst + ci * d.h * d.w;
      for (int64_t i = 0; i < d.h * d.w; ++i) o[i] = g * (s[i] - m) * istd + b;
    }
  });
  NodePtr xn = x.node(), gn_ = gamma.node(), bn = beta.node();
  const auto dd = d;
  return make_op(x.shape(), std::move(v), {xn, gn_, bn},
                 [xn, gn_, bn, dd, groups, cs, gn, mean_bg, istd_bg](Node& self) {
                   const int64_t hw = dd.h * dd.w;
                   if (wants_grad(xn)) xn->ensure_grad();
                   if (wants_grad(gn_)) gn_->ensure_grad();
                   if (wants_grad(bn)) bn->ensure_grad();
                   // gamma/beta grads accumulate across batch: serialize over b, parallel over c
                   if (wants_grad(gn_) || wants_grad(bn)) {
                     parallel_for(dd.c, [&](int64_t c) {
                       const int64_t gi = c / cs;
                       double gg = 0.0, gb = 0.0;
                       for (int64_t bi = 0; bi < dd.b; ++bi) {
                         const double m = mean_bg[bi * groups + gi];
                         const double istd = istd_bg[bi * groups + gi];
                         const double* xk = xn->val.data() + (bi * dd.c + c) * hw;
                         const double* gk = self.grad.data() + (bi * dd.c + c) * hw;
                         for (int64_t i = 0; i < hw; ++i) {
                           gg += gk[i] * (xk[i] - m) * istd;
                           gb += gk[i];
                         }
                       }
                       if (wants_grad(gn_)) gn_->grad[c] += gg;
                       if (wants_grad(bn)) bn->grad[c] += gb;
                     });
                   }
                   if (wants_grad(xn)) {
                     parallel_for(dd.b * groups, [&](int64_t bg) {
                       const int64_t bi = bg / groups, gi = bg % groups;
                       const double m = mean_bg[bg];
                       const double istd = istd_bg[bg];
                       const double* xk = xn->val.data() + (bi * dd.c + gi * cs) * hw;
                       const double* gk = self.grad.data() + (bi * dd.c + gi * cs) * hw;
                       double m1 = 0.0, m2 = 0.0;
                       for (int64_t ci = 0; ci < cs; ++ci) {
                         const double ga = gn_->val[gi * cs + ci];
                         for (int64_t i = 0; i < hw; ++i) {
                           const double dxhat = gk[ci * hw + i] * ga;
                           const double xhat = (xk[ci * hw + i] - m) * istd;
                           m1 += dxhat;
                           m2 += dxhat * xhat;
                         }
                       }
                       m1 /= static_cast<double>(gn);
                       m2 /= static_cast<double>(gn);
                       double* gx = xn->grad.data() + (bi * dd.c + gi * cs) * hw;
                       for (int64_t ci = 0; ci < cs; ++ci) {
                         const double ga = gn_->val[gi * cs + ci];
                         for (int64_t i = 0; i < hw; ++i) {
                           const double dxhat = gk[ci * hw + i] * ga;
                           const double xhat = (xk[ci * hw + i] - m) * istd;
                           gx[ci * hw + i] += istd * (dxhat - m1 - xhat * m2);
                         }
                       }
                     });
                   }
                 });
}

Var film(const Var& x, const Var& gamma, const Var& beta) {
  const auto d = dims4(x, "film");
  if (gamma.shape() != Shape{d.b, d.c} || beta.shape() != Shape{d.b, d.c})
    throw std::invalid_argument("film: gamma/beta must be [B,C]");
  const int64_t hw = d.h * d.w;
  std::vector<double> v(x.val().size());
  parallel_for(d.b * d.c, [&](int64_t bc) {
    const double g = gamma.val()[bc];
    const double b = beta.val()[bc];
    const double* src = x.val().data() + bc * hw;
    double* dst = v.data() + bc * hw;
    for (int64_t i = 0; i < hw; ++i) dst[i] = g * src[i] + b;
  });
  NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
  const auto dd = d;
  return make_op(x.shape(), std::move(v), {xn, gn, bn}, [xn, gn, bn, dd, hw](Node& self) {
    if (wants_grad(xn)) xn->ensure_grad();
    if (wants_grad(gn)) gn->ensure_grad();
    if (wants_grad(bn)) bn->ensure_grad();
    parallel_for(dd.b * dd.c, [&](int64_t bc) {
      const double* gk = self.grad.data() + bc * hw;
      if (wants_grad(xn)) {
        const double g = gn->val[bc];
        double* gx = xn->grad.data() + bc * hw;
        for (int64_t i = 0; i < hw; ++i) gx[i] += g * gk[i];
      }
      if (wants_grad(gn)) {
        const double* src = xn->val.data() + bc * hw;
        double acc = 0.0;
        for (int64_t i = 0; i < hw; ++i) acc += gk[i] * src[i];
        gn->grad[bc] += acc;
      }
      if (wants_grad(bn)) {
        double acc = 0.0;
        for (int64_t i = 0; i < hw; ++i) acc += gk[i];
        bn->grad[bc] += acc;
      }
    });
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const auto da = dims4(a, "concat_channels");
  const auto db = dims4(b, "concat_channels");
  if (da.b != db.b || da.h != db.h || da.w != db.w)
    throw std::invalid_argument("concat_channels: spatial/batch mismatch");
  const int64_t hw = da.h * da.w;
  const int64_t C = da.c + db.c;
  std::vector<double> v(static_cast<size_t>(da.b * C * hw));
  for (int64_t bi = 0; bi < da.b; ++bi) {
    std::copy_n(a.val().data() + bi * da.c * hw, da.c * hw, v.data() + bi * C * hw);
    std::copy_n(b.val().data() + bi * db.c * hw, db.c * hw, v.data() + (bi * C + da.c) * hw);
  }
  NodePtr an = a.node(), bn = b.node();
  return make_op({da.b, C, da.h, da.w}, std::move(v), {an, bn}, [an, bn, da, db, hw, C](Node& self) {
    for (int64_t bi = 0; bi < da.b; ++bi) {
      if (wants_grad(an)) {
        an->ensure_grad();
        const double* g = self.grad.data() + bi * C * hw;
        double* dst = an->grad.data() + bi * da.c * hw;
        for (int64_t i = 0; i < da.c * hw; ++i) dst[i] += g[i];
      }
      if (wants_grad(bn)) {
        bn->ensure_grad();
        const double* g = self.grad.data() + (bi * C + da.c) * hw;
        double* dst = bn->grad.data() + bi * db.c * hw;
        for (int64_t i = 0; i < db.c * hw; ++i) dst[i] += g[i];
      }
    }
  });
}

Var chan_slice(const Var& x, int64_t c0, int64_t c1) {
  const auto d = dims4(x, "chan_slice");
  if (c0 < 0 || c1 > d.c || c0 >= c1) throw std::invalid_argument("chan_slice: bad range");
  const int64_t hw = d.h * d.w;
  const int64_t C = c1 - c0;
  std::vector<double> v(static_cast<size_t>(d.b * C * hw));
  for (int64_t bi = 0; bi < d.b; ++bi)
    std::copy_n(x.val().data() + (bi * d.c + c0) * hw, C * hw, v.data() + bi * C * hw);
  NodePtr xn = x.node();
  const auto dd = d;
  return make_op({d.b, C, d.h, d.w}, std::move(v), {xn}, [xn, dd, c0, C, hw](Node& self) {
    if (!wants_grad(xn)) return;
    xn->ensure_grad();
    for (int64_t bi = 0; bi < dd.b; ++bi) {
      const double* g = self.grad.data() + bi * C * hw;
      double* dst = xn->grad.data() + (bi * dd.c + c0) * hw;
      for (int64_t i = 0; i < C * hw; ++i) dst[i] += g[i];
    }
  });
}

Var crop2d(const Var& x, int64_t out_h, int64_t out_w) {
  const auto d = dims4(x, "crop2d");
  if (out_h > d.h || out_w > d.w || out_h < 1 || out_w < 1)
    throw std::invalid_argument("crop2d: bad size");
  if (out_h == d.h && out_w == d.w) return x;
  std::vector<double> v(static_cast<size_t>(d.b * d.c * out_h * out_w));
  parallel_for(d.b * d.c, [&](int64_t bc) {
    const double* src = x.val().data() + bc * d.h * d.w;
    double* dst = v.data() + bc * out_h * out_w;
    for (int64_t h = 0; h < out_h; ++h)
      std::copy_n(src + h * d.w, out_w, dst + h * out_w);
  });
  NodePtr xn = x.node();
  const auto dd = d;
  return make_op({d.b, d.c, out_h, out_w}, std::move(v), {xn}, [xn, dd, out_h, out_w](Node& self) {
    if (!wants_grad(xn)) return;
    xn->ensure_grad();
    parallel_for(dd.b * dd.c, [&](int64_t bc) {
      const double* g = self.grad.data() + bc * out_h * out_w;
      double* dst = xn->grad.data() + bc * dd.h * dd.w;
      for (int64_t h = 0; h < out_h; ++h)
        for (int64_t w = 0; w < out_w; ++w) dst[h * dd.w + w] += g[h * out_w + w];
    });
  });
}

Var pad_time_reflect(const Var& x, int64_t out_w) {
  const auto d = dims4(x, "pad_time_reflect");
  if (out_w < d.w) throw std::invalid_argument("pad_time_reflect: target narrower than input");
  if (out_w == d.w) return x;
  const int64_t pad = out_w - d.w;
  if (pad > d.w - 1) throw std::invalid_argument("pad_time_reflect: pad exceeds input width");
  std::vector<double> v(static_cast<size_t>(d.b * d.c * d.h * out_w));
  parallel_for(d.b * d.c * d.h, [&](int64_t r) {
    const double* src = x.val().data() + r * d.w;
    double* dst = v.data() + r * out_w;
    std::copy_n(src, d.w, dst);
    for (int64_t j = 0; j < pad; ++j) dst[d.w + j] = src[d.w - 2 - j];
  });
  NodePtr xn = x.node();
  const auto dd = d;
  return make_op({d.b, d.c, d.h, out_w}, std::move(v), {xn}, [xn, dd, out_w, pad](Node& self) {
    if (!wants_grad(xn)) return;
    xn->ensure_grad();
    parallel_for(dd.b * dd.c * dd.h, [&](int64_t r) {
      const double* g = self.grad.data() + r * out_w;
      double* dst = xn->grad.data() + r * dd.w;
      for (int64_t w = 0; w < dd.w; ++w) dst[w] += g[w];
      for (int64_t j = 0; j < pad; ++j) dst[dd.w - 2 - j] += g[dd.w + j];
    });
  });
}

Var global_avg_pool(const Var& x) {
  const auto d = dims4(x, "global_avg_pool");
  const int64_t hw = d.h * d.w;
  std::vector<double> v(static_cast<size_t>(d.b * d.c));
  parallel_for(d.b * d.c, [&](int64_t bc) {
    const double* src = x.val().data() + bc * hw;
    double acc = 0.0;
    for (int64_t i = 0; i < hw; ++i) acc += src[i];
    v[bc] = acc / static_cast<double>(hw);
  });
  NodePtr xn = x.node();
  const auto dd = d;
  return make_op({d.b, d.c}, std::move(v), {xn}, [xn, dd, hw](Node& self) {
    if (!wants_grad(xn)) return;
    xn->ensure_grad();
    parallel_for(dd.b * dd.c, [&](int64_t bc) {
      const double g = self.grad[bc] / static_cast<double>(hw);
      double* dst = xn->grad.data() + bc * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] += g;
    });
  });
}

Var time_profile(const Var& x, bool max_pool) {
  const auto d = dims4(x, "time_profile");
  if (d.c != 1) throw std::invalid_argument("time_profile: expected a single channel");
  std::vector<double> v(static_cast<size_t>(d.b * d.h));
  std::vector<int64_t> arg(static_cast<size_t>(d.b * d.h), -1);
  parallel_for(d.b * d.h, [&](int64_t bh) {
    const double* src = x.val().data() + bh * d.w;
    if (max_pool) {
      int64_t best = 0;
      for (int64_t w = 1; w < d.w; ++w)
        if (src[w] > src[best]) best = w;
      v[bh] = src[best];
      arg[bh] = best;
    } else {
      double acc = 0.0;
      for (int64_t w = 0; w < d.w; ++w) acc += src[w];
      v[bh] = acc / static_cast<double>(d.w);
    }
  });
  NodePtr xn = x.node();
  const auto dd = d;
  return make_op({d.b, d.h}, std::move(v), {xn}, [xn, dd, arg, max_pool](Node& self) {
    if (!wants_grad(xn)) return;
    xn->ensure_grad();
    if (max_pool) {
      for (int64_t bh = 0; bh < dd.b * dd.h; ++bh)
        xn->grad[bh * dd.w + arg[bh]] += self.grad[bh];
    } else {
      parallel_for(dd.b * dd.h, [&](int64_t bh) {
        const double g = self.grad[bh] / static_cast<double>(dd.w);
        double* dst = xn->grad.data() + bh * dd.w;
        for (int64_t w = 0; w < dd.w; ++w) dst[w] += g;
      });
    }
  });
}

// ---------------- spectral ops ----------------

Var stft_ri(const Var& wave, const dsp::StftParams& p) {
  if (wave.shape().size() != 2) throw std::invalid_argument("stft_ri: expected [B,T]");
  const int64_t B = wave.shape()[0], T = wave.shape()[1];
  const int64_t frames = dsp::stft_frame_count(T, p);
  const int64_t bins = p.fft_size / 2 + 1;
  const auto& plan = core::fft_plan(static_cast<size_t>(p.fft_size));
  std::vector<double> v(static_cast<size_t>(B * 2 * bins * frames));
  parallel_for(B, [&](int64_t bi) {
    std::vector<double> sig(wave.val().begin() + bi * T, wave.val().begin() + (bi + 1) * T);
    const auto padded = dsp::pad_reflect_center(sig, p.fft_size);
    std::vector<double> buf(p.fft_size), fre(bins), fim(bins);
    double* out_re = v.data() + bi * 2 * bins * frames;
    double* out_im = out_re + bins * frames;
    for (int64_t f = 0; f < frames; ++f) {
      const int64_t off = f * p.hop_size;
      for (int t = 0; t < p.fft_size; ++t) buf[t] = padded[off + t] * p.window[t];
      core::rfft(plan, buf.data(), fre.data(), fim.data());
      for (int64_t b = 0; b < bins; ++b) {
        out_re[b * frames + f] = fre[b];
        out_im[b * frames + f] = fim[b];
      }
    }
  });
  NodePtr wn = wave.node();
  const auto params = p;
  return make_op({B, 2, bins, frames}, std::move(v), {wn}, [wn, params, B, T, frames,
                                                            bins](Node& self) {
    if (!wants_grad(wn)) return;
    wn->ensure_grad();
    const auto& plan = core::fft_plan(static_cast<size_t>(params.fft_size));
    const int64_t pad = params.fft_size / 2;
    parallel_for(B, [&](int64_t bi) {
      std::vector<double> g_padded(T + 2 * pad, 0.0);
      std::vector<double> gre(bins), gim(bins), dx(params.fft_size);
      const double* g_re = self.grad.data() + bi * 2 * bins * frames;
      const double* g_im = g_re + bins * frames;
      for (int64_t f = 0; f < frames; ++f) {
        for (int64_t b = 0; b < bins; ++b) {
          gre[b] = g_re[b * frames + f];
          gim[b] = g_im[b * frames + f];
        }
        core::rfft_adjoint(plan, gre.data(), gim.data(), dx.data());
        const int64_t off = f * params.hop_size;
        for (int t = 0; t < params.fft_size; ++t)
          g_padded[off + t] += dx[t] * params.window[t];
      }
      std::vector<double> g_sig;
      dsp::fold_reflect_center(g_padded, params.fft_size, g_sig);
      double* dst = wn->grad.data() + bi * T;
      for (int64_t t = 0; t < T; ++t) dst[t] += g_sig[t];
    });
  });
}

Var istft_ri(const Var& ri, const dsp::StftParams& p, int64_t out_len) {
  if (ri.shape().size() != 4 || ri.shape()[1] != 2)
    throw std::invalid_argument("istft_ri: expected [B,2,bins,frames]");
  const int64_t B = ri.shape()[0], bins = ri.shape()[2], frames = ri.shape()[3];
  if (bins != p.fft_size / 2 + 1) throw std::invalid_argument("istft_ri: bins mismatch");
  const int64_t pad = p.fft_size / 2;
  const int64_t ola_len = p.hop_size * (frames - 1) + p.fft_size;
  if (pad + out_len > ola_len) throw std::invalid_argument("istft_ri: out_len exceeds coverage");
  const auto env = dsp::ola_envelope(p, frames);
  const auto& plan = core::fft_plan(static_cast<size_t>(p.fft_size));

  std::vector<double> v(static_cast<size_t>(B * out_len));
  parallel_for(B, [&](int64_t bi) {
    std::vector<double> acc(ola_len, 0.0);
    std::vector<double> fre(bins), fim(bins), buf(p.fft_size);
    const double* in_re = ri.val().data() + bi * 2 * bins * frames;
    const double* in_im = in_re + bins * frames;
    for (int64_t f = 0; f < frames; ++f) {
      for (int64_t b = 0; b < bins; ++b) {
        fre[b] = in_re[b * frames + f];
        fim[b] = in_im[b * frames + f];
      }
      core::irfft(plan, fre.data(), fim.data(), buf.data());
      const int64_t off = f * p.hop_size;
      for (int t = 0; t < p.fft_size; ++t) acc[off + t] += buf[t] * p.window[t];
    }
    double* dst = v.data() + bi * out_len;
    for (int64_t t = 0; t < out_len; ++t) {
      const double e = env[pad + t];
      dst[t] = acc[pad + t] / (e > 1e-12 ? e : 1e-12);
    }
  });
  NodePtr rn = ri.node();
  const auto params = p;
  return make_op({B, out_len}, std::move(v), {rn}, [rn, params, B, bins, frames, out_len, pad,
                                                    ola_len, env](Node& self) {
    if (!wants_grad(rn)) return;
    rn->ensure_grad();
    const auto& plan = core::fft_plan(static_cast<size_t>(params.fft_size));
    parallel_for(B, [&](int64_t bi) {
      std::vector<double> g_acc(ola_len, 0.0);
      for (int64_t t = 0; t < out_len; ++t) {
        const double e = env[pad + t];
        g_acc[pad + t] = self.grad[bi * out_len + t] / (e > 1e-12 ? e : 1e-12);
      }
      std::vector<double> seg(params.fft_size), gre(bins), gim(bins);
      double* g_re = rn->grad.data() + bi * 2 * bins * frames;
      double* g_im = g_re + bins * frames;
      for (int64_t f = 0; f < frames; ++f) {
        const int64_t off = f * params.hop_size;
        for (int t = 0; t < params.fft_size; ++t) seg[t] = g_acc[off + t] * params.window[t];
        core::irfft_adjoint(plan, seg.data(), gre.data(), gim.data());
        for (int64_t b = 0; b < bins; ++b) {
          g_re[b * frames + f] += gre[b];
          g_im[b * frames + f] += gim[b];
        }
      }
    });
  });
}

Var complex_magnitude(const Var& ri) {
  if (ri.shape().size() != 4 || ri.shape()[1] != 2)
    throw std::invalid_argument("complex_magnitude: expected [B,2,F,T]");
  const int64_t B = ri.shape()[0], F = ri.shape()[2], T = ri.shape()[3];
  const int64_t ft = F * T;
  std::vector<double> v(static_cast<size_t>(B * ft));
  parallel_chunks(B * ft, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const int64_t bi = i / ft, k = i % ft;
      const double re = ri.val()[bi * 2 * ft + k];
      const double im = ri.val()[bi * 2 * ft + ft + k];
      v[i] = std::sqrt(re * re + im * im);
    }
  });
  NodePtr rn = ri.node();
  return make_op({B, 1, F, T}, std::move(v), {rn}, [rn, B, ft](Node& self) {
    if (!wants_grad(rn)) return;
    rn->ensure_grad();
    parallel_chunks(B * ft, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) {
        const int64_t bi = i / ft, k = i % ft;
        const double re = rn->val[bi * 2 * ft + k];
        const double im = rn->val[bi * 2 * ft + ft + k];
        const double mag = std::max(self.val[i], 1e-300);
        const double g = self.grad[i];
        rn->grad[bi * 2 * ft + k] += g * re / mag;
        rn->grad[bi * 2 * ft + ft + k] += g * im / mag;
      }
    });
  });
}

Var detach(const Var& a) { return Var::constant(a.shape(), a.val()); }

}  // namespace vqss::ag
