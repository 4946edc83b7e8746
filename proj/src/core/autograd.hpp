#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsp/dsp.hpp"

namespace vqss::ag {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> val;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
  }
};

using NodePtr = std::shared_ptr<Node>;

// Value-semantics handle over a graph node. Dynamic tape: every op allocates
// a node holding its forward value plus a closure that scatters cotangents to
// its parents. When gradients are disabled (NoGradGuard) ops produce leaf
// nodes, so inference builds no graph.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : n_(std::move(n)) {}

  static Var constant(Shape shape, std::vector<double> val);
  static Var zeros(Shape shape);
  static Var param(Shape shape, std::vector<double> val);
  static Var scalar(double v);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int64_t size() const { return numel(n_->shape); }
  const std::vector<double>& val() const { return n_->val; }
  std::vector<double>& mutable_val() { return n_->val; }  // parameters/optimizer only
  std::vector<double>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  bool requires_grad() const { return n_->requires_grad; }
  double item() const {
    if (size() != 1) throw std::logic_error("Var::item on non-scalar");
    return n_->val[0];
  }
  NodePtr node() const { return n_; }

 private:
  NodePtr n_;
};

bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
};

// reverse-mode sweep from a scalar root
void backward(const Var& root);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);
Var square(const Var& a);
Var abs_of(const Var& a);                    // subgradient 0 at 0
Var log_plus(const Var& a, double eps);      // log(x + eps), x >= 0 expected
Var rsqrt_plus(const Var& a, double eps);    // 1/sqrt(x + eps)
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var softplus(const Var& a);                  // log(1 + e^x), overflow-safe

// ---- reductions ----
Var sum(const Var& a);
Var mean(const Var& a);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);                       // [M,K]x[K,N]
Var linear(const Var& x, const Var& w, const Var& b);         // x[B,F], w[O,F], b[O] (b may be undefined)
Var row_normalize(const Var& x, double eps);                  // rows of [B,D] to unit L2 norm
Var center_rows(const Var& x);                                // subtract each row's mean, [B,D]

// ---- 4-D feature maps [B,C,H,W] ----
Var conv2d(const Var& x, const Var& w, const Var& b, int sh, int sw, int ph, int pw);
Var upsample_nearest(const Var& x, int fh, int fw);
Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, double eps);
Var film(const Var& x, const Var& gamma, const Var& beta);    // gamma,beta [B,C]
Var concat_channels(const Var& a, const Var& b);
Var chan_slice(const Var& x, int64_t c0, int64_t c1);
Var crop2d(const Var& x, int64_t out_h, int64_t out_w);       // top-left corner
Var pad_time_reflect(const Var& x, int64_t out_w);            // reflect-pad last dim on the right
Var global_avg_pool(const Var& x);                            // [B,C,H,W] -> [B,C]
Var time_profile(const Var& x, bool max_pool);               // [B,1,H,W] -> [B,H] over W

// ---- spectral ops (batched 1-D signals) ----
// wave [B,T] -> [B,2,bins,frames] (re, im as channels); center reflect padding
Var stft_ri(const Var& wave, const dsp::StftParams& p);
// ri [B,2,bins,frames] -> [B,out_len]; weighted overlap-add with envelope division
Var istft_ri(const Var& ri, const dsp::StftParams& p, int64_t out_len);
// ri [B,2,F,T] -> [B,1,F,T]
Var complex_magnitude(const Var& ri);

Var detach(const Var& a);

}  // namespace vqss::ag
