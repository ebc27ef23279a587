#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace flowrl {

// Raised when a training step produces non-finite numbers; the harness
// catches it, flags the run and aborts with a dedicated exit code.
struct numerical_error : std::runtime_error {
  explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated on demand, same length as data
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;  // reads this->grad, accumulates into parents

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

inline thread_local bool t_grad_enabled = true;

}  // namespace detail

// RAII switch that disables tape recording: ops executed under the guard
// compute values only (used for target networks, frozen flow chains, ...).
struct NoGradGuard {
  NoGradGuard() : prev_(detail::t_grad_enabled) { detail::t_grad_enabled = false; }
  ~NoGradGuard() { detail::t_grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::t_grad_enabled; }

// Dense row-major 64-bit tensor participating in a reverse-mode tape.
// Tensor is a cheap shared handle: copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<detail::Node>();
    n->data.assign(shape_numel(shape), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.node_->data) v = value;
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) + " does not match " +
                                  std::to_string(data.size()) + " values");
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::size_t size() const { return node_->data.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  std::span<const double> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  double value() const {
    if (size() != 1) throw std::invalid_argument("Tensor::value: tensor is not scalar");
    return node_->data[0];
  }
  double item(std::size_t i) const { return node_->data[i]; }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  // Deep copy detached from any tape.
  Tensor clone(bool requires_grad = false) const {
    auto n = std::make_shared<detail::Node>();
    n->shape = node_->shape;
    n->data = node_->data;
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  Tensor detach() const { return clone(false); }

  bool all_finite() const {
    for (double v : node_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend class OpBuilder;
};

// Helper used by every op: builds the result node and wires the tape edge
// when grad mode is on and some parent requires grad.
class OpBuilder {
 public:
  OpBuilder(Shape shape, std::initializer_list<Tensor> parents) : OpBuilder(std::move(shape), std::vector<Tensor>(parents)) {}

  OpBuilder(Shape shape, std::vector<Tensor> parents) {
    node_ = std::make_shared<detail::Node>();
    node_->data.assign(shape_numel(shape), 0.0);
    node_->shape = std::move(shape);
    bool track = detail::t_grad_enabled;
    if (track) {
      bool any = false;
      for (const Tensor& p : parents) any = any || p.requires_grad();
      track = any;
    }
    if (track) {
      node_->requires_grad = true;
      node_->parents.reserve(parents.size());
      for (const Tensor& p : parents) node_->parents.push_back(p.node_ptr());
    }
  }

  std::span<double> out() { return node_->data; }
  bool tracked() const { return node_->requires_grad; }

  // fn reads node->grad and accumulates into the parents captured by value.
  void set_backprop(std::function<void()> fn) {
    if (node_->requires_grad) node_->backprop = std::move(fn);
  }

  detail::Node* raw() { return node_.get(); }

  Tensor finish() { return Tensor(std::move(node_)); }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

inline std::span<double> grad_of(const std::shared_ptr<Node>& n) {
  n->ensure_grad();
  return n->grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  OpBuilder ob(a.shape(), {a, b});
  auto out = ob.out();
  auto pa = a.data(), pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  if (ob.tracked()) {
    auto self = ob.raw();
    auto na = a.node_ptr(), nb = b.node_ptr();
    ob.set_backprop([self, na, nb] {
      auto& g = self->grad;
      if (na->requires_grad) {
        auto ga = detail::grad_of(na);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (nb->requires_grad) {
        auto gb = detail::grad_of(nb);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return ob.finish();
}

// a + alpha * b  (one fused op keeps Euler chains short)
inline Tensor add_scaled(const Tensor& a, const Tensor& b, double alpha) {
  detail::require_same_shape(a, b, "add_scaled");
  OpBuilder ob(a.shape(), {a, b});
  auto out = ob.out();
  auto pa = a.data(), pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + alpha * pb[i];
  if (ob.tracked()) {
    auto self = ob.raw();
    auto na = a.node_ptr(), nb = b.node_ptr();
    ob.set_backprop([self, na, nb, alpha] {
      auto& g = self->grad;
      if (na->requires_grad) {
        auto ga = detail::grad_of(na);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (nb->requires_grad) {
        auto gb = detail::grad_of(nb);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += alpha * g[i];
      }
    });
  }
  return ob.finish();
}

inline Tensor sub(const Tensor& a, const Tensor& b) { return add_scaled(a, b, -1.0); }

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  OpBuilder ob(a.shape(), {a, b});
  auto out = ob.out();
  auto pa = a.data(), pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
  if (ob.tracked()) {
    auto self = ob.raw();
    auto na = a.node_ptr(), nb = b.node_ptr();
    ob.set_backprop([self, na, nb] {
      auto& g = self->grad;
      if (na->requires_grad) {
        auto ga = detail::grad_of(na);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += nb->data[i] * g[i];
      }
      if (nb->requires_grad) {
        auto gb = detail::grad_of(nb);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += na->data[i] * g[i];
      }
    });
  }
  return ob.finish();
}

// mul_c * x + add_c, elementwise
inline Tensor affine(const Tensor& x, double mul_c, double add_c) {
  OpBuilder ob(x.shape(), {x});
  auto out = ob.out();
  auto px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mul_c * px[i] + add_c;
  if (ob.tracked()) {
    auto self = ob.raw();
    auto nx = x.node_ptr();
    ob.set_backprop([self, nx, mul_c] {
      auto gx = detail::grad_of(nx);
      for (std::size_t i = 0; i < self->grad.size(); ++i) gx[i] += mul_c * self->grad[i];
    });
  }
  return ob.finish();
}

inline Tensor scale(const Tensor& x, double c) { return affine(x, c, 0.0); }
inline Tensor neg(const Tensor& x) { return affine(x, -1.0, 0.0); }

namespace detail {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, Fwd f, Bwd dfdx_from_xy) {
  OpBuilder ob(x.shape(), {x});
  auto out = ob.out();
  auto px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(px[i]);
  if (ob.tracked()) {
    auto self = ob.raw();
    auto nx = x.node_ptr();
    ob.set_backprop([self, nx, dfdx_from_xy] {
      auto gx = grad_of(nx);
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        gx[i] += dfdx_from_xy(nx->data[i], self->data[i]) * self->grad[i];
    });
  }
  return ob.finish();
}

}  // namespace detail

inline double norm_cdf(double x) { return 0.5 * (1.0 + std::erf(x * 0.7071067811865475244)); }
inline double norm_pdf(double x) { return 0.3989422804014326779 * std::exp(-0.5 * x * x); }

// exact erf-form GELU: x * Phi(x)
inline Tensor gelu(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return v * norm_cdf(v); },
      [](double v, double) { return norm_cdf(v) + v * norm_pdf(v); });
}

inline Tensor tanh_op(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor exp_op(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log_op(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor softplus(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
      [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

inline Tensor square(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// gradient passes where lo <= x <= hi, zero where the clamp binds
inline Tensor clamp(const Tensor& x, double lo, double hi) {
  OpBuilder ob(x.shape(), {x});
  auto out = ob.out();
  auto px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, px[i]));
  if (ob.tracked()) {
    auto self = ob.raw();
    auto nx = x.node_ptr();
    ob.set_backprop([self, nx, lo, hi] {
      auto gx = detail::grad_of(nx);
      for (std::size_t i = 0; i < self->grad.size(); ++i)
        if (nx->data[i] >= lo && nx->data[i] <= hi) gx[i] += self->grad[i];
    });
  }
  return ob.finish();
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                shape_str(shape));
  OpBuilder ob(std::move(shape), {x});
  auto out = ob.out();
  auto px = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i];
  if (ob.tracked()) {
    auto self = ob.raw();
    auto nx = x.node_ptr();
    ob.set_backprop([self, nx] {
      auto gx = detail::grad_of(nx);
      for (std::size_t i = 0; i < self->grad.size(); ++i) gx[i] += self->grad[i];
    });
  }
  return ob.finish();
}

// columns [c0, c1) of a [B, D] tensor
inline Tensor slice_cols(const Tensor& x, int c0, int c1) {
  if (x.ndim() != 2) throw std::invalid_argument("slice_cols: expected [batch, d] input");
  int batch = x.dim(0), d = x.dim(1);
  if (c0 < 0 || c1 > d || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad column range [" + std::to_string(c0) + "," +
                                std::to_string(c1) + ") for " + shape_str(x.shape()));
  int w = c1 - c0;
  OpBuilder ob({batch, w}, {x});
  auto out = ob.out();
  auto px = x.data();
  for (int b = 0; b < batch; ++b)
    for (int j = 0; j < w; ++j)
      out[static_cast<std::size_t>(b) * w + j] = px[static_cast<std::size_t>(b) * d + c0 + j];
  if (ob.tracked()) {
    auto self = ob.raw();
    auto nx = x.node_ptr();
    ob.set_backprop([self, nx, batch, d, c0, w] {
      auto gx = detail::grad_of(nx);
      for (int b = 0; b < batch; ++b)
        for (int j = 0; j < w; ++j)
          gx[static_cast<std::size_t>(b) * d + c0 + j] +=
              self->grad[static_cast<std::size_t>(b) * w + j];
    });
  }
  return ob.finish();
}

// column-wise concatenation of [B, d_k] blocks into [B, sum d_k]
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  int batch = parts[0].dim(0);
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != 2 || p.dim(0) != batch)
      throw std::invalid_argument("concat_cols: expected [batch, d] blocks with equal batch");
    total += p.dim(1);
  }
  OpBuilder ob({batch, total}, parts);
  auto out = ob.out();
  int col = 0;
  for (const Tensor& p : parts) {
    int d = p.dim(1);
    auto pd = p.data();
    for (int b = 0; b < batch; ++b)
      for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(b) * total + col + j] = pd[static_cast<std::size_t>(b) * d + j];
    col += d;
  }
  if (ob.tracked()) {
    auto self = ob.raw();
    std::vector<std::shared_ptr<detail::Node>> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.node_ptr());
    ob.set_backprop([self, nodes, batch, total] {
      int col = 0;
      for (auto& n : nodes) {
        int d = n->shape[1];
        if (n->requires_grad) {
          auto gn = detail::grad_of(n);
          for (int b = 0; b < batch; ++b)
            for (int j = 0; j < d; ++j)
              gn[static_cast<std::size_t>(b) * d + j] +=
                  self->grad[static_cast<std::size_t>(b) * total + col + j];
        }
        col += d;
      }
    });
  }
  return ob.finish();
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  OpBuilder ob({1}, {x});
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  ob.out()[0] = acc;
  if (ob.tracked()) {
    auto self = ob.raw();
    auto nx = x.node_ptr();
    ob.set_backprop([self, nx] {
      auto gx = detail::grad_of(nx);
      double g = self->grad[0];
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return ob.finish();
}

inline Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

// [B, D] -> [B], summing over the feature axis
inline Tensor row_sum(const Tensor& x) {
  if (x.ndim() != 2) throw std::invalid_argument("row_sum: expected [batch, d], got " + shape_str(x.shape()));
  int batch = x.dim(0), d = x.dim(1);
  OpBuilder ob({batch}, {x});
  auto out = ob.out();
  auto px = x.data();
  for (int b = 0; b < batch; ++b) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) acc += px[static_cast<std::size_t>(b) * d + j];
    out[b] = acc;
  }
  if (ob.tracked()) {
    auto self = ob.raw();
    auto nx = x.node_ptr();
    ob.set_backprop([self, nx, batch, d] {
      auto gx = detail::grad_of(nx);
      for (int b = 0; b < batch; ++b)
        for (int j = 0; j < d; ++j) gx[static_cast<std::size_t>(b) * d + j] += self->grad[b];
    });
  }
  return ob.finish();
}

// ---------------------------------------------------------------------------
// dense layers
// ---------------------------------------------------------------------------

// x [B, I] * w [O, I]^T + b [O] -> [B, O]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1)
    throw std::invalid_argument("linear: expected x [B,I], w [O,I], b [O]");
  int batch = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
  if (w.dim(1) != in || b.dim(0) != out_dim)
    throw std::invalid_argument("linear: x " + shape_str(x.shape()) + " incompatible with w " +
                                shape_str(w.shape()) + ", b " + shape_str(b.shape()));
  OpBuilder ob({batch, out_dim}, {x, w, b});
  auto y = ob.out();
  const double* px = x.data().data();
  const double* pw = w.data().data();
  const double* pb = b.data().data();
  for (int bi = 0; bi < batch; ++bi) {
    const double* xr = px + static_cast<std::size_t>(bi) * in;
    double* yr = y.data() + static_cast<std::size_t>(bi) * out_dim;
    for (int o = 0; o < out_dim; ++o) {
      const double* wr = pw + static_cast<std::size_t>(o) * in;
      double acc = pb[o];
      for (int i = 0; i < in; ++i) acc += xr[i] * wr[i];
      yr[o] = acc;
    }
  }
  if (ob.tracked()) {
    auto self = ob.raw();
    auto nx = x.node_ptr(), nw = w.node_ptr(), nb = b.node_ptr();
    ob.set_backprop([self, nx, nw, nb, batch, in, out_dim] {
      const double* g = self->grad.data();
      if (nx->requires_grad) {
        auto gx = detail::grad_of(nx);
        const double* pw = nw->data.data();
        for (int bi = 0; bi < batch; ++bi) {
          double* gxr = gx.data() + static_cast<std::size_t>(bi) * in;
          const double* gr = g + static_cast<std::size_t>(bi) * out_dim;
          for (int o = 0; o < out_dim; ++o) {
            double go = gr[o];
            const double* wr = pw + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) gxr[i] += go * wr[i];
          }
        }
      }
      if (nw->requires_grad) {
        auto gw = detail::grad_of(nw);
        const double* px = nx->data.data();
        for (int bi = 0; bi < batch; ++bi) {
          const double* xr = px + static_cast<std::size_t>(bi) * in;
          const double* gr = g + static_cast<std::size_t>(bi) * out_dim;
          for (int o = 0; o < out_dim; ++o) {
            double go = gr[o];
            double* gwr = gw.data() + static_cast<std::size_t>(o) * in;
            for (int i = 0; i < in; ++i) gwr[i] += go * xr[i];
          }
        }
      }
      if (nb->requires_grad) {
        auto gb = detail::grad_of(nb);
        for (int bi = 0; bi < batch; ++bi) {
          const double* gr = g + static_cast<std::size_t>(bi) * out_dim;
          for (int o = 0; o < out_dim; ++o) gb[o] += gr[o];
        }
      }
    });
  }
  return ob.finish();
}

// per-row normalization over features with learned gain/bias
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-6) {
  if (x.ndim() != 2) throw std::invalid_argument("layer_norm: expected [batch, d] input");
  int batch = x.dim(0), d = x.dim(1);
  if (gain.ndim() != 1 || gain.dim(0) != d || bias.ndim() != 1 || bias.dim(0) != d)
    throw std::invalid_argument("layer_norm: gain/bias must be [d]");
  OpBuilder ob(x.shape(), {x, gain, bias});
  auto y = ob.out();
  auto px = x.data();
  auto pg = gain.data();
  auto pbi = bias.data();
  // saved for backward
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(batch) * d);
  auto inv_sigma = std::make_shared<std::vector<double>>(batch);
  for (int b = 0; b < batch; ++b) {
    const double* xr = px.data() + static_cast<std::size_t>(b) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= d;
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[b] = is;
    for (int j = 0; j < d; ++j) {
      double xh = (xr[j] - mu) * is;
      (*xhat)[static_cast<std::size_t>(b) * d + j] = xh;
      y[static_cast<std::size_t>(b) * d + j] = xh * pg[j] + pbi[j];
    }
  }
  if (ob.tracked()) {
    auto self = ob.raw();
    auto nx = x.node_ptr(), ng = gain.node_ptr(), nb = bias.node_ptr();
    ob.set_backprop([self, nx, ng, nb, xhat, inv_sigma, batch, d] {
      const double* g = self->grad.data();
      if (ng->requires_grad) {
        auto gg = detail::grad_of(ng);
        for (int b = 0; b < batch; ++b)
          for (int j = 0; j < d; ++j)
            gg[j] += g[static_cast<std::size_t>(b) * d + j] * (*xhat)[static_cast<std::size_t>(b) * d + j];
      }
      if (nb->requires_grad) {
        auto gb = detail::grad_of(nb);
        for (int b = 0; b < batch; ++b)
          for (int j = 0; j < d; ++j) gb[j] += g[static_cast<std::size_t>(b) * d + j];
      }
      if (nx->requires_grad) {
        auto gx = detail::grad_of(nx);
        const double* pg = ng->data.data();
        for (int b = 0; b < batch; ++b) {
          const double* gr = g + static_cast<std::size_t>(b) * d;
          const double* xh = xhat->data() + static_cast<std::size_t>(b) * d;
          double mean_h = 0.0, mean_hx = 0.0;
          for (int j = 0; j < d; ++j) {
            double h = gr[j] * pg[j];
            mean_h += h;
            mean_hx += h * xh[j];
          }
          mean_h /= d;
          mean_hx /= d;
          double is = (*inv_sigma)[b];
          double* gxr = gx.data() + static_cast<std::size_t>(b) * d;
          for (int j = 0; j < d; ++j) {
            double h = gr[j] * pg[j];
            gxr[j] += (h - mean_h - xh[j] * mean_hx) * is;
          }
        }
      }
    });
  }
  return ob.finish();
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Gradients accumulate into the
// grad slots of every reachable tensor that requires grad; call zero_grad
// on parameters before each backward to avoid silent accumulation.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // iterative topological order over the tape
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      detail::Node* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // interior grads are scratch space per sweep; only leaves accumulate
  for (detail::Node* n : order)
    if (n->backprop && !n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), 0.0);

  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backprop) {
      n->ensure_grad();
      n->backprop();
    }
  }
}

}  // namespace flowrl
