#include "redraw/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>
#include <utility>

#include "redraw/parallel.hpp"

namespace redraw {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "{";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "}";
}

namespace detail {
void ensure_grad(Node& n) {
  if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
}
}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local int t_no_grad_depth = 0;

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw TensorError(std::string(op) + " produced a non-finite value");
    }
  }
}

NodePtr make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw TensorError("tensor data length " + std::to_string(data.size()) +
                      " does not match shape " + shape_str(shape));
  }
  check_finite(data, "tensor construction");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return n;
}

Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward_fn) {
  check_finite(data, op);
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  bool track = grad_enabled();
  bool any = false;
  if (track) {
    for (const auto& p : parents) any = any || (p && p->requires_grad);
  }
  if (track && any) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor::wrap(std::move(n));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw TensorError(std::string(op) + ": shape mismatch " +
                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& t, int rank) {
  if (t.rank() != rank) {
    throw TensorError(std::string(op) + ": expected rank " +
                      std::to_string(rank) + ", got shape " +
                      shape_str(t.shape()));
  }
}

}  // namespace

NoGradGuard::NoGradGuard() { ++t_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --t_no_grad_depth; }
bool grad_enabled() { return t_no_grad_depth == 0; }

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return wrap(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return wrap(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  return wrap(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar_value(double v) { return from_data({1}, {v}); }

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::dim(int i) const { return node_->shape.at(i); }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }
int64_t Tensor::size() const { return static_cast<int64_t>(node_->data.size()); }
const std::vector<double>& Tensor::values() const { return node_->data; }
bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->backward_fn == nullptr; }

std::vector<double>& Tensor::mutable_values() {
  if (!is_leaf()) throw TensorError("mutable_values: only leaf tensors may be mutated");
  return node_->data;
}

double Tensor::scalar() const {
  if (size() != 1) {
    throw TensorError("scalar: tensor has shape " + shape_str(shape()));
  }
  return node_->data[0];
}

const std::vector<double>& Tensor::grad() const {
  detail::ensure_grad(*node_);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto pa = a.node(), pb = b.node();
  std::vector<double> out(a.size());
  const auto& xa = pa->data;
  const auto& xb = pb->data;
  for (size_t i = 0; i < out.size(); ++i) out[i] = xa[i] + xb[i];
  return make_result(a.shape(), std::move(out), "add", {pa, pb}, [pa, pb](Node& n) {
    if (pa->requires_grad) {
      detail::ensure_grad(*pa);
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    }
    if (pb->requires_grad) {
      detail::ensure_grad(*pb);
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto pa = a.node(), pb = b.node();
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa->data[i] - pb->data[i];
  return make_result(a.shape(), std::move(out), "sub", {pa, pb}, [pa, pb](Node& n) {
    if (pa->requires_grad) {
      detail::ensure_grad(*pa);
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i];
    }
    if (pb->requires_grad) {
      detail::ensure_grad(*pb);
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] -= n.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto pa = a.node(), pb = b.node();
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa->data[i] * pb->data[i];
  return make_result(a.shape(), std::move(out), "mul", {pa, pb}, [pa, pb](Node& n) {
    if (pa->requires_grad) {
      detail::ensure_grad(*pa);
      for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      detail::ensure_grad(*pb);
      for (size_t i = 0; i < n.grad.size(); ++i) pb->grad[i] += n.grad[i] * pa->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  auto pa = a.node();
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = pa->data[i] * s;
  return make_result(a.shape(), std::move(out), "scale", {pa}, [pa, s](Node& n) {
    if (!pa->requires_grad) return;
    detail::ensure_grad(*pa);
    for (size_t i = 0; i < n.grad.size(); ++i) pa->grad[i] += n.grad[i] * s;
  });
}

Tensor silu(const Tensor& x) {
  auto px = x.node();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) {
    double v = px->data[i];
    out[i] = v / (1.0 + std::exp(-v));
  }
  return make_result(x.shape(), std::move(out), "silu", {px}, [px](Node& n) {
    if (!px->requires_grad) return;
    detail::ensure_grad(*px);
    for (size_t i = 0; i < n.grad.size(); ++i) {
      double v = px->data[i];
      double s = 1.0 / (1.0 + std::exp(-v));
      px->grad[i] += n.grad[i] * (s + v * s * (1.0 - s));
    }
  });
}

Tensor relu(const Tensor& x) {
  auto px = x.node();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = px->data[i] > 0.0 ? px->data[i] : 0.0;
  return make_result(x.shape(), std::move(out), "relu", {px}, [px](Node& n) {
    if (!px->requires_grad) return;
    detail::ensure_grad(*px);
    for (size_t i = 0; i < n.grad.size(); ++i) {
      if (px->data[i] > 0.0) px->grad[i] += n.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  auto px = x.node();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-px->data[i]));
  // The derivative only needs the output values, available as n.data.
  return make_result(x.shape(), std::move(out), "sigmoid", {px}, [px](Node& n) {
    if (!px->requires_grad) return;
    detail::ensure_grad(*px);
    for (size_t i = 0; i < n.grad.size(); ++i) {
      double s = n.data[i];
      px->grad[i] += n.grad[i] * s * (1.0 - s);
    }
  });
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  int n = a.dim(0), k = a.dim(1), k2 = b.dim(0), m = b.dim(1);
  if (k != k2) {
    throw TensorError("matmul: inner dimensions disagree " + shape_str(a.shape()) +
                      " x " + shape_str(b.shape()));
  }
  auto pa = a.node(), pb = b.node();
  std::vector<double> out(static_cast<size_t>(n) * m, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int p = 0; p < k; ++p) {
      double av = pa->data[static_cast<size_t>(i) * k + p];
      const double* brow = pb->data.data() + static_cast<size_t>(p) * m;
      double* orow = out.data() + static_cast<size_t>(i) * m;
      for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return make_result({n, m}, std::move(out), "matmul", {pa, pb},
                     [pa, pb, n, k, m](Node& nd) {
                       if (pa->requires_grad) {
                         detail::ensure_grad(*pa);
                         // dA = dOut * B^T
                         for (int i = 0; i < n; ++i) {
                           for (int p = 0; p < k; ++p) {
                             double acc = 0.0;
                             const double* grow = nd.grad.data() + static_cast<size_t>(i) * m;
                             const double* brow = pb->data.data() + static_cast<size_t>(p) * m;
                             for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
                             pa->grad[static_cast<size_t>(i) * k + p] += acc;
                           }
                         }
                       }
                       if (pb->requires_grad) {
                         detail::ensure_grad(*pb);
                         // dB = A^T * dOut
                         for (int p = 0; p < k; ++p) {
                           for (int i = 0; i < n; ++i) {
                             double av = pa->data[static_cast<size_t>(i) * k + p];
                             const double* grow = nd.grad.data() + static_cast<size_t>(i) * m;
                             double* brow = pb->grad.data() + static_cast<size_t>(p) * m;
                             for (int j = 0; j < m; ++j) brow[j] += av * grow[j];
                           }
                         }
                       }
                     });
}

// ---- conv2d ----

namespace {

struct ConvDims {
  int N, C, H, W, F, kH, kW, Ho, Wo, pad, stride;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int padding, int stride) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d", w, 4);
  ConvDims d;
  d.N = x.dim(0); d.C = x.dim(1); d.H = x.dim(2); d.W = x.dim(3);
  d.F = w.dim(0); d.kH = w.dim(2); d.kW = w.dim(3);
  d.pad = padding; d.stride = stride;
  if (w.dim(1) != d.C) {
    throw TensorError("conv2d: kernel channels " + std::to_string(w.dim(1)) +
                      " do not match input channels " + std::to_string(d.C));
  }
  if (d.kH < 1 || d.kW < 1) throw TensorError("conv2d: empty kernel");
  if (padding < 0 || stride < 1) throw TensorError("conv2d: padding must be >=0 and stride >=1");
  int ho = (d.H + 2 * padding - d.kH) / stride + 1;
  int wo = (d.W + 2 * padding - d.kW) / stride + 1;
  if (ho <= 0 || wo <= 0) {
    throw TensorError("conv2d: kernel " + shape_str(w.shape()) +
                      " does not fit input " + shape_str(x.shape()));
  }
  d.Ho = ho; d.Wo = wo;
  return d;
}

// Forward, stride 1: scalar-broadcast kernel with contiguous inner loops.
void conv_fwd_s1(const double* x, const double* w, double* out, const ConvDims& d) {
  par::parallel_for(0, static_cast<int64_t>(d.N) * d.F, [&](int64_t lo, int64_t hi) {
    for (int64_t nf = lo; nf < hi; ++nf) {
      int n = static_cast<int>(nf / d.F), f = static_cast<int>(nf % d.F);
      double* on = out + (static_cast<size_t>(n) * d.F + f) * d.Ho * d.Wo;
      for (int c = 0; c < d.C; ++c) {
        const double* xc = x + (static_cast<size_t>(n) * d.C + c) * d.H * d.W;
        const double* wf = w + ((static_cast<size_t>(f) * d.C + c) * d.kH) * d.kW;
        for (int ky = 0; ky < d.kH; ++ky) {
          int y0 = std::max(0, d.pad - ky);
          int y1 = std::min(d.Ho, d.H + d.pad - ky);
          for (int kx = 0; kx < d.kW; ++kx) {
            double wv = wf[ky * d.kW + kx];
            if (wv == 0.0) continue;
            int x0 = std::max(0, d.pad - kx);
            int x1 = std::min(d.Wo, d.W + d.pad - kx);
            int dy = ky - d.pad, dx = kx - d.pad;
            for (int yy = y0; yy < y1; ++yy) {
              const double* xrow = xc + static_cast<size_t>(yy + dy) * d.W + dx;
              double* orow = on + static_cast<size_t>(yy) * d.Wo;
              for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * xrow[xx];
            }
          }
        }
      }
    }
  });
}

void conv_fwd_generic(const double* x, const double* w, double* out, const ConvDims& d) {
  for (int n = 0; n < d.N; ++n)
    for (int f = 0; f < d.F; ++f)
      for (int yy = 0; yy < d.Ho; ++yy)
        for (int xx = 0; xx < d.Wo; ++xx) {
          double acc = 0.0;
          for (int c = 0; c < d.C; ++c)
            for (int ky = 0; ky < d.kH; ++ky) {
              int iy = yy * d.stride + ky - d.pad;
              if (iy < 0 || iy >= d.H) continue;
              for (int kx = 0; kx < d.kW; ++kx) {
                int ix = xx * d.stride + kx - d.pad;
                if (ix < 0 || ix >= d.W) continue;
                acc += w[((static_cast<size_t>(f) * d.C + c) * d.kH + ky) * d.kW + kx] *
                       x[(static_cast<size_t>(n) * d.C + c) * d.H * d.W + static_cast<size_t>(iy) * d.W + ix];
              }
            }
          out[((static_cast<size_t>(n) * d.F + f) * d.Ho + yy) * d.Wo + xx] = acc;
        }
}

void conv_bwd_input_s1(const double* w, const double* dout, double* dx, const ConvDims& d) {
  par::parallel_for(0, static_cast<int64_t>(d.N) * d.C, [&](int64_t lo, int64_t hi) {
    for (int64_t nc = lo; nc < hi; ++nc) {
      int n = static_cast<int>(nc / d.C), c = static_cast<int>(nc % d.C);
      double* dxc = dx + (static_cast<size_t>(n) * d.C + c) * d.H * d.W;
      for (int f = 0; f < d.F; ++f) {
        const double* df = dout + (static_cast<size_t>(n) * d.F + f) * d.Ho * d.Wo;
        const double* wf = w + ((static_cast<size_t>(f) * d.C + c) * d.kH) * d.kW;
        for (int ky = 0; ky < d.kH; ++ky) {
          int y0 = std::max(0, d.pad - ky);
          int y1 = std::min(d.Ho, d.H + d.pad - ky);
          for (int kx = 0; kx < d.kW; ++kx) {
            double wv = wf[ky * d.kW + kx];
            if (wv == 0.0) continue;
            int x0 = std::max(0, d.pad - kx);
            int x1 = std::min(d.Wo, d.W + d.pad - kx);
            int dy = ky - d.pad, dx_off = kx - d.pad;
            for (int yy = y0; yy < y1; ++yy) {
              double* dxrow = dxc + static_cast<size_t>(yy + dy) * d.W + dx_off;
              const double* drow = df + static_cast<size_t>(yy) * d.Wo;
              for (int xx = x0; xx < x1; ++xx) dxrow[xx] += wv * drow[xx];
            }
          }
        }
      }
    }
  });
}

void conv_bwd_kernel_s1(const double* x, const double* dout, double* dw, const ConvDims& d) {
  par::parallel_for(0, d.F, [&](int64_t lo, int64_t hi) {
    for (int64_t f = lo; f < hi; ++f) {
      for (int c = 0; c < d.C; ++c) {
        double* wf = dw + ((static_cast<size_t>(f) * d.C + c) * d.kH) * d.kW;
        for (int ky = 0; ky < d.kH; ++ky) {
          int y0 = std::max(0, d.pad - ky);
          int y1 = std::min(d.Ho, d.H + d.pad - ky);
          for (int kx = 0; kx < d.kW; ++kx) {
            int x0 = std::max(0, d.pad - kx);
            int x1 = std::min(d.Wo, d.W + d.pad - kx);
            int dy = ky - d.pad, dx_off = kx - d.pad;
            double acc = 0.0;
            for (int n = 0; n < d.N; ++n) {
              const double* xc = x + (static_cast<size_t>(n) * d.C + c) * d.H * d.W;
              const double* df = dout + (static_cast<size_t>(n) * d.F + f) * d.Ho * d.Wo;
              for (int yy = y0; yy < y1; ++yy) {
                const double* xrow = xc + static_cast<size_t>(yy + dy) * d.W + dx_off;
                const double* drow = df + static_cast<size_t>(yy) * d.Wo;
                double rowacc = 0.0;
                for (int xx = x0; xx < x1; ++xx) rowacc += xrow[xx] * drow[xx];
                acc += rowacc;
              }
            }
            wf[ky * d.kW + kx] += acc;
          }
        }
      }
    }
  });
}

void conv_bwd_generic(const double* x, const double* w, const double* dout,
                      double* dx, double* dw, const ConvDims& d) {
  for (int n = 0; n < d.N; ++n)
    for (int f = 0; f < d.F; ++f)
      for (int yy = 0; yy < d.Ho; ++yy)
        for (int xx = 0; xx < d.Wo; ++xx) {
          double g = dout[((static_cast<size_t>(n) * d.F + f) * d.Ho + yy) * d.Wo + xx];
          if (g == 0.0) continue;
          for (int c = 0; c < d.C; ++c)
            for (int ky = 0; ky < d.kH; ++ky) {
              int iy = yy * d.stride + ky - d.pad;
              if (iy < 0 || iy >= d.H) continue;
              for (int kx = 0; kx < d.kW; ++kx) {
                int ix = xx * d.stride + kx - d.pad;
                if (ix < 0 || ix >= d.W) continue;
                size_t xi = (static_cast<size_t>(n) * d.C + c) * d.H * d.W + static_cast<size_t>(iy) * d.W + ix;
                size_t wi = ((static_cast<size_t>(f) * d.C + c) * d.kH + ky) * d.kW + kx;
                if (dx) dx[xi] += w[wi] * g;
                if (dw) dw[wi] += x[xi] * g;
              }
            }
        }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, int padding, int stride) {
  ConvDims d = conv_dims(x, w, padding, stride);
  auto px = x.node(), pw = w.node();
  std::vector<double> out(static_cast<size_t>(d.N) * d.F * d.Ho * d.Wo, 0.0);
  if (stride == 1) {
    conv_fwd_s1(px->data.data(), pw->data.data(), out.data(), d);
  } else {
    conv_fwd_generic(px->data.data(), pw->data.data(), out.data(), d);
  }
  return make_result({d.N, d.F, d.Ho, d.Wo}, std::move(out), "conv2d", {px, pw},
                     [px, pw, d](Node& n) {
                       if (d.stride == 1) {
                         if (px->requires_grad) {
                           detail::ensure_grad(*px);
                           conv_bwd_input_s1(pw->data.data(), n.grad.data(), px->grad.data(), d);
                         }
                         if (pw->requires_grad) {
                           detail::ensure_grad(*pw);
                           conv_bwd_kernel_s1(px->data.data(), n.grad.data(), pw->grad.data(), d);
                         }
                       } else {
                         double* dx = nullptr;
                         double* dw = nullptr;
                         if (px->requires_grad) { detail::ensure_grad(*px); dx = px->grad.data(); }
                         if (pw->requires_grad) { detail::ensure_grad(*pw); dw = pw->grad.data(); }
                         conv_bwd_generic(px->data.data(), pw->data.data(), n.grad.data(), dx, dw, d);
                       }
                     });
}

// ---- shape-structured ops ----

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  require_rank("add_channel_bias", x, 4);
  require_rank("add_channel_bias", b, 1);
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (b.dim(0) != C) {
    throw TensorError("add_channel_bias: bias " + shape_str(b.shape()) +
                      " does not match channels " + std::to_string(C));
  }
  auto px = x.node(), pb = b.node();
  std::vector<double> out(x.size());
  size_t hw = static_cast<size_t>(H) * W;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* xr = px->data.data() + (static_cast<size_t>(n) * C + c) * hw;
      double* orow = out.data() + (static_cast<size_t>(n) * C + c) * hw;
      double bv = pb->data[c];
      for (size_t i = 0; i < hw; ++i) orow[i] = xr[i] + bv;
    }
  return make_result(x.shape(), std::move(out), "add_channel_bias", {px, pb},
                     [px, pb, N, C, hw](Node& nd) {
                       if (px->requires_grad) {
                         detail::ensure_grad(*px);
                         for (size_t i = 0; i < nd.grad.size(); ++i) px->grad[i] += nd.grad[i];
                       }
                       if (pb->requires_grad) {
                         detail::ensure_grad(*pb);
                         for (int n = 0; n < N; ++n)
                           for (int c = 0; c < C; ++c) {
                             const double* g = nd.grad.data() + (static_cast<size_t>(n) * C + c) * hw;
                             double acc = 0.0;
                             for (size_t i = 0; i < hw; ++i) acc += g[i];
                             pb->grad[c] += acc;
                           }
                       }
                     });
}

Tensor add_sample_bias(const Tensor& x, const Tensor& b) {
  require_rank("add_sample_bias", x, 4);
  require_rank("add_sample_bias", b, 2);
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (b.dim(0) != N || b.dim(1) != C) {
    throw TensorError("add_sample_bias: bias " + shape_str(b.shape()) +
                      " does not match input " + shape_str(x.shape()));
  }
  auto px = x.node(), pb = b.node();
  std::vector<double> out(x.size());
  size_t hw = static_cast<size_t>(H) * W;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* xr = px->data.data() + (static_cast<size_t>(n) * C + c) * hw;
      double* orow = out.data() + (static_cast<size_t>(n) * C + c) * hw;
      double bv = pb->data[static_cast<size_t>(n) * C + c];
      for (size_t i = 0; i < hw; ++i) orow[i] = xr[i] + bv;
    }
  return make_result(x.shape(), std::move(out), "add_sample_bias", {px, pb},
                     [px, pb, N, C, hw](Node& nd) {
                       if (px->requires_grad) {
                         detail::ensure_grad(*px);
                         for (size_t i = 0; i < nd.grad.size(); ++i) px->grad[i] += nd.grad[i];
                       }
                       if (pb->requires_grad) {
                         detail::ensure_grad(*pb);
                         for (int n = 0; n < N; ++n)
                           for (int c = 0; c < C; ++c) {
                             const double* g = nd.grad.data() + (static_cast<size_t>(n) * C + c) * hw;
                             double acc = 0.0;
                             for (size_t i = 0; i < hw; ++i) acc += g[i];
                             pb->grad[static_cast<size_t>(n) * C + c] += acc;
                           }
                       }
                     });
}

Tensor avg_pool2(const Tensor& x) {
  require_rank("avg_pool2", x, 4);
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    throw TensorError("avg_pool2: spatial dims must be even, got " + shape_str(x.shape()));
  }
  int Ho = H / 2, Wo = W / 2;
  auto px = x.node();
  std::vector<double> out(static_cast<size_t>(N) * C * Ho * Wo);
  for (int nc = 0; nc < N * C; ++nc) {
    const double* xc = px->data.data() + static_cast<size_t>(nc) * H * W;
    double* oc = out.data() + static_cast<size_t>(nc) * Ho * Wo;
    for (int y = 0; y < Ho; ++y)
      for (int xx = 0; xx < Wo; ++xx) {
        const double* r0 = xc + static_cast<size_t>(2 * y) * W + 2 * xx;
        const double* r1 = r0 + W;
        oc[static_cast<size_t>(y) * Wo + xx] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  }
  return make_result({N, C, Ho, Wo}, std::move(out), "avg_pool2", {px},
                     [px, N, C, H, W, Ho, Wo](Node& nd) {
                       if (!px->requires_grad) return;
                       detail::ensure_grad(*px);
                       for (int nc = 0; nc < N * C; ++nc) {
                         double* dxc = px->grad.data() + static_cast<size_t>(nc) * H * W;
                         const double* g = nd.grad.data() + static_cast<size_t>(nc) * Ho * Wo;
                         for (int y = 0; y < Ho; ++y)
                           for (int xx = 0; xx < Wo; ++xx) {
                             double gv = 0.25 * g[static_cast<size_t>(y) * Wo + xx];
                             double* r0 = dxc + static_cast<size_t>(2 * y) * W + 2 * xx;
                             double* r1 = r0 + W;
                             r0[0] += gv; r0[1] += gv; r1[0] += gv; r1[1] += gv;
                           }
                       }
                     });
}

Tensor upsample2(const Tensor& x) {
  require_rank("upsample2", x, 4);
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int Ho = H * 2, Wo = W * 2;
  auto px = x.node();
  std::vector<double> out(static_cast<size_t>(N) * C * Ho * Wo);
  for (int nc = 0; nc < N * C; ++nc) {
    const double* xc = px->data.data() + static_cast<size_t>(nc) * H * W;
    double* oc = out.data() + static_cast<size_t>(nc) * Ho * Wo;
    for (int y = 0; y < H; ++y) {
      const double* xrow = xc + static_cast<size_t>(y) * W;
      double* o0 = oc + static_cast<size_t>(2 * y) * Wo;
      double* o1 = o0 + Wo;
      for (int xx = 0; xx < W; ++xx) {
        double v = xrow[xx];
        o0[2 * xx] = v; o0[2 * xx + 1] = v;
        o1[2 * xx] = v; o1[2 * xx + 1] = v;
      }
    }
  }
  return make_result({N, C, Ho, Wo}, std::move(out), "upsample2", {px},
                     [px, N, C, H, W, Wo](Node& nd) {
                       if (!px->requires_grad) return;
                       detail::ensure_grad(*px);
                       for (int nc = 0; nc < N * C; ++nc) {
                         double* dxc = px->grad.data() + static_cast<size_t>(nc) * H * W;
                         const double* g = nd.grad.data() + static_cast<size_t>(nc) * (2 * H) * Wo;
                         for (int y = 0; y < H; ++y) {
                           const double* g0 = g + static_cast<size_t>(2 * y) * Wo;
                           const double* g1 = g0 + Wo;
                           double* dxrow = dxc + static_cast<size_t>(y) * W;
                           for (int xx = 0; xx < W; ++xx) {
                             dxrow[xx] += g0[2 * xx] + g0[2 * xx + 1] + g1[2 * xx] + g1[2 * xx + 1];
                           }
                         }
                       }
                     });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank("concat_channels", a, 4);
  require_rank("concat_channels", b, 4);
  int N = a.dim(0), Ca = a.dim(1), H = a.dim(2), W = a.dim(3);
  int Cb = b.dim(1);
  if (b.dim(0) != N || b.dim(2) != H || b.dim(3) != W) {
    throw TensorError("concat_channels: incompatible shapes " + shape_str(a.shape()) +
                      " and " + shape_str(b.shape()));
  }
  auto pa = a.node(), pb = b.node();
  size_t hw = static_cast<size_t>(H) * W;
  std::vector<double> out(static_cast<size_t>(N) * (Ca + Cb) * hw);
  for (int n = 0; n < N; ++n) {
    std::memcpy(out.data() + static_cast<size_t>(n) * (Ca + Cb) * hw,
                pa->data.data() + static_cast<size_t>(n) * Ca * hw, Ca * hw * sizeof(double));
    std::memcpy(out.data() + (static_cast<size_t>(n) * (Ca + Cb) + Ca) * hw,
                pb->data.data() + static_cast<size_t>(n) * Cb * hw, Cb * hw * sizeof(double));
  }
  return make_result({N, Ca + Cb, H, W}, std::move(out), "concat_channels", {pa, pb},
                     [pa, pb, N, Ca, Cb, hw](Node& nd) {
                       for (int n = 0; n < N; ++n) {
                         const double* g = nd.grad.data() + static_cast<size_t>(n) * (Ca + Cb) * hw;
                         if (pa->requires_grad) {
                           detail::ensure_grad(*pa);
                           double* da = pa->grad.data() + static_cast<size_t>(n) * Ca * hw;
                           for (size_t i = 0; i < Ca * hw; ++i) da[i] += g[i];
                         }
                         if (pb->requires_grad) {
                           detail::ensure_grad(*pb);
                           double* db = pb->grad.data() + static_cast<size_t>(n) * Cb * hw;
                           const double* gb = g + Ca * hw;
                           for (size_t i = 0; i < Cb * hw; ++i) db[i] += gb[i];
                         }
                       }
                     });
}

Tensor embedding(const Tensor& table, const std::vector<int>& idx) {
  require_rank("embedding", table, 2);
  int V = table.dim(0), D = table.dim(1);
  for (int i : idx) {
    if (i < 0 || i >= V) throw TensorError("embedding: index " + std::to_string(i) + " out of range");
  }
  auto pt = table.node();
  int N = static_cast<int>(idx.size());
  std::vector<double> out(static_cast<size_t>(N) * D);
  for (int n = 0; n < N; ++n) {
    std::memcpy(out.data() + static_cast<size_t>(n) * D,
                pt->data.data() + static_cast<size_t>(idx[n]) * D, D * sizeof(double));
  }
  auto indices = idx;
  return make_result({N, D}, std::move(out), "embedding", {pt},
                     [pt, indices, D](Node& nd) {
                       if (!pt->requires_grad) return;
                       detail::ensure_grad(*pt);
                       for (size_t n = 0; n < indices.size(); ++n) {
                         const double* g = nd.grad.data() + n * D;
                         double* row = pt->grad.data() + static_cast<size_t>(indices[n]) * D;
                         for (int j = 0; j < D; ++j) row[j] += g[j];
                       }
                     });
}

// ---- reductions ----

Tensor mse(const Tensor& pred, const Tensor& target) {
  require_same_shape("mse", pred, target);
  auto pp = pred.node(), pt = target.node();
  double acc = 0.0;
  size_t n = pp->data.size();
  for (size_t i = 0; i < n; ++i) {
    double d = pp->data[i] - pt->data[i];
    acc += d * d;
  }
  double inv = 1.0 / static_cast<double>(n);
  return make_result({1}, {acc * inv}, "mse", {pp, pt}, [pp, pt, inv](Node& nd) {
    double g = nd.grad[0];
    if (pp->requires_grad) {
      detail::ensure_grad(*pp);
      for (size_t i = 0; i < pp->data.size(); ++i) {
        pp->grad[i] += g * 2.0 * (pp->data[i] - pt->data[i]) * inv;
      }
    }
    if (pt->requires_grad) {
      detail::ensure_grad(*pt);
      for (size_t i = 0; i < pt->data.size(); ++i) {
        pt->grad[i] -= g * 2.0 * (pp->data[i] - pt->data[i]) * inv;
      }
    }
  });
}

Tensor masked_mse(const Tensor& pred, const Tensor& target, const Tensor& mask,
                  const std::vector<double>& denom) {
  require_same_shape("masked_mse", pred, target);
  require_same_shape("masked_mse", pred, mask);
  require_rank("masked_mse", pred, 4);
  int N = pred.dim(0);
  if (static_cast<int>(denom.size()) != N) {
    throw TensorError("masked_mse: denominators must match the batch dimension");
  }
  for (double dv : denom) {
    if (!(dv > 0.0)) throw TensorError("masked_mse: denominators must be positive (empty mask?)");
  }
  auto pp = pred.node(), pt = target.node(), pm = mask.node();
  size_t per = pp->data.size() / N;
  double total = 0.0;
  for (int b = 0; b < N; ++b) {
    const double* p = pp->data.data() + b * per;
    const double* t = pt->data.data() + b * per;
    const double* m = pm->data.data() + b * per;
    double acc = 0.0;
    for (size_t i = 0; i < per; ++i) {
      double d = p[i] - t[i];
      acc += m[i] * d * d;
    }
    total += acc / denom[b];
  }
  total /= N;
  auto dn = denom;
  return make_result({1}, {total}, "masked_mse", {pp, pt, pm},
                     [pp, pt, pm, dn, N, per](Node& nd) {
                       double g = nd.grad[0];
                       if (pp->requires_grad) {
                         detail::ensure_grad(*pp);
                         for (int b = 0; b < N; ++b) {
                           double s = g * 2.0 / (dn[b] * N);
                           const double* p = pp->data.data() + b * per;
                           const double* t = pt->data.data() + b * per;
                           const double* m = pm->data.data() + b * per;
                           double* dp = pp->grad.data() + b * per;
                           for (size_t i = 0; i < per; ++i) dp[i] += s * m[i] * (p[i] - t[i]);
                         }
                       }
                       if (pt->requires_grad) {
                         detail::ensure_grad(*pt);
                         for (int b = 0; b < N; ++b) {
                           double s = g * 2.0 / (dn[b] * N);
                           const double* p = pp->data.data() + b * per;
                           const double* t = pt->data.data() + b * per;
                           const double* m = pm->data.data() + b * per;
                           double* dt = pt->grad.data() + b * per;
                           for (size_t i = 0; i < per; ++i) dt[i] -= s * m[i] * (p[i] - t[i]);
                         }
                       }
                     });
}

Tensor sigmoid_bce(const Tensor& logits, const Tensor& targets) {
  require_same_shape("sigmoid_bce", logits, targets);
  auto pz = logits.node(), py = targets.node();
  size_t n = pz->data.size();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double z = pz->data[i], y = py->data[i];
    acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  double inv = 1.0 / static_cast<double>(n);
  return make_result({1}, {acc * inv}, "sigmoid_bce", {pz, py}, [pz, py, inv](Node& nd) {
    double g = nd.grad[0];
    if (pz->requires_grad) {
      detail::ensure_grad(*pz);
      for (size_t i = 0; i < pz->data.size(); ++i) {
        double s = 1.0 / (1.0 + std::exp(-pz->data[i]));
        pz->grad[i] += g * (s - py->data[i]) * inv;
      }
    }
    if (py->requires_grad) {
      detail::ensure_grad(*py);
      for (size_t i = 0; i < py->data.size(); ++i) {
        py->grad[i] += g * (-pz->data[i]) * inv;
      }
    }
  });
}

// ---- backward ----

void backward(const Tensor& loss) {
  if (!loss.defined()) throw TensorError("backward: undefined tensor");
  if (loss.size() != 1) {
    throw TensorError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  auto root = loss.node();
  if (!root->requires_grad) {
    throw TensorError("backward: loss was not produced by a recorded graph");
  }
  // Postorder DFS over parent edges; reversed it is a topological order in
  // which every consumer is processed before its producers.
  std::vector<NodePtr> order;
  std::unordered_set<Node*> seen;
  struct Frame { NodePtr node; size_t next_parent; };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    Frame& top = stack.back();
    if (top.next_parent < top.node->parents.size()) {
      NodePtr p = top.node->parents[top.next_parent++];
      if (p && !seen.count(p.get())) {
        seen.insert(p.get());
        stack.push_back({std::move(p), 0});
      }
    } else {
      order.push_back(top.node);
      stack.pop_back();
    }
  }
  for (const auto& n : order) {
    if (n->consumed) {
      throw TensorError("backward: graph already consumed; rebuild it before calling again");
    }
  }
  root->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (n.backward_fn) {
      if (!n.grad.empty()) n.backward_fn(n);
      n.consumed = true;
      n.backward_fn = nullptr;
      n.parents.clear();
    }
  }
}

// ---- ParameterStore ----

Tensor ParameterStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw TensorError("parameter registered twice: " + name);
  items_.emplace_back(name, t);
  return t;
}

Tensor& ParameterStore::at(const std::string& name) {
  for (auto& [k, v] : items_) {
    if (k == name) return v;
  }
  throw TensorError("no parameter named " + name);
}

const Tensor& ParameterStore::at(const std::string& name) const {
  for (const auto& [k, v] : items_) {
    if (k == name) return v;
  }
  throw TensorError("no parameter named " + name);
}

bool ParameterStore::contains(const std::string& name) const {
  for (const auto& [k, v] : items_) {
    if (k == name) return true;
  }
  return false;
}

void ParameterStore::zero_grads() {
  for (auto& [k, v] : items_) v.zero_grad();
}

int64_t ParameterStore::parameter_count() const {
  int64_t n = 0;
  for (const auto& [k, v] : items_) n += v.size();
  return n;
}

}  // namespace redraw
