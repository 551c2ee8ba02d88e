#include "gfp/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

namespace gfp {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// Views a rank-3 image as a batch of one.
Dims as_batch(const Dims& d) {
  if (d.size() == 3) return {1, d[0], d[1], d[2]};
  if (d.size() == 4) return d;
  throw ShapeError("expected [H,W,C] or [N,H,W,C], got " + dims_to_string(d));
}

Dims restore_rank(const Dims& batched, std::size_t rank) {
  if (rank == 3) return {batched[1], batched[2], batched[3]};
  return batched;
}

struct ConvGeom {
  int n, h, w, cin, k, stride, pad, ho, wo, cout;
  int rows() const { return n * ho * wo; }
  int cols() const { return k * k * cin; }
};

ConvGeom conv_geom(const Dims& in, const Dims& kernel, int stride, int pad) {
  if (kernel.size() != 4) throw ShapeError("conv kernel must be [k,k,Cin,Cout], got " + dims_to_string(kernel));
  if (in.size() != 4) throw ShapeError("conv input must be [N,H,W,C], got " + dims_to_string(in));
  if (kernel[0] != kernel[1]) throw ShapeError("conv kernel must be square");
  if (kernel[2] != in[3])
    throw ShapeError("conv channel mismatch: input " + dims_to_string(in) + " kernel " + dims_to_string(kernel));
  if (stride != 1 && stride != 2) throw ShapeError("conv stride must be 1 or 2");
  if (pad < 0) throw ShapeError("conv padding must be non-negative");
  ConvGeom g{in[0], in[1], in[2], in[3], kernel[0], stride, pad, 0, 0, kernel[3]};
  const int num_h = g.h + 2 * pad - g.k, num_w = g.w + 2 * pad - g.k;
  if (num_h < 0 || num_w < 0) throw ShapeError("conv output would be empty");
  g.ho = num_h / stride + 1;
  g.wo = num_w / stride + 1;
  return g;
}

template <class T>
RowMat<T> im2col(const T* x, const ConvGeom& g) {
  RowMat<T> cols = RowMat<T>::Zero(g.rows(), g.cols());
  for (int n = 0; n < g.n; ++n)
    for (int oy = 0; oy < g.ho; ++oy)
      for (int ox = 0; ox < g.wo; ++ox) {
        T* row = cols.data() + static_cast<std::size_t>((n * g.ho + oy) * g.wo + ox) * g.cols();
        for (int ky = 0; ky < g.k; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (int kx = 0; kx < g.k; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.w) continue;
            const T* src = x + (static_cast<std::size_t>(n * g.h + iy) * g.w + ix) * g.cin;
            std::copy(src, src + g.cin, row + (ky * g.k + kx) * g.cin);
          }
        }
      }
  return cols;
}

template <class T>
void col2im_add(const RowMat<T>& cols, const ConvGeom& g, T* dx) {
  for (int n = 0; n < g.n; ++n)
    for (int oy = 0; oy < g.ho; ++oy)
      for (int ox = 0; ox < g.wo; ++ox) {
        const T* row = cols.data() + static_cast<std::size_t>((n * g.ho + oy) * g.wo + ox) * g.cols();
        for (int ky = 0; ky < g.k; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (int kx = 0; kx < g.k; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.w) continue;
            T* dst = dx + (static_cast<std::size_t>(n * g.h + iy) * g.w + ix) * g.cin;
            const T* src = row + (ky * g.k + kx) * g.cin;
            for (int c = 0; c < g.cin; ++c) dst[c] += src[c];
          }
        }
      }
}

template <class T>
BasicTensor<T> conv_forward(const BasicTensor<T>& x, const BasicTensor<T>& kernel, const ConvGeom& g) {
  const RowMat<T> cols = im2col(x.ptr(), g);
  BasicTensor<T> out({g.n, g.ho, g.wo, g.cout});
  MapMat<T>(out.ptr(), g.rows(), g.cout).noalias() = cols * CMapMat<T>(kernel.ptr(), g.cols(), g.cout);
  return out;
}

// grad_out [N,Ho,Wo,Cout] -> input-shaped gradient.
template <class T>
void conv_backward_input(const T* grad_out, const BasicTensor<T>& kernel, const ConvGeom& g, T* dx) {
  RowMat<T> dcols(g.rows(), g.cols());
  dcols.noalias() = CMapMat<T>(grad_out, g.rows(), g.cout) * CMapMat<T>(kernel.ptr(), g.cols(), g.cout).transpose();
  col2im_add(dcols, g, dx);
}

template <class T>
void conv_backward_kernel(const RowMat<T>& cols, const T* grad_out, const ConvGeom& g, T* dk) {
  MapMat<T>(dk, g.cols(), g.cout).noalias() += cols.transpose() * CMapMat<T>(grad_out, g.rows(), g.cout);
}

constexpr int kBinomial[5] = {1, 4, 6, 4, 1};

template <class T>
void downsample_forward(const T* x, int n, int h, int w, int c, T* out) {
  const int ho = h / 2, wo = w / 2;
  std::vector<double> tmp(static_cast<std::size_t>(h) * wo * c);
  for (int b = 0; b < n; ++b) {
    const T* xb = x + static_cast<std::size_t>(b) * h * w * c;
    for (int y = 0; y < h; ++y)
      for (int j = 0; j < wo; ++j)
        for (int ch = 0; ch < c; ++ch) {
          double s = 0.0;
          for (int t = 0; t < 5; ++t) {
            const int ix = fn::reflect_index(2 * j + t - 2, w);
            s += kBinomial[t] * static_cast<double>(xb[(static_cast<std::size_t>(y) * w + ix) * c + ch]);
          }
          tmp[(static_cast<std::size_t>(y) * wo + j) * c + ch] = s;
        }
    T* ob = out + static_cast<std::size_t>(b) * ho * wo * c;
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j)
        for (int ch = 0; ch < c; ++ch) {
          double s = 0.0;
          for (int t = 0; t < 5; ++t) {
            const int iy = fn::reflect_index(2 * i + t - 2, h);
            s += kBinomial[t] * tmp[(static_cast<std::size_t>(iy) * wo + j) * c + ch];
          }
          ob[(static_cast<std::size_t>(i) * wo + j) * c + ch] = static_cast<T>(s / 256.0);
        }
  }
}

template <class T>
void downsample_backward(const T* g, int n, int h, int w, int c, T* dx) {
  const int ho = h / 2, wo = w / 2;
  std::vector<double> tmp(static_cast<std::size_t>(h) * wo * c);
  for (int b = 0; b < n; ++b) {
    std::fill(tmp.begin(), tmp.end(), 0.0);
    const T* gb = g + static_cast<std::size_t>(b) * ho * wo * c;
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j)
        for (int ch = 0; ch < c; ++ch) {
          const double v = gb[(static_cast<std::size_t>(i) * wo + j) * c + ch] / 256.0;
          for (int t = 0; t < 5; ++t) {
            const int iy = fn::reflect_index(2 * i + t - 2, h);
            tmp[(static_cast<std::size_t>(iy) * wo + j) * c + ch] += kBinomial[t] * v;
          }
        }
    T* db = dx + static_cast<std::size_t>(b) * h * w * c;
    for (int y = 0; y < h; ++y)
      for (int j = 0; j < wo; ++j)
        for (int ch = 0; ch < c; ++ch) {
          const double v = tmp[(static_cast<std::size_t>(y) * wo + j) * c + ch];
          for (int t = 0; t < 5; ++t) {
            const int ix = fn::reflect_index(2 * j + t - 2, w);
            db[(static_cast<std::size_t>(y) * w + ix) * c + ch] += static_cast<T>(kBinomial[t] * v);
          }
        }
  }
}

struct LerpTap {
  int i0, i1;
  double w0, w1;
};

std::vector<LerpTap> upsample_taps(int in, int out) {
  std::vector<LerpTap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double s = (o + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, in - 1);
    const double f = s - i0;
    taps[o] = {i0, i1, 1.0 - f, f};
  }
  return taps;
}

template <class T>
void upsample_forward(const T* x, int n, int h, int w, int c, T* out) {
  const int ho = 2 * h, wo = 2 * w;
  const auto ty = upsample_taps(h, ho), tx = upsample_taps(w, wo);
  for (int b = 0; b < n; ++b) {
    const T* xb = x + static_cast<std::size_t>(b) * h * w * c;
    T* ob = out + static_cast<std::size_t>(b) * ho * wo * c;
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox)
        for (int ch = 0; ch < c; ++ch) {
          auto px = [&](int y, int x2) { return static_cast<double>(xb[(static_cast<std::size_t>(y) * w + x2) * c + ch]); };
          const auto& a = ty[oy];
          const auto& bb = tx[ox];
          const double v = a.w0 * (bb.w0 * px(a.i0, bb.i0) + bb.w1 * px(a.i0, bb.i1)) +
                           a.w1 * (bb.w0 * px(a.i1, bb.i0) + bb.w1 * px(a.i1, bb.i1));
          ob[(static_cast<std::size_t>(oy) * wo + ox) * c + ch] = static_cast<T>(v);
        }
  }
}

template <class T>
void upsample_backward(const T* g, int n, int h, int w, int c, T* dx) {
  const int ho = 2 * h, wo = 2 * w;
  const auto ty = upsample_taps(h, ho), tx = upsample_taps(w, wo);
  for (int b = 0; b < n; ++b) {
    const T* gb = g + static_cast<std::size_t>(b) * ho * wo * c;
    T* db = dx + static_cast<std::size_t>(b) * h * w * c;
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox)
        for (int ch = 0; ch < c; ++ch) {
          const double v = gb[(static_cast<std::size_t>(oy) * wo + ox) * c + ch];
          const auto& a = ty[oy];
          const auto& bb = tx[ox];
          auto acc = [&](int y, int x2, double wt) {
            db[(static_cast<std::size_t>(y) * w + x2) * c + ch] += static_cast<T>(wt * v);
          };
          acc(a.i0, bb.i0, a.w0 * bb.w0);
          acc(a.i0, bb.i1, a.w0 * bb.w1);
          acc(a.i1, bb.i0, a.w1 * bb.w0);
          acc(a.i1, bb.i1, a.w1 * bb.w1);
        }
  }
}

template <class T>
void avg_pool_forward(const T* x, const Dims& d, int window, int stride, int ho, int wo, T* out) {
  const int n = d[0], h = d[1], w = d[2], c = d[3];
  const double inv = 1.0 / (window * window);
  std::vector<double> acc(c);
  for (int b = 0; b < n; ++b)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int dy = 0; dy < window; ++dy)
          for (int dx = 0; dx < window; ++dx) {
            const T* src = x + ((static_cast<std::size_t>(b) * h + oy * stride + dy) * w + ox * stride + dx) * c;
            for (int ch = 0; ch < c; ++ch) acc[ch] += src[ch];
          }
        T* dst = out + ((static_cast<std::size_t>(b) * ho + oy) * wo + ox) * c;
        for (int ch = 0; ch < c; ++ch) dst[ch] = static_cast<T>(acc[ch] * inv);
      }
}

template <class T>
void avg_pool_backward(const T* g, const Dims& d, int window, int stride, int ho, int wo, T* dx) {
  const int n = d[0], h = d[1], w = d[2], c = d[3];
  const double inv = 1.0 / (window * window);
  for (int b = 0; b < n; ++b)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        const T* src = g + ((static_cast<std::size_t>(b) * ho + oy) * wo + ox) * c;
        for (int dy = 0; dy < window; ++dy)
          for (int dxx = 0; dxx < window; ++dxx) {
            T* dst = dx + ((static_cast<std::size_t>(b) * h + oy * stride + dy) * w + ox * stride + dxx) * c;
            for (int ch = 0; ch < c; ++ch) dst[ch] += static_cast<T>(src[ch] * inv);
          }
      }
}

void check_pool(const Dims& d, int window, int stride) {
  if (window < 1 || stride < 1) throw ShapeError("pool window and stride must be positive");
  if (window > d[1] || window > d[2])
    throw ShapeError("pool window " + std::to_string(window) + " exceeds spatial dims " + dims_to_string(d));
}

void check_even(const Dims& d) {
  if (d[1] % 2 != 0 || d[2] % 2 != 0) throw ShapeError("gaussian_downsample needs even H and W, got " + dims_to_string(d));
}

template <class T>
void add_into(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void require_same(const Dims& a, const Dims& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + dims_to_string(a) + " vs " + dims_to_string(b));
}

std::pair<int, int> rows_cols(const Dims& d) {
  if (d.empty()) throw ShapeError("expected at least rank 1");
  const int n = d[0];
  return {n, static_cast<int>(dims_product(d) / n)};
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Pure kernels

namespace fn {

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, int stride, int pad) {
  const Dims bd = as_batch(input.dims());
  const auto g = conv_geom(bd, kernel.dims(), stride, pad);
  auto out = conv_forward(input, kernel, g);
  return input.rank() == 3 ? out.reshaped({g.ho, g.wo, g.cout}) : out;
}

template <class T>
BasicTensor<T> conv2d_transpose(const BasicTensor<T>& grad_out, const BasicTensor<T>& kernel, int stride, int pad,
                                int out_h, int out_w) {
  const Dims gd = as_batch(grad_out.dims());
  const auto g = conv_geom({gd[0], out_h, out_w, kernel.dim(2)}, kernel.dims(), stride, pad);
  if (g.ho != gd[1] || g.wo != gd[2] || g.cout != gd[3])
    throw ShapeError("conv2d_transpose: gradient dims " + dims_to_string(gd) + " inconsistent with output extent");
  BasicTensor<T> dx({g.n, g.h, g.w, g.cin});
  conv_backward_input(grad_out.ptr(), kernel, g, dx.ptr());
  return grad_out.rank() == 3 ? dx.reshaped({g.h, g.w, g.cin}) : dx;
}

template <class T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& input, int window, int stride) {
  const Dims d = as_batch(input.dims());
  check_pool(d, window, stride);
  const int ho = (d[1] - window) / stride + 1, wo = (d[2] - window) / stride + 1;
  BasicTensor<T> out({d[0], ho, wo, d[3]});
  avg_pool_forward(input.ptr(), d, window, stride, ho, wo, out.ptr());
  return out.reshaped(restore_rank(out.dims(), input.rank()));
}

template <class T>
BasicTensor<T> gaussian_downsample(const BasicTensor<T>& input) {
  const Dims d = as_batch(input.dims());
  check_even(d);
  BasicTensor<T> out({d[0], d[1] / 2, d[2] / 2, d[3]});
  downsample_forward(input.ptr(), d[0], d[1], d[2], d[3], out.ptr());
  return out.reshaped(restore_rank(out.dims(), input.rank()));
}

template <class T>
BasicTensor<T> upsample_bilinear(const BasicTensor<T>& input) {
  const Dims d = as_batch(input.dims());
  BasicTensor<T> out({d[0], d[1] * 2, d[2] * 2, d[3]});
  upsample_forward(input.ptr(), d[0], d[1], d[2], d[3], out.ptr());
  return out.reshaped(restore_rank(out.dims(), input.rank()));
}

template <class T>
LossAndGrad<T> softmax_cross_entropy(const BasicTensor<T>& logits, int true_class) {
  const int k = static_cast<int>(logits.size());
  if (true_class < 0 || true_class >= k)
    throw ArgumentError("true class " + std::to_string(true_class) + " outside [0," + std::to_string(k) + ")");
  double mx = logits[0];
  for (int i = 1; i < k; ++i) mx = std::max(mx, static_cast<double>(logits[i]));
  double z = 0.0;
  for (int i = 0; i < k; ++i) z += std::exp(static_cast<double>(logits[i]) - mx);
  const double lse = mx + std::log(z);
  LossAndGrad<T> r;
  r.loss = lse - static_cast<double>(logits[true_class]);
  r.grad = BasicTensor<T>(logits.dims());
  for (int i = 0; i < k; ++i)
    r.grad[i] = static_cast<T>(std::exp(static_cast<double>(logits[i]) - lse) - (i == true_class ? 1.0 : 0.0));
  return r;
}

}  // namespace fn

// ---------------------------------------------------------------------------------------------
// Recorded ops

namespace ad {

template <class T>
Var<T> conv2d(Var<T> x, Var<T> kernel, int stride, int pad) {
  Graph<T>& gr = *x.graph;
  const auto g = conv_geom(x.dims(), kernel.dims(), stride, pad);
  auto cols = std::make_shared<RowMat<T>>(im2col(x.value().ptr(), g));
  BasicTensor<T> out({g.n, g.ho, g.wo, g.cout});
  MapMat<T>(out.ptr(), g.rows(), g.cout).noalias() = *cols * CMapMat<T>(kernel.value().ptr(), g.cols(), g.cout);
  const int xi = x.id, ki = kernel.id;
  return gr.record(std::move(out), {x, kernel}, [g, cols, xi, ki](Graph<T>& G, int self) {
    const T* go = G.grad_ref(self).ptr();
    if (G.requires_grad(ki)) conv_backward_kernel(*cols, go, g, G.grad_ref(ki).ptr());
    if (G.requires_grad(xi)) conv_backward_input(go, G.value(ki), g, G.grad_ref(xi).ptr());
  });
}

template <class T>
Var<T> conv2d_transpose(Var<T> gv, Var<T> kernel, int stride, int pad, int out_h, int out_w) {
  Graph<T>& gr = *gv.graph;
  const Dims gd = gv.dims();
  if (gd.size() != 4) throw ShapeError("conv2d_transpose expects [N,H,W,C]");
  const auto g = conv_geom({gd[0], out_h, out_w, kernel.dim(2)}, kernel.dims(), stride, pad);
  if (g.ho != gd[1] || g.wo != gd[2] || g.cout != gd[3])
    throw ShapeError("conv2d_transpose: gradient dims inconsistent with output extent");
  BasicTensor<T> out({g.n, g.h, g.w, g.cin});
  conv_backward_input(gv.value().ptr(), kernel.value(), g, out.ptr());
  const int gi = gv.id, ki = kernel.id;
  return gr.record(std::move(out), {gv, kernel}, [g, gi, ki](Graph<T>& G, int self) {
    // The transpose is linear in both operands: its adjoints are a forward conv of the
    // upstream gradient (w.r.t. g) and an outer product against g (w.r.t. the kernel).
    const RowMat<T> up_cols = im2col(G.grad_ref(self).ptr(), g);
    if (G.requires_grad(gi))
      MapMat<T>(G.grad_ref(gi).ptr(), g.rows(), g.cout).noalias() +=
          up_cols * CMapMat<T>(G.value(ki).ptr(), g.cols(), g.cout);
    if (G.requires_grad(ki)) conv_backward_kernel(up_cols, G.value(gi).ptr(), g, G.grad_ref(ki).ptr());
  });
}

template <class T>
Var<T> add_channel_bias(Var<T> x, Var<T> bias) {
  const int c = x.dim(-1);
  if (bias.value().size() != static_cast<std::size_t>(c))
    throw ShapeError("bias length " + std::to_string(bias.value().size()) + " != channels " + std::to_string(c));
  BasicTensor<T> out = x.value();
  const T* b = bias.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % c];
  const int xi = x.id, bi = bias.id;
  return x.graph->record(std::move(out), {x, bias}, [c, xi, bi](Graph<T>& G, int self) {
    const auto& go = G.grad_ref(self);
    if (G.requires_grad(xi)) add_into(G.grad_ref(xi), go);
    if (G.requires_grad(bi)) {
      std::vector<double> acc(c, 0.0);
      for (std::size_t i = 0; i < go.size(); ++i) acc[i % c] += go[i];
      auto& db = G.grad_ref(bi);
      for (int j = 0; j < c; ++j) db[j] += static_cast<T>(acc[j]);
    }
  });
}

template <class T>
Var<T> leaky_relu(Var<T> x, T slope) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T(0) ? v : v * slope;
  const int xi = x.id;
  return x.graph->record(std::move(out), {x}, [xi, slope](Graph<T>& G, int self) {
    const auto& go = G.grad_ref(self);
    const auto& xv = G.value(xi);
    auto& dx = G.grad_ref(xi);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += xv[i] > T(0) ? go[i] : go[i] * slope;
  });
}

template <class T>
Var<T> leaky_relu_mask(Var<T> pre, Var<T> g, T slope) {
  require_same(pre.dims(), g.dims(), "leaky_relu_mask");
  BasicTensor<T> out = g.value();
  const auto& pv = pre.value();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(pv[i] > T(0))) out[i] *= slope;
  const int pi = pre.id, gi = g.id;
  return g.graph->record(std::move(out), {g}, [pi, gi, slope](Graph<T>& G, int self) {
    const auto& go = G.grad_ref(self);
    const auto& pv2 = G.value(pi);
    auto& dg = G.grad_ref(gi);
    for (std::size_t i = 0; i < dg.size(); ++i) dg[i] += pv2[i] > T(0) ? go[i] : go[i] * slope;
  });
}

template <class T>
Var<T> avg_pool2d(Var<T> x, int window, int stride) {
  const Dims d = x.dims();
  if (d.size() != 4) throw ShapeError("avg_pool2d expects [N,H,W,C]");
  check_pool(d, window, stride);
  const int ho = (d[1] - window) / stride + 1, wo = (d[2] - window) / stride + 1;
  BasicTensor<T> out({d[0], ho, wo, d[3]});
  avg_pool_forward(x.value().ptr(), d, window, stride, ho, wo, out.ptr());
  const int xi = x.id;
  return x.graph->record(std::move(out), {x}, [d, window, stride, ho, wo, xi](Graph<T>& G, int self) {
    avg_pool_backward(G.grad_ref(self).ptr(), d, window, stride, ho, wo, G.grad_ref(xi).ptr());
  });
}

template <class T>
Var<T> gaussian_downsample(Var<T> x) {
  const Dims d = x.dims();
  if (d.size() != 4) throw ShapeError("gaussian_downsample expects [N,H,W,C]");
  check_even(d);
  BasicTensor<T> out({d[0], d[1] / 2, d[2] / 2, d[3]});
  downsample_forward(x.value().ptr(), d[0], d[1], d[2], d[3], out.ptr());
  const int xi = x.id;
  return x.graph->record(std::move(out), {x}, [d, xi](Graph<T>& G, int self) {
    downsample_backward(G.grad_ref(self).ptr(), d[0], d[1], d[2], d[3], G.grad_ref(xi).ptr());
  });
}

template <class T>
Var<T> upsample_bilinear(Var<T> x) {
  const Dims d = x.dims();
  if (d.size() != 4) throw ShapeError("upsample_bilinear expects [N,H,W,C]");
  BasicTensor<T> out({d[0], d[1] * 2, d[2] * 2, d[3]});
  upsample_forward(x.value().ptr(), d[0], d[1], d[2], d[3], out.ptr());
  const int xi = x.id;
  return x.graph->record(std::move(out), {x}, [d, xi](Graph<T>& G, int self) {
    upsample_backward(G.grad_ref(self).ptr(), d[0], d[1], d[2], d[3], G.grad_ref(xi).ptr());
  });
}

template <class T>
Var<T> reshape(Var<T> x, Dims dims) {
  auto out = x.value().reshaped(std::move(dims));
  const int xi = x.id;
  return x.graph->record(std::move(out), {x}, [xi](Graph<T>& G, int self) {
    add_into(G.grad_ref(xi), G.grad_ref(self));
  });
}

template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  const auto [n, d] = rows_cols(a.dims());
  const auto [k, d2] = rows_cols(b.dims());
  if (d != d2) throw ShapeError("matmul_nt inner dims differ: " + dims_to_string(a.dims()) + " vs " + dims_to_string(b.dims()));
  BasicTensor<T> out({n, k});
  MapMat<T>(out.ptr(), n, k).noalias() = CMapMat<T>(a.value().ptr(), n, d) * CMapMat<T>(b.value().ptr(), k, d).transpose();
  const int ai = a.id, bi = b.id;
  return a.graph->record(std::move(out), {a, b}, [n, k, d, ai, bi](Graph<T>& G, int self) {
    CMapMat<T> go(G.grad_ref(self).ptr(), n, k);
    if (G.requires_grad(ai))
      MapMat<T>(G.grad_ref(ai).ptr(), n, d).noalias() += go * CMapMat<T>(G.value(bi).ptr(), k, d);
    if (G.requires_grad(bi))
      MapMat<T>(G.grad_ref(bi).ptr(), k, d).noalias() += go.transpose() * CMapMat<T>(G.value(ai).ptr(), n, d);
  });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  if (weight.value().rank() != 2) throw ShapeError("linear weight must be [K,D]");
  return add_channel_bias(matmul_nt(x, weight), bias);
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same(a.dims(), b.dims(), "add");
  BasicTensor<T> out = a.value();
  add_into(out, b.value());
  const int ai = a.id, bi = b.id;
  return a.graph->record(std::move(out), {a, b}, [ai, bi](Graph<T>& G, int self) {
    const auto& go = G.grad_ref(self);
    if (G.requires_grad(ai)) add_into(G.grad_ref(ai), go);
    if (G.requires_grad(bi)) add_into(G.grad_ref(bi), go);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same(a.dims(), b.dims(), "sub");
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const int ai = a.id, bi = b.id;
  return a.graph->record(std::move(out), {a, b}, [ai, bi](Graph<T>& G, int self) {
    const auto& go = G.grad_ref(self);
    if (G.requires_grad(ai)) add_into(G.grad_ref(ai), go);
    if (G.requires_grad(bi)) {
      auto& db = G.grad_ref(bi);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] -= go[i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same(a.dims(), b.dims(), "mul");
  BasicTensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const int ai = a.id, bi = b.id;
  return a.graph->record(std::move(out), {a, b}, [ai, bi](Graph<T>& G, int self) {
    const auto& go = G.grad_ref(self);
    if (G.requires_grad(ai)) {
      auto& da = G.grad_ref(ai);
      const auto& bv2 = G.value(bi);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += go[i] * bv2[i];
    }
    if (G.requires_grad(bi)) {
      auto& db = G.grad_ref(bi);
      const auto& av = G.value(ai);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += go[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> x, T s) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.data()) v *= s;
  const int xi = x.id;
  return x.graph->record(std::move(out), {x}, [xi, s](Graph<T>& G, int self) {
    const auto& go = G.grad_ref(self);
    auto& dx = G.grad_ref(xi);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += go[i] * s;
  });
}

template <class T>
Var<T> add_scalar(Var<T> x, T s) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.data()) v += s;
  const int xi = x.id;
  return x.graph->record(std::move(out), {x}, [xi](Graph<T>& G, int self) {
    add_into(G.grad_ref(xi), G.grad_ref(self));
  });
}

template <class T>
Var<T> square(Var<T> x) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.data()) v *= v;
  const int xi = x.id;
  return x.graph->record(std::move(out), {x}, [xi](Graph<T>& G, int self) {
    const auto& go = G.grad_ref(self);
    const auto& xv = G.value(xi);
    auto& dx = G.grad_ref(xi);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += T(2) * xv[i] * go[i];
  });
}

template <class T>
Var<T> scale_rows(Var<T> x, std::vector<T> coeffs) {
  const auto [n, d] = rows_cols(x.dims());
  if (static_cast<int>(coeffs.size()) != n) throw ShapeError("scale_rows: coefficient count != rows");
  BasicTensor<T> out = x.value();
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(r) * d + j] *= coeffs[r];
  const int xi = x.id;
  return x.graph->record(std::move(out), {x}, [xi, n, d, coeffs = std::move(coeffs)](Graph<T>& G, int self) {
    const auto& go = G.grad_ref(self);
    auto& dx = G.grad_ref(xi);
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < d; ++j) dx[static_cast<std::size_t>(r) * d + j] += go[static_cast<std::size_t>(r) * d + j] * coeffs[r];
  });
}

template <class T>
Var<T> sum(Var<T> x) {
  BasicTensor<T> out({1}, static_cast<T>(x.value().sum()));
  const int xi = x.id;
  return x.graph->record(std::move(out), {x}, [xi](Graph<T>& G, int self) {
    const T g = G.grad_ref(self)[0];
    auto& dx = G.grad_ref(xi);
    for (auto& v : dx.data()) v += g;
  });
}

template <class T>
Var<T> mean(Var<T> x) {
  const double n = static_cast<double>(x.value().size());
  BasicTensor<T> out({1}, static_cast<T>(x.value().sum() / n));
  const int xi = x.id;
  return x.graph->record(std::move(out), {x}, [xi, n](Graph<T>& G, int self) {
    const T g = static_cast<T>(G.grad_ref(self)[0] / n);
    auto& dx = G.grad_ref(xi);
    for (auto& v : dx.data()) v += g;
  });
}

template <class T>
Var<T> row_norm(Var<T> x) {
  const auto [n, d] = rows_cols(x.dims());
  BasicTensor<T> out({n});
  const auto& xv = x.value();
  for (int r = 0; r < n; ++r) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += static_cast<double>(xv[static_cast<std::size_t>(r) * d + j]) * xv[static_cast<std::size_t>(r) * d + j];
    out[r] = static_cast<T>(std::sqrt(s));
  }
  const int xi = x.id;
  return x.graph->record(std::move(out), {x}, [xi, n, d](Graph<T>& G, int self) {
    const auto& go = G.grad_ref(self);
    const auto& nv = G.value(self);
    const auto& xv2 = G.value(xi);
    auto& dx = G.grad_ref(xi);
    for (int r = 0; r < n; ++r) {
      if (nv[r] == T(0)) continue;
      const double f = go[r] / static_cast<double>(nv[r]);
      for (int j = 0; j < d; ++j) dx[static_cast<std::size_t>(r) * d + j] += static_cast<T>(f * xv2[static_cast<std::size_t>(r) * d + j]);
    }
  });
}

template <class T>
Var<T> normalize_rows(Var<T> x) {
  const auto [n, d] = rows_cols(x.dims());
  BasicTensor<T> out(x.dims());
  std::vector<double> norms(n);
  const auto& xv = x.value();
  for (int r = 0; r < n; ++r) {
    const T* row = xv.ptr() + static_cast<std::size_t>(r) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += row[j];
    mu /= d;
    double ss = 0.0;
    for (int j = 0; j < d; ++j) ss += (row[j] - mu) * (row[j] - mu);
    const double nr = std::sqrt(ss);
    if (!(nr > 1e-12 * std::max(1.0, std::abs(mu)) * std::sqrt(static_cast<double>(d))))
      throw NumericalError("normalize_rows: row " + std::to_string(r) + " is constant (zero norm after centering)");
    norms[r] = nr;
    T* o = out.ptr() + static_cast<std::size_t>(r) * d;
    for (int j = 0; j < d; ++j) o[j] = static_cast<T>((row[j] - mu) / nr);
  }
  const int xi = x.id;
  return x.graph->record(std::move(out), {x}, [xi, n, d, norms = std::move(norms)](Graph<T>& G, int self) {
    const auto& go = G.grad_ref(self);
    const auto& y = G.value(self);
    auto& dx = G.grad_ref(xi);
    std::vector<double> u(d);
    for (int r = 0; r < n; ++r) {
      const std::size_t off = static_cast<std::size_t>(r) * d;
      double yg = 0.0;
      for (int j = 0; j < d; ++j) yg += static_cast<double>(y[off + j]) * go[off + j];
      double mu = 0.0;
      for (int j = 0; j < d; ++j) {
        u[j] = (go[off + j] - y[off + j] * yg) / norms[r];
        mu += u[j];
      }
      mu /= d;
      for (int j = 0; j < d; ++j) dx[off + j] += static_cast<T>(u[j] - mu);
    }
  });
}

template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels) {
  const Dims d = logits.dims();
  if (d.size() != 2) throw ShapeError("softmax_cross_entropy expects logits [N,K]");
  const int n = d[0], k = d[1];
  if (static_cast<int>(labels.size()) != n) throw ShapeError("label count != batch size");
  BasicTensor<T> probs_grad({n, k});
  double total = 0.0;
  const auto& lv = logits.value();
  for (int r = 0; r < n; ++r) {
    BasicTensor<T> row({k}, std::vector<T>(lv.ptr() + static_cast<std::size_t>(r) * k, lv.ptr() + static_cast<std::size_t>(r + 1) * k));
    auto lg = fn::softmax_cross_entropy(row, labels[r]);
    total += lg.loss;
    std::copy(lg.grad.ptr(), lg.grad.ptr() + k, probs_grad.ptr() + static_cast<std::size_t>(r) * k);
  }
  BasicTensor<T> out({1}, static_cast<T>(total / n));
  const int li = logits.id;
  return logits.graph->record(std::move(out), {logits}, [li, n, pg = std::move(probs_grad)](Graph<T>& G, int self) {
    const double g = G.grad_ref(self)[0] / n;
    auto& dl = G.grad_ref(li);
    for (std::size_t i = 0; i < dl.size(); ++i) dl[i] += static_cast<T>(g * pg[i]);
  });
}

template <class T>
Var<T> l1_mean(Var<T> a, Var<T> b) {
  require_same(a.dims(), b.dims(), "l1_mean");
  const auto& av = a.value();
  const auto& bv = b.value();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += std::abs(static_cast<double>(av[i]) - bv[i]);
  const double m = static_cast<double>(av.size());
  BasicTensor<T> out({1}, static_cast<T>(s / m));
  const int ai = a.id, bi = b.id;
  return a.graph->record(std::move(out), {a, b}, [ai, bi, m](Graph<T>& G, int self) {
    const double g = G.grad_ref(self)[0] / m;
    const auto& av2 = G.value(ai);
    const auto& bv2 = G.value(bi);
    T* da = G.requires_grad(ai) ? G.grad_ref(ai).ptr() : nullptr;
    T* db = G.requires_grad(bi) ? G.grad_ref(bi).ptr() : nullptr;
    for (std::size_t i = 0; i < av2.size(); ++i) {
      const double diff = static_cast<double>(av2[i]) - bv2[i];
      const double sg = diff > 0 ? g : (diff < 0 ? -g : 0.0);
      if (da) da[i] += static_cast<T>(sg);
      if (db) db[i] -= static_cast<T>(sg);
    }
  });
}

template <class T>
Var<T> tile_rows(Var<T> x, int n) {
  if (n < 1) throw ShapeError("tile_rows needs at least one row");
  const std::size_t d = x.value().size();
  BasicTensor<T> out({n, static_cast<int>(d)});
  for (int r = 0; r < n; ++r) std::copy(x.value().ptr(), x.value().ptr() + d, out.ptr() + r * d);
  const int xi = x.id;
  return x.graph->record(std::move(out), {x}, [xi, n, d](Graph<T>& G, int self) {
    const auto& go = G.grad_ref(self);
    auto& dx = G.grad_ref(xi);
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int r = 0; r < n; ++r) acc += go[r * d + j];
      dx[j] += static_cast<T>(acc);
    }
  });
}

}  // namespace ad

#define GFP_INSTANTIATE_OPS(T)                                                                              \
  template BasicTensor<T> fn::conv2d(const BasicTensor<T>&, const BasicTensor<T>&, int, int);              \
  template BasicTensor<T> fn::conv2d_transpose(const BasicTensor<T>&, const BasicTensor<T>&, int, int, int, int); \
  template BasicTensor<T> fn::avg_pool2d(const BasicTensor<T>&, int, int);                                 \
  template BasicTensor<T> fn::gaussian_downsample(const BasicTensor<T>&);                                  \
  template BasicTensor<T> fn::upsample_bilinear(const BasicTensor<T>&);                                    \
  template fn::LossAndGrad<T> fn::softmax_cross_entropy(const BasicTensor<T>&, int);                       \
  template ad::Var<T> ad::conv2d(ad::Var<T>, ad::Var<T>, int, int);                                        \
  template ad::Var<T> ad::conv2d_transpose(ad::Var<T>, ad::Var<T>, int, int, int, int);                    \
  template ad::Var<T> ad::add_channel_bias(ad::Var<T>, ad::Var<T>);                                        \
  template ad::Var<T> ad::leaky_relu(ad::Var<T>, T);                                                       \
  template ad::Var<T> ad::leaky_relu_mask(ad::Var<T>, ad::Var<T>, T);                                      \
  template ad::Var<T> ad::avg_pool2d(ad::Var<T>, int, int);                                                \
  template ad::Var<T> ad::gaussian_downsample(ad::Var<T>);                                                 \
  template ad::Var<T> ad::upsample_bilinear(ad::Var<T>);                                                   \
  template ad::Var<T> ad::reshape(ad::Var<T>, Dims);                                                       \
  template ad::Var<T> ad::linear(ad::Var<T>, ad::Var<T>, ad::Var<T>);                                      \
  template ad::Var<T> ad::matmul_nt(ad::Var<T>, ad::Var<T>);                                               \
  template ad::Var<T> ad::add(ad::Var<T>, ad::Var<T>);                                                     \
  template ad::Var<T> ad::sub(ad::Var<T>, ad::Var<T>);                                                     \
  template ad::Var<T> ad::mul(ad::Var<T>, ad::Var<T>);                                                     \
  template ad::Var<T> ad::scale(ad::Var<T>, T);                                                            \
  template ad::Var<T> ad::add_scalar(ad::Var<T>, T);                                                       \
  template ad::Var<T> ad::square(ad::Var<T>);                                                              \
  template ad::Var<T> ad::scale_rows(ad::Var<T>, std::vector<T>);                                          \
  template ad::Var<T> ad::sum(ad::Var<T>);                                                                 \
  template ad::Var<T> ad::mean(ad::Var<T>);                                                                \
  template ad::Var<T> ad::row_norm(ad::Var<T>);                                                            \
  template ad::Var<T> ad::normalize_rows(ad::Var<T>);                                                      \
  template ad::Var<T> ad::softmax_cross_entropy(ad::Var<T>, std::span<const int>);                         \
  template ad::Var<T> ad::l1_mean(ad::Var<T>, ad::Var<T>);                                                \
  template ad::Var<T> ad::tile_rows(ad::Var<T>, int);

GFP_INSTANTIATE_OPS(float)
GFP_INSTANTIATE_OPS(double)

}  // namespace gfp
