#pragma once

#include <span>
#include <vector>

#include "gfp/graph.hpp"
#include "gfp/tensor.hpp"

// Dense ops over NHWC tensors. Every op comes in two flavours:
//   gfp::fn::*  pure tensor -> tensor kernels, accept [H,W,C] or [N,H,W,C]
//   gfp::ad::*  the same computation recorded on a Graph tape with its reverse-mode rule
// Kernels accumulate reductions in double regardless of the storage type.

namespace gfp::fn {

// Cross-correlation with zero padding. kernel is [k,k,Cin,Cout], k odd or equal to the input
// extent (valid 4x4 head); stride in {1,2}.
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, int stride, int pad);

// Adjoint of conv2d with respect to its input; out_h/out_w are the forward input extents.
template <class T>
BasicTensor<T> conv2d_transpose(const BasicTensor<T>& grad_out, const BasicTensor<T>& kernel, int stride,
                                int pad, int out_h, int out_w);

template <class T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& input, int window, int stride);

// Binomial [1,4,6,4,1]/16 per axis, reflect padding, stride-2 subsample. Not trainable.
template <class T>
BasicTensor<T> gaussian_downsample(const BasicTensor<T>& input);

// Factor-2 bilinear upsampling, align_corners = false.
template <class T>
BasicTensor<T> upsample_bilinear(const BasicTensor<T>& input);

template <class T>
struct LossAndGrad {
  double loss = 0.0;
  BasicTensor<T> grad;
};

// Numerically stable log-sum-exp minus the true logit; grad = softmax - onehot.
template <class T>
LossAndGrad<T> softmax_cross_entropy(const BasicTensor<T>& logits, int true_class);

// Reflect index into [0, n): -1 -> 1, n -> n-2.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

}  // namespace gfp::fn

namespace gfp::ad {

template <class T>
Var<T> conv2d(Var<T> x, Var<T> kernel, int stride, int pad);
template <class T>
Var<T> conv2d_transpose(Var<T> g, Var<T> kernel, int stride, int pad, int out_h, int out_w);
// Adds a per-channel bias [C] to the last axis.
template <class T>
Var<T> add_channel_bias(Var<T> x, Var<T> bias);
template <class T>
Var<T> leaky_relu(Var<T> x, T slope);
// g * d(leaky_relu)/dx evaluated at `pre`. The mask is piecewise constant, so only g receives
// gradient; used to express input gradients of a critic as a differentiable graph.
template <class T>
Var<T> leaky_relu_mask(Var<T> pre, Var<T> g, T slope);
template <class T>
Var<T> avg_pool2d(Var<T> x, int window, int stride);
template <class T>
Var<T> gaussian_downsample(Var<T> x);
template <class T>
Var<T> upsample_bilinear(Var<T> x);
template <class T>
Var<T> reshape(Var<T> x, Dims dims);

// y = x W^T + b with x [N,D], W [K,D], b [K].
template <class T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);
// a [N,D], b [K,D] -> a b^T [N,K]
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b);

// Repeats x, flattened to one row, n times: [n, size(x)].
template <class T>
Var<T> tile_rows(Var<T> x, int n);

template <class T>
Var<T> add(Var<T> a, Var<T> b);
template <class T>
Var<T> sub(Var<T> a, Var<T> b);
template <class T>
Var<T> mul(Var<T> a, Var<T> b);
template <class T>
Var<T> scale(Var<T> x, T s);
template <class T>
Var<T> add_scalar(Var<T> x, T s);
template <class T>
Var<T> square(Var<T> x);
// Multiplies sample n (leading axis) by coeffs[n].
template <class T>
Var<T> scale_rows(Var<T> x, std::vector<T> coeffs);

template <class T>
Var<T> sum(Var<T> x);
template <class T>
Var<T> mean(Var<T> x);
// Euclidean norm of every row of x viewed as [N, D]; output [N]. Zero rows get zero gradient.
template <class T>
Var<T> row_norm(Var<T> x);
// Rows of x viewed as [N, D] mapped to zero mean and unit L2 norm. Constant rows throw.
template <class T>
Var<T> normalize_rows(Var<T> x);

// Mean over the batch of per-row softmax cross-entropy; logits [N,K].
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels);
// Mean absolute difference over all elements.
template <class T>
Var<T> l1_mean(Var<T> a, Var<T> b);

}  // namespace gfp::ad
