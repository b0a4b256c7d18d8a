#pragma once

#include <span>
#include <vector>

#include "gcanet/graph.hpp"

// Differentiable operations on Var<T>. Every op computes its forward value
// eagerly and, when the graph records and an input needs a gradient, registers
// a backward rule. Instantiated for float and double.
//
// Binary elementwise ops broadcast NumPy-style within rank 4: on each axis the
// two extents must agree or one of them must be 1.

namespace gcanet {

struct Conv2dSpec {
  int stride = 1;
  int dilation = 1;
  int groups = 1;
  // Same padding: pad = dilation * (k - 1) / 2, giving out = ceil(in / stride).
  // Valid: no padding.
  bool same_padding = true;
};

template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> div(const Var<T>& a, const Var<T>& b);

template <class T> Var<T> scale(const Var<T>& x, double k);
template <class T> Var<T> add_scalar(const Var<T>& x, double k);
/// x * s where s holds exactly one element (a learnable scalar).
template <class T> Var<T> scale_by(const Var<T>& x, const Var<T>& s);
/// x / s where s holds exactly one element.
template <class T> Var<T> div_by(const Var<T>& x, const Var<T>& s);

template <class T> Var<T> relu(const Var<T>& x);
template <class T> Var<T> sigmoid(const Var<T>& x);
template <class T> Var<T> log(const Var<T>& x);
/// Gradient passes only where lo <= x <= hi.
template <class T> Var<T> clamp(const Var<T>& x, double lo, double hi);

template <class T> Var<T> softmax(const Var<T>& x, int axis);
/// x / sqrt(sum(x^2) + eps) along `axis`; the zero vector maps to zero.
template <class T> Var<T> l2normalize(const Var<T>& x, int axis, double eps = 1e-12);
/// Per-position normalisation across channels to zero mean and unit variance.
template <class T> Var<T> channel_norm(const Var<T>& x, double eps = 1e-5);

/// Sum along `axis`, keeping it with extent 1.
template <class T> Var<T> sum(const Var<T>& x, int axis);
template <class T> Var<T> sum_all(const Var<T>& x);
template <class T> Var<T> mean_all(const Var<T>& x);

template <class T> Var<T> reshape(const Var<T>& x, Shape s);

/// Batched product over the last two axes; the leading two axes broadcast.
/// `ta`/`tb` read the operand as transposed.
template <class T> Var<T> matmul(const Var<T>& a, const Var<T>& b, bool ta = false, bool tb = false);

/// Cross-correlation. w is [Cout, Cin/groups, k, k]; bias, if given, is
/// [1, Cout, 1, 1].
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>* bias, const Conv2dSpec& spec);

/// x * scale + shift with per-channel [1, C, 1, 1] factors.
template <class T> Var<T> affine_channel(const Var<T>& x, const Var<T>& scale, const Var<T>& shift);

template <class T> Var<T> global_avg_pool(const Var<T>& x);
/// Non-overlapping k x k average pooling; spatial extents must divide by k.
template <class T> Var<T> avg_pool(const Var<T>& x, int k);
/// Bins span [floor(i*in/out), ceil((i+1)*in/out)).
template <class T> Var<T> adaptive_avg_pool(const Var<T>& x, std::int64_t out_h, std::int64_t out_w);
/// Bilinear resampling with half-pixel centres (align_corners = false).
template <class T> Var<T> upsample_bilinear(const Var<T>& x, std::int64_t out_h, std::int64_t out_w);

template <class T> Var<T> concat_channels(std::span<const Var<T>> parts);

/// Graph-free bilinear resize with the same convention as upsample_bilinear.
template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w);
/// Nearest-neighbour resize, source index floor((dst + 0.5) * in / out).
template <class T>
Tensor<T> resize_nearest(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w);

}  // namespace gcanet
