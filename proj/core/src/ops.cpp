#include "gcanet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kernels.hpp"

namespace gcanet {
namespace {

std::string op_label(const char* op) {
  std::string layer = current_layer();
  return layer.empty() ? std::string(op) : std::string(op) + "@" + layer;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  std::int64_t d[4];
  for (int ax = 0; ax < 4; ++ax) {
    const std::int64_t da = a[ax];
    const std::int64_t db = b[ax];
    if (da == db || db == 1) {
      d[ax] = da;
    } else if (da == 1) {
      d[ax] = db;
    } else {
      throw ShapeError(std::string(op) + ": shapes " + a.str() + " and " + b.str() +
                       " are not broadcastable");
    }
  }
  return Shape{d[0], d[1], d[2], d[3]};
}

struct Strides {
  std::int64_t n, c, h, w;
};

Strides broadcast_strides(const Shape& in, const Shape& out) {
  Strides s{in.c * in.h * in.w, in.h * in.w, in.w, 1};
  if (in.n == 1 && out.n > 1) s.n = 0;
  if (in.c == 1 && out.c > 1) s.c = 0;
  if (in.h == 1 && out.h > 1) s.h = 0;
  if (in.w == 1 && out.w > 1) s.w = 0;
  return s;
}

template <class F>
void for_each_broadcast(const Shape& out, const Strides& sa, const Strides& sb, F&& f) {
  std::int64_t o = 0;
  for (std::int64_t n = 0; n < out.n; ++n)
    for (std::int64_t c = 0; c < out.c; ++c)
      for (std::int64_t h = 0; h < out.h; ++h) {
        const std::int64_t ba = n * sa.n + c * sa.c + h * sa.h;
        const std::int64_t bb = n * sb.n + c * sb.c + h * sb.h;
        for (std::int64_t w = 0; w < out.w; ++w, ++o) f(o, ba + w * sa.w, bb + w * sb.w);
      }
}

void axis_dims(const Shape& s, int axis, std::int64_t& outer, std::int64_t& len,
               std::int64_t& inner, const char* op) {
  if (axis < 0 || axis > 3) throw ShapeError(std::string(op) + ": axis must be in [0, 3]");
  outer = 1;
  inner = 1;
  for (int a = 0; a < axis; ++a) outer *= s[a];
  len = s[axis];
  for (int a = axis + 1; a < 4; ++a) inner *= s[a];
}

// dfa/dfb: (x, y, out) -> partial derivative of out w.r.t. that operand.
template <class T, class Fwd, class Da, class Db>
Var<T> binary(const Var<T>& a, const Var<T>& b, const char* name, CostKind kind, bool counted,
              Fwd fwd, Da dfa, Db dfb) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  const Strides sa = broadcast_strides(a.shape(), out_shape);
  const Strides sb = broadcast_strides(b.shape(), out_shape);
  Tensor<T> out(out_shape);
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  T* po = out.data();
  for_each_broadcast(out_shape, sa, sb,
                     [&](std::int64_t o, std::int64_t ia, std::int64_t ib) { po[o] = fwd(pa[ia], pb[ib]); });
  if (counted) report_cost(kind, out_shape.numel());
  return a.graph().record(op_label(name), std::move(out), {a, b}, [=](Node<T>& node) {
    Node<T>& na = *node.inputs[0];
    Node<T>& nb = *node.inputs[1];
    const T* xa = na.value.data();
    const T* xb = nb.value.data();
    const T* y = node.value.data();
    const T* g = node.grad.data();
    T* ga = na.requires_grad ? na.grad_buffer().data() : nullptr;
    T* gb = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
    for_each_broadcast(node.value.shape(), sa, sb, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
      if (ga) ga[ia] += g[o] * dfa(xa[ia], xb[ib], y[o]);
      if (gb) gb[ib] += g[o] * dfb(xa[ia], xb[ib], y[o]);
    });
  });
}

template <class T, class Fwd, class Df>
Var<T> unary(const Var<T>& x, const char* name, Fwd fwd, Df df) {
  Tensor<T> out(x.shape());
  const T* px = x.value().data();
  T* po = out.data();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
  return x.graph().record(op_label(name), std::move(out), {x}, [=](Node<T>& node) {
    Node<T>& in = *node.inputs[0];
    const T* xv = in.value.data();
    const T* y = node.value.data();
    const T* g = node.grad.data();
    T* gx = in.grad_buffer().data();
    const std::size_t m = node.value.size();
    for (std::size_t i = 0; i < m; ++i) gx[i] += g[i] * df(xv[i], y[i]);
  });
}

struct LerpTap {
  std::int64_t i0, i1;
  double frac;
};

std::vector<LerpTap> bilinear_taps(std::int64_t in, std::int64_t out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    std::int64_t i0 = static_cast<std::int64_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::int64_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

template <class T>
void bilinear_forward(const Tensor<T>& x, Tensor<T>& out) {
  const Shape& s = x.shape();
  const Shape& os = out.shape();
  const auto th = bilinear_taps(s.h, os.h);
  const auto tw = bilinear_taps(s.w, os.w);
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::int64_t oh = 0; oh < os.h; ++oh) {
        const auto& a = th[oh];
        const T lh = static_cast<T>(a.frac);
        const T* r0 = src + a.i0 * s.w;
        const T* r1 = src + a.i1 * s.w;
        for (std::int64_t ow = 0; ow < os.w; ++ow) {
          const auto& b = tw[ow];
          const T lw = static_cast<T>(b.frac);
          const T top = (T{1} - lw) * r0[b.i0] + lw * r0[b.i1];
          const T bot = (T{1} - lw) * r1[b.i0] + lw * r1[b.i1];
          dst[oh * os.w + ow] = (T{1} - lh) * top + lh * bot;
        }
      }
    }
}

template <class T>
void bilinear_backward(const Tensor<T>& g, Tensor<T>& gx) {
  const Shape& s = gx.shape();
  const Shape& os = g.shape();
  const auto th = bilinear_taps(s.h, os.h);
  const auto tw = bilinear_taps(s.w, os.w);
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const T* gp = g.plane(n, c);
      T* dst = gx.plane(n, c);
      for (std::int64_t oh = 0; oh < os.h; ++oh) {
        const auto& a = th[oh];
        const T lh = static_cast<T>(a.frac);
        T* r0 = dst + a.i0 * s.w;
        T* r1 = dst + a.i1 * s.w;
        for (std::int64_t ow = 0; ow < os.w; ++ow) {
          const auto& b = tw[ow];
          const T lw = static_cast<T>(b.frac);
          const T v = gp[oh * os.w + ow];
          r0[b.i0] += (T{1} - lh) * (T{1} - lw) * v;
          r0[b.i1] += (T{1} - lh) * lw * v;
          r1[b.i0] += lh * (T{1} - lw) * v;
          r1[b.i1] += lh * lw * v;
        }
      }
    }
}

std::int64_t bin_start(std::int64_t i, std::int64_t in, std::int64_t out) { return (i * in) / out; }
std::int64_t bin_end(std::int64_t i, std::int64_t in, std::int64_t out) {
  return ((i + 1) * in + out - 1) / out;
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary<T>(
      a, b, "add", CostKind::kMac, false, [](T x, T y) { return x + y; },
      [](T, T, T) { return T{1}; }, [](T, T, T) { return T{1}; });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary<T>(
      a, b, "sub", CostKind::kMac, false, [](T x, T y) { return x - y; },
      [](T, T, T) { return T{1}; }, [](T, T, T) { return T{-1}; });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary<T>(
      a, b, "mul", CostKind::kMac, true, [](T x, T y) { return x * y; },
      [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return binary<T>(
      a, b, "div", CostKind::kMac, false, [](T x, T y) { return x / y; },
      [](T, T y, T) { return T{1} / y; }, [](T, T y, T out) { return -out / y; });
}

template <class T>
Var<T> scale(const Var<T>& x, double k) {
  const T kk = static_cast<T>(k);
  return unary<T>(
      x, "scale", [kk](T v) { return v * kk; }, [kk](T, T) { return kk; });
}

template <class T>
Var<T> add_scalar(const Var<T>& x, double k) {
  const T kk = static_cast<T>(k);
  return unary<T>(
      x, "add_scalar", [kk](T v) { return v + kk; }, [](T, T) { return T{1}; });
}

template <class T>
Var<T> scale_by(const Var<T>& x, const Var<T>& s) {
  if (s.value().size() != 1) throw ShapeError("scale_by: scalar expected, got " + s.shape().str());
  const T k = s.value()[0];
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * k;
  report_cost(CostKind::kScalar, x.shape().numel());
  return x.graph().record(op_label("scale_by"), std::move(out), {x, s}, [](Node<T>& node) {
    Node<T>& nx = *node.inputs[0];
    Node<T>& ns = *node.inputs[1];
    const T k = ns.value[0];
    const auto& g = node.grad;
    if (nx.requires_grad) {
      auto& gx = nx.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * k;
    }
    if (ns.requires_grad) {
      T acc{0};
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * nx.value[i];
      ns.grad_buffer()[0] += acc;
    }
  });
}

template <class T>
Var<T> div_by(const Var<T>& x, const Var<T>& s) {
  if (s.value().size() != 1) throw ShapeError("div_by: scalar expected, got " + s.shape().str());
  const T k = s.value()[0];
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] / k;
  report_cost(CostKind::kScalar, x.shape().numel());
  return x.graph().record(op_label("div_by"), std::move(out), {x, s}, [](Node<T>& node) {
    Node<T>& nx = *node.inputs[0];
    Node<T>& ns = *node.inputs[1];
    const T k = ns.value[0];
    const auto& g = node.grad;
    if (nx.requires_grad) {
      auto& gx = nx.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / k;
    }
    if (ns.requires_grad) {
      T acc{0};
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * node.value[i];
      ns.grad_buffer()[0] -= acc / k;
    }
  });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  Graph<T>& g = x.graph();
  if (g.tracking_kinks()) {
    for (T v : x.value().vec()) g.note_branch(v > T{0} ? 1 : 0);
  }
  return unary<T>(
      x, "relu", [](T v) { return v > T{0} ? v : T{0}; },
      [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return unary<T>(
      x, "sigmoid",
      [](T v) {
        // Split by sign so exp never overflows.
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Var<T> log(const Var<T>& x) {
  return unary<T>(
      x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T{1} / v; });
}

template <class T>
Var<T> clamp(const Var<T>& x, double lo, double hi) {
  const T l = static_cast<T>(lo);
  const T h = static_cast<T>(hi);
  Graph<T>& g = x.graph();
  if (g.tracking_kinks()) {
    for (T v : x.value().vec()) g.note_branch(v < l ? 0 : (v > h ? 2 : 1));
  }
  return unary<T>(
      x, "clamp", [l, h](T v) { return v < l ? l : (v > h ? h : v); },
      [l, h](T v, T) { return (v < l || v > h) ? T{0} : T{1}; });
}

// ---------------------------------------------------------------- axis ops

template <class T>
Var<T> softmax(const Var<T>& x, int axis) {
  std::int64_t outer, len, inner;
  axis_dims(x.shape(), axis, outer, len, inner, "softmax");
  Tensor<T> out(x.shape());
  const T* px = x.value().data();
  T* po = out.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * len * inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::int64_t l = 0; l < len; ++l) mx = std::max(mx, px[base + l * inner]);
      T s{0};
      for (std::int64_t l = 0; l < len; ++l) {
        const T e = std::exp(px[base + l * inner] - mx);
        po[base + l * inner] = e;
        s += e;
      }
      for (std::int64_t l = 0; l < len; ++l) po[base + l * inner] /= s;
    }
  return x.graph().record(op_label("softmax"), std::move(out), {x}, [=](Node<T>& node) {
    const T* y = node.value.data();
    const T* g = node.grad.data();
    T* gx = node.inputs[0]->grad_buffer().data();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t base = o * len * inner + i;
        T dot{0};
        for (std::int64_t l = 0; l < len; ++l) dot += g[base + l * inner] * y[base + l * inner];
        for (std::int64_t l = 0; l < len; ++l) {
          const std::int64_t k = base + l * inner;
          gx[k] += y[k] * (g[k] - dot);
        }
      }
  });
}

template <class T>
Var<T> l2normalize(const Var<T>& x, int axis, double eps) {
  std::int64_t outer, len, inner;
  axis_dims(x.shape(), axis, outer, len, inner, "l2normalize");
  Tensor<T> out(x.shape());
  Tensor<T> norms(Shape{1, 1, 1, outer * inner});
  const T* px = x.value().data();
  T* po = out.data();
  const T e = static_cast<T>(eps);
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * len * inner + i;
      T ss{0};
      for (std::int64_t l = 0; l < len; ++l) ss += px[base + l * inner] * px[base + l * inner];
      const T r = std::sqrt(ss + e);
      norms[o * inner + i] = r;
      for (std::int64_t l = 0; l < len; ++l) po[base + l * inner] = px[base + l * inner] / r;
    }
  report_cost(CostKind::kNorm, x.shape().numel());
  return x.graph().record(op_label("l2normalize"), std::move(out), {x}, [=](Node<T>& node) {
    const T* y = node.value.data();
    const T* g = node.grad.data();
    T* gx = node.inputs[0]->grad_buffer().data();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t base = o * len * inner + i;
        const T r = norms[o * inner + i];
        T dot{0};
        for (std::int64_t l = 0; l < len; ++l) dot += g[base + l * inner] * y[base + l * inner];
        for (std::int64_t l = 0; l < len; ++l) {
          const std::int64_t k = base + l * inner;
          gx[k] += (g[k] - y[k] * dot) / r;
        }
      }
  });
}

template <class T>
Var<T> channel_norm(const Var<T>& x, double eps) {
  const Shape s = x.shape();
  const std::int64_t plane = s.plane();
  Tensor<T> out(s);
  Tensor<T> inv_std(Shape{s.n, 1, s.h, s.w});
  const T e = static_cast<T>(eps);
  const T inv_c = T{1} / static_cast<T>(s.c);
  for (std::int64_t n = 0; n < s.n; ++n) {
    const T* px = x.value().plane(n, 0);
    T* po = out.plane(n, 0);
    for (std::int64_t p = 0; p < plane; ++p) {
      T mean{0};
      for (std::int64_t c = 0; c < s.c; ++c) mean += px[c * plane + p];
      mean *= inv_c;
      T var{0};
      for (std::int64_t c = 0; c < s.c; ++c) {
        const T d = px[c * plane + p] - mean;
        var += d * d;
      }
      var *= inv_c;
      const T is = T{1} / std::sqrt(var + e);
      inv_std[n * plane + p] = is;
      for (std::int64_t c = 0; c < s.c; ++c) po[c * plane + p] = (px[c * plane + p] - mean) * is;
    }
  }
  report_cost(CostKind::kNorm, s.numel());
  return x.graph().record(op_label("channel_norm"), std::move(out), {x}, [=](Node<T>& node) {
    const Shape& sh = node.value.shape();
    T* gx = node.inputs[0]->grad_buffer().data();
    for (std::int64_t n = 0; n < sh.n; ++n) {
      const T* y = node.value.plane(n, 0);
      const T* g = node.grad.plane(n, 0);
      T* gxp = gx + n * sh.c * plane;
      for (std::int64_t p = 0; p < plane; ++p) {
        T mg{0};
        T mgy{0};
        for (std::int64_t c = 0; c < sh.c; ++c) {
          mg += g[c * plane + p];
          mgy += g[c * plane + p] * y[c * plane + p];
        }
        mg *= inv_c;
        mgy *= inv_c;
        const T is = inv_std[n * plane + p];
        for (std::int64_t c = 0; c < sh.c; ++c) {
          const std::int64_t k = c * plane + p;
          gxp[k] += is * (g[k] - mg - y[k] * mgy);
        }
      }
    }
  });
}

template <class T>
Var<T> sum(const Var<T>& x, int axis) {
  std::int64_t outer, len, inner;
  axis_dims(x.shape(), axis, outer, len, inner, "sum");
  const Shape s = x.shape();
  Shape os = s;
  if (axis == 0) os.n = 1;
  if (axis == 1) os.c = 1;
  if (axis == 2) os.h = 1;
  if (axis == 3) os.w = 1;
  Tensor<T> out(os);
  const T* px = x.value().data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      T acc{0};
      for (std::int64_t l = 0; l < len; ++l) acc += px[(o * len + l) * inner + i];
      out[o * inner + i] = acc;
    }
  return x.graph().record(op_label("sum"), std::move(out), {x}, [=](Node<T>& node) {
    const T* g = node.grad.data();
    T* gx = node.inputs[0]->grad_buffer().data();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t i = 0; i < inner; ++i) {
        const T v = g[o * inner + i];
        for (std::int64_t l = 0; l < len; ++l) gx[(o * len + l) * inner + i] += v;
      }
  });
}

template <class T>
Var<T> sum_all(const Var<T>& x) {
  T acc{0};
  for (T v : x.value().vec()) acc += v;
  return x.graph().record(op_label("sum_all"), Tensor<T>::scalar(acc), {x}, [](Node<T>& node) {
    const T g = node.grad[0];
    auto& gx = node.inputs[0]->grad_buffer();
    for (auto& v : gx.vec()) v += g;
  });
}

template <class T>
Var<T> mean_all(const Var<T>& x) {
  T acc{0};
  for (T v : x.value().vec()) acc += v;
  const T inv = T{1} / static_cast<T>(x.value().size());
  return x.graph().record(op_label("mean_all"), Tensor<T>::scalar(acc * inv), {x},
                          [inv](Node<T>& node) {
                            const T g = node.grad[0] * inv;
                            auto& gx = node.inputs[0]->grad_buffer();
                            for (auto& v : gx.vec()) v += g;
                          });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape s) {
  Tensor<T> out = x.value().reshaped(s);
  return x.graph().record(op_label("reshape"), std::move(out), {x}, [](Node<T>& node) {
    auto& gx = node.inputs[0]->grad_buffer();
    const auto& g = node.grad;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

// ---------------------------------------------------------------- matmul

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool ta, bool tb) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  const std::int64_t M = ta ? sa.w : sa.h;
  const std::int64_t K = ta ? sa.h : sa.w;
  const std::int64_t Kb = tb ? sb.w : sb.h;
  const std::int64_t N = tb ? sb.h : sb.w;
  if (K != Kb) {
    throw ShapeError("matmul: inner dimensions differ for " + sa.str() + (ta ? "^T" : "") + " and " +
                     sb.str() + (tb ? "^T" : ""));
  }
  const Shape batch = broadcast_shape(Shape{sa.n, sa.c, 1, 1}, Shape{sb.n, sb.c, 1, 1}, "matmul");
  const Shape os{batch.n, batch.c, M, N};
  Tensor<T> out(os);
  const std::int64_t a_mat = sa.h * sa.w;
  const std::int64_t b_mat = sb.h * sb.w;
  auto a_off = [=](std::int64_t n, std::int64_t c) {
    return ((sa.n == 1 ? 0 : n) * sa.c + (sa.c == 1 ? 0 : c)) * a_mat;
  };
  auto b_off = [=](std::int64_t n, std::int64_t c) {
    return ((sb.n == 1 ? 0 : n) * sb.c + (sb.c == 1 ? 0 : c)) * b_mat;
  };
  for (std::int64_t n = 0; n < os.n; ++n)
    for (std::int64_t c = 0; c < os.c; ++c) {
      kernels::gemm<T>(ta, tb, M, N, K, a.value().data() + a_off(n, c), b.value().data() + b_off(n, c),
                       out.plane(n, c), false);
    }
  report_cost(CostKind::kMac, os.n * os.c * M * N * K);
  return a.graph().record(op_label("matmul"), std::move(out), {a, b}, [=](Node<T>& node) {
    Node<T>& na = *node.inputs[0];
    Node<T>& nb = *node.inputs[1];
    for (std::int64_t n = 0; n < os.n; ++n)
      for (std::int64_t c = 0; c < os.c; ++c) {
        const T* dc = node.grad.plane(n, c);
        const T* A = na.value.data() + a_off(n, c);
        const T* B = nb.value.data() + b_off(n, c);
        if (na.requires_grad) {
          T* dA = na.grad_buffer().data() + a_off(n, c);
          if (!ta) {
            // dA (M x K) = dC * op(B)^T
            kernels::gemm<T>(false, !tb, M, K, N, dc, B, dA, true);
          } else {
            // dA stored K x M = op(B) * dC^T
            kernels::gemm<T>(tb, true, K, M, N, B, dc, dA, true);
          }
        }
        if (nb.requires_grad) {
          T* dB = nb.grad_buffer().data() + b_off(n, c);
          if (!tb) {
            // dB (K x N) = op(A)^T * dC
            kernels::gemm<T>(!ta, false, K, N, M, A, dc, dB, true);
          } else {
            // dB stored N x K = dC^T * op(A)
            kernels::gemm<T>(true, ta, N, K, M, dc, A, dB, true);
          }
        }
      }
  });
}

// ---------------------------------------------------------------- conv2d

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>* bias, const Conv2dSpec& spec) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const int G = spec.groups;
  if (G < 1 || xs.c % G != 0 || ws.n % G != 0 || ws.c * G != xs.c) {
    throw ShapeError("conv2d: groups=" + std::to_string(G) + " incompatible with input " + xs.str() +
                     " and weight " + ws.str());
  }
  if (spec.stride < 1 || spec.dilation < 1) throw ShapeError("conv2d: stride and dilation must be >= 1");
  if (bias && bias->value().size() != static_cast<std::size_t>(ws.n)) {
    throw ShapeError("conv2d: bias " + bias->shape().str() + " does not match " + std::to_string(ws.n) +
                     " output channels");
  }
  const std::int64_t kh = ws.h;
  const std::int64_t kw = ws.w;
  const int s = spec.stride;
  const int d = spec.dilation;
  const std::int64_t ph = spec.same_padding ? d * (kh - 1) / 2 : 0;
  const std::int64_t pw = spec.same_padding ? d * (kw - 1) / 2 : 0;
  const std::int64_t oh_n = (xs.h + 2 * ph - d * (kh - 1) - 1) / s + 1;
  const std::int64_t ow_n = (xs.w + 2 * pw - d * (kw - 1) - 1) / s + 1;
  if (oh_n < 1 || ow_n < 1) throw ShapeError("conv2d: input " + xs.str() + " smaller than kernel");
  const std::int64_t cout = ws.n;
  const std::int64_t cin_g = ws.c;
  const std::int64_t cout_g = cout / G;
  const Shape os{xs.n, cout, oh_n, ow_n};
  const bool pointwise = kh == 1 && kw == 1 && s == 1 && G == 1;
  Tensor<T> out(os);

  const T* px = x.value().data();
  const T* pwt = w.value().data();
  if (pointwise) {
    const std::int64_t P = xs.plane();
    for (std::int64_t n = 0; n < xs.n; ++n) {
      kernels::gemm<T>(false, false, cout, P, xs.c, pwt, px + n * xs.c * P, out.plane(n, 0), false);
    }
  } else {
    for (std::int64_t n = 0; n < xs.n; ++n)
      for (std::int64_t co = 0; co < cout; ++co) {
        const std::int64_t g = co / cout_g;
        T* dst = out.plane(n, co);
        for (std::int64_t cl = 0; cl < cin_g; ++cl) {
          const T* src = x.value().plane(n, g * cin_g + cl);
          for (std::int64_t i = 0; i < kh; ++i)
            for (std::int64_t j = 0; j < kw; ++j) {
              const T wv = pwt[((co * cin_g + cl) * kh + i) * kw + j];
              std::int64_t oh0, oh1, ow0, ow1;
              kernels::valid_range(oh_n, xs.h, s, i * d - ph, oh0, oh1);
              kernels::valid_range(ow_n, xs.w, s, j * d - pw, ow0, ow1);
              for (std::int64_t oh = oh0; oh < oh1; ++oh) {
                const T* srow = src + (oh * s + i * d - ph) * xs.w + (j * d - pw);
                T* drow = dst + oh * ow_n;
                if (s == 1) {
                  for (std::int64_t ow = ow0; ow < ow1; ++ow) drow[ow] += wv * srow[ow];
                } else {
                  for (std::int64_t ow = ow0; ow < ow1; ++ow) drow[ow] += wv * srow[ow * s];
                }
              }
            }
        }
      }
  }
  if (bias) {
    const T* pb = bias->value().data();
    for (std::int64_t n = 0; n < os.n; ++n)
      for (std::int64_t co = 0; co < cout; ++co) {
        T* dst = out.plane(n, co);
        for (std::int64_t p = 0; p < os.plane(); ++p) dst[p] += pb[co];
      }
  }
  report_cost(CostKind::kMac, os.n * cout * cin_g * kh * kw * oh_n * ow_n);

  std::vector<Var<T>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return x.graph().record(op_label("conv2d"), std::move(out), std::move(inputs), [=](Node<T>& node) {
    Node<T>& nx = *node.inputs[0];
    Node<T>& nw = *node.inputs[1];
    const Tensor<T>& gy = node.grad;
    if (node.inputs.size() > 2 && node.inputs[2]->requires_grad) {
      T* gb = node.inputs[2]->grad_buffer().data();
      for (std::int64_t n = 0; n < os.n; ++n)
        for (std::int64_t co = 0; co < cout; ++co) {
          const T* gp = gy.plane(n, co);
          T acc{0};
          for (std::int64_t p = 0; p < os.plane(); ++p) acc += gp[p];
          gb[co] += acc;
        }
    }
    if (pointwise) {
      const std::int64_t P = xs.plane();
      for (std::int64_t n = 0; n < xs.n; ++n) {
        const T* g = gy.plane(n, 0);
        if (nx.requires_grad) {
          kernels::gemm<T>(true, false, xs.c, P, cout, nw.value.data(), g,
                           nx.grad_buffer().data() + n * xs.c * P, true);
        }
        if (nw.requires_grad) {
          kernels::gemm<T>(false, true, cout, xs.c, P, g, nx.value.data() + n * xs.c * P,
                           nw.grad_buffer().data(), true);
        }
      }
      return;
    }
    T* gx = nx.requires_grad ? nx.grad_buffer().data() : nullptr;
    T* gw = nw.requires_grad ? nw.grad_buffer().data() : nullptr;
    const T* wt = nw.value.data();
    for (std::int64_t n = 0; n < xs.n; ++n)
      for (std::int64_t co = 0; co < cout; ++co) {
        const std::int64_t g = co / cout_g;
        const T* gp = gy.plane(n, co);
        for (std::int64_t cl = 0; cl < cin_g; ++cl) {
          const std::int64_t ci = g * cin_g + cl;
          const T* src = nx.value.plane(n, ci);
          T* gsrc = gx ? gx + (n * xs.c + ci) * xs.plane() : nullptr;
          for (std::int64_t i = 0; i < kh; ++i)
            for (std::int64_t j = 0; j < kw; ++j) {
              const std::int64_t widx = ((co * cin_g + cl) * kh + i) * kw + j;
              const T wv = wt[widx];
              std::int64_t oh0, oh1, ow0, ow1;
              kernels::valid_range(oh_n, xs.h, s, i * d - ph, oh0, oh1);
              kernels::valid_range(ow_n, xs.w, s, j * d - pw, ow0, ow1);
              T acc{0};
              for (std::int64_t oh = oh0; oh < oh1; ++oh) {
                const std::int64_t off = (oh * s + i * d - ph) * xs.w + (j * d - pw);
                const T* grow = gp + oh * ow_n;
                if (gw) {
                  const T* srow = src + off;
                  for (std::int64_t ow = ow0; ow < ow1; ++ow) acc += grow[ow] * srow[ow * s];
                }
                if (gsrc) {
                  T* xrow = gsrc + off;
                  for (std::int64_t ow = ow0; ow < ow1; ++ow) xrow[ow * s] += wv * grow[ow];
                }
              }
              if (gw) gw[widx] += acc;
            }
        }
      }
  });
}

template <class T>
Var<T> affine_channel(const Var<T>& x, const Var<T>& scale_v, const Var<T>& shift_v) {
  const Shape s = x.shape();
  if (scale_v.value().size() != static_cast<std::size_t>(s.c) ||
      shift_v.value().size() != static_cast<std::size_t>(s.c)) {
    throw ShapeError("affine_channel: factors " + scale_v.shape().str() + "/" + shift_v.shape().str() +
                     " do not match channels of " + s.str());
  }
  Tensor<T> out(s);
  const std::int64_t P = s.plane();
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const T a = scale_v.value()[c];
      const T b = shift_v.value()[c];
      const T* src = x.value().plane(n, c);
      T* dst = out.plane(n, c);
      for (std::int64_t p = 0; p < P; ++p) dst[p] = src[p] * a + b;
    }
  report_cost(CostKind::kScalar, s.numel());
  return x.graph().record(op_label("affine"), std::move(out), {x, scale_v, shift_v}, [=](Node<T>& node) {
    Node<T>& nx = *node.inputs[0];
    Node<T>& na = *node.inputs[1];
    Node<T>& nb = *node.inputs[2];
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < s.c; ++c) {
        const T* g = node.grad.plane(n, c);
        const T* src = nx.value.plane(n, c);
        if (nx.requires_grad) {
          T* gx = nx.grad_buffer().plane(n, c);
          const T a = na.value[c];
          for (std::int64_t p = 0; p < P; ++p) gx[p] += g[p] * a;
        }
        if (na.requires_grad) {
          T acc{0};
          for (std::int64_t p = 0; p < P; ++p) acc += g[p] * src[p];
          na.grad_buffer()[c] += acc;
        }
        if (nb.requires_grad) {
          T acc{0};
          for (std::int64_t p = 0; p < P; ++p) acc += g[p];
          nb.grad_buffer()[c] += acc;
        }
      }
  });
}

// ---------------------------------------------------------------- pooling

template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape s = x.shape();
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  const T inv = T{1} / static_cast<T>(s.plane());
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const T* src = x.value().plane(n, c);
      T acc{0};
      for (std::int64_t p = 0; p < s.plane(); ++p) acc += src[p];
      out.at(n, c, 0, 0) = acc * inv;
    }
  return x.graph().record(op_label("gap"), std::move(out), {x}, [=](Node<T>& node) {
    auto& gx = node.inputs[0]->grad_buffer();
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < s.c; ++c) {
        const T g = node.grad.at(n, c, 0, 0) * inv;
        T* dst = gx.plane(n, c);
        for (std::int64_t p = 0; p < s.plane(); ++p) dst[p] += g;
      }
  });
}

template <class T>
Var<T> adaptive_avg_pool(const Var<T>& x, std::int64_t out_h, std::int64_t out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("adaptive_avg_pool: target size must be >= 1");
  const Shape s = x.shape();
  const Shape os{s.n, s.c, out_h, out_w};
  Tensor<T> out(os);
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const T* src = x.value().plane(n, c);
      T* dst = out.plane(n, c);
      for (std::int64_t i = 0; i < out_h; ++i)
        for (std::int64_t j = 0; j < out_w; ++j) {
          const std::int64_t h0 = bin_start(i, s.h, out_h), h1 = bin_end(i, s.h, out_h);
          const std::int64_t w0 = bin_start(j, s.w, out_w), w1 = bin_end(j, s.w, out_w);
          T acc{0};
          for (std::int64_t h = h0; h < h1; ++h)
            for (std::int64_t w = w0; w < w1; ++w) acc += src[h * s.w + w];
          dst[i * out_w + j] = acc / static_cast<T>((h1 - h0) * (w1 - w0));
        }
    }
  return x.graph().record(op_label("adaptive_avg_pool"), std::move(out), {x}, [=](Node<T>& node) {
    auto& gx = node.inputs[0]->grad_buffer();
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < s.c; ++c) {
        const T* g = node.grad.plane(n, c);
        T* dst = gx.plane(n, c);
        for (std::int64_t i = 0; i < out_h; ++i)
          for (std::int64_t j = 0; j < out_w; ++j) {
            const std::int64_t h0 = bin_start(i, s.h, out_h), h1 = bin_end(i, s.h, out_h);
            const std::int64_t w0 = bin_start(j, s.w, out_w), w1 = bin_end(j, s.w, out_w);
            const T v = g[i * out_w + j] / static_cast<T>((h1 - h0) * (w1 - w0));
            for (std::int64_t h = h0; h < h1; ++h)
              for (std::int64_t w = w0; w < w1; ++w) dst[h * s.w + w] += v;
          }
      }
  });
}

template <class T>
Var<T> avg_pool(const Var<T>& x, int k) {
  const Shape s = x.shape();
  if (k < 1 || s.h % k != 0 || s.w % k != 0) {
    throw ShapeError("avg_pool: window " + std::to_string(k) + " does not tile " + s.str());
  }
  return adaptive_avg_pool(x, s.h / k, s.w / k);
}

template <class T>
Var<T> upsample_bilinear(const Var<T>& x, std::int64_t out_h, std::int64_t out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("upsample_bilinear: target size must be >= 1");
  const Shape s = x.shape();
  Tensor<T> out(Shape{s.n, s.c, out_h, out_w});
  bilinear_forward(x.value(), out);
  return x.graph().record(op_label("upsample"), std::move(out), {x}, [](Node<T>& node) {
    bilinear_backward(node.grad, node.inputs[0]->grad_buffer());
  });
}

template <class T>
Var<T> concat_channels(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape s0 = parts[0].shape();
  std::int64_t total_c = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw ShapeError("concat_channels: " + s.str() + " does not match " + s0.str());
    }
    total_c += s.c;
  }
  Tensor<T> out(Shape{s0.n, total_c, s0.h, s0.w});
  const std::int64_t P = s0.plane();
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    for (std::int64_t n = 0; n < s0.n; ++n) {
      std::copy_n(p.value().plane(n, 0), p.shape().c * P, out.plane(n, off));
    }
    off += p.shape().c;
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return parts[0].graph().record(op_label("concat"), std::move(out), std::move(inputs),
                                 [=](Node<T>& node) {
                                   for (std::size_t k = 0; k < node.inputs.size(); ++k) {
                                     Node<T>& in = *node.inputs[k];
                                     if (!in.requires_grad) continue;
                                     const std::int64_t c = in.value.shape().c;
                                     auto& g = in.grad_buffer();
                                     for (std::int64_t n = 0; n < s0.n; ++n) {
                                       const T* src = node.grad.plane(n, offsets[k]);
                                       T* dst = g.plane(n, 0);
                                       for (std::int64_t i = 0; i < c * P; ++i) dst[i] += src[i];
                                     }
                                   }
                                 });
}

template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  const Shape s = x.shape();
  Tensor<T> out(Shape{s.n, s.c, out_h, out_w});
  bilinear_forward(x, out);
  return out;
}

template <class T>
Tensor<T> resize_nearest(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w) {
  const Shape s = x.shape();
  Tensor<T> out(Shape{s.n, s.c, out_h, out_w});
  auto src_index = [](std::int64_t o, std::int64_t in, std::int64_t outn) {
    const auto i = static_cast<std::int64_t>(std::floor((static_cast<double>(o) + 0.5) *
                                                        static_cast<double>(in) / static_cast<double>(outn)));
    return std::min(i, in - 1);
  };
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t h = 0; h < out_h; ++h)
        for (std::int64_t w = 0; w < out_w; ++w)
          out.at(n, c, h, w) = x.at(n, c, src_index(h, s.h, out_h), src_index(w, s.w, out_w));
  return out;
}

#define GCANET_INSTANTIATE_OPS(T)                                                              \
  template Var<T> add(const Var<T>&, const Var<T>&);                                           \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                           \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                           \
  template Var<T> div(const Var<T>&, const Var<T>&);                                           \
  template Var<T> scale(const Var<T>&, double);                                                \
  template Var<T> add_scalar(const Var<T>&, double);                                           \
  template Var<T> scale_by(const Var<T>&, const Var<T>&);                                      \
  template Var<T> div_by(const Var<T>&, const Var<T>&);                                        \
  template Var<T> relu(const Var<T>&);                                                         \
  template Var<T> sigmoid(const Var<T>&);                                                      \
  template Var<T> log(const Var<T>&);                                                          \
  template Var<T> clamp(const Var<T>&, double, double);                                        \
  template Var<T> softmax(const Var<T>&, int);                                                 \
  template Var<T> l2normalize(const Var<T>&, int, double);                                     \
  template Var<T> channel_norm(const Var<T>&, double);                                         \
  template Var<T> sum(const Var<T>&, int);                                                     \
  template Var<T> sum_all(const Var<T>&);                                                      \
  template Var<T> mean_all(const Var<T>&);                                                     \
  template Var<T> reshape(const Var<T>&, Shape);                                               \
  template Var<T> matmul(const Var<T>&, const Var<T>&, bool, bool);                            \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>*, const Conv2dSpec&);      \
  template Var<T> affine_channel(const Var<T>&, const Var<T>&, const Var<T>&);                 \
  template Var<T> global_avg_pool(const Var<T>&);                                              \
  template Var<T> avg_pool(const Var<T>&, int);                                                \
  template Var<T> adaptive_avg_pool(const Var<T>&, std::int64_t, std::int64_t);                \
  template Var<T> upsample_bilinear(const Var<T>&, std::int64_t, std::int64_t);                \
  template Var<T> concat_channels(std::span<const Var<T>>);                                    \
  template Tensor<T> resize_bilinear(const Tensor<T>&, std::int64_t, std::int64_t);            \
  template Tensor<T> resize_nearest(const Tensor<T>&, std::int64_t, std::int64_t);

GCANET_INSTANTIATE_OPS(float)
GCANET_INSTANTIATE_OPS(double)

#undef GCANET_INSTANTIATE_OPS

}  // namespace gcanet
