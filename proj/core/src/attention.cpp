#include "gcanet/attention.hpp"

#include <cmath>

namespace gcanet::attn {
namespace {

template <class T>
Parameter<T>& matrix_param(ParameterStore<T>& store, const std::string& name, std::int64_t c,
                           std::uint64_t seed) {
  return store.add(name, kaiming_normal<T>(Shape{1, 1, c, c}, c, seed, name, kLinearGain));
}

template <class T>
void conv1x1_params(ParameterStore<T>& store, const std::string& name, std::int64_t cin, std::int64_t cout,
                    std::uint64_t seed, Parameter<T>*& w, Parameter<T>*& b, double gain = kReluGain) {
  w = &store.add(name + ".w", kaiming_normal<T>(Shape{cout, cin, 1, 1}, cin, seed, name + ".w", gain));
  b = &store.add(name + ".b", Tensor<T>(Shape{1, cout, 1, 1}));
}

template <class T>
Var<T> pooled_projection(const Var<T>& f, Parameter<T>* w, Parameter<T>* b) {
  Graph<T>& g = f.graph();
  const Var<T> wv = g.param(*w);
  const Var<T> bv = g.param(*b);
  return relu(conv2d(global_avg_pool(f), wv, &bv, Conv2dSpec{}));
}

}  // namespace

template <class T>
DsaParams<T> make_dsa(ParameterStore<T>& store, const std::string& prefix, std::int64_t channels,
                      std::uint64_t seed) {
  DsaParams<T> p;
  p.wq = &matrix_param(store, prefix + ".wq", channels, seed);
  p.wk = &matrix_param(store, prefix + ".wk", channels, seed);
  p.wv = &matrix_param(store, prefix + ".wv", channels, seed);
  p.wo = &matrix_param(store, prefix + ".wo", channels, seed);
  p.alpha = &store.add(prefix + ".alpha", Tensor<T>::scalar(T{1}));
  return p;
}

template <class T>
Var<T> dsa_forward(const Var<T>& x, const DsaParams<T>& p, DsaTrace<T>* trace) {
  const Shape s = x.shape();
  const std::int64_t C = p.channels();
  if (s.c != C) {
    throw ShapeError("dsa_forward: input " + s.str() + " has " + std::to_string(s.c) +
                     " channels, parameters expect " + std::to_string(C));
  }
  Graph<T>& g = x.graph();
  const std::int64_t N = s.plane();
  // Channel-major token matrix, X'^T: [B, 1, C, N].
  const Var<T> xt = reshape(x, Shape{s.n, 1, C, N});
  const Var<T> qt = matmul(g.param(*p.wq), xt, true, false);
  const Var<T> kt = matmul(g.param(*p.wk), xt, true, false);
  const Var<T> vt = matmul(g.param(*p.wv), xt, true, false);
  const Var<T> scores = sum(mul(l2normalize(qt, 3), l2normalize(kt, 3)), 3);
  const Var<T> attention = softmax(scale_by(scores, g.param(*p.alpha)), 2);
  const Var<T> z = mul(attention, vt);
  const Var<T> out = matmul(g.param(*p.wo), z, true, false);
  if (trace) {
    trace->scores = scores.value();
    trace->attention = attention.value();
  }
  return reshape(out, s);
}

template <class T>
MsaParams<T> make_msa(ParameterStore<T>& store, const std::string& prefix, std::int64_t channels, int heads,
                      std::uint64_t seed) {
  if (heads < 1 || channels % heads != 0) {
    throw ConfigError("msa: channels " + std::to_string(channels) + " not divisible by heads " +
                      std::to_string(heads));
  }
  MsaParams<T> p;
  p.wq = &matrix_param(store, prefix + ".wq", channels, seed);
  p.wk = &matrix_param(store, prefix + ".wk", channels, seed);
  p.wv = &matrix_param(store, prefix + ".wv", channels, seed);
  p.wo = &matrix_param(store, prefix + ".wo", channels, seed);
  p.heads = heads;
  return p;
}

template <class T>
Var<T> msa_forward(const Var<T>& x, const MsaParams<T>& p, MsaTrace<T>* trace) {
  const Shape s = x.shape();
  const std::int64_t C = p.channels();
  if (s.c != C) {
    throw ShapeError("msa_forward: input " + s.str() + " does not match " + std::to_string(C) + " channels");
  }
  if (p.heads < 1 || C % p.heads != 0) {
    throw ShapeError("msa_forward: channels " + std::to_string(C) + " not divisible by heads " +
                     std::to_string(p.heads));
  }
  Graph<T>& g = x.graph();
  const std::int64_t N = s.plane();
  const std::int64_t h = p.heads;
  const std::int64_t d = C / h;
  const Var<T> xt = reshape(x, Shape{s.n, 1, C, N});
  const Shape split{s.n, h, d, N};
  const Var<T> q = reshape(matmul(g.param(*p.wq), xt, true, false), split);
  const Var<T> k = reshape(matmul(g.param(*p.wk), xt, true, false), split);
  const Var<T> v = reshape(matmul(g.param(*p.wv), xt, true, false), split);
  const Var<T> logits = scale(matmul(q, k, true, false), 1.0 / std::sqrt(static_cast<double>(d)));
  const Var<T> attention = softmax(logits, 3);  // [B, h, N, N]
  const Var<T> o = matmul(v, attention, false, true);  // [B, h, d, N]
  const Var<T> out = matmul(g.param(*p.wo), reshape(o, Shape{s.n, 1, C, N}), true, false);
  if (trace) trace->attention = attention.value();
  return reshape(out, s);
}

template <class T>
CraParams<T> make_cra(ParameterStore<T>& store, const std::string& prefix, std::int64_t low_channels,
                      std::int64_t high_channels, std::int64_t global_channels, int heads, std::uint64_t seed) {
  if (heads < 1 || low_channels % heads != 0) {
    throw ConfigError("cra: low-level channels " + std::to_string(low_channels) +
                      " not divisible by heads " + std::to_string(heads));
  }
  CraParams<T> p;
  conv1x1_params(store, prefix + ".proj_l", low_channels, low_channels, seed, p.proj_l_w, p.proj_l_b);
  conv1x1_params(store, prefix + ".proj_h", high_channels, low_channels, seed, p.proj_h_w, p.proj_h_b);
  conv1x1_params(store, prefix + ".proj_g", global_channels, low_channels, seed, p.proj_g_w, p.proj_g_b);
  conv1x1_params(store, prefix + ".proj_out", low_channels, low_channels, seed, p.proj_out_w, p.proj_out_b,
                 kLinearGain);
  p.tau = &store.add(prefix + ".tau", Tensor<T>::scalar(T{1}));
  p.heads = heads;
  return p;
}

template <class T>
Var<T> cra_forward(const Var<T>& f_low, const Var<T>& f_high, const Var<T>& f_global, const CraParams<T>& p,
                   CraTrace<T>* trace) {
  const Shape s = f_low.shape();
  const std::int64_t C = p.channels();
  if (p.heads < 1 || C % p.heads != 0) {
    throw ConfigError("cra_forward: channels " + std::to_string(C) + " not divisible by heads " +
                      std::to_string(p.heads));
  }
  if (s.c != p.proj_l_w->value.shape().c || f_high.shape().c != p.proj_h_w->value.shape().c ||
      f_global.shape().c != p.proj_g_w->value.shape().c) {
    throw ShapeError("cra_forward: input channels " + s.str() + ", " + f_high.shape().str() + ", " +
                     f_global.shape().str() + " do not match projections");
  }
  if (f_high.shape().n != s.n || f_global.shape().n != s.n) {
    throw ShapeError("cra_forward: batch sizes differ");
  }
  Graph<T>& g = f_low.graph();
  const std::int64_t h = p.heads;
  const std::int64_t d = C / h;
  const Var<T> keys = reshape(pooled_projection(f_low, p.proj_l_w, p.proj_l_b), Shape{s.n, h, 1, d});
  const Var<T> q_high = reshape(pooled_projection(f_high, p.proj_h_w, p.proj_h_b), Shape{s.n, h, d, 1});
  const Var<T> q_global = reshape(pooled_projection(f_global, p.proj_g_w, p.proj_g_b), Shape{s.n, h, d, 1});
  const Var<T> a1 = matmul(q_high, keys);
  const Var<T> a2 = matmul(q_global, keys);
  const Var<T> attention = softmax(div_by(add(a1, a2), g.param(*p.tau)), 3);
  const Var<T> mixed = matmul(attention, reshape(f_low, Shape{s.n, h, d, s.plane()}));
  const Var<T> w_out = g.param(*p.proj_out_w);
  const Var<T> b_out = g.param(*p.proj_out_b);
  const Var<T> projected = conv2d(reshape(mixed, s), w_out, &b_out, Conv2dSpec{});
  if (trace) {
    trace->a1 = a1.value();
    trace->a2 = a2.value();
    trace->attention = attention.value();
  }
  return add(projected, f_low);
}

#define GCANET_INSTANTIATE_ATTN(T)                                                                         \
  template DsaParams<T> make_dsa(ParameterStore<T>&, const std::string&, std::int64_t, std::uint64_t);     \
  template Var<T> dsa_forward(const Var<T>&, const DsaParams<T>&, DsaTrace<T>*);                          \
  template MsaParams<T> make_msa(ParameterStore<T>&, const std::string&, std::int64_t, int, std::uint64_t); \
  template Var<T> msa_forward(const Var<T>&, const MsaParams<T>&, MsaTrace<T>*);                          \
  template CraParams<T> make_cra(ParameterStore<T>&, const std::string&, std::int64_t, std::int64_t,       \
                                 std::int64_t, int, std::uint64_t);                                        \
  template Var<T> cra_forward(const Var<T>&, const Var<T>&, const Var<T>&, const CraParams<T>&, CraTrace<T>*);

GCANET_INSTANTIATE_ATTN(float)
GCANET_INSTANTIATE_ATTN(double)

#undef GCANET_INSTANTIATE_ATTN

}  // namespace gcanet::attn
