#include "gcanet/loss.hpp"

#include <cmath>

namespace gcanet::loss {
namespace {

void require_same(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) throw ShapeError(std::string(what) + ": prediction " + a.str() + " vs mask " + b.str());
}

template <class T>
Var<T> one_minus(const Var<T>& x) {
  return add_scalar(scale(x, -1.0), 1.0);
}

template <class T>
Tensor<T> window_weights(const SsimOptions& o) {
  const int k = o.window;
  Tensor<T> w(Shape{1, 1, k, k});
  std::vector<double> g(static_cast<std::size_t>(k));
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    const double x = i - (k - 1) / 2.0;
    g[i] = o.gaussian ? std::exp(-x * x / (2.0 * o.sigma * o.sigma)) : 1.0;
    total += g[i];
  }
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) w.at(0, 0, i, j) = static_cast<T>(g[i] * g[j] / (total * total));
  return w;
}

}  // namespace

template <class T>
Var<T> bce(const Var<T>& s, const Var<T>& g, double eps) {
  require_same(s.shape(), g.shape(), "bce");
  const Var<T> cs = clamp(s, eps, 1.0 - eps);
  const Var<T> term = add(mul(g, log(cs)), mul(one_minus(g), log(one_minus(cs))));
  return scale(mean_all(term), -1.0);
}

template <class T>
Var<T> iou(const Var<T>& s, const Var<T>& g, double eps) {
  require_same(s.shape(), g.shape(), "iou");
  const Shape sh = s.shape();
  const Shape flat{sh.n, 1, 1, sh.c * sh.plane()};
  const Var<T> inter = mul(g, s);
  const Var<T> i = sum(reshape(inter, flat), 3);
  const Var<T> u = sum(reshape(sub(add(g, s), inter), flat), 3);
  return one_minus(mean_all(div(i, add_scalar(u, eps))));
}

template <class T>
Var<T> ssim(const Var<T>& s, const Var<T>& g, const SsimOptions& o) {
  require_same(s.shape(), g.shape(), "ssim");
  const Shape sh = s.shape();
  if (o.window < 1 || sh.h < o.window || sh.w < o.window) {
    throw ShapeError("ssim: map " + sh.str() + " smaller than window " + std::to_string(o.window));
  }
  const Shape planes{sh.n * sh.c, 1, sh.h, sh.w};
  const Var<T> a = reshape(s, planes);
  const Var<T> b = reshape(g, planes);
  const Var<T> w = s.graph().constant(window_weights<T>(o), "ssim_window");
  Conv2dSpec valid;
  valid.same_padding = false;
  auto filt = [&](const Var<T>& x) { return conv2d(x, w, static_cast<const Var<T>*>(nullptr), valid); };
  const Var<T> mu_a = filt(a);
  const Var<T> mu_b = filt(b);
  const Var<T> mu_ab = mul(mu_a, mu_b);
  const Var<T> var_a = sub(filt(mul(a, a)), mul(mu_a, mu_a));
  const Var<T> var_b = sub(filt(mul(b, b)), mul(mu_b, mu_b));
  const Var<T> cov = sub(filt(mul(a, b)), mu_ab);
  const Var<T> num = mul(add_scalar(scale(mu_ab, 2.0), o.c1), add_scalar(scale(cov, 2.0), o.c2));
  const Var<T> den = mul(add_scalar(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), o.c1), add_scalar(add(var_a, var_b), o.c2));
  return one_minus(mean_all(div(num, den)));
}

double LossBreakdown::bce() const {
  double v = 0.0;
  for (const auto& t : sides) v += t.bce;
  return v;
}

double LossBreakdown::iou() const {
  double v = 0.0;
  for (const auto& t : sides) v += t.iou;
  return v;
}

double LossBreakdown::ssim() const {
  double v = 0.0;
  for (const auto& t : sides) v += t.ssim;
  return v;
}

std::string LossBreakdown::first_non_finite() const {
  for (std::size_t i = 0; i < sides.size(); ++i) {
    const std::string side = "side" + std::to_string(i + 1);
    if (!std::isfinite(sides[i].bce)) return side + ".bce";
    if (!std::isfinite(sides[i].iou)) return side + ".iou";
    if (!std::isfinite(sides[i].ssim)) return side + ".ssim";
  }
  return std::isfinite(total) ? std::string() : std::string("total");
}

template <class T>
TotalLoss<T> total_loss(std::span<const Var<T>> sides, const Var<T>& g, const SsimOptions& options) {
  if (sides.empty()) throw ShapeError("total_loss: no side outputs");
  TotalLoss<T> out;
  Var<T> total;
  for (const Var<T>& s : sides) {
    const Var<T> b = bce(s, g);
    const Var<T> i = iou(s, g);
    const Var<T> m = ssim(s, g, options);
    out.breakdown.sides.push_back({static_cast<double>(b.value()[0]), static_cast<double>(i.value()[0]),
                                   static_cast<double>(m.value()[0])});
    const Var<T> side = add(add(b, i), m);
    total = total.node() ? add(total, side) : side;
  }
  out.total = total;
  out.breakdown.total = static_cast<double>(total.value()[0]);
  return out;
}

#define GCANET_INSTANTIATE_LOSS(T)                                                     \
  template Var<T> bce(const Var<T>&, const Var<T>&, double);                           \
  template Var<T> iou(const Var<T>&, const Var<T>&, double);                           \
  template Var<T> ssim(const Var<T>&, const Var<T>&, const SsimOptions&);              \
  template TotalLoss<T> total_loss(std::span<const Var<T>>, const Var<T>&, const SsimOptions&);

GCANET_INSTANTIATE_LOSS(float)
GCANET_INSTANTIATE_LOSS(double)

#undef GCANET_INSTANTIATE_LOSS

}  // namespace gcanet::loss
