#include "gcanet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace gcanet::metrics {
namespace {

void check_pair(const Tensor<double>& s, const Tensor<double>& g, const char* what) {
  if (s.shape() != g.shape() || s.shape().n != 1 || s.shape().c != 1) {
    throw ShapeError(std::string(what) + ": expected equal [1,1,H,W] maps, got " + s.shape().str() + " and " +
                     g.shape().str());
  }
}

std::vector<bool> binarize(const Tensor<double>& g) {
  std::vector<bool> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i] >= 0.5;
  return out;
}

std::size_t count(const std::vector<bool>& m) { return static_cast<std::size_t>(std::count(m.begin(), m.end(), true)); }

/// Number of curve thresholds s passes: #{k : (k+1)/256 <= s}.
int thresholds_passed(double s) {
  const double k = std::floor(s * 256.0);
  return static_cast<int>(std::clamp(k, 0.0, static_cast<double>(kThresholds)));
}

/// Sample mean and standard deviation (N - 1 denominator, 0 for N = 1).
std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

double object_score(const std::vector<double>& v) {
  const auto [x, sigma] = mean_std(v);
  return 2.0 * x / (x * x + 1.0 + sigma + kEps);
}

/// Region SSIM of the structure measure over rows [r0,r1) x cols [c0,c1).
double region_ssim(const Tensor<double>& s, const std::vector<bool>& g, std::int64_t w, std::int64_t r0,
                   std::int64_t r1, std::int64_t c0, std::int64_t c1) {
  const double n = static_cast<double>((r1 - r0) * (c1 - c0));
  double mx = 0.0, my = 0.0;
  for (std::int64_t r = r0; r < r1; ++r)
    for (std::int64_t c = c0; c < c1; ++c) {
      mx += s[static_cast<std::size_t>(r * w + c)];
      my += g[static_cast<std::size_t>(r * w + c)] ? 1.0 : 0.0;
    }
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0, cxy = 0.0;
  for (std::int64_t r = r0; r < r1; ++r)
    for (std::int64_t c = c0; c < c1; ++c) {
      const double dx = s[static_cast<std::size_t>(r * w + c)] - mx;
      const double dy = (g[static_cast<std::size_t>(r * w + c)] ? 1.0 : 0.0) - my;
      vx += dx * dx;
      vy += dy * dy;
      cxy += dx * dy;
    }
  vx /= n - 1.0 + kEps;
  vy /= n - 1.0 + kEps;
  cxy /= n - 1.0 + kEps;
  const double a = 4.0 * mx * my * cxy;
  const double b = (mx * mx + my * my) * (vx + vy);
  if (a != 0.0) return a / (b + kEps);
  return b == 0.0 ? 1.0 : 0.0;
}

double s_region(const Tensor<double>& s, const std::vector<bool>& g) {
  const std::int64_t h = s.shape().h;
  const std::int64_t w = s.shape().w;
  double total = 0.0, sx = 0.0, sy = 0.0;
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c) {
      if (!g[static_cast<std::size_t>(r * w + c)]) continue;
      total += 1.0;
      sx += static_cast<double>(c + 1);
      sy += static_cast<double>(r + 1);
    }
  // Centroid in 1-based coordinates; it is the count of left columns / top rows.
  const auto x = static_cast<std::int64_t>(std::round(sx / total));
  const auto y = static_cast<std::int64_t>(std::round(sy / total));
  const double area = static_cast<double>(h * w);
  const std::array<std::array<std::int64_t, 4>, 4> regions{{{0, y, 0, x}, {0, y, x, w}, {y, h, 0, x}, {y, h, x, w}}};
  double q = 0.0;
  for (const auto& rg : regions) {
    const std::int64_t cells = (rg[1] - rg[0]) * (rg[3] - rg[2]);
    if (cells == 0) continue;
    q += static_cast<double>(cells) / area * region_ssim(s, g, w, rg[0], rg[1], rg[2], rg[3]);
  }
  return q;
}

/// Lower-envelope pass of the exact distance transform along one line.
/// f[i] is the squared distance carried from the previous pass (or +inf);
/// on ties the smallest position wins.
void envelope(const std::vector<std::int64_t>& f, std::vector<std::int64_t>& d, std::vector<std::int64_t>& arg) {
  constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max();
  const auto n = static_cast<std::int64_t>(f.size());
  std::vector<std::int64_t> v;
  std::vector<double> z;
  v.reserve(f.size());
  z.reserve(f.size() + 1);
  auto meet = [&](std::int64_t q, std::int64_t p) {
    return static_cast<double>((f[q] + q * q) - (f[p] + p * p)) / static_cast<double>(2 * (q - p));
  };
  for (std::int64_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    double s = -std::numeric_limits<double>::infinity();
    while (!v.empty()) {
      s = meet(q, v.back());
      if (s > z.back()) break;
      v.pop_back();
      z.pop_back();
      s = -std::numeric_limits<double>::infinity();
    }
    v.push_back(q);
    z.push_back(s);
  }
  d.assign(f.size(), kInf);
  arg.assign(f.size(), -1);
  if (v.empty()) return;
  std::size_t k = 0;
  for (std::int64_t x = 0; x < n; ++x) {
    while (k + 1 < v.size() && z[k + 1] < static_cast<double>(x)) ++k;
    d[x] = (x - v[k]) * (x - v[k]) + f[v[k]];
    arg[x] = v[k];
  }
}

}  // namespace

double f_beta(double p, double r, double beta2) {
  const double den = beta2 * p + r;
  return den == 0.0 ? 0.0 : (1.0 + beta2) * p * r / den;
}

double mae(const Tensor<double>& s, const Tensor<double>& g) {
  check_pair(s, g, "mae");
  double acc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) acc += std::abs(s[i] - g[i]);
  return acc / static_cast<double>(s.size());
}

double Curves::mean_f() const { return std::accumulate(f.begin(), f.end(), 0.0) / kThresholds; }
double Curves::max_f() const { return *std::max_element(f.begin(), f.end()); }

Curves pr_f_curves(const Tensor<double>& s, const Tensor<double>& g, double beta2) {
  check_pair(s, g, "pr_f_curves");
  const auto mask = binarize(g);
  const std::size_t fg = count(mask);
  if (fg == 0) throw DomainError("pr_f_curves: ground truth has no foreground");
  // hist[k]: pixels passing exactly the first k thresholds.
  std::array<std::int64_t, kThresholds + 1> hist_fg{}, hist_bg{};
  for (std::size_t i = 0; i < s.size(); ++i) (mask[i] ? hist_fg : hist_bg)[thresholds_passed(s[i])]++;
  Curves c;
  std::int64_t tp = 0, fp = 0;
  for (int k = kThresholds - 1; k >= 0; --k) {
    tp += hist_fg[k + 1];
    fp += hist_bg[k + 1];
    c.precision[k] = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    c.recall[k] = static_cast<double>(tp) / static_cast<double>(fg);
    c.f[k] = f_beta(c.precision[k], c.recall[k], beta2);
  }
  return c;
}

DistanceField distance_to_foreground(const Tensor<double>& g) {
  constexpr std::int64_t kInf = std::numeric_limits<std::int64_t>::max();
  const std::int64_t h = g.shape().h;
  const std::int64_t w = g.shape().w;
  const auto mask = binarize(g);
  if (count(mask) == 0) throw DomainError("distance_to_foreground: no foreground");

  // Column pass: nearest foreground row within each column, upper row on ties.
  std::vector<std::int64_t> col_d2(static_cast<std::size_t>(h * w), kInf), col_row(static_cast<std::size_t>(h * w), -1);
  for (std::int64_t c = 0; c < w; ++c) {
    std::vector<std::int64_t> above(static_cast<std::size_t>(h), -1), below(static_cast<std::size_t>(h), -1);
    for (std::int64_t r = 0, last = -1; r < h; ++r) {
      if (mask[static_cast<std::size_t>(r * w + c)]) last = r;
      above[r] = last;
    }
    for (std::int64_t r = h - 1, last = -1; r >= 0; --r) {
      if (mask[static_cast<std::size_t>(r * w + c)]) last = r;
      below[r] = last;
    }
    for (std::int64_t r = 0; r < h; ++r) {
      std::int64_t best = above[r];
      if (below[r] >= 0 && (best < 0 || below[r] - r < r - best)) best = below[r];
      if (best >= 0) {
        col_d2[static_cast<std::size_t>(r * w + c)] = (r - best) * (r - best);
        col_row[static_cast<std::size_t>(r * w + c)] = best;
      }
    }
  }

  // Row pass over the column results; smaller column on ties.
  DistanceField out;
  out.distance.resize(g.size());
  out.nearest.resize(g.size());
  std::vector<std::int64_t> f(static_cast<std::size_t>(w)), d, arg;
  for (std::int64_t r = 0; r < h; ++r) {
    for (std::int64_t c = 0; c < w; ++c) f[c] = col_d2[static_cast<std::size_t>(r * w + c)];
    envelope(f, d, arg);
    for (std::int64_t c = 0; c < w; ++c) {
      const auto i = static_cast<std::size_t>(r * w + c);
      out.distance[i] = std::sqrt(static_cast<double>(d[c]));
      out.nearest[i] = col_row[static_cast<std::size_t>(r * w + arg[c])] * w + arg[c];
    }
  }
  return out;
}

double weighted_f(const Tensor<double>& s, const Tensor<double>& g, double beta2) {
  check_pair(s, g, "weighted_f");
  const auto mask = binarize(g);
  const std::size_t fg = count(mask);
  if (fg == 0) throw DomainError("weighted_f: ground truth has no foreground");
  const std::int64_t h = s.shape().h;
  const std::int64_t w = s.shape().w;
  const std::size_t n = s.size();

  std::vector<double> e(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = std::abs(s[i] - (mask[i] ? 1.0 : 0.0));
  const DistanceField dist = distance_to_foreground(g);
  std::vector<double> et(n);
  for (std::size_t i = 0; i < n; ++i) et[i] = mask[i] ? e[i] : e[static_cast<std::size_t>(dist.nearest[i])];

  constexpr int kRadius = 3;
  constexpr double kSigma = 5.0;
  std::array<double, 2 * kRadius + 1> k1{};
  for (int i = -kRadius; i <= kRadius; ++i) k1[i + kRadius] = std::exp(-(i * i) / (2.0 * kSigma * kSigma));

  std::vector<double> ew(n);
  double fg_err = 0.0, bg_err = 0.0;
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c) {
      const auto i = static_cast<std::size_t>(r * w + c);
      double v = e[i];
      if (mask[i]) {
        double acc = 0.0, norm = 0.0;
        for (int dr = -kRadius; dr <= kRadius; ++dr) {
          const std::int64_t rr = r + dr;
          if (rr < 0 || rr >= h) continue;
          for (int dc = -kRadius; dc <= kRadius; ++dc) {
            const std::int64_t cc = c + dc;
            if (cc < 0 || cc >= w) continue;
            const double k = k1[dr + kRadius] * k1[dc + kRadius];
            acc += k * et[static_cast<std::size_t>(rr * w + cc)];
            norm += k;
          }
        }
        v = std::min(v, acc / norm);
        fg_err += v;
      } else {
        v *= 2.0 - std::exp(std::log(0.5) / 5.0 * dist.distance[i]);
        bg_err += v;
      }
      ew[i] = v;
    }
  const double tp = static_cast<double>(fg) - fg_err;
  const double recall = 1.0 - fg_err / static_cast<double>(fg);
  const double precision = tp / (kEps + tp + bg_err);
  return (1.0 + beta2) * recall * precision / (kEps + recall + beta2 * precision);
}

double s_measure(const Tensor<double>& s, const Tensor<double>& g, double alpha) {
  check_pair(s, g, "s_measure");
  const auto mask = binarize(g);
  const double y = static_cast<double>(count(mask)) / static_cast<double>(s.size());
  const double mean_s = std::accumulate(s.vec().begin(), s.vec().end(), 0.0) / static_cast<double>(s.size());
  if (y == 0.0) return 1.0 - mean_s;
  if (y == 1.0) return mean_s;
  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < s.size(); ++i) (mask[i] ? fg : bg).push_back(mask[i] ? s[i] : 1.0 - s[i]);
  const double so = y * object_score(fg) + (1.0 - y) * object_score(bg);
  const double q = alpha * so + (1.0 - alpha) * s_region(s, mask);
  return std::max(q, 0.0);
}

double e_measure(const Tensor<double>& s, const Tensor<double>& g, double t) {
  check_pair(s, g, "e_measure");
  const auto mask = binarize(g);
  // n[gt][pred]
  std::array<std::array<double, 2>, 2> n{};
  for (std::size_t i = 0; i < s.size(); ++i) n[mask[i] ? 1 : 0][s[i] >= t ? 1 : 0] += 1.0;
  const double total = static_cast<double>(s.size());
  const double gt_fg = n[1][0] + n[1][1];
  if (gt_fg == 0.0) return n[0][0] / total;
  if (gt_fg == total) return n[1][1] / total;
  const double mu_g = gt_fg / total;
  const double mu_b = (n[0][1] + n[1][1]) / total;
  double acc = 0.0;
  for (int gv = 0; gv < 2; ++gv)
    for (int bv = 0; bv < 2; ++bv) {
      if (n[gv][bv] == 0.0) continue;
      const double ag = gv - mu_g;
      const double ab = bv - mu_b;
      const double xi = 2.0 * ag * ab / (ag * ag + ab * ab + kEps);
      acc += n[gv][bv] * (xi + 1.0) * (xi + 1.0) / 4.0;
    }
  return acc / total;
}

double e_measure_mean(const Tensor<double>& s, const Tensor<double>& g) {
  double acc = 0.0;
  for (int k = 0; k < kThresholds; ++k) acc += e_measure(s, g, threshold(k));
  return acc / kThresholds;
}

MetricReport evaluate(const Tensor<double>& s, const Tensor<double>& g) {
  MetricReport r;
  r.mae = mae(s, g);
  r.curves = pr_f_curves(s, g);
  r.mean_f = r.curves.mean_f();
  r.max_f = r.curves.max_f();
  r.weighted_f = weighted_f(s, g);
  r.s_measure = s_measure(s, g);
  r.e_measure = e_measure_mean(s, g);
  return r;
}

MetricReport mean_report(std::span<const MetricReport> reports) {
  MetricReport m;
  if (reports.empty()) return m;
  const double n = static_cast<double>(reports.size());
  for (const MetricReport& r : reports) {
    m.mae += r.mae / n;
    m.weighted_f += r.weighted_f / n;
    m.s_measure += r.s_measure / n;
    m.e_measure += r.e_measure / n;
    for (int k = 0; k < kThresholds; ++k) {
      m.curves.precision[k] += r.curves.precision[k] / n;
      m.curves.recall[k] += r.curves.recall[k] / n;
      m.curves.f[k] += r.curves.f[k] / n;
    }
  }
  m.mean_f = m.curves.mean_f();
  m.max_f = m.curves.max_f();
  return m;
}

}  // namespace gcanet::metrics
