#include "gcanet/bench.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>

#include "gcanet/attention.hpp"
#include "gcanet/error.hpp"

namespace gcanet::bench {

double median_forward_ms(Attention kind, std::int64_t channels, std::int64_t tokens, int runs) {
  if (tokens < 1 || !std::has_single_bit(static_cast<std::uint64_t>(tokens))) {
    throw ConfigError("token count must be a power of two");
  }
  if (runs < 1) throw ConfigError("runs must be at least 1");
  const int log2n = std::countr_zero(static_cast<std::uint64_t>(tokens));
  const std::int64_t h = std::int64_t{1} << (log2n / 2), w = tokens / h;

  ParameterStore<float> store;
  const auto dsa = kind == Attention::kDsa ? attn::make_dsa(store, "dsa", channels, 1) : attn::DsaParams<float>{};
  const auto msa = kind == Attention::kMsa ? attn::make_msa(store, "msa", channels, 8, 1) : attn::MsaParams<float>{};
  Rng rng(7);
  Tensor<float> x(Shape{1, channels, h, w});
  for (auto& v : x.vec()) v = static_cast<float>(rng.uniform(-1.0, 1.0));

  auto once = [&] {
    Graph<float> g(false);
    const auto in = g.constant(x);
    const auto t0 = std::chrono::steady_clock::now();
    const auto out = kind == Attention::kDsa ? attn::dsa_forward(in, dsa) : attn::msa_forward(in, msa);
    const auto t1 = std::chrono::steady_clock::now();
    if (out.value().empty()) throw NumericError("empty attention output");
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
  };
  once();
  std::vector<double> times;
  for (int i = 0; i < runs; ++i) times.push_back(once());
  std::sort(times.begin(), times.end());
  const auto mid = times.size() / 2;
  return times.size() % 2 ? times[mid] : 0.5 * (times[mid - 1] + times[mid]);
}

Scaling measure_scaling(Attention kind, std::int64_t channels, std::span<const std::int64_t> tokens, int runs) {
  if (tokens.size() < 2) throw ConfigError("scaling needs at least two token counts");
  Scaling s;
  for (auto n : tokens) s.points.push_back({n, median_forward_ms(kind, channels, n, runs)});
  s.ratio = s.points.back().median_ms / s.points.front().median_ms;
  double mx = 0, my = 0;
  for (const auto& p : s.points) {
    mx += std::log(static_cast<double>(p.tokens));
    my += std::log(p.median_ms);
  }
  mx /= static_cast<double>(s.points.size());
  my /= static_cast<double>(s.points.size());
  double sxy = 0, sxx = 0;
  for (const auto& p : s.points) {
    const double dx = std::log(static_cast<double>(p.tokens)) - mx;
    sxy += dx * (std::log(p.median_ms) - my);
    sxx += dx * dx;
  }
  s.loglog_slope = sxy / sxx;
  return s;
}

}  // namespace gcanet::bench
