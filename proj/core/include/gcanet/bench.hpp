#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace gcanet::bench {

enum class Attention { kDsa, kMsa };

struct Timing {
  std::int64_t tokens = 0;
  double median_ms = 0.0;
};

struct Scaling {
  std::vector<Timing> points;
  /// time(last) / time(first)
  double ratio = 0.0;
  /// Least-squares slope of log(time) on log(tokens): about 1 when linear, 2 when quadratic.
  double loglog_slope = 0.0;
};

/// Median wall time of one inference-mode forward pass over a [1, C, H, W]
/// input with H * W = tokens (H = 2^floor(log2(tokens) / 2)), after one warm-up.
/// MSA uses 8 heads. Throws ConfigError unless tokens is a power of two.
double median_forward_ms(Attention kind, std::int64_t channels, std::int64_t tokens, int runs);

Scaling measure_scaling(Attention kind, std::int64_t channels, std::span<const std::int64_t> tokens, int runs);

}  // namespace gcanet::bench
