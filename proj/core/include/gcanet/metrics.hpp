#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "gcanet/tensor.hpp"

// Saliency metrics on single maps [1,1,H,W]. Predictions are in [0,1];
// ground truth is binarized at 0.5.

namespace gcanet::metrics {

inline constexpr int kThresholds = 255;
/// Machine epsilon of double, used where the reference construction adds eps.
inline constexpr double kEps = 2.220446049250313e-16;

/// Threshold k (0-based) of the curves: (k + 1) / 256, applied as s >= t.
constexpr double threshold(int k) { return static_cast<double>(k + 1) / 256.0; }

/// (1 + beta2) * p * r / (beta2 * p + r), 0 when p = r = 0.
double f_beta(double precision, double recall, double beta2 = 0.3);

/// Mean absolute error.
double mae(const Tensor<double>& s, const Tensor<double>& g);

struct Curves {
  std::array<double, kThresholds> precision{};
  std::array<double, kThresholds> recall{};
  std::array<double, kThresholds> f{};

  double mean_f() const;
  double max_f() const;
};

/// Precision is 1 at thresholds with no predicted positives. Throws
/// DomainError when g has no foreground.
Curves pr_f_curves(const Tensor<double>& s, const Tensor<double>& g, double beta2 = 0.3);

/// Exact Euclidean distance from each pixel to the nearest foreground pixel
/// of g, and that pixel's flat index. Among equidistant candidates the one
/// with the smallest column, then the smallest row, is chosen.
struct DistanceField {
  std::vector<double> distance;
  std::vector<std::int64_t> nearest;
};
DistanceField distance_to_foreground(const Tensor<double>& g);

/// Weighted F-measure. Error field |s - g|; background errors take the value
/// at the nearest foreground pixel, are smoothed by a 7x7 Gaussian (sigma 5,
/// renormalized at the border), foreground errors are capped by the smoothed
/// field, and background errors weighted by 2 - exp(ln(0.5) / 5 * d). Throws
/// DomainError when g has no foreground.
double weighted_f(const Tensor<double>& s, const Tensor<double>& g, double beta2 = 1.0);

/// Structure measure alpha * S_object + (1 - alpha) * S_region, clamped at 0.
/// An all-background g scores 1 - mean(s); an all-foreground g scores mean(s).
double s_measure(const Tensor<double>& s, const Tensor<double>& g, double alpha = 0.5);

/// Enhanced-alignment measure at one threshold (s >= t).
double e_measure(const Tensor<double>& s, const Tensor<double>& g, double t);
/// Mean of e_measure over the 255 curve thresholds.
double e_measure_mean(const Tensor<double>& s, const Tensor<double>& g);

struct MetricReport {
  double mae = 0.0;
  Curves curves;
  double mean_f = 0.0;
  double max_f = 0.0;
  double weighted_f = 0.0;
  double s_measure = 0.0;
  double e_measure = 0.0;
};

/// Every metric for one pair. s is resized to g's size beforehand by the caller.
MetricReport evaluate(const Tensor<double>& s, const Tensor<double>& g);

/// Arithmetic mean of scalars and pointwise mean of curves; mean_f and max_f
/// are taken from the averaged F curve.
MetricReport mean_report(std::span<const MetricReport> reports);

}  // namespace gcanet::metrics
