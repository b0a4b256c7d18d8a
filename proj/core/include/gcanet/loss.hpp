#pragma once

#include <span>
#include <string>
#include <vector>

#include "gcanet/ops.hpp"

namespace gcanet::loss {

inline constexpr double kClampEps = 1e-7;

/// Mean binary cross-entropy with predictions clamped to [eps, 1 - eps].
template <class T>
Var<T> bce(const Var<T>& s, const Var<T>& g, double eps = kClampEps);

/// 1 - sum(g*s) / (sum(g + s - g*s) + eps), per image, averaged over the batch.
template <class T>
Var<T> iou(const Var<T>& s, const Var<T>& g, double eps = kClampEps);

struct SsimOptions {
  int window = 11;
  /// Gaussian window with this sigma; uniform weights when false.
  bool gaussian = true;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

/// 1 - mean SSIM over every fully contained window (stride 1, no padding).
/// Throws ShapeError when the map is smaller than the window.
template <class T>
Var<T> ssim(const Var<T>& s, const Var<T>& g, const SsimOptions& options = {});

struct TermValues {
  double bce = 0.0;
  double iou = 0.0;
  double ssim = 0.0;
  double sum() const { return bce + iou + ssim; }
};

struct LossBreakdown {
  std::vector<TermValues> sides;
  double total = 0.0;

  double bce() const;
  double iou() const;
  double ssim() const;
  /// "side<i>.<term>" of the first non-finite component, or empty.
  std::string first_non_finite() const;
};

template <class T>
struct TotalLoss {
  Var<T> total;
  LossBreakdown breakdown;
};

/// Unweighted sum of bce + iou + ssim over every side output. Each side must
/// have the mask's shape.
template <class T>
TotalLoss<T> total_loss(std::span<const Var<T>> sides, const Var<T>& g, const SsimOptions& options = {});

}  // namespace gcanet::loss
