#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "gcanet/graph.hpp"

namespace gcanet {

struct GradCheckOptions {
  double step = 1e-5;
  /// Denominator floor of the relative error.
  double floor = 1e-6;
  /// Entries probed per parameter; 0 probes every entry.
  std::size_t max_probes_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probed = 0;
  /// Probes whose +/- step crossed a ReLU or clamp boundary.
  std::size_t skipped_kinks = 0;
  std::string worst;  // "param[index]" of the largest error
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences. A probe is dropped when the perturbed evaluations take a
/// different branch of any piecewise op than the unperturbed one (the kink
/// policy); for ReLU this removes pre-activations within `step` of zero.
///
/// Relative error per entry: |analytic - numeric| / max(|analytic|, |numeric|, floor).
/// Throws NumericError naming the node if the forward pass is not finite.
GradCheckResult grad_check(const std::function<Var<double>(Graph<double>&)>& f,
                           std::span<Parameter<double>* const> params,
                           const GradCheckOptions& options = {});

}  // namespace gcanet
