#include "gcanet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gcanet/random.hpp"

namespace gcanet {
namespace {

struct Eval {
  double value;
  std::uint64_t signature;
};

Eval evaluate(const std::function<Var<double>(Graph<double>&)>& f) {
  Graph<double> g(false);
  g.set_track_kinks(true);
  const Var<double> out = f(g);
  return {out.value()[0], g.kink_signature()};
}

}  // namespace

GradCheckResult grad_check(const std::function<Var<double>(Graph<double>&)>& f,
                           std::span<Parameter<double>* const> params, const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ConfigError("grad_check: step must be > 0");
  for (auto* p : params) p->zero_grad();

  Graph<double> graph(true);
  const Var<double> loss = f(graph);
  if (loss.value().size() != 1) throw ShapeError("grad_check: function must return a scalar");
  if (auto bad = graph.first_non_finite()) throw NumericError("non-finite value in node '" + *bad + "'");
  if (!std::isfinite(loss.value()[0])) throw NumericError("non-finite loss value");
  graph.backward(loss);

  const Eval centre = evaluate(f);
  GradCheckResult result;
  Rng rng(options.seed);
  const double h = options.step;
  for (auto* p : params) {
    const std::size_t n = p->value.size();
    std::vector<std::size_t> probes(n);
    std::iota(probes.begin(), probes.end(), std::size_t{0});
    if (options.max_probes_per_param > 0 && n > options.max_probes_per_param) {
      for (std::size_t i = 0; i < options.max_probes_per_param; ++i) {
        std::swap(probes[i], probes[i + rng.below(n - i)]);
      }
      probes.resize(options.max_probes_per_param);
    }
    const Tensor<double> analytic = p->grad;
    for (std::size_t idx : probes) {
      const double orig = p->value[idx];
      p->value[idx] = orig + h;
      const Eval plus = evaluate(f);
      p->value[idx] = orig - h;
      const Eval minus = evaluate(f);
      p->value[idx] = orig;
      if (plus.signature != centre.signature || minus.signature != centre.signature) {
        ++result.skipped_kinks;
        continue;
      }
      if (!std::isfinite(plus.value) || !std::isfinite(minus.value)) {
        throw NumericError("non-finite value while probing " + p->name);
      }
      const double numeric = (plus.value - minus.value) / (2.0 * h);
      const double a = analytic[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.probed;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = p->name + "[" + std::to_string(idx) + "]";
      }
    }
  }
  return result;
}

}  // namespace gcanet
