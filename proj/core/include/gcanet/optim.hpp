#pragma once

#include <cstdint>
#include <vector>

#include "gcanet/graph.hpp"

namespace gcanet {

struct AdamOptions {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction and a fixed learning rate.
template <class T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamOptions options = {});

  /// Applies one update from the accumulated gradients, then zeroes them.
  void step();
  void zero_grad();
  std::int64_t steps() const { return t_; }
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> m_, v_;
  AdamOptions options_;
  std::int64_t t_ = 0;
};

}  // namespace gcanet
