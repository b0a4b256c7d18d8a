#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <vector>

#include "gcanet/graph.hpp"
#include "gcanet/random.hpp"

namespace testing {

template <class T = double>
gcanet::Tensor<T> random_tensor(gcanet::Shape s, gcanet::Rng& rng, double lo = -1.0, double hi = 1.0) {
  gcanet::Tensor<T> t(s);
  for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

inline gcanet::Shape random_shape(gcanet::Rng& rng, std::int64_t max_n = 2, std::int64_t max_c = 4,
                                  std::int64_t max_hw = 6) {
  return {1 + static_cast<std::int64_t>(rng.below(max_n)), 1 + static_cast<std::int64_t>(rng.below(max_c)),
          1 + static_cast<std::int64_t>(rng.below(max_hw)), 1 + static_cast<std::int64_t>(rng.below(max_hw))};
}

/// Parameters owned by a test, with stable addresses.
template <class T = double>
class ParamSet {
 public:
  gcanet::Parameter<T>& add(const std::string& name, gcanet::Tensor<T> v) {
    items_.push_back(std::make_unique<gcanet::Parameter<T>>(name, std::move(v)));
    ptrs_.push_back(items_.back().get());
    return *items_.back();
  }
  std::vector<gcanet::Parameter<T>*>& all() { return ptrs_; }

 private:
  std::vector<std::unique_ptr<gcanet::Parameter<T>>> items_;
  std::vector<gcanet::Parameter<T>*> ptrs_;
};

template <class T>
double max_abs_diff(const gcanet::Tensor<T>& a, const gcanet::Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i] - b[i])));
  return m;
}

template <class T>
bool bitwise_equal(const gcanet::Tensor<T>& a, const gcanet::Tensor<T>& b) {
  if (!(a.shape() == b.shape())) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::memcmp(&a[i], &b[i], sizeof(T)) != 0) return false;
  }
  return true;
}

}  // namespace testing
