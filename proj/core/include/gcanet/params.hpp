#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "gcanet/graph.hpp"
#include "gcanet/random.hpp"

namespace gcanet {

/// Owns parameters with stable addresses and unique names, in registration
/// order.
template <class T>
class ParameterStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    index_[name] = params_.size();
    params_.push_back(std::make_unique<Parameter<T>>(name, std::move(init)));
    return *params_.back();
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  std::vector<Parameter<T>*> all() const {
    std::vector<Parameter<T>*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::int64_t element_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += static_cast<std::int64_t>(p->value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  std::size_t size() const { return params_.size(); }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr double kReluGain = 2.0;
inline constexpr double kLinearGain = 1.0;

/// Kaiming fan-in normal initialisation, std = sqrt(gain / fan_in), with gain
/// 2 for layers feeding a ReLU and 1 for linear outputs. The stream is keyed
/// by (seed, name) so a tensor's values do not depend on which other layers
/// exist.
template <class T>
Tensor<T> kaiming_normal(Shape shape, std::int64_t fan_in, std::uint64_t seed, const std::string& name,
                         double gain = kReluGain) {
  Rng rng(derive_seed(seed, name));
  const double sd = std::sqrt(gain / static_cast<double>(fan_in));
  Tensor<T> t(shape);
  for (auto& v : t.vec()) v = static_cast<T>(rng.normal() * sd);
  return t;
}

}  // namespace gcanet
