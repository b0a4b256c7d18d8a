#include "gcanet/optim.hpp"

#include <cmath>

namespace gcanet {

template <class T>
Adam<T>::Adam(std::vector<Parameter<T>*> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const Parameter<T>* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

template <class T>
void Adam<T>::step() {
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = options_.learning_rate;
  const double eps = options_.epsilon;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter<T>& p = *params_[i];
    T* w = p.value.data();
    T* g = p.grad.data();
    T* m = m_[i].data();
    T* v = v_[i].data();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      const double mk = b1 * static_cast<double>(m[k]) + (1.0 - b1) * gk;
      const double vk = b2 * static_cast<double>(v[k]) + (1.0 - b2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      w[k] = static_cast<T>(static_cast<double>(w[k]) - lr * (mk / c1) / (std::sqrt(vk / c2) + eps));
      g[k] = T{0};
    }
  }
}

template <class T>
void Adam<T>::zero_grad() {
  for (Parameter<T>* p : params_) p->zero_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace gcanet
