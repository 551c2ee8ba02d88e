#include "gfp/adam.hpp"

#include <cmath>

namespace gfp::ad {

template <class T>
void adam_step(ParamSet<T>& params, AdamState<T>& state) {
  state.step += 1;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    auto mit = state.m.find(name);
    if (mit == state.m.end()) {
      mit = state.m.emplace(name, BasicTensor<T>(p.value.dims())).first;
      state.v.emplace(name, BasicTensor<T>(p.value.dims()));
    }
    auto& m = mit->second;
    auto& v = state.v.at(name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1, vhat = vi / bc2;
      p.value[i] = static_cast<T>(p.value[i] - c.lr * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
}

template void adam_step(ParamSet<float>&, AdamState<float>&);
template void adam_step(ParamSet<double>&, AdamState<double>&);

}  // namespace gfp::ad
