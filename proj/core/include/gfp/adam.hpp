#pragma once

#include <map>
#include <string>

#include "gfp/graph.hpp"

namespace gfp::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  AdamConfig config;
  long step = 0;
  std::map<std::string, BasicTensor<T>> m;
  std::map<std::string, BasicTensor<T>> v;
};

// One bias-corrected Adam update of every parameter from its accumulated gradient.
// Moments are created lazily on the first step.
template <class T>
void adam_step(ParamSet<T>& params, AdamState<T>& state);

}  // namespace gfp::ad
