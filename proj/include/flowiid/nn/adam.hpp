#pragma once

#include <cmath>
#include <vector>

#include "flowiid/nn/layers.hpp"

namespace flowiid::nn {

/// Adam with bias correction over a fixed parameter set. Moment buffers are
/// addressable by parameter name so checkpoints can restore them for exact
/// training resume.
template <typename Scalar>
struct Adam {
  double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long long t = 0;
  ParamRefs<Scalar> params;
  std::vector<ArrX<Scalar>> m, v;

  Adam() = default;
  explicit Adam(ParamRefs<Scalar> ps, double lr_ = 1e-4) : lr(lr_), params(std::move(ps)) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (auto* p : params) {
      m.push_back(ArrX<Scalar>::Zero(p->size()));
      v.push_back(ArrX<Scalar>::Zero(p->size()));
    }
  }

  void zero_grad() {
    for (auto* p : params) p->zero_grad();
  }

  void step() {
    ++t;
    const Scalar inv_bc1 = Scalar(1.0 / (1.0 - std::pow(beta1, double(t))));
    const Scalar inv_bc2 = Scalar(1.0 / (1.0 - std::pow(beta2, double(t))));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& g = params[i]->grad;
      m[i] = Scalar(beta1) * m[i] + Scalar(1 - beta1) * g;
      v[i] = Scalar(beta2) * v[i] + Scalar(1 - beta2) * g.square();
      params[i]->value -= Scalar(lr) * (m[i] * inv_bc1) / ((v[i] * inv_bc2).sqrt() + Scalar(eps));
    }
  }
};

}  // namespace flowiid::nn
