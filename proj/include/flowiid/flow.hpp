#pragma once

#include <functional>

#include "flowiid/rng.hpp"
#include "flowiid/tensor.hpp"

namespace flowiid {

/// Optimal-transport conditional flow matching on latents: the straight-line
/// path between a noise draw x0 and a data latent x1, its constant velocity,
/// the velocity-regression loss, and forward Euler integration of a learned
/// field. All elementwise ops reject shape mismatches; nothing broadcasts.

struct FlowConfig {
  double sigma_min = 1e-5;  // residual scaling of the noise endpoint
  int num_steps = 1;        // Euler steps; single step is the operating point

  void validate() const {
    check(sigma_min >= 0.0 && sigma_min < 1.0, "FlowConfig: sigma_min must be in [0, 1)");
    check(num_steps >= 1, "FlowConfig: num_steps must be >= 1");
  }
};

/// One training draw: x_t on the conditional path and its regression target.
template <typename Scalar>
struct FlowSample {
  Tensor<Scalar> x0;
  Tensor<Scalar> x1;
  Scalar t = 0;
  Tensor<Scalar> x_t;
  Tensor<Scalar> v_t;
};

/// Uniform t in [0, 1].
inline double sample_time(Rng& rng) { return rng.uniform(); }

/// x_t = (1 - (1 - sigma_min) t) x0 + t x1
template <typename Scalar>
Tensor<Scalar> conditional_path(const Tensor<Scalar>& x0, const Tensor<Scalar>& x1, Scalar t,
                                const FlowConfig& cfg) {
  check_same_shape(x0, x1, "conditional_path");
  check(t >= Scalar(0) && t <= Scalar(1), "conditional_path: t must be in [0, 1]");
  Tensor<Scalar> out = x0;
  const Scalar a = Scalar(1) - (Scalar(1) - Scalar(cfg.sigma_min)) * t;
  out.data = a * x0.data + t * x1.data;
  return out;
}

/// v_t = x1 - (1 - sigma_min) x0; constant in t for the OT path.
template <typename Scalar>
Tensor<Scalar> target_velocity(const Tensor<Scalar>& x0, const Tensor<Scalar>& x1,
                               const FlowConfig& cfg) {
  check_same_shape(x0, x1, "target_velocity");
  Tensor<Scalar> out = x0;
  out.data = x1.data - (Scalar(1) - Scalar(cfg.sigma_min)) * x0.data;
  return out;
}

/// Mean squared error between predicted and target velocity.
template <typename Scalar>
Scalar fm_loss(const Tensor<Scalar>& u_pred, const Tensor<Scalar>& v_target) {
  return Scalar(mean_squared_diff(u_pred, v_target));
}

template <typename Scalar>
FlowSample<Scalar> make_flow_sample(const Tensor<Scalar>& x0, const Tensor<Scalar>& x1, Scalar t,
                                    const FlowConfig& cfg) {
  FlowSample<Scalar> s;
  s.x0 = x0;
  s.x1 = x1;
  s.t = t;
  s.x_t = conditional_path(x0, x1, t, cfg);
  s.v_t = target_velocity(x0, x1, cfg);
  return s;
}

/// Forward Euler from t=0 to t=1 with cfg.num_steps uniform steps:
/// x <- x + dt * velocity_fn(x, t). A non-finite velocity aborts with the
/// offending step index.
template <typename Scalar>
Tensor<Scalar> euler_integrate(
    const std::function<Tensor<Scalar>(const Tensor<Scalar>&, Scalar)>& velocity_fn,
    const Tensor<Scalar>& x0, const FlowConfig& cfg) {
  cfg.validate();
  Tensor<Scalar> x = x0;
  const Scalar dt = Scalar(1) / Scalar(cfg.num_steps);
  for (int k = 0; k < cfg.num_steps; ++k) {
    const Scalar t = Scalar(k) * dt;
    Tensor<Scalar> v = velocity_fn(x, t);
    check_same_shape(x, v, "euler_integrate");
    if (!v.all_finite())
      throw NumericalError("euler_integrate: non-finite velocity at step " + std::to_string(k));
    x.data += dt * v.data;
  }
  return x;
}

}  // namespace flowiid
