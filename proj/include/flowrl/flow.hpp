#pragma once

#include <string>
#include <vector>

#include "flowrl/nn.hpp"
#include "flowrl/rng.hpp"
#include "flowrl/tensor.hpp"

namespace flowrl {

// time-sampling law for the flow-matching loss
enum class TimeDist { uniform, beta_1_15, logit_normal };

inline const char* to_string(TimeDist d) {
  switch (d) {
    case TimeDist::uniform: return "uniform";
    case TimeDist::beta_1_15: return "beta_1_15";
    case TimeDist::logit_normal: return "logit_normal";
  }
  return "?";
}

inline TimeDist time_dist_from_string(const std::string& s) {
  if (s == "uniform") return TimeDist::uniform;
  if (s == "beta_1_15") return TimeDist::beta_1_15;
  if (s == "logit_normal") return TimeDist::logit_normal;
  throw std::invalid_argument("unknown time distribution '" + s + "'");
}

inline double sample_time(TimeDist dist, Rng& rng) {
  switch (dist) {
    case TimeDist::uniform:
      return rng.uniform();
    case TimeDist::beta_1_15:
      // Beta(1, 1.5) by inverse CDF: F(x) = 1 - (1-x)^1.5
      return 1.0 - std::pow(1.0 - rng.uniform(), 1.0 / 1.5);
    case TimeDist::logit_normal:
      return 1.0 / (1.0 + std::exp(-rng.normal()));
  }
  throw std::logic_error("sample_time: bad dist");
}

// linear path between noise and data: (1-t) x0 + t x1
inline std::vector<double> interpolate(std::span<const double> x0, std::span<const double> x1,
                                       double t) {
  if (x0.size() != x1.size())
    throw std::invalid_argument("interpolate: dimension mismatch");
  std::vector<double> xt(x0.size());
  for (std::size_t i = 0; i < xt.size(); ++i) xt[i] = (1.0 - t) * x0[i] + t * x1[i];
  return xt;
}

// State- and time-dependent velocity field v(t, s, x) over the action
// space. Time enters as a raw scalar feature.
struct VelocityField {
  Mlp net;  // input [1 + state_dim + action_dim] -> action_dim
  int state_dim = 0;
  int action_dim = 0;

  static VelocityField make(int state_dim, int action_dim, const std::vector<int>& hidden,
                            Rng& rng) {
    VelocityField vf;
    vf.state_dim = state_dim;
    vf.action_dim = action_dim;
    vf.net = Mlp::make(mlp_dims(1 + state_dim + action_dim, hidden, action_dim), Norm::none, rng);
    return vf;
  }

  Tensor forward(const Tensor& t_col, const Tensor& s, const Tensor& x) const {
    return net.forward(concat_cols({t_col, s, x}));
  }

  VelocityField clone() const { return {net.clone(), state_dim, action_dim}; }
};

// Direct noise-to-action map mu(s, z); emitted actions are clamped to
// [-clip, clip].
struct OneStepPolicy {
  Mlp net;  // input [state_dim + action_dim] -> action_dim
  int state_dim = 0;
  int action_dim = 0;
  double clip = 1.0;

  static OneStepPolicy make(int state_dim, int action_dim, const std::vector<int>& hidden,
                            Rng& rng) {
    OneStepPolicy p;
    p.state_dim = state_dim;
    p.action_dim = action_dim;
    p.net = Mlp::make(mlp_dims(state_dim + action_dim, hidden, action_dim), Norm::none, rng);
    return p;
  }

  Tensor raw(const Tensor& s, const Tensor& z) const { return net.forward(concat_cols({s, z})); }

  Tensor action(const Tensor& s, const Tensor& z) const { return clamp(raw(s, z), -clip, clip); }

  OneStepPolicy clone() const { return {net.clone(), state_dim, action_dim, clip}; }
};

// M explicit Euler steps from z at times 0, 1/M, ..., (M-1)/M. Returns the
// raw ODE endpoint; callers clamp the emitted action. Participates in the
// tape (that is what FBRAC backpropagates through); wrap in NoGradGuard for
// frozen targets.
inline Tensor euler_sample(const VelocityField& vf, const Tensor& s, const Tensor& z0, int M) {
  if (M < 1) throw std::invalid_argument("euler_sample: step count must be >= 1");
  int batch = s.dim(0);
  Tensor z = z0;
  for (int m = 0; m < M; ++m) {
    Tensor t_col = Tensor::full({batch, 1}, static_cast<double>(m) / M);
    z = add_scaled(z, vf.forward(t_col, s, z), 1.0 / M);
  }
  return z;
}

// the emitted flow-policy action: clamped ODE endpoint
inline Tensor flow_action(const VelocityField& vf, const Tensor& s, const Tensor& z0, int M,
                          double clip = 1.0) {
  return clamp(euler_sample(vf, s, z0, M), -clip, clip);
}

// standard-normal noise tensor [batch, d]
inline Tensor sample_noise(int batch, int d, Rng& rng) {
  std::vector<double> z(static_cast<std::size_t>(batch) * d);
  for (double& v : z) v = rng.normal();
  return Tensor::from({batch, d}, std::move(z));
}

// Per-sample flow-matching BC loss with explicit draws (x0 row-major
// [batch, d], t per row): || v(t, s, x^t) - (x^1 - x^0) ||^2. Returns [batch].
inline Tensor flow_bc_per_sample_given(const VelocityField& vf, const Tensor& states,
                                       const Tensor& actions, const std::vector<double>& x0,
                                       const std::vector<double>& t) {
  int batch = states.dim(0), d = actions.dim(1);
  if (x0.size() != static_cast<std::size_t>(batch) * d || t.size() != static_cast<std::size_t>(batch))
    throw std::invalid_argument("flow_bc_per_sample_given: draw sizes do not match the batch");
  auto pa = actions.data();
  std::vector<double> xt(x0.size()), target(x0.size());
  for (int b = 0; b < batch; ++b)
    for (int j = 0; j < d; ++j) {
      std::size_t i = static_cast<std::size_t>(b) * d + j;
      xt[i] = (1.0 - t[b]) * x0[i] + t[b] * pa[i];
      target[i] = pa[i] - x0[i];
    }
  Tensor v = vf.forward(Tensor::from({batch, 1}, t), states, Tensor::from({batch, d}, std::move(xt)));
  return row_sum(square(sub(v, Tensor::from({batch, d}, std::move(target)))));
}

// Per-sample loss with x^0 ~ N(0, I) and t ~ time_dist.
inline Tensor flow_bc_per_sample(const VelocityField& vf, const Tensor& states,
                                 const Tensor& actions, Rng& rng, TimeDist time_dist) {
  int batch = states.dim(0), d = actions.dim(1);
  std::vector<double> x0(static_cast<std::size_t>(batch) * d);
  std::vector<double> t(batch);
  for (int b = 0; b < batch; ++b) {
    t[b] = sample_time(time_dist, rng);
    for (int j = 0; j < d; ++j) x0[static_cast<std::size_t>(b) * d + j] = rng.normal();
  }
  return flow_bc_per_sample_given(vf, states, actions, x0, t);
}

// mean over the batch of the per-sample loss above
inline Tensor flow_bc_loss(const VelocityField& vf, const Tensor& states, const Tensor& actions,
                           Rng& rng, TimeDist time_dist) {
  return mean(flow_bc_per_sample(vf, states, actions, rng, time_dist));
}

// Distillation loss E || mu_omega(s,z) - mu_theta(s,z) ||^2 with the same z
// fed to both policies; the flow target runs without gradient participation,
// so only the one-step parameters receive gradients. The one-step side
// enters unclamped: a saturated output must keep receiving a restoring
// gradient, otherwise it freezes at the bound. The target is the emitted
// (clamped) flow action, so this loss still upper-bounds the squared W2
// distance between the two emitted-action distributions.
inline Tensor distill_loss_given(const OneStepPolicy& one_step, const VelocityField& flow_target,
                                 const Tensor& states, const Tensor& z, int M) {
  int batch = states.dim(0);
  Tensor target;
  {
    NoGradGuard ng;
    target = flow_action(flow_target, states, z, M, one_step.clip);
  }
  Tensor pred = one_step.raw(states, z);
  return scale(sum(square(sub(pred, target))), 1.0 / batch);
}

inline Tensor distill_loss(const OneStepPolicy& one_step, const VelocityField& flow_target,
                           const Tensor& states, Rng& rng, int M) {
  return distill_loss_given(one_step, flow_target, states,
                            sample_noise(states.dim(0), one_step.action_dim, rng), M);
}

// Deployment policy: draw z ~ N(0, I_d), emit clamp(mu(s, z)).
inline std::vector<double> onestep_action(const OneStepPolicy& policy,
                                          std::span<const double> obs, Rng& rng) {
  NoGradGuard ng;
  Tensor s = Tensor::from({1, static_cast<int>(obs.size())},
                          std::vector<double>(obs.begin(), obs.end()));
  Tensor z = sample_noise(1, policy.action_dim, rng);
  Tensor a = policy.action(s, z);
  return std::vector<double>(a.data().begin(), a.data().end());
}

}  // namespace flowrl
