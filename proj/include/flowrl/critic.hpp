#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "flowrl/nn.hpp"
#include "flowrl/optim.hpp"
#include "flowrl/replay.hpp"

namespace flowrl {

enum class TargetAgg { mean, min };

inline const char* to_string(TargetAgg a) { return a == TargetAgg::mean ? "mean" : "min"; }

inline TargetAgg target_agg_from_string(const std::string& s) {
  if (s == "mean") return TargetAgg::mean;
  if (s == "min") return TargetAgg::min;
  throw std::invalid_argument("unknown target aggregation '" + s + "'");
}

// r + gamma * mask * agg(q1', q2')
inline double td_target(double r, double mask, double gamma, double q_next_1, double q_next_2,
                        TargetAgg agg) {
  if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("td_target: gamma must lie in [0,1)");
  double q = agg == TargetAgg::min ? std::min(q_next_1, q_next_2) : 0.5 * (q_next_1 + q_next_2);
  return r + gamma * mask * q;
}

// Double Q critic with target copies. Value networks carry layer
// normalization on hidden layers.
struct CriticPair {
  Mlp q1, q2;
  Mlp target_q1, target_q2;
  int state_dim = 0;
  int action_dim = 0;
  TargetAgg target_agg = TargetAgg::mean;

  static CriticPair make(int state_dim, int action_dim, const std::vector<int>& hidden,
                         TargetAgg agg, Rng& rng) {
    CriticPair c;
    c.state_dim = state_dim;
    c.action_dim = action_dim;
    c.target_agg = agg;
    auto dims = mlp_dims(state_dim + action_dim, hidden, 1);
    c.q1 = Mlp::make(dims, Norm::layer_norm, rng);
    c.q2 = Mlp::make(dims, Norm::layer_norm, rng);
    c.target_q1 = c.q1.clone();
    c.target_q2 = c.q2.clone();
    return c;
  }

  Tensor q1_value(const Tensor& s, const Tensor& a) const {
    return reshape(q1.forward(concat_cols({s, a})), {s.dim(0)});
  }
  Tensor q2_value(const Tensor& s, const Tensor& a) const {
    return reshape(q2.forward(concat_cols({s, a})), {s.dim(0)});
  }
  // -(q1 + q2)/2 feeds actor losses ("mean of the two online critics")
  Tensor q_mean_value(const Tensor& s, const Tensor& a) const {
    return scale(add(q1_value(s, a), q2_value(s, a)), 0.5);
  }

  std::vector<Tensor> online_params() const {
    std::vector<Tensor> out;
    q1.params(out);
    q2.params(out);
    return out;
  }
  std::vector<Tensor> target_params() const {
    std::vector<Tensor> out;
    target_q1.params(out);
    target_q2.params(out);
    return out;
  }

  void soft_update_targets(double tau) {
    auto t = target_params();
    soft_update(t, online_params(), tau);
  }

  void named_params(const std::string& prefix, NamedParams& out) const {
    q1.named_params(prefix + ".q1", out);
    q2.named_params(prefix + ".q2", out);
    target_q1.named_params(prefix + ".target_q1", out);
    target_q2.named_params(prefix + ".target_q2", out);
  }
};

// TD targets from the target networks (gradient-detached): one shared target
// per transition, then mean squared error over the batch and both critics.
inline Tensor critic_loss(const CriticPair& critic, const Batch& batch, const Tensor& next_actions,
                          double gamma) {
  int n = batch.size;
  std::vector<double> targets(n);
  {
    NoGradGuard ng;
    Tensor in = concat_cols({batch.s_next, next_actions});
    Tensor tq1 = critic.target_q1.forward(in);
    Tensor tq2 = critic.target_q2.forward(in);
    for (int i = 0; i < n; ++i)
      targets[i] = td_target(batch.r[i], batch.mask[i], gamma, tq1.item(i), tq2.item(i),
                             critic.target_agg);
  }
  Tensor y = Tensor::from({n}, std::move(targets));
  Tensor e1 = sub(critic.q1_value(batch.s, batch.a), y);
  Tensor e2 = sub(critic.q2_value(batch.s, batch.a), y);
  return scale(add(sum(square(e1)), sum(square(e2))), 0.5 / n);
}

}  // namespace flowrl
