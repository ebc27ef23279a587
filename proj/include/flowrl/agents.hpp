#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowrl/critic.hpp"
#include "flowrl/envs.hpp"
#include "flowrl/flow.hpp"
#include "flowrl/nn.hpp"
#include "flowrl/optim.hpp"
#include "flowrl/replay.hpp"

namespace flowrl {

enum class AgentKind { fql, fbrac, fawac, ifql, gaussian_bc, gaussian_brac };

inline const char* to_string(AgentKind k) {
  switch (k) {
    case AgentKind::fql: return "fql";
    case AgentKind::fbrac: return "fbrac";
    case AgentKind::fawac: return "fawac";
    case AgentKind::ifql: return "ifql";
    case AgentKind::gaussian_bc: return "gaussian_bc";
    case AgentKind::gaussian_brac: return "gaussian_brac";
  }
  return "?";
}

inline AgentKind agent_kind_from_string(const std::string& s) {
  if (s == "fql") return AgentKind::fql;
  if (s == "fbrac") return AgentKind::fbrac;
  if (s == "fawac") return AgentKind::fawac;
  if (s == "ifql") return AgentKind::ifql;
  if (s == "gaussian_bc") return AgentKind::gaussian_bc;
  if (s == "gaussian_brac") return AgentKind::gaussian_brac;
  throw std::invalid_argument("unknown agent kind '" + s + "'");
}

// Tanh-squashed diagonal Gaussian policy; the network emits per-state mean
// and log-std heads.
struct GaussianPolicy {
  Mlp net;  // state -> [mean, log_std], 2 * action_dim outputs
  int state_dim = 0;
  int action_dim = 0;
  static constexpr double kLogStdMin = -5.0;
  static constexpr double kLogStdMax = 2.0;

  static GaussianPolicy make(int state_dim, int action_dim, const std::vector<int>& hidden,
                             Rng& rng) {
    GaussianPolicy p;
    p.state_dim = state_dim;
    p.action_dim = action_dim;
    p.net = Mlp::make(mlp_dims(state_dim, hidden, 2 * action_dim), Norm::none, rng);
    return p;
  }

  std::pair<Tensor, Tensor> heads(const Tensor& s) const {
    Tensor out = net.forward(s);
    Tensor mean = slice_cols(out, 0, action_dim);
    Tensor log_std = clamp(slice_cols(out, action_dim, 2 * action_dim), kLogStdMin, kLogStdMax);
    return {mean, log_std};
  }

  // log pi(a | s) of dataset actions under the squashed Gaussian:
  // log N(atanh(a); mean, std) - sum_j log(1 - a_j^2). Returns [B].
  Tensor log_prob(const Tensor& s, const Tensor& actions) const {
    auto pa = actions.data();
    std::vector<double> u(pa.size()), log_jac(pa.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      double a = std::min(1.0 - 1e-6, std::max(-1.0 + 1e-6, pa[i]));
      u[i] = std::atanh(a);
      log_jac[i] = std::log(1.0 - a * a);
    }
    Tensor u_t = Tensor::from(actions.shape(), std::move(u));
    Tensor jac_t = Tensor::from(actions.shape(), std::move(log_jac));
    auto [mean, log_std] = heads(s);
    Tensor z = mul(sub(u_t, mean), exp_op(neg(log_std)));
    // -0.5 z^2 - log_std - 0.5 log(2 pi), per dimension
    Tensor per_dim = sub(affine(square(z), -0.5, -0.918938533204672742), log_std);
    return row_sum(sub(per_dim, jac_t));
  }

  // reparameterized sample tanh(mean + std * eps)
  Tensor rsample(const Tensor& s, const Tensor& eps) const {
    auto [mean, log_std] = heads(s);
    return tanh_op(add(mean, mul(exp_op(log_std), eps)));
  }

  std::vector<double> act(std::span<const double> obs, Rng& rng) const {
    NoGradGuard ng;
    Tensor s = Tensor::from({1, static_cast<int>(obs.size())},
                            std::vector<double>(obs.begin(), obs.end()));
    Tensor a = rsample(s, sample_noise(1, action_dim, rng));
    return std::vector<double>(a.data().begin(), a.data().end());
  }

  GaussianPolicy clone() const { return {net.clone(), state_dim, action_dim}; }
};

struct AgentConfig {
  AgentKind kind = AgentKind::fql;
  int state_dim = 0;
  int action_dim = 0;
  std::vector<int> hidden = {64, 64};
  double lr = 3e-4;
  double gamma = 0.99;
  double tau = 0.005;
  double alpha = 1.0;      // BC coefficient
  double alpha_awr = 1.0;  // fawac inverse temperature
  int ifql_n = 32;         // rejection-sampling candidates
  int flow_steps = 10;
  TimeDist time_dist = TimeDist::uniform;
  TargetAgg target_agg = TargetAgg::mean;
  bool q_norm = false;
};

struct LossReport {
  double critic = 0.0;
  double flow_bc = 0.0;
  double distill = 0.0;
  double q_mean = 0.0;
};

// exp(alpha_awr * (Q - V)) clipped to [0, 100]; always strictly positive
inline double fawac_weight(double q, double v_hat, double alpha_awr) {
  return std::min(100.0, std::exp(alpha_awr * (q - v_hat)));
}

// Rejection sampling: draw N flow-policy actions, return the one with the
// highest mean-Q; ties break toward the lowest index.
inline std::vector<double> ifql_select(const VelocityField& vf, const CriticPair& critic,
                                       std::span<const double> obs, int n, int flow_steps,
                                       Rng& rng) {
  if (n < 1) throw std::invalid_argument("ifql_select: need at least one candidate");
  NoGradGuard ng;
  Tensor s = Tensor::from({1, static_cast<int>(obs.size())},
                          std::vector<double>(obs.begin(), obs.end()));
  std::vector<double> best;
  double best_q = 0.0;
  for (int k = 0; k < n; ++k) {
    Tensor a = flow_action(vf, s, sample_noise(1, vf.action_dim, rng), flow_steps);
    double q = critic.q_mean_value(s, a).item(0);
    if (k == 0 || q > best_q) {
      best_q = q;
      best.assign(a.data().begin(), a.data().end());
    }
  }
  return best;
}

// One learner: FQL, or one of the controlled baselines that differ from it
// only in how the policy is extracted from the critic. All kinds share the
// same critic and flow implementations.
class Agent {
 public:
  Agent(AgentConfig cfg, Rng init_rng) : cfg_(std::move(cfg)) {
    if (cfg_.state_dim < 1 || cfg_.action_dim < 1)
      throw std::invalid_argument("Agent: state_dim and action_dim must be positive");
    if (cfg_.alpha < 0.0) throw std::invalid_argument("Agent: alpha must be >= 0");
    if (has_critic()) {
      Rng r = init_rng.child("critic");
      critic_.emplace(CriticPair::make(cfg_.state_dim, cfg_.action_dim, cfg_.hidden,
                                       cfg_.target_agg, r));
      critic_opt_.emplace(critic_->online_params(), cfg_.lr);
    }
    if (has_flow()) {
      Rng r = init_rng.child("vfield");
      vfield_.emplace(VelocityField::make(cfg_.state_dim, cfg_.action_dim, cfg_.hidden, r));
      vfield_opt_.emplace(vfield_->net.params(), cfg_.lr);
    }
    if (cfg_.kind == AgentKind::fql) {
      Rng r = init_rng.child("one_step");
      one_step_.emplace(OneStepPolicy::make(cfg_.state_dim, cfg_.action_dim, cfg_.hidden, r));
      one_step_opt_.emplace(one_step_->net.params(), cfg_.lr);
    }
    if (is_gaussian()) {
      Rng r = init_rng.child("gaussian");
      gaussian_.emplace(GaussianPolicy::make(cfg_.state_dim, cfg_.action_dim, cfg_.hidden, r));
      gaussian_opt_.emplace(gaussian_->net.params(), cfg_.lr);
    }
  }

  const AgentConfig& config() const { return cfg_; }
  bool has_critic() const { return cfg_.kind != AgentKind::gaussian_bc; }
  bool has_flow() const {
    return cfg_.kind == AgentKind::fql || cfg_.kind == AgentKind::fbrac ||
           cfg_.kind == AgentKind::fawac || cfg_.kind == AgentKind::ifql;
  }
  bool is_gaussian() const {
    return cfg_.kind == AgentKind::gaussian_bc || cfg_.kind == AgentKind::gaussian_brac;
  }

  CriticPair& critic() { return *critic_; }
  const CriticPair& critic() const { return *critic_; }
  VelocityField& vfield() { return *vfield_; }
  const VelocityField& vfield() const { return *vfield_; }
  OneStepPolicy& one_step() { return *one_step_; }
  const OneStepPolicy& one_step() const { return *one_step_; }
  GaussianPolicy& gaussian() { return *gaussian_; }
  const GaussianPolicy& gaussian() const { return *gaussian_; }

  // One gradient step of the whole learner. Order within the step is fixed:
  // critic, then BC component, then policy extraction, then target smoothing.
  LossReport update(const Batch& batch, Rng& rng) {
    LossReport rep;
    switch (cfg_.kind) {
      case AgentKind::fql:
        rep.critic = critic_phase(batch, rng);
        rep.flow_bc = flow_bc_phase(batch, rng);
        std::tie(rep.distill, rep.q_mean) = fql_actor_phase(batch, rng);
        break;
      case AgentKind::fbrac:
        rep.critic = critic_phase(batch, rng);
        std::tie(rep.flow_bc, rep.q_mean) = fbrac_policy_phase(batch, rng);
        break;
      case AgentKind::fawac:
        rep.critic = critic_phase(batch, rng);
        std::tie(rep.flow_bc, rep.q_mean) = fawac_policy_phase(batch, rng);
        break;
      case AgentKind::ifql:
        rep.critic = critic_phase(batch, rng);
        rep.flow_bc = flow_bc_phase(batch, rng);
        break;
      case AgentKind::gaussian_bc:
        rep.flow_bc = gaussian_bc_phase(batch);
        break;
      case AgentKind::gaussian_brac:
        rep.critic = critic_phase(batch, rng);
        std::tie(rep.flow_bc, rep.q_mean) = gaussian_actor_phase(batch, rng);
        break;
    }
    if (has_critic()) critic_->soft_update_targets(cfg_.tau);
    return rep;
  }

  // Critic step: TD targets from the target networks with next actions from
  // this agent's own policy (fresh noise), gradient-detached.
  double critic_phase(const Batch& batch, Rng& rng) {
    Tensor next_a = policy_actions_batch(batch.s_next, rng);
    Tensor loss = critic_loss(*critic_, batch, next_a, cfg_.gamma);
    check_finite(loss, "critic");
    critic_opt_->zero_grad();
    backward(loss);
    critic_opt_->step();
    return loss.value();
  }

  // Plain flow-matching BC step on the velocity field.
  double flow_bc_phase(const Batch& batch, Rng& rng) {
    Tensor loss = flow_bc_loss(*vfield_, batch.s, batch.a, rng, cfg_.time_dist);
    check_finite(loss, "flow_bc");
    vfield_opt_->zero_grad();
    backward(loss);
    vfield_opt_->step();
    return loss.value();
  }

  // FQL one-step actor: -mean Q(s, a^pi) + alpha * ||mu_omega(s,z) -
  // mu_theta(s,z)||^2 with the same z feeding the frozen flow chain and
  // a^pi = clamp(mu_omega(s, z)) entering the critic. The distillation term
  // uses the unclamped output so saturated actions stay trainable. Only the
  // one-step parameters receive gradients.
  std::pair<double, double> fql_actor_phase(const Batch& batch, Rng& rng) {
    int n = batch.size;
    Tensor z = sample_noise(n, cfg_.action_dim, rng);
    Tensor target;
    {
      NoGradGuard ng;
      target = flow_action(*vfield_, batch.s, z, cfg_.flow_steps);
    }
    Tensor a_raw = one_step_->raw(batch.s, z);
    Tensor a_pi = clamp(a_raw, -one_step_->clip, one_step_->clip);
    Tensor distill = scale(sum(square(sub(a_raw, target))), 1.0 / n);
    Tensor q = critic_->q_mean_value(batch.s, a_pi);
    double q_mean_val = 0.0;
    for (int i = 0; i < n; ++i) q_mean_val += q.item(i);
    q_mean_val /= n;
    Tensor loss = add(scale(mean(q), -q_scale(q)), scale(distill, cfg_.alpha));
    check_finite(loss, "actor");
    one_step_opt_->zero_grad();
    backward(loss);
    one_step_opt_->step();
    return {distill.value(), q_mean_val};
  }

  // FBRAC: one policy (the velocity field itself) trained on
  // -Q(s, mu_theta(s, z)) + alpha * flow BC, backpropagating through every
  // Euler step. The BC term draws its own independent (x0, t).
  std::pair<double, double> fbrac_policy_phase(const Batch& batch, Rng& rng) {
    int n = batch.size;
    Tensor z = sample_noise(n, cfg_.action_dim, rng);
    Tensor a_pi = flow_action(*vfield_, batch.s, z, cfg_.flow_steps);
    Tensor q = critic_->q_mean_value(batch.s, a_pi);
    double q_mean_val = 0.0;
    for (int i = 0; i < n; ++i) q_mean_val += q.item(i);
    q_mean_val /= n;
    Tensor bc = flow_bc_loss(*vfield_, batch.s, batch.a, rng, cfg_.time_dist);
    Tensor loss = add(scale(mean(q), -q_scale(q)), scale(bc, cfg_.alpha));
    check_finite(loss, "fbrac policy");
    vfield_opt_->zero_grad();
    backward(loss);
    vfield_opt_->step();
    return {bc.value(), q_mean_val};
  }

  // FAWAC: advantage-weighted flow BC. Weights exp(alpha_awr * (Q - V)) are
  // gradient-detached and clipped to [0, 100]; V(s) is estimated as the mean
  // critic value over kAwacValueSamples flow-policy samples.
  std::pair<double, double> fawac_policy_phase(const Batch& batch, Rng& rng) {
    int n = batch.size;
    std::vector<double> weights(n, 0.0);
    double q_mean_val = 0.0;
    {
      NoGradGuard ng;
      Tensor q_data = critic_->q_mean_value(batch.s, batch.a);
      std::vector<double> v_hat(n, 0.0);
      for (int k = 0; k < kAwacValueSamples; ++k) {
        Tensor a = flow_action(*vfield_, batch.s, sample_noise(n, cfg_.action_dim, rng),
                               cfg_.flow_steps);
        Tensor qv = critic_->q_mean_value(batch.s, a);
        for (int i = 0; i < n; ++i) v_hat[i] += qv.item(i) / kAwacValueSamples;
      }
      for (int i = 0; i < n; ++i) {
        q_mean_val += q_data.item(i);
        weights[i] = fawac_weight(q_data.item(i), v_hat[i], cfg_.alpha_awr);
      }
      q_mean_val /= n;
    }
    Tensor per_sample = flow_bc_per_sample(*vfield_, batch.s, batch.a, rng, cfg_.time_dist);
    Tensor loss = mean(mul(per_sample, Tensor::from({n}, std::move(weights))));
    check_finite(loss, "fawac policy");
    vfield_opt_->zero_grad();
    backward(loss);
    vfield_opt_->step();
    return {loss.value(), q_mean_val};
  }

  // Gaussian BC: maximum likelihood of dataset actions.
  double gaussian_bc_phase(const Batch& batch) {
    Tensor loss = neg(mean(gaussian_->log_prob(batch.s, batch.a)));
    check_finite(loss, "gaussian_bc");
    gaussian_opt_->zero_grad();
    backward(loss);
    gaussian_opt_->step();
    return loss.value();
  }

  // Gaussian BRAC actor: -Q(s, a^pi) - alpha * log pi(a | s) with a
  // reparameterized a^pi.
  std::pair<double, double> gaussian_actor_phase(const Batch& batch, Rng& rng) {
    int n = batch.size;
    Tensor a_pi = gaussian_->rsample(batch.s, sample_noise(n, cfg_.action_dim, rng));
    Tensor q = critic_->q_mean_value(batch.s, a_pi);
    double q_mean_val = 0.0;
    for (int i = 0; i < n; ++i) q_mean_val += q.item(i);
    q_mean_val /= n;
    Tensor bc = neg(mean(gaussian_->log_prob(batch.s, batch.a)));
    Tensor loss = add(scale(mean(q), -q_scale(q)), scale(bc, cfg_.alpha));
    check_finite(loss, "gaussian actor");
    gaussian_opt_->zero_grad();
    backward(loss);
    gaussian_opt_->step();
    return {bc.value(), q_mean_val};
  }

  // Deployment policy of the current kind (fresh noise per call).
  std::vector<double> act(std::span<const double> obs, Rng& rng) const {
    switch (cfg_.kind) {
      case AgentKind::fql:
        return onestep_action(*one_step_, obs, rng);
      case AgentKind::fbrac:
      case AgentKind::fawac: {
        NoGradGuard ng;
        Tensor s = Tensor::from({1, static_cast<int>(obs.size())},
                                std::vector<double>(obs.begin(), obs.end()));
        Tensor a = flow_action(*vfield_, s, sample_noise(1, cfg_.action_dim, rng), cfg_.flow_steps);
        return std::vector<double>(a.data().begin(), a.data().end());
      }
      case AgentKind::ifql:
        return ifql_select(*vfield_, *critic_, obs, cfg_.ifql_n, cfg_.flow_steps, rng);
      case AgentKind::gaussian_bc:
      case AgentKind::gaussian_brac:
        return gaussian_->act(obs, rng);
    }
    throw std::logic_error("Agent::act: bad kind");
  }

  NamedParams named_params() const {
    NamedParams out;
    if (critic_) critic_->named_params("critic", out);
    if (vfield_) vfield_->net.named_params("vfield", out);
    if (one_step_) one_step_->net.named_params("one_step", out);
    if (gaussian_) gaussian_->net.named_params("gaussian", out);
    return out;
  }

  std::int64_t grad_steps() const {
    if (critic_opt_) return critic_opt_->step_count();
    if (vfield_opt_) return vfield_opt_->step_count();
    return gaussian_opt_ ? gaussian_opt_->step_count() : 0;
  }

 private:
  static constexpr int kAwacValueSamples = 4;

  // Batch of next actions from the agent's own policy, off the tape.
  Tensor policy_actions_batch(const Tensor& states, Rng& rng) {
    NoGradGuard ng;
    int n = states.dim(0);
    switch (cfg_.kind) {
      case AgentKind::fql: {
        Tensor z = sample_noise(n, cfg_.action_dim, rng);
        return one_step_->action(states, z);
      }
      case AgentKind::fbrac:
      case AgentKind::fawac:
        return flow_action(*vfield_, states, sample_noise(n, cfg_.action_dim, rng),
                           cfg_.flow_steps);
      case AgentKind::ifql: {
        // rejection-sampled next actions (SARSA-style targets)
        std::vector<double> out(static_cast<std::size_t>(n) * cfg_.action_dim);
        auto ps = states.data();
        for (int i = 0; i < n; ++i) {
          std::span<const double> obs(ps.data() + static_cast<std::size_t>(i) * cfg_.state_dim,
                                      static_cast<std::size_t>(cfg_.state_dim));
          auto a = ifql_select(*vfield_, *critic_, obs, cfg_.ifql_n, cfg_.flow_steps, rng);
          std::copy(a.begin(), a.end(), out.begin() + static_cast<std::size_t>(i) * cfg_.action_dim);
        }
        return Tensor::from({n, cfg_.action_dim}, std::move(out));
      }
      case AgentKind::gaussian_brac:
        return gaussian_->rsample(states, sample_noise(n, cfg_.action_dim, rng));
      case AgentKind::gaussian_bc:
        break;
    }
    throw std::logic_error("Agent::policy_actions_batch: kind has no critic");
  }

  // Optional Q normalization: divide the actor Q term by the batch's mean
  // absolute Q, gradient-detached.
  double q_scale(const Tensor& q) const {
    if (!cfg_.q_norm) return 1.0;
    double m = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) m += std::abs(q.item(i));
    m /= static_cast<double>(q.size());
    return 1.0 / std::max(m, 1e-8);
  }

  static void check_finite(const Tensor& loss, const char* what) {
    if (!std::isfinite(loss.value()))
      throw numerical_error(std::string("non-finite ") + what + " loss; step rejected");
  }

  AgentConfig cfg_;
  std::optional<CriticPair> critic_;
  std::optional<VelocityField> vfield_;
  std::optional<OneStepPolicy> one_step_;
  std::optional<GaussianPolicy> gaussian_;
  std::optional<Adam> critic_opt_, vfield_opt_, one_step_opt_, gaussian_opt_;
};

// One online interaction: act with the current policy, step the
// environment, append the transition, then run one regular update on a
// fresh batch (the same objective as offline training, no balanced
// sampling). env_state is advanced in place and reset when episodes end.
inline std::pair<Transition, LossReport> online_step(Agent& agent, const EnvSpec& spec,
                                                     EnvState& env_state, ReplayBuffer& buffer,
                                                     int batch_size, Rng& batch_rng,
                                                     Rng& noise_rng) {
  if (env_state.done || env_state.obs.empty()) env_state = env_reset(spec);
  std::vector<double> a = agent.act(env_state.obs, noise_rng);
  for (double& v : a) v = std::min(1.0, std::max(-1.0, v));
  StepResult r = env_step(spec, env_state, a);
  Transition t{env_state.obs, a, r.reward, r.state.obs, r.mask};
  buffer.append(t);
  env_state = r.state;
  Batch batch = buffer_sample(buffer, batch_size, batch_rng);
  LossReport rep = agent.update(batch, noise_rng);
  return {std::move(t), rep};
}

}  // namespace flowrl
