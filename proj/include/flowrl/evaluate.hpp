#pragma once

#include <functional>
#include <span>
#include <vector>

#include "flowrl/envs.hpp"
#include "flowrl/rng.hpp"

namespace flowrl {

struct EvalResult {
  double success_rate = 0.0;
  double mean_return = 0.0;
  int episodes = 0;
};

using PolicyFn = std::function<std::vector<double>(std::span<const double> obs, Rng& rng)>;

// Rolls out `episodes` episodes; each episode draws from its own child
// stream, so results do not depend on episode count or order.
inline EvalResult evaluate(const PolicyFn& policy, const EnvSpec& spec, int episodes,
                           const Rng& eval_rng) {
  if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
  EvalResult res;
  res.episodes = episodes;
  for (int ep = 0; ep < episodes; ++ep) {
    Rng rng = eval_rng.child(static_cast<std::uint64_t>(ep));
    EnvState st = env_reset(spec);
    double ret = 0.0;
    bool success = false;
    while (!st.done) {
      std::vector<double> a = policy(st.obs, rng);
      StepResult r = env_step(spec, st, a);
      ret += r.reward;
      success = success || r.success;
      st = r.state;
    }
    res.success_rate += success ? 1.0 : 0.0;
    res.mean_return += ret;
  }
  res.success_rate /= episodes;
  res.mean_return /= episodes;
  return res;
}

// mean success rate over the final three evaluation epochs
inline double aggregate_final(const std::vector<double>& success_history) {
  if (success_history.size() < 3)
    throw std::invalid_argument("aggregate_final: need at least 3 evaluation epochs");
  double acc = 0.0;
  for (std::size_t i = success_history.size() - 3; i < success_history.size(); ++i)
    acc += success_history[i];
  return acc / 3.0;
}

}  // namespace flowrl
