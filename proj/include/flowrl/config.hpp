#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowrl/agents.hpp"
#include "flowrl/envs.hpp"

namespace flowrl {

// Full description of one training run. Every field is serialized into the
// run's output directory so the run can be replayed exactly.
struct RunConfig {
  std::string agent = "fql";
  std::string env = "bimodal_reach";
  std::string dataset;  // path to a dataset file
  double alpha = 1.0;
  double alpha_awr = 1.0;
  int ifql_n = 32;
  double gamma = 0.99;
  double tau = 0.005;
  double lr = 0.0003;
  int batch_size = 256;
  int flow_steps = 10;
  std::string time_dist = "uniform";
  std::string target_agg = "mean";
  bool q_norm = false;
  std::int64_t offline_steps = 10000;
  std::int64_t online_steps = 0;
  std::int64_t eval_interval = 1000;
  int eval_episodes = 50;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::vector<int> hidden = {64, 64};

  void validate() const {
    agent_kind_from_string(agent);
    env_from_string(env);
    time_dist_from_string(time_dist);
    target_agg_from_string(target_agg);
    if (alpha < 0.0) throw std::invalid_argument("config: alpha must be >= 0");
    if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("config: gamma must lie in [0,1)");
    if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("config: tau must lie in [0,1]");
    if (lr <= 0.0) throw std::invalid_argument("config: lr must be positive");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (flow_steps < 1) throw std::invalid_argument("config: flow_steps must be >= 1");
    if (offline_steps < 0 || online_steps < 0)
      throw std::invalid_argument("config: step counts must be >= 0");
    if (eval_interval < 1) throw std::invalid_argument("config: eval_interval must be >= 1");
    if (eval_episodes < 1) throw std::invalid_argument("config: eval_episodes must be >= 1");
    if (ifql_n < 1) throw std::invalid_argument("config: ifql_n must be >= 1");
    for (int h : hidden)
      if (h < 1) throw std::invalid_argument("config: hidden sizes must be positive");
  }

  AgentConfig agent_config(const EnvSpec& spec) const {
    AgentConfig a;
    a.kind = agent_kind_from_string(agent);
    a.state_dim = spec.state_dim;
    a.action_dim = spec.action_dim;
    a.hidden = hidden;
    a.lr = lr;
    a.gamma = gamma;
    a.tau = tau;
    a.alpha = alpha;
    a.alpha_awr = alpha_awr;
    a.ifql_n = ifql_n;
    a.flow_steps = flow_steps;
    a.time_dist = time_dist_from_string(time_dist);
    a.target_agg = target_agg_from_string(target_agg);
    a.q_norm = q_norm;
    return a;
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"agent", c.agent},
                     {"env", c.env},
                     {"dataset", c.dataset},
                     {"alpha", c.alpha},
                     {"alpha_awr", c.alpha_awr},
                     {"ifql_n", c.ifql_n},
                     {"gamma", c.gamma},
                     {"tau", c.tau},
                     {"lr", c.lr},
                     {"batch_size", c.batch_size},
                     {"flow_steps", c.flow_steps},
                     {"time_dist", c.time_dist},
                     {"target_agg", c.target_agg},
                     {"q_norm", c.q_norm},
                     {"offline_steps", c.offline_steps},
                     {"online_steps", c.online_steps},
                     {"eval_interval", c.eval_interval},
                     {"eval_episodes", c.eval_episodes},
                     {"seed", c.seed},
                     {"out_dir", c.out_dir},
                     {"hidden", c.hidden}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  RunConfig defaults;
  c.agent = j.value("agent", defaults.agent);
  c.env = j.value("env", defaults.env);
  c.dataset = j.value("dataset", defaults.dataset);
  c.alpha = j.value("alpha", defaults.alpha);
  c.alpha_awr = j.value("alpha_awr", defaults.alpha_awr);
  c.ifql_n = j.value("ifql_n", defaults.ifql_n);
  c.gamma = j.value("gamma", defaults.gamma);
  c.tau = j.value("tau", defaults.tau);
  c.lr = j.value("lr", defaults.lr);
  c.batch_size = j.value("batch_size", defaults.batch_size);
  c.flow_steps = j.value("flow_steps", defaults.flow_steps);
  c.time_dist = j.value("time_dist", defaults.time_dist);
  c.target_agg = j.value("target_agg", defaults.target_agg);
  c.q_norm = j.value("q_norm", defaults.q_norm);
  c.offline_steps = j.value("offline_steps", defaults.offline_steps);
  c.online_steps = j.value("online_steps", defaults.online_steps);
  c.eval_interval = j.value("eval_interval", defaults.eval_interval);
  c.eval_episodes = j.value("eval_episodes", defaults.eval_episodes);
  c.seed = j.value("seed", defaults.seed);
  c.out_dir = j.value("out_dir", defaults.out_dir);
  c.hidden = j.value("hidden", defaults.hidden);
}

inline std::string serialize_config(const RunConfig& c) {
  nlohmann::json j = c;
  return j.dump(2) + "\n";
}

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig c;
  nlohmann::json::parse(text).get_to(c);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config: cannot read " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

inline void save_config(const std::string& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_config: cannot write " + path);
  out << serialize_config(c);
}

}  // namespace flowrl
