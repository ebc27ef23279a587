#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "flowrl/agents.hpp"
#include "flowrl/checkpoint.hpp"
#include "flowrl/config.hpp"
#include "flowrl/evaluate.hpp"
#include "flowrl/metrics.hpp"
#include "flowrl/replay.hpp"
#include "flowrl/runner_plot.hpp"

namespace flowrl {

struct TrainOutcome {
  std::vector<MetricsRow> rows;
  std::vector<double> success_history;
  std::optional<double> final_aggregate;  // mean of the last three eval epochs
  bool flagged = false;                   // non-finite loss aborted the run
  std::unique_ptr<Agent> agent;           // trained learner (for programmatic use)
};

// One full training run per the config: offline gradient steps on the
// dataset, then optional online steps that append transitions to the buffer,
// evaluating every eval_interval steps. Writes config.json, metrics.csv,
// checkpoint.json and status.txt into cfg.out_dir unless write_files is off.
inline TrainOutcome run_training(const RunConfig& cfg, const Dataset* preloaded = nullptr,
                                 bool write_files = true) {
  cfg.validate();
  EnvSpec spec = EnvSpec::make(cfg.env);

  Dataset local;
  const Dataset* ds = preloaded;
  if (!ds) {
    if (cfg.dataset.empty()) throw std::runtime_error("run_training: no dataset path configured");
    local = load_dataset(cfg.dataset);
    ds = &local;
  }
  if (ds->state_dim != spec.state_dim || ds->action_dim != spec.action_dim)
    throw std::runtime_error("run_training: dataset dims do not match env " + cfg.env);

  Rng master = Rng::master(cfg.seed);
  Rng init_rng = master.child("init");
  Rng batch_rng = master.child("batch");
  Rng noise_rng = master.child("noise");
  Rng eval_base = master.child("eval");

  TrainOutcome out;
  out.agent = std::make_unique<Agent>(cfg.agent_config(spec), init_rng);
  Agent& agent = *out.agent;

  ReplayBuffer buffer(*ds, ds->size() + static_cast<std::size_t>(cfg.online_steps));
  EnvState env_state;  // online-phase cursor

  std::optional<MetricsWriter> writer;
  if (write_files) {
    std::filesystem::create_directories(cfg.out_dir.empty() ? "." : cfg.out_dir);
    std::string root = cfg.out_dir.empty() ? "." : cfg.out_dir;
    save_config(root + "/config.json", cfg);
    writer.emplace(root + "/metrics.csv");
  }

  auto t0 = std::chrono::steady_clock::now();
  std::int64_t total = cfg.offline_steps + cfg.online_steps;
  LossReport acc;
  std::int64_t acc_n = 0;
  std::uint64_t eval_epoch = 0;

  auto do_eval = [&](std::int64_t step) {
    PolicyFn policy = [&agent](std::span<const double> obs, Rng& rng) {
      return agent.act(obs, rng);
    };
    EvalResult ev = evaluate(policy, spec, cfg.eval_episodes, eval_base.child(eval_epoch++));
    MetricsRow row;
    row.step = step;
    if (acc_n > 0) {
      row.loss_critic = acc.critic / acc_n;
      row.loss_flow_bc = acc.flow_bc / acc_n;
      row.loss_distill = acc.distill / acc_n;
      row.q_mean = acc.q_mean / acc_n;
    }
    row.eval_success = ev.success_rate;
    row.eval_return = ev.mean_return;
    row.seconds =
        std::chrono::duration_cast<std::chrono::duration<double>>(std::chrono::steady_clock::now() - t0)
            .count();
    acc = LossReport{};
    acc_n = 0;
    out.rows.push_back(row);
    out.success_history.push_back(ev.success_rate);
    if (writer) writer->append(row);
  };

  do_eval(0);
  try {
    for (std::int64_t step = 1; step <= total; ++step) {
      LossReport rep;
      if (step <= cfg.offline_steps) {
        Batch batch = buffer_sample(buffer, cfg.batch_size, batch_rng);
        rep = agent.update(batch, noise_rng);
      } else {
        auto [t, r] = online_step(agent, spec, env_state, buffer, cfg.batch_size, batch_rng,
                                  noise_rng);
        rep = r;
      }
      acc.critic += rep.critic;
      acc.flow_bc += rep.flow_bc;
      acc.distill += rep.distill;
      acc.q_mean += rep.q_mean;
      ++acc_n;
      if (step % cfg.eval_interval == 0 || step == total) do_eval(step);
    }
  } catch (const numerical_error&) {
    out.flagged = true;
  }

  if (out.success_history.size() >= 3)
    out.final_aggregate = aggregate_final(out.success_history);

  if (write_files) {
    std::string root = cfg.out_dir.empty() ? "." : cfg.out_dir;
    NamedParams params = agent.named_params();
    save_checkpoint(root + "/checkpoint.json", params);
    std::ofstream status(root + "/status.txt");
    status << (out.flagged ? "nan_abort" : "ok") << "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// sweeps
// ---------------------------------------------------------------------------

struct SweepCell {
  double alpha = 0.0;
  int seeds = 0;
  double mean_score = 0.0;
  double std_score = 0.0;
};

inline double run_score(const TrainOutcome& out) {
  if (out.flagged) return 0.0;
  if (out.final_aggregate) return *out.final_aggregate;
  return out.success_history.empty() ? 0.0 : out.success_history.back();
}

// Grid over the BC coefficient with shared seeds; each (cell, seed) run is
// fully isolated, so cells execute on a small worker pool. Returns cells
// sorted by mean score, best first.
inline std::vector<SweepCell> run_sweep(const RunConfig& base, const std::vector<double>& alphas,
                                        int n_seeds, int jobs, const Dataset* preloaded = nullptr,
                                        bool write_files = true) {
  if (alphas.empty()) throw std::invalid_argument("run_sweep: empty alpha grid");
  if (n_seeds < 1) throw std::invalid_argument("run_sweep: need at least one seed");

  struct Job {
    std::size_t cell;
    int seed_index;
  };
  std::vector<Job> jobs_list;
  for (std::size_t c = 0; c < alphas.size(); ++c)
    for (int s = 0; s < n_seeds; ++s) jobs_list.push_back({c, s});
  std::vector<std::vector<double>> scores(alphas.size(), std::vector<double>(n_seeds, 0.0));

  std::atomic<std::size_t> next{0};
  int workers = std::max(1, jobs);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (;;) {
          std::size_t i = next.fetch_add(1);
          if (i >= jobs_list.size()) break;
          Job job = jobs_list[i];
          RunConfig cfg = base;
          cfg.alpha = alphas[job.cell];
          cfg.seed = base.seed + static_cast<std::uint64_t>(job.seed_index);
          if (write_files) {
            std::ostringstream dir;
            dir << (base.out_dir.empty() ? "sweep" : base.out_dir) << "/alpha_" << alphas[job.cell]
                << "/seed_" << cfg.seed;
            cfg.out_dir = dir.str();
          }
          TrainOutcome out = run_training(cfg, preloaded, write_files);
          scores[job.cell][job.seed_index] = run_score(out);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<SweepCell> cells;
  for (std::size_t c = 0; c < alphas.size(); ++c) {
    SweepCell cell;
    cell.alpha = alphas[c];
    cell.seeds = n_seeds;
    for (double s : scores[c]) cell.mean_score += s;
    cell.mean_score /= n_seeds;
    for (double s : scores[c]) cell.std_score += (s - cell.mean_score) * (s - cell.mean_score);
    cell.std_score = n_seeds > 1 ? std::sqrt(cell.std_score / (n_seeds - 1)) : 0.0;
    cells.push_back(cell);
  }
  std::stable_sort(cells.begin(), cells.end(),
                   [](const SweepCell& a, const SweepCell& b) { return a.mean_score > b.mean_score; });
  return cells;
}

inline std::string sweep_table(const std::vector<SweepCell>& cells) {
  std::ostringstream os;
  os << "alpha\tmean_score\tstd_score\tseeds\n";
  for (const auto& c : cells)
    os << c.alpha << "\t" << c.mean_score << "\t" << c.std_score << "\t" << c.seeds << "\n";
  return os.str();
}

}  // namespace flowrl
