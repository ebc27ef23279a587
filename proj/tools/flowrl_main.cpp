#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "flowrl/config.hpp"
#include "flowrl/envs.hpp"
#include "flowrl/runner.hpp"

using namespace flowrl;

namespace {

std::string default_out_root() {
  const char* env = std::getenv("FLOWRL_OUT");
  return env && *env ? env : "runs";
}

// Registers every RunConfig field as a kebab-case flag on the subcommand.
// After parsing, apply() folds the file config (if any) under the flags the
// user actually passed (command line wins).
struct ConfigFlags {
  RunConfig cli;
  std::string config_path;
  bool paper_net = false;

  void attach(CLI::App* cmd, bool with_dataset = true) {
    cmd->add_option("--config", config_path, "config file (JSON); flags override its fields");
    cmd->add_option("--agent", cli.agent, "fql|fbrac|fawac|ifql|gaussian_bc|gaussian_brac");
    cmd->add_option("--env", cli.env, "bimodal_reach|point_maze|disc_chain");
    if (with_dataset) cmd->add_option("--dataset", cli.dataset, "dataset file path");
    cmd->add_option("--alpha", cli.alpha, "BC coefficient");
    cmd->add_option("--alpha-awr", cli.alpha_awr, "FAWAC inverse temperature");
    cmd->add_option("--ifql-n", cli.ifql_n, "IFQL candidate count");
    cmd->add_option("--gamma", cli.gamma, "discount factor");
    cmd->add_option("--tau", cli.tau, "target smoothing coefficient");
    cmd->add_option("--lr", cli.lr, "learning rate");
    cmd->add_option("--batch-size", cli.batch_size, "minibatch size");
    cmd->add_option("--flow-steps", cli.flow_steps, "Euler steps M");
    cmd->add_option("--time-dist", cli.time_dist, "uniform|beta_1_15|logit_normal");
    cmd->add_option("--target-agg", cli.target_agg, "mean|min");
    cmd->add_flag("--q-norm,!--no-q-norm", cli.q_norm, "normalize the actor Q term");
    cmd->add_option("--offline-steps", cli.offline_steps, "offline gradient steps");
    cmd->add_option("--online-steps", cli.online_steps, "online fine-tuning steps");
    cmd->add_option("--eval-interval", cli.eval_interval, "steps between evaluations");
    cmd->add_option("--eval-episodes", cli.eval_episodes, "episodes per evaluation");
    cmd->add_option("--seed", cli.seed, "master seed");
    cmd->add_option("--out-dir", cli.out_dir, "output directory");
    cmd->add_option("--hidden", cli.hidden, "hidden layer sizes")->delimiter(',');
    cmd->add_flag("--paper-net", paper_net, "use the [512,512,512,512] network sizes");
  }

  RunConfig apply(CLI::App* cmd) const {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    auto take = [&](const std::string& flag, auto member) {
      if (cmd->count(flag) > 0) cfg.*member = cli.*member;
    };
    take("--agent", &RunConfig::agent);
    take("--env", &RunConfig::env);
    if (cmd->count("--dataset")) cfg.dataset = cli.dataset;
    take("--alpha", &RunConfig::alpha);
    take("--alpha-awr", &RunConfig::alpha_awr);
    take("--ifql-n", &RunConfig::ifql_n);
    take("--gamma", &RunConfig::gamma);
    take("--tau", &RunConfig::tau);
    take("--lr", &RunConfig::lr);
    take("--batch-size", &RunConfig::batch_size);
    take("--flow-steps", &RunConfig::flow_steps);
    take("--time-dist", &RunConfig::time_dist);
    take("--target-agg", &RunConfig::target_agg);
    if (cmd->count("--q-norm") || cmd->count("--no-q-norm")) cfg.q_norm = cli.q_norm;
    take("--offline-steps", &RunConfig::offline_steps);
    take("--online-steps", &RunConfig::online_steps);
    take("--eval-interval", &RunConfig::eval_interval);
    take("--eval-episodes", &RunConfig::eval_episodes);
    take("--seed", &RunConfig::seed);
    take("--out-dir", &RunConfig::out_dir);
    if (cmd->count("--paper-net")) cfg.hidden = {512, 512, 512, 512};
    if (cmd->count("--hidden")) cfg.hidden = cli.hidden;
    if (cfg.out_dir.empty()) {
      std::ostringstream d;
      d << default_out_root() << "/" << cfg.agent << "_" << cfg.env << "_seed" << cfg.seed;
      cfg.out_dir = d.str();
    }
    return cfg;
  }
};

int cmd_generate_data(const std::string& env, const std::string& behavior, std::int64_t size,
                      std::uint64_t seed, const std::string& out) {
  EnvSpec spec = EnvSpec::make(env);
  Dataset ds = generate_dataset(spec, behavior_from_string(behavior), static_cast<std::size_t>(size),
                                seed);
  save_dataset(out, ds);
  double r_min = ds.r[0], r_max = ds.r[0], r_mean = 0.0;
  for (double r : ds.r) {
    r_min = std::min(r_min, r);
    r_max = std::max(r_max, r);
    r_mean += r;
  }
  r_mean /= static_cast<double>(ds.size());
  std::cout << "wrote " << out << ": " << ds.size() << " transitions, state_dim "
            << ds.state_dim << ", action_dim " << ds.action_dim << ", env " << ds.env_name
            << ", seed " << ds.generator_seed << "\n";
  std::cout << "reward min " << r_min << ", mean " << r_mean << ", max " << r_max << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  cfg.validate();
  std::cout << "training " << cfg.agent << " on " << cfg.env << " (seed " << cfg.seed << ", "
            << cfg.offline_steps << " offline + " << cfg.online_steps << " online steps)\n";
  TrainOutcome out = run_training(cfg);
  for (const MetricsRow& r : out.rows)
    std::cout << "step " << r.step << "  success " << r.eval_success << "  return "
              << r.eval_return << "\n";
  if (out.flagged) {
    std::cerr << "run flagged: non-finite loss, aborted\n";
    return 2;
  }
  if (out.final_aggregate)
    std::cout << "final score (mean of last 3 evals): " << *out.final_aggregate << "\n";
  else
    std::cout << "final success rate: " << out.success_history.back() << "\n";
  std::cout << "outputs in " << cfg.out_dir << "\n";
  return 0;
}

int cmd_sweep(const RunConfig& base, const std::vector<double>& alphas, int seeds, int jobs) {
  base.validate();
  auto cells = run_sweep(base, alphas, seeds, jobs);
  std::string table = sweep_table(cells);
  std::cout << table;
  std::filesystem::create_directories(base.out_dir);
  std::ofstream out(base.out_dir + "/sweep.tsv");
  out << table;
  std::cout << "table written to " << base.out_dir << "/sweep.tsv\n";
  return 0;
}

int cmd_plot(const std::vector<std::string>& files, const std::string& out_prefix, int resamples) {
  emit_plot(files, out_prefix, resamples);
  std::cout << "wrote " << out_prefix << "_series.tsv and " << out_prefix << ".svg\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowrl: a desk-scale offline RL laboratory around flow-matching policies"};
  app.require_subcommand(1);

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "write a scripted dataset file");
  std::string gen_env = "bimodal_reach", gen_behavior = "mixture_expert", gen_out;
  std::int64_t gen_size = 10000;
  std::uint64_t gen_seed = 0;
  gen->add_option("--env", gen_env, "environment name")->required();
  gen->add_option("--behavior", gen_behavior, "mixture_expert|random_walk_stitch|eps_greedy")
      ->required();
  gen->add_option("--size", gen_size, "transition count")->required();
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output dataset path")->required();

  // train
  auto* train = app.add_subcommand("train", "run one training configuration");
  ConfigFlags train_flags;
  train_flags.attach(train);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "BC-coefficient grid over shared seeds");
  ConfigFlags sweep_flags;
  sweep_flags.attach(sweep);
  std::vector<double> sweep_alphas;
  int sweep_seeds = 8, sweep_jobs = static_cast<int>(std::thread::hardware_concurrency());
  sweep->add_option("--alpha-grid", sweep_alphas, "alpha values")->delimiter(',')->required();
  sweep->add_option("--seeds", sweep_seeds, "seeds per cell");
  sweep->add_option("--jobs", sweep_jobs, "parallel workers");

  // plot
  auto* plot = app.add_subcommand("plot", "emit aligned series and an SVG chart");
  std::vector<std::string> plot_files;
  std::string plot_out = "plot";
  int plot_resamples = 1000;
  plot->add_option("--metrics", plot_files, "metrics.csv files")->required();
  plot->add_option("--out", plot_out, "output prefix");
  plot->add_option("--resamples", plot_resamples, "bootstrap resamples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_generate_data(gen_env, gen_behavior, gen_size, gen_seed, gen_out);
    if (train->parsed()) return cmd_train(train_flags.apply(train));
    if (sweep->parsed()) return cmd_sweep(sweep_flags.apply(sweep), sweep_alphas, sweep_seeds,
                                          sweep_jobs);
    if (plot->parsed()) return cmd_plot(plot_files, plot_out, plot_resamples);
  } catch (const numerical_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
