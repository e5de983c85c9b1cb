// onionsim: stage, generate, simulate, analyze, plot, ci-width-study.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 runtime failure.

#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "onionsim/pipeline.hpp"

using namespace onionsim;

namespace {

// Flags shared by generate/simulate/analyze. When <out>/plan.json exists and
// no explicit --staged was given, the stored plan is used so later stages see
// the same parameters as generation.
void add_plan_flags(CLI::App* cmd, experiment_plan& p) {
  cmd->add_option("--staged", p.staged_path, "staged model file");
  cmd->add_option("--map", p.map_path, "internet map (GraphML)");
  cmd->add_option("--scale", p.scale, "network scale s in (0, 1]")->capture_default_str();
  cmd->add_option("--load", p.load, "load factor")->capture_default_str();
  cmd->add_option("--pscale", p.pscale, "process scale p in (0, 1]")->capture_default_str();
  cmd->add_option("--networks", p.networks, "number of sampled networks")->capture_default_str();
  cmd->add_option("--sims-per-net", p.sims_per_network, "simulations per network")->capture_default_str();
  cmd->add_option("--seed", p.seed, "master seed")->capture_default_str();
  cmd->add_option("--duration", p.duration_s, "simulated seconds")->capture_default_str();
  cmd->add_option("--warmup", p.warmup_s, "warmup seconds discarded by analyze")->capture_default_str();
  cmd->add_option("--out", p.out_dir, "output directory")->capture_default_str();
}

experiment_plan resolve_plan(const CLI::App* cmd, const experiment_plan& given) {
  const auto stored = fs::path(given.out_dir) / "plan.json";
  if (cmd->count("--staged") == 0 && fs::exists(stored)) {
    auto p = plan_from_json(read_json(stored.string()));
    p.out_dir = given.out_dir;
    // a few knobs may still be overridden after generation
    if (cmd->count("--duration"))
      p.duration_s = given.duration_s;
    if (cmd->count("--warmup"))
      p.warmup_s = given.warmup_s;
    if (cmd->count("--sims-per-net"))
      p.sims_per_network = given.sims_per_network;
    return p;
  }
  if (given.staged_path.empty() || given.map_path.empty())
    throw usage_error("--staged and --map are required (no plan.json found in " + given.out_dir + ")");
  return given;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flow-level overlay network experiments with cross-network confidence intervals"};
  app.require_subcommand(1);

  std::string snapshots, descriptors, users, staged_out = "staged.json";
  auto* stage_cmd = app.add_subcommand("stage", "compute relay and network statistics from snapshot history");
  stage_cmd->add_option("--snapshots", snapshots, "snapshot file or directory")->required();
  stage_cmd->add_option("--descriptors", descriptors, "descriptor file or directory")->required();
  stage_cmd->add_option("--users", users, "per-country user counts")->required();
  stage_cmd->add_option("--out", staged_out, "staged model output")->capture_default_str();

  experiment_plan plan;
  auto* gen_cmd = app.add_subcommand("generate", "sample network configurations");
  add_plan_flags(gen_cmd, plan);

  std::size_t parallelism = std::max(1u, std::thread::hardware_concurrency());
  auto* sim_cmd = app.add_subcommand("simulate", "run every (network, simulation) pair");
  add_plan_flags(sim_cmd, plan);
  sim_cmd->add_option("--parallelism", parallelism, "worker threads");

  analysis_options aopt;
  auto* an_cmd = app.add_subcommand("analyze", "estimate quantiles with confidence intervals");
  add_plan_flags(an_cmd, plan);
  an_cmd->add_option("--alpha", aopt.alpha, "confidence level")->capture_default_str();
  an_cmd->add_option("--resolution", aopt.resolution, "time resolution of download metrics (s)")->capture_default_str();
  an_cmd->add_option("--metric", aopt.metrics, "metric(s) to analyze; default all");

  std::vector<std::string> estimates, labels;
  std::string plot_out = "plot";
  plot_style style;
  auto* plot_cmd = app.add_subcommand("plot", "render estimate CSVs as a CDF with confidence bands");
  plot_cmd->add_option("estimates", estimates, "estimate CSV files")->required();
  plot_cmd->add_option("--label", labels, "legend label per estimate (default: file name)");
  plot_cmd->add_option("--out", plot_out, "output prefix (.svg, .csv, .json)")->capture_default_str();
  plot_cmd->add_option("--x-label", style.x_label, "x axis label");
  plot_cmd->add_flag("--tail-log", style.tail_log, "tail-logarithmic cumulative axis");

  std::size_t n_min = 2, n_max = 100, trials = 1000;
  std::uint64_t study_seed = 1;
  double study_alpha = default_alpha;
  std::vector<double> study_q{0.5};
  std::string study_out = "ci-width.csv";
  auto* ci_cmd = app.add_subcommand("ci-width-study", "median CI width against the number of sampled networks");
  ci_cmd->add_option("--min-networks", n_min)->capture_default_str();
  ci_cmd->add_option("--max-networks", n_max)->capture_default_str();
  ci_cmd->add_option("--trials", trials)->capture_default_str();
  ci_cmd->add_option("--quantile", study_q, "quantiles to study")->capture_default_str();
  ci_cmd->add_option("--seed", study_seed)->capture_default_str();
  ci_cmd->add_option("--alpha", study_alpha)->capture_default_str();
  ci_cmd->add_option("--out", study_out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (stage_cmd->parsed()) {
      const auto model = cmd_stage(snapshots, descriptors, users, staged_out);
      std::cout << "staged " << model.relays.size() << " relays from " << model.consensus_count << " snapshots -> " << staged_out << "\n";
    } else if (gen_cmd->parsed()) {
      if (plan.staged_path.empty() || plan.map_path.empty())
        throw usage_error("generate needs --staged and --map");
      const auto configs = cmd_generate(plan);
      for (std::size_t i = 0; i < configs.size(); ++i)
        std::cout << net_dir(plan, i) << ": " << configs[i].hosts.size() << " hosts, " << configs[i].traffic.clients
                  << " markov clients\n";
    } else if (sim_cmd->parsed()) {
      const auto p = resolve_plan(sim_cmd, plan);
      const auto runs = cmd_simulate(p, parallelism);
      std::size_t failed = 0;
      for (const auto& r : runs) {
        if (r.status != "ok") {
          ++failed;
          std::cerr << "net-" << r.network << "/sim-" << r.sim << " failed: " << r.error << "\n";
        }
      }
      std::cout << runs.size() - failed << "/" << runs.size() << " simulations completed\n";
      if (failed)
        return 3;
    } else if (an_cmd->parsed()) {
      const auto p = resolve_plan(an_cmd, plan);
      for (const auto& r : cmd_analyze(p, aopt))
        std::cout << r.metric << " -> " << r.path << "\n";
    } else if (plot_cmd->parsed()) {
      if (!labels.empty() && labels.size() != estimates.size())
        throw usage_error("give one --label per estimate file");
      std::vector<plot_input> inputs;
      for (std::size_t k = 0; k < estimates.size(); ++k)
        inputs.push_back({labels.empty() ? fs::path(estimates[k]).stem().string() : labels[k], estimates[k]});
      cmd_plot(inputs, plot_out, style);
      std::cout << plot_out << ".svg\n";
    } else if (ci_cmd->parsed()) {
      validate_grid(study_q);
      const auto rows = ci_width_study(n_min, n_max, study_q, trials, study_seed, study_alpha);
      write_ci_width_csv(rows, study_out);
      std::cout << rows.size() << " rows -> " << study_out << "\n";
    }
  } catch (const usage_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
