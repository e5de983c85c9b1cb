#pragma once

// End-to-end orchestration: stage, generate n networks, run n x m
// simulations, analyze, and plot. Output layout:
//
//   <out>/plan.json
//   <out>/net-<i>/config.json, manifest.json
//   <out>/net-<i>/sim-<j>/downloads.csv, goodput.csv, manifest.json
//   <out>/analysis/<metric>.csv

#include <atomic>
#include <filesystem>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "onionsim/netgen.hpp"
#include "onionsim/plot.hpp"
#include "onionsim/sim.hpp"
#include "onionsim/staging.hpp"
#include "onionsim/stats.hpp"

namespace onionsim {

namespace fs = std::filesystem;

struct experiment_plan {
  std::string staged_path;
  std::string map_path;
  double scale = 0.1;
  double load = 1.0;
  double pscale = 0.01;
  std::size_t networks = 1;
  std::size_t sims_per_network = 1;
  double duration_s = 3600.0;
  double warmup_s = 1200.0;
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  void validate() const {
    if (networks < 1)
      throw usage_error("need at least one network");
    if (sims_per_network < 1)
      throw usage_error("need at least one simulation per network");
    if (!(warmup_s >= 0.0 && warmup_s < duration_s))
      throw usage_error("warmup must be >= 0 and shorter than the duration");
    scale_params{scale, load, pscale, seed}.validate();
  }

  bool operator==(const experiment_plan&) const = default;
};

inline json plan_to_json(const experiment_plan& p) {
  return {{"staged", p.staged_path}, {"map", p.map_path},           {"scale", p.scale},
          {"load", p.load},          {"pscale", p.pscale},          {"networks", p.networks},
          {"sims_per_network", p.sims_per_network},                 {"duration_s", p.duration_s},
          {"warmup_s", p.warmup_s},  {"seed", p.seed},              {"out", p.out_dir}};
}

inline experiment_plan plan_from_json(const json& j) {
  try {
    experiment_plan p;
    p.staged_path = j.at("staged").get<std::string>();
    p.map_path = j.at("map").get<std::string>();
    p.scale = j.at("scale").get<double>();
    p.load = j.at("load").get<double>();
    p.pscale = j.at("pscale").get<double>();
    p.networks = j.at("networks").get<std::size_t>();
    p.sims_per_network = j.at("sims_per_network").get<std::size_t>();
    p.duration_s = j.at("duration_s").get<double>();
    p.warmup_s = j.at("warmup_s").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.out_dir = j.at("out").get<std::string>();
    return p;
  } catch (const json::exception& ex) {
    throw data_error(std::string("plan: ") + ex.what());
  }
}

inline std::string net_dir(const experiment_plan& p, std::size_t i) { return (fs::path(p.out_dir) / ("net-" + std::to_string(i))).string(); }

inline std::string sim_dir(const experiment_plan& p, std::size_t i, std::size_t j) {
  return (fs::path(net_dir(p, i)) / ("sim-" + std::to_string(j))).string();
}

inline std::uint64_t network_seed(const experiment_plan& p, std::size_t i) { return derive_seed(p.seed, i); }
inline std::uint64_t simulation_seed(const experiment_plan& p, std::size_t i, std::size_t j) { return derive_seed(p.seed, i, j); }

inline void write_json(const std::string& path, const json& j) { write_file(path, j.dump(1) + "\n"); }

inline json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& ex) {
    throw data_error(path + ": parse error: " + ex.what());
  }
}

inline staged_model cmd_stage(const std::string& snapshots, const std::string& descriptors, const std::string& users,
                              const std::string& out_path) {
  for (const auto& p : {snapshots, descriptors, users})
    if (!fs::exists(p))
      throw usage_error("input not found: " + p);
  const auto snaps = load_snapshots(snapshots);
  if (snaps.empty())
    throw data_error("no snapshots found under " + snapshots);
  auto model = stage(snaps, load_descriptors(descriptors), load_user_counts(users));
  write_staged(model, out_path);
  return model;
}

/// Writes one configuration per sampled network; network i is generated with
/// seed derive_seed(master, i).
inline std::vector<network_config> cmd_generate(const experiment_plan& plan) {
  plan.validate();
  const auto staged = read_staged(plan.staged_path);
  const auto map = load_map(plan.map_path);
  fs::create_directories(plan.out_dir);
  write_json((fs::path(plan.out_dir) / "plan.json").string(), plan_to_json(plan));
  std::vector<network_config> configs;
  for (std::size_t i = 0; i < plan.networks; ++i) {
    const auto seed = network_seed(plan, i);
    auto cfg = generate(staged, map, {plan.scale, plan.load, plan.pscale, seed}, plan.map_path);
    const auto text = serialize_config(cfg);
    const auto dir = net_dir(plan, i);
    fs::create_directories(dir);
    write_file((fs::path(dir) / "config.json").string(), text);
    write_json((fs::path(dir) / "manifest.json").string(),
               {{"network", i}, {"seed", seed}, {"config", "config.json"}, {"config_hash", hex64(fnv1a64(text))}});
    configs.push_back(std::move(cfg));
  }
  return configs;
}

inline run_manifest run_one(const experiment_plan& plan, const internet_map& map, std::size_t i, std::size_t j) {
  run_manifest m;
  m.network = i;
  m.sim = j;
  m.seed = simulation_seed(plan, i, j);
  m.duration_s = plan.duration_s;
  m.downloads_csv = "downloads.csv";
  m.goodput_csv = "goodput.csv";
  const auto dir = sim_dir(plan, i, j);
  try {
    fs::create_directories(dir);
    const auto text = read_file((fs::path(net_dir(plan, i)) / "config.json").string());
    m.config_hash = hex64(fnv1a64(text));
    network_config cfg;
    try {
      cfg = config_from_json(json::parse(text));
    } catch (const json::parse_error& ex) {
      throw data_error(std::string("config parse error: ") + ex.what());
    }
    const auto metrics = run(cfg, map, plan.duration_s, m.seed);
    write_file((fs::path(dir) / m.downloads_csv).string(), downloads_csv(metrics));
    write_file((fs::path(dir) / m.goodput_csv).string(), goodput_csv(metrics));
    m.errors = metrics.errors;
    m.status = "ok";
  } catch (const std::exception& ex) {
    m.status = "failed";
    m.error = ex.what();
  }
  try {
    write_json((fs::path(dir) / "manifest.json").string(), manifest_to_json(m));
  } catch (const std::exception& ex) {
    m.status = "failed";
    m.error = ex.what();
  }
  return m;
}

/// Runs every (network, simulation) pair on up to `parallelism` worker
/// threads. Runs are independent; a failing run is reported in its manifest
/// and does not stop the others.
inline std::vector<run_manifest> cmd_simulate(const experiment_plan& plan, std::size_t parallelism) {
  plan.validate();
  const auto map = load_map(plan.map_path);
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t i = 0; i < plan.networks; ++i)
    for (std::size_t j = 0; j < plan.sims_per_network; ++j)
      jobs.emplace_back(i, j);
  std::vector<run_manifest> results(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++)
      results[k] = run_one(plan, map, jobs[k].first, jobs[k].second);
  };
  const auto threads = std::max<std::size_t>(1, std::min(parallelism, jobs.size()));
  std::vector<std::jthread> pool;
  for (std::size_t t = 1; t < threads; ++t)
    pool.emplace_back(worker);
  worker();
  pool.clear();
  return results;
}

inline std::vector<run_manifest> load_run_manifests(const experiment_plan& plan) {
  std::vector<run_manifest> out;
  if (!fs::exists(plan.out_dir))
    throw data_error("output directory " + plan.out_dir + " does not exist");
  std::vector<fs::path> nets;
  for (const auto& e : fs::directory_iterator(plan.out_dir))
    if (e.is_directory() && e.path().filename().string().rfind("net-", 0) == 0)
      nets.push_back(e.path());
  std::sort(nets.begin(), nets.end());
  for (const auto& net : nets) {
    std::vector<fs::path> sims;
    for (const auto& e : fs::directory_iterator(net))
      if (e.is_directory() && e.path().filename().string().rfind("sim-", 0) == 0 && fs::exists(e.path() / "manifest.json"))
        sims.push_back(e.path());
    std::sort(sims.begin(), sims.end());
    for (const auto& s : sims)
      out.push_back(manifest_from_json(read_json((s / "manifest.json").string())));
  }
  return out;
}

enum class metric_source { download_ttfb, download_ttlb, error_rate, goodput };

struct metric_selector {
  std::string name;
  metric_source source = metric_source::download_ttlb;
  std::vector<download_kind> kinds;
};

inline std::vector<metric_selector> all_metrics() {
  using k = download_kind;
  return {
      {"ttfb-perf", metric_source::download_ttfb, {k::perf50k, k::perf1m, k::perf5m}},
      {"ttlb-perf50k", metric_source::download_ttlb, {k::perf50k}},
      {"ttlb-perf1m", metric_source::download_ttlb, {k::perf1m}},
      {"ttlb-perf5m", metric_source::download_ttlb, {k::perf5m}},
      {"ttfb-markov", metric_source::download_ttfb, {k::markov}},
      {"ttlb-markov", metric_source::download_ttlb, {k::markov}},
      {"error-rate", metric_source::error_rate, {k::perf50k, k::perf1m, k::perf5m}},
      {"goodput", metric_source::goodput, {}},
  };
}

inline metric_selector find_metric(const std::string& name) {
  for (auto& m : all_metrics())
    if (m.name == name)
      return m;
  throw usage_error("unknown metric '" + name + "'");
}

/// Post-warmup samples of one metric from one run.
inline std::vector<double> metric_samples(const metrics_record& m, const metric_selector& sel, double warmup_s) {
  std::vector<double> out;
  auto wanted = [&](download_kind k) { return std::find(sel.kinds.begin(), sel.kinds.end(), k) != sel.kinds.end(); };
  switch (sel.source) {
  case metric_source::download_ttfb:
  case metric_source::download_ttlb:
    for (const auto& d : m.downloads) {
      if (d.start_s < warmup_s || d.outcome != download_outcome::ok || !wanted(d.kind))
        continue;
      out.push_back(sel.source == metric_source::download_ttfb ? d.ttfb_s : d.ttlb_s);
    }
    break;
  case metric_source::error_rate: {
    // failed / attempted per client
    std::map<std::size_t, std::pair<double, double>> per_client;
    for (const auto& d : m.downloads) {
      if (d.start_s < warmup_s || !wanted(d.kind))
        continue;
      auto& [failed, attempted] = per_client[d.client];
      attempted += 1.0;
      failed += d.outcome == download_outcome::timeout ? 1.0 : 0.0;
    }
    for (const auto& [client, fa] : per_client)
      out.push_back(fa.first / fa.second);
    break;
  }
  case metric_source::goodput: {
    const auto series = relay_goodput_series(m);
    for (std::size_t s = 0; s < series.size(); ++s)
      if (static_cast<double>(s) >= warmup_s)
        out.push_back(series[s]);
    break;
  }
  }
  return out;
}

struct analysis_options {
  std::vector<std::string> metrics;  // empty: every metric with data
  double alpha = default_alpha;
  std::vector<double> grid = default_quantile_grid();
  double resolution = metrics_resolution_s;
};

struct analysis_result {
  std::string metric;
  true_estimate estimate;
  std::string path;
};

inline analysis_result analyze_metric(const std::vector<std::vector<metrics_record>>& runs_by_network, const metric_selector& sel,
                                      double warmup_s, const analysis_options& opt) {
  const double resolution =
      sel.source == metric_source::download_ttfb || sel.source == metric_source::download_ttlb ? opt.resolution : 0.0;
  std::vector<network_estimate> nets;
  for (const auto& runs : runs_by_network) {
    std::vector<empirical_distribution> dists;
    for (const auto& run : runs) {
      auto samples = metric_samples(run, sel, warmup_s);
      if (!samples.empty())
        dists.emplace_back(std::move(samples), resolution);
    }
    if (!dists.empty())
      nets.push_back(estimate_network(dists, opt.grid, opt.alpha, resolution));
  }
  if (nets.empty())
    throw data_error("no post-warmup samples for metric " + sel.name);
  analysis_result r;
  r.metric = sel.name;
  if (nets.size() < 2)
    std::clog << "warning: " << sel.name << " has data from a single network; confidence intervals omitted\n";
  r.estimate = estimate_true(nets, opt.grid, opt.alpha, nets.size() >= 2);
  return r;
}

/// Groups successful runs by network, drops warmup samples, and writes one
/// estimate CSV per metric under <out>/analysis/.
inline std::vector<analysis_result> cmd_analyze(const experiment_plan& plan, const analysis_options& opt) {
  plan.validate();
  validate_grid(opt.grid);
  const auto manifests = load_run_manifests(plan);
  const auto groups = group_runs(manifests, plan.networks);
  std::vector<std::vector<metrics_record>> runs(groups.size());
  bool any_post_warmup = false;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    for (const auto& m : groups[i]) {
      if (m.status != "ok")
        continue;
      const auto dir = fs::path(sim_dir(plan, m.network, m.sim));
      auto rec = parse_metrics(read_file((dir / m.downloads_csv).string()), read_file((dir / m.goodput_csv).string()), dir.string());
      for (const auto& d : rec.downloads)
        any_post_warmup = any_post_warmup || d.start_s >= plan.warmup_s;
      runs[i].push_back(std::move(rec));
    }
  }
  if (!any_post_warmup)
    throw data_error("no post-warmup samples: every download started before the " + format_double(plan.warmup_s) + " s warmup");

  const auto out_dir = fs::path(plan.out_dir) / "analysis";
  fs::create_directories(out_dir);
  std::vector<analysis_result> results;
  const bool explicit_selection = !opt.metrics.empty();
  std::vector<metric_selector> selectors;
  if (explicit_selection)
    for (const auto& name : opt.metrics)
      selectors.push_back(find_metric(name));
  else
    selectors = all_metrics();
  for (const auto& sel : selectors) {
    try {
      auto r = analyze_metric(runs, sel, plan.warmup_s, opt);
      r.path = (out_dir / (sel.name + ".csv")).string();
      write_file(r.path, estimate_csv(r.estimate));
      results.push_back(std::move(r));
    } catch (const data_error& ex) {
      if (explicit_selection)
        throw;
      std::clog << "warning: skipping " << sel.name << ": " << ex.what() << "\n";
    }
  }
  return results;
}

struct plot_input {
  std::string label;
  std::string path;
};

/// Renders estimate CSVs to <out_prefix>.svg, <out_prefix>.csv (plotted
/// points), and <out_prefix>.json (axis metadata and legend).
inline plot_output cmd_plot(const std::vector<plot_input>& inputs, const std::string& out_prefix, const plot_style& style) {
  if (inputs.empty())
    throw usage_error("plot needs at least one estimate file");
  std::vector<plot_series> series;
  for (const auto& in : inputs)
    series.push_back({in.label, parse_estimate_csv(read_file(in.path), in.path)});
  auto out = render_cdf_plot(series, style);
  if (auto parent = fs::path(out_prefix).parent_path(); !parent.empty())
    fs::create_directories(parent);
  write_file(out_prefix + ".svg", out.svg);
  write_file(out_prefix + ".csv", out.points_csv);
  write_json(out_prefix + ".json", out.metadata);
  return out;
}

inline void write_ci_width_csv(const std::vector<ci_width_row>& rows, const std::string& path) {
  std::string out = "n,q,median_width\n";
  for (const auto& r : rows)
    out += std::to_string(r.networks) + ',' + format_double(r.q) + ',' + format_double(r.median_width) + '\n';
  write_file(path, out);
}

}  // namespace onionsim
