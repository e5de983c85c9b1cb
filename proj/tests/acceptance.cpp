// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "fixture_util.hpp"
#include "onionsim/maxmin.hpp"
#include "onionsim/netgen.hpp"
#include "onionsim/stats.hpp"
#include "onionsim/traffic.hpp"

using namespace onionsim;

namespace {

struct outcome {
  bool ok = false;
  std::string detail;
};

int failures = 0;

void check(int id, const std::string& name, const std::function<outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  outcome r;
  try {
    r = body();
  } catch (const std::exception& ex) {
    r = {false, std::string("exception: ") + ex.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s [%d] %s: %s (%.2fs)\n", r.ok ? "PASS" : "FAIL", id, name.c_str(), r.detail.c_str(), secs);
  std::fflush(stdout);
  failures += r.ok ? 0 : 1;
}

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- independent oracles ----

double naive_quantile(std::vector<double> x, double q) {
  std::sort(x.begin(), x.end());
  const double pos = q * static_cast<double>(x.size() - 1);
  const double lo = std::floor(pos), hi = std::ceil(pos);
  const double a = x[static_cast<std::size_t>(lo)], b = x[static_cast<std::size_t>(hi)];
  return a + (pos - lo) * (b - a);
}

double table_t(double alpha, double df) {
  boost::math::students_t d(df);
  return boost::math::quantile(d, 1.0 - (1.0 - alpha) / 2.0);
}

double pop_sd(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v)
    s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

// Textbook water-filling: raise all unfrozen flows together by the smallest
// headroom share, freeze flows on saturated constraints, repeat.
std::vector<double> water_fill(const std::vector<double>& cap, const std::vector<std::vector<std::uint32_t>>& paths) {
  const std::size_t nf = paths.size();
  std::vector<double> rate(nf, 0.0);
  std::vector<bool> frozen(nf, false);
  for (std::size_t f = 0; f < nf; ++f)
    if (paths[f].empty()) {
      rate[f] = std::numeric_limits<double>::infinity();
      frozen[f] = true;
    }
  double level = 0.0;
  while (std::find(frozen.begin(), frozen.end(), false) != frozen.end()) {
    double step = std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < cap.size(); ++e) {
      double used = 0.0;
      int active = 0;
      for (std::size_t f = 0; f < nf; ++f)
        for (auto x : paths[f])
          if (x == e) {
            used += frozen[f] ? rate[f] : level;
            active += frozen[f] ? 0 : 1;
          }
      if (active > 0)
        step = std::min(step, (cap[e] - used) / active);
    }
    level += step;
    for (std::size_t f = 0; f < nf; ++f)
      if (!frozen[f])
        rate[f] = level;
    for (std::size_t e = 0; e < cap.size(); ++e) {
      double used = 0.0;
      for (std::size_t f = 0; f < nf; ++f)
        for (auto x : paths[f])
          if (x == e)
            used += rate[f];
      if (used >= cap[e] - 1e-12 * std::max(1.0, cap[e]))
        for (std::size_t f = 0; f < nf; ++f)
          if (!frozen[f] && std::find(paths[f].begin(), paths[f].end(), e) != paths[f].end())
            frozen[f] = true;
    }
  }
  return rate;
}

}  // namespace

int main() {
  check(1, "traffic arithmetic", [] {
    const auto p = compute_traffic_params(0.1, 1.0, 0.01);
    const double tau = 0.1 * 1490000.0 / (0.01 * 0.1 * 792000.0);  // 188.1313...
    const auto p30 = compute_traffic_params(0.3, 1.0, 0.01);
    const bool ok = p.users == 79200 && p.clients == 792 && std::abs(p.tau - tau) < 1e-9 && std::abs(p.tau - 188.1313) < 1e-4 &&
                    p30.clients == 2376;
    return outcome{ok, fmt("u=%lld clients=%lld tau=%.6f clients@30%%=%lld", (long long)p.users, (long long)p.clients, p.tau,
                           (long long)p30.clients)};
  });

  check(2, "scaling table", [] {
    // full-network position totals and the published rows (G, M, E, D)
    const std::int64_t C[4] = {2040, 3620, 393, 430};
    const std::vector<std::pair<double, std::array<std::int64_t, 4>>> rows = {
        {0.01, {20, 36, 4, 4}}, {0.1, {204, 361, 40, 44}}, {0.3, {612, 1086, 118, 129}}};
    int worst = 0;
    std::string got;
    for (const auto& [s, want] : rows)
      for (int k = 0; k < 4; ++k) {
        const auto v = scaled_count(C[k], s);
        worst = std::max<int>(worst, static_cast<int>(std::llabs(v - want[k])));
        got += std::to_string(v) + (k == 3 ? "; " : ",");
      }
    return outcome{worst <= 1, "G,M,E,D per scale: " + got + "max |diff|=" + std::to_string(worst)};
  });

  check(3, "statistics oracle", [] {
    rng gen(303);
    const auto grid = default_quantile_grid();
    double worst = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
      const std::size_t n = 2 + gen.index(9), m = 1 + gen.index(5);
      const double alpha = 0.95, res = gen.bernoulli(0.5) ? 0.01 : 0.0;
      std::vector<network_estimate> nets;
      std::vector<std::vector<std::vector<double>>> raw(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<empirical_distribution> sims;
        const double shift = gen.normal(0.0, 2.0);
        for (std::size_t j = 0; j < m; ++j) {
          std::vector<double> v(1 + gen.index(1000));
          for (auto& x : v)
            x = shift + gen.exponential(1.0);
          raw[i].push_back(v);
          sims.emplace_back(v, res);
        }
        nets.push_back(estimate_network(sims, grid, alpha, res));
      }
      const auto est = estimate_true(nets, grid, alpha);
      for (std::size_t k = 0; k < grid.size(); ++k) {
        std::vector<double> mus, eps;
        for (std::size_t i = 0; i < n; ++i) {
          std::vector<double> qs;
          for (const auto& v : raw[i])
            qs.push_back(naive_quantile(v, grid[k]));
          const double zeta = res / std::sqrt(12.0 * m);
          const double sd = std::sqrt(pop_sd(qs) * pop_sd(qs) + zeta * zeta);
          const double e = m > 1 ? sd * table_t(alpha, m - 1.0) / std::sqrt(m - 1.0) : zeta;
          mus.push_back(mean_of(qs));
          eps.push_back(e);
          worst = std::max({worst, std::abs(nets[i].mu[k] - mus.back()), std::abs(nets[i].epsilon[k] - e)});
        }
        const double mu = mean_of(mus), delta = mean_of(eps);
        const double epsilon = delta + pop_sd(mus) * table_t(alpha, n - 1.0) / std::sqrt(n - 1.0);
        worst = std::max({worst, std::abs(est.mu[k] - mu), std::abs(est.delta[k] - delta), std::abs(est.epsilon[k] - epsilon),
                          std::abs(est.ci_lo[k] - (mu - epsilon)), std::abs(est.ci_hi[k] - (mu + epsilon))});
      }
    }
    return outcome{worst <= 1e-9, fmt("100 instances, max abs diff %.3g", worst)};
  });

  check(4, "t-values", [] {
    const double a = t_value(0.95, 1), b = t_value(0.95, 2), c = t_value(0.95, 10);
    const bool ok = std::abs(a - 12.7062) < 1e-3 && std::abs(b - 4.3027) < 1e-3 && std::abs(c - 2.2281) < 1e-3;
    return outcome{ok, fmt("t(1)=%.4f t(2)=%.4f t(10)=%.4f", a, b, c)};
  });

  check(5, "CI width vs networks", [] {
    const std::vector<double> q{0.5};
    const auto rows = ci_width_study(2, 100, q, 1000, 6);
    bool monotone = true;
    for (std::size_t i = 1; i < rows.size(); ++i)
      monotone = monotone && rows[i].median_width <= rows[i - 1].median_width;
    const double w2 = rows[0].median_width, w10 = rows[8].median_width;
    return outcome{monotone && rows[8].networks == 10 && w2 / w10 > 10.0,
                   fmt("width(2)=%.4f width(10)=%.4f ratio=%.2f monotone=%s", w2, w10, w2 / w10, monotone ? "yes" : "no")};
  });

  check(6, "max-min oracle", [] {
    rng gen(606);
    max_min_allocator alloc;
    double worst = 0.0;
    for (int inst = 0; inst < 500; ++inst) {
      std::vector<double> cap(1 + gen.index(6));
      for (auto& c : cap)
        c = gen.bernoulli(0.2) ? std::round(gen.uniform(1, 10)) : gen.uniform(0.1, 100.0);
      std::vector<std::vector<std::uint32_t>> paths(1 + gen.index(6));
      for (auto& p : paths)
        for (std::uint32_t e = 0; e < cap.size(); ++e)
          if (gen.bernoulli(0.5))
            p.push_back(e);
      const auto got = alloc.allocate(cap, paths);
      const auto want = water_fill(cap, paths);
      for (std::size_t f = 0; f < paths.size(); ++f)
        worst = std::max(worst, std::isinf(want[f]) ? (std::isinf(got[f]) ? 0.0 : 1e300) : std::abs(got[f] - want[f]));
    }
    return outcome{worst <= 1e-9, fmt("500 instances, max abs diff %.3g", worst)};
  });

  check(7, "pipeline determinism", [] {
    testutil::scratch_dir a("acc7a"), b("acc7b"), c("acc7c");
    const auto staged_a = testutil::stage_fixture(a);
    const auto staged_b = testutil::stage_fixture(b);
    const bool staged_same = read_file(staged_a) == read_file(staged_b);
    const auto r1 = testutil::run_pipeline(testutil::fixture_plan(staged_a, a.str("out")), 1);
    const auto r2 = testutil::run_pipeline(testutil::fixture_plan(staged_b, b.str("out")), 1);
    const auto r4 = testutil::run_pipeline(testutil::fixture_plan(staged_a, c.str("out")), 4);
    const bool ok = staged_same && !r1.empty() && r1 == r2 && r1 == r4;
    return outcome{ok, fmt("%zu estimate CSVs; rerun identical=%s; parallelism 1 vs 4 identical=%s", r1.size(), r1 == r2 ? "yes" : "no",
                           r1 == r4 ? "yes" : "no")};
  });

  check(8, "circuit process", [] {
    rng gen(808);
    const circuit_process proc{188.1313};
    std::vector<double> d(100000);
    for (auto& x : d)
      x = *next_circuit_delay(proc, gen) / 1e6;
    const double mean = mean_of(d), cv = pop_sd(d) / mean;
    return outcome{std::abs(mean - 3.1893) / 3.1893 < 0.02 && std::abs(cv - 1.0) < 0.05, fmt("mean=%.4fs cv=%.4f", mean, cv)};
  });

  check(9, "networks vs seeds spread", [] {
    testutil::scratch_dir dir("acc9");
    auto plan = testutil::fixture_plan(testutil::stage_fixture(dir), dir.str("out"));
    plan.networks = 3;
    plan.sims_per_network = 3;
    plan.duration_s = 1800;
    plan.warmup_s = 600;
    plan.seed = 9;
    const auto configs = cmd_generate(plan);
    std::size_t relays = 0;
    for (const auto& cfg : configs)
      relays = std::max(relays, cfg.count(host_role::relay));
    const auto runs = cmd_simulate(plan, 4);
    std::vector<std::vector<double>> med(plan.networks);
    for (const auto& r : runs) {
      if (r.status != "ok")
        throw std::runtime_error("run failed: " + r.error);
      const auto d = fs::path(sim_dir(plan, r.network, r.sim));
      const auto m = parse_metrics(read_file((d / "downloads.csv").string()), read_file((d / "goodput.csv").string()));
      med[r.network].push_back(naive_quantile(metric_samples(m, find_metric("ttlb-perf50k"), plan.warmup_s), 0.5));
    }
    std::vector<double> net_means;
    double within = 0.0;
    for (const auto& v : med) {
      net_means.push_back(mean_of(v));
      within += pop_sd(v) / static_cast<double>(med.size());
    }
    const double across = pop_sd(net_means);
    const double ratio = within > 0 ? across / within : std::numeric_limits<double>::infinity();
    return outcome{relays <= 50 && ratio > 1.0,
                   fmt("relays<=%zu across-network sd=%.4fs within-network sd=%.4fs ratio=%.2f", relays, across, within, ratio)};
  });

  check(10, "CI coverage", [] {
    rng gen(1010);
    const double truth = 5.0, sd = 2.0;
    const std::vector<double> grid{0.5};
    int covered = 0;
    const int reps = 1000;
    for (int rep = 0; rep < reps; ++rep) {
      const std::size_t n = 2 + rep % 9;
      std::vector<network_estimate> nets(n);
      for (auto& net : nets) {
        net.mu = {gen.normal(truth, sd)};
        net.sigma = {0.0};
        net.epsilon = {0.0};
        net.sims = 1;
      }
      const auto est = estimate_true(nets, grid, 0.95);
      covered += est.ci_lo[0] <= truth && truth <= est.ci_hi[0] ? 1 : 0;
    }
    const double rate = static_cast<double>(covered) / reps;
    return outcome{rate >= 0.90, fmt("coverage %.3f over %d repetitions (n from 2 to 10)", rate, reps)};
  });

  check(11, "subsample properties", [] {
    rng gen(1111);
    int bad = 0;
    for (int pop = 0; pop < 1000; ++pop) {
      const std::size_t n = 1 + gen.index(300), m = 1 + gen.index(n);
      std::vector<sampled_relay> relays(n);
      for (std::size_t i = 0; i < n; ++i) {
        relays[i].relay.fingerprint = hex64(gen.next_u64());
        relays[i].relay.w = gen.bernoulli(0.3) ? std::round(gen.uniform(0, 5)) : gen.exponential(1.0);
      }
      const auto picked = subsample_position(relays, m);
      std::vector<double> w;
      for (const auto& r : relays)
        w.push_back(r.relay.w);
      std::sort(w.begin(), w.end());
      const auto sizes = bucket_sizes(n, m);
      const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
      bool ok = picked.size() == m && *hi - *lo <= 1 && std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) == n;
      std::size_t start = 0;
      for (std::size_t k = 0; ok && k < m; ++k) {
        const double v = picked[k].relay.w;
        ok = v >= w[start] && v <= w[start + sizes[k] - 1] && (k == 0 || picked[k - 1].relay.w <= v);
        start += sizes[k];
      }
      bad += ok ? 0 : 1;
    }
    return outcome{bad == 0, fmt("1000 populations, %d violations", bad)};
  });

  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
