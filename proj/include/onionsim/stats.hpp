#pragma once

// Repeated-sampling inference: per-simulation empirical quantiles are averaged
// within each sampled network, then across networks, and confidence intervals
// combine the within-network error with the cross-network spread.

#include <boost/math/special_functions/beta.hpp>

#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "onionsim/common.hpp"

namespace onionsim {

inline constexpr double default_alpha = 0.95;

inline std::vector<double> default_quantile_grid() {
  std::vector<double> q;
  for (int i = 1; i <= 99; ++i)
    q.push_back(i / 100.0);
  q.push_back(0.999);
  return q;
}

inline void validate_grid(std::span<const double> grid) {
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0 && grid[i] <= 1.0))
      throw usage_error("quantile " + format_double(grid[i]) + " outside (0, 1]");
    if (i > 0 && !(grid[i] > grid[i - 1]))
      throw usage_error("quantile grid must be strictly increasing");
  }
}

struct empirical_distribution {
  std::vector<double> samples;  // ascending
  double resolution = 0.0;

  empirical_distribution() = default;
  explicit empirical_distribution(std::vector<double> values, double r = 0.0) : samples(std::move(values)), resolution(r) {
    std::sort(samples.begin(), samples.end());
  }
};

/// Linear interpolation between order statistics at rank (n - 1) * q.
inline double inverse_cdf(const empirical_distribution& dist, double q) {
  const auto& x = dist.samples;
  if (x.empty())
    throw usage_error("inverse_cdf of an empty distribution");
  if (!(q > 0.0 && q <= 1.0))
    throw usage_error("quantile outside (0, 1]");
  const double h = static_cast<double>(x.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= x.size())
    return x.back();
  return x[lo] + (h - static_cast<double>(lo)) * (x[lo + 1] - x[lo]);
}

// r / sqrt(12 m)
inline double resolution_error(double resolution, std::size_t sims) {
  if (sims == 0)
    throw usage_error("resolution error needs at least one simulation");
  return resolution / std::sqrt(12.0 * static_cast<double>(sims));
}

namespace detail {

inline double compute_t_value(double alpha, double df) {
  // Two-sided tail mass beyond t is I_x(df/2, 1/2) with x = df / (df + t^2);
  // it decreases in t, so bisect on t.
  const double tail = 1.0 - alpha;
  auto tail_at = [&](double t) { return boost::math::ibeta(df / 2.0, 0.5, df / (df + t * t)); };
  double lo = 0.0, hi = 1.0;
  while (tail_at(hi) > tail)
    hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-13 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (tail_at(mid) > tail)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Two-sided Student's t critical value at confidence level alpha.
inline double t_value(double alpha, std::size_t df) {
  if (df < 1)
    throw usage_error("t_value needs df >= 1");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw usage_error("confidence level must be in (0, 1)");
  static std::mutex lock;
  static std::map<std::pair<double, std::size_t>, double> cache;
  {
    std::lock_guard guard(lock);
    if (auto it = cache.find({alpha, df}); it != cache.end())
      return it->second;
  }
  const double t = detail::compute_t_value(alpha, static_cast<double>(df));
  std::lock_guard guard(lock);
  cache.emplace(std::pair{alpha, df}, t);
  return t;
}

struct network_estimate {
  std::vector<double> mu;       // per quantile
  std::vector<double> sigma;
  std::vector<double> epsilon;
  std::size_t sims = 0;
  double zeta = 0.0;
};

/// Mean of per-simulation quantiles within one network, with its error
/// sigma * t(alpha, m - 1) / sqrt(m - 1). With a single simulation the error
/// is the resolution error alone.
inline network_estimate estimate_network(std::span<const empirical_distribution> sims, std::span<const double> grid, double alpha,
                                         double resolution) {
  if (sims.empty())
    throw usage_error("network estimate needs at least one simulation");
  validate_grid(grid);
  network_estimate est;
  est.sims = sims.size();
  est.zeta = resolution_error(resolution, sims.size());
  const double m = static_cast<double>(sims.size());
  const double t = sims.size() > 1 ? t_value(alpha, sims.size() - 1) : 0.0;
  std::vector<double> values(sims.size());
  for (double q : grid) {
    double sum = 0.0;
    for (std::size_t j = 0; j < sims.size(); ++j) {
      values[j] = inverse_cdf(sims[j], q);
      sum += values[j];
    }
    const double mean = sum / m;
    double ss = 0.0;
    for (double v : values)
      ss += (v - mean) * (v - mean);
    const double sigma = std::sqrt(ss / m + est.zeta * est.zeta);
    est.mu.push_back(mean);
    est.sigma.push_back(sigma);
    est.epsilon.push_back(sims.size() > 1 ? sigma * t / std::sqrt(m - 1.0) : est.zeta);
  }
  return est;
}

struct true_estimate {
  std::vector<double> quantiles;
  std::vector<double> mu, sigma, delta, epsilon, ci_lo, ci_hi;
  std::size_t networks = 0;
  double alpha = default_alpha;
  bool has_ci = false;
};

/// Cross-network estimate. CIs need at least two networks; with one network
/// pass `with_ci = false` to get the point estimate only.
inline true_estimate estimate_true(std::span<const network_estimate> nets, std::span<const double> grid, double alpha,
                                   bool with_ci = true) {
  if (nets.empty())
    throw usage_error("true estimate needs at least one network");
  if (with_ci && nets.size() < 2)
    throw usage_error("confidence intervals need at least two sampled networks");
  validate_grid(grid);
  for (const auto& net : nets)
    if (net.mu.size() != grid.size())
      throw usage_error("network estimate does not match the quantile grid");
  true_estimate out;
  out.quantiles.assign(grid.begin(), grid.end());
  out.networks = nets.size();
  out.alpha = alpha;
  out.has_ci = with_ci;
  const double n = static_cast<double>(nets.size());
  const double t = with_ci ? t_value(alpha, nets.size() - 1) : 0.0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    double sum = 0.0, err = 0.0;
    for (const auto& net : nets) {
      sum += net.mu[k];
      err += net.epsilon[k];
    }
    const double mu = sum / n;
    double ss = 0.0;
    for (const auto& net : nets)
      ss += (net.mu[k] - mu) * (net.mu[k] - mu);
    const double sigma = std::sqrt(ss / n);
    const double delta = err / n;
    out.mu.push_back(mu);
    out.sigma.push_back(sigma);
    out.delta.push_back(delta);
    if (with_ci) {
      const double eps = delta + sigma * t / std::sqrt(n - 1.0);
      out.epsilon.push_back(eps);
      out.ci_lo.push_back(mu - eps);
      out.ci_hi.push_back(mu + eps);
    } else {
      const double nan = std::nan("");
      out.epsilon.push_back(nan);
      out.ci_lo.push_back(nan);
      out.ci_hi.push_back(nan);
    }
  }
  return out;
}

inline std::string estimate_csv(const true_estimate& est) {
  std::string out = "q,mu,sigma,delta,epsilon,ci_lo,ci_hi,n,alpha\n";
  for (std::size_t k = 0; k < est.quantiles.size(); ++k) {
    out += format_double(est.quantiles[k]) + ',' + format_double(est.mu[k]) + ',' + format_double(est.sigma[k]) + ',' +
           format_double(est.delta[k]) + ',' + format_double(est.epsilon[k]) + ',' + format_double(est.ci_lo[k]) + ',' +
           format_double(est.ci_hi[k]) + ',' + std::to_string(est.networks) + ',' + format_double(est.alpha) + '\n';
  }
  return out;
}

struct ci_width_row {
  std::size_t networks = 0;
  double q = 0.0;
  double median_width = 0.0;
};

/// Monte-Carlo study of CI width against the number of sampled networks.
///
/// For each (quantile, trial) a cross-network standard deviation is drawn
/// from N(1, 1) truncated at 0. For each n, n per-network values are drawn,
/// standardized, and rescaled so their population standard deviation equals
/// the drawn value exactly; the values then go through the regular
/// cross-network estimator (single simulation per network, zero resolution).
/// The drawn deviation is shared across n for a given trial, so the median
/// widths are comparable across n without extra Monte-Carlo noise.
inline std::vector<ci_width_row> ci_width_study(std::size_t n_min, std::size_t n_max, std::span<const double> quantiles,
                                                std::size_t trials, std::uint64_t seed, double alpha = default_alpha) {
  if (n_min < 2 || n_max > 100 || n_min > n_max)
    throw usage_error("network counts must lie within [2, 100]");
  std::vector<ci_width_row> rows;
  if (trials == 0)
    return rows;
  const std::vector<double> one_q{0.5};
  for (std::size_t k = 0; k < quantiles.size(); ++k) {
    std::vector<double> spread(trials);
    for (std::size_t t = 0; t < trials; ++t) {
      rng gen(derive_seed(seed, k, t));
      spread[t] = std::max(0.0, gen.normal(1.0, 1.0));
    }
    for (std::size_t n = n_min; n <= n_max; ++n) {
      std::vector<double> widths(trials);
      std::vector<network_estimate> nets(n);
      std::vector<double> z(n);
      for (std::size_t t = 0; t < trials; ++t) {
        rng gen(derive_seed(seed, k, t, n));
        double mean = 0.0;
        for (auto& v : z) {
          v = gen.normal();
          mean += v;
        }
        mean /= static_cast<double>(n);
        double ss = 0.0;
        for (double v : z)
          ss += (v - mean) * (v - mean);
        const double sd = std::sqrt(ss / static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
          nets[i].mu = {quantiles[k] + spread[t] * (z[i] - mean) / sd};
          nets[i].sigma = {0.0};
          nets[i].epsilon = {0.0};
          nets[i].sims = 1;
        }
        const auto est = estimate_true(nets, one_q, alpha);
        widths[t] = 2.0 * est.epsilon[0];
      }
      rows.push_back({n, quantiles[k], median(std::move(widths))});
    }
  }
  return rows;
}

struct run_manifest {
  std::size_t network = 0;
  std::size_t sim = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string downloads_csv;  // relative to the manifest's directory
  std::string goodput_csv;
  double duration_s = 0.0;
  std::string status;  // "ok" or "failed"
  std::string error;
  std::map<std::string, std::uint64_t> errors;
};

inline json manifest_to_json(const run_manifest& m) {
  json j = {{"network", m.network},
            {"sim", m.sim},
            {"seed", m.seed},
            {"config_hash", m.config_hash},
            {"downloads", m.downloads_csv},
            {"goodput", m.goodput_csv},
            {"duration_s", m.duration_s},
            {"status", m.status},
            {"errors", m.errors}};
  if (!m.error.empty())
    j["error"] = m.error;
  return j;
}

inline run_manifest manifest_from_json(const json& j) {
  try {
    run_manifest m;
    m.network = j.at("network").get<std::size_t>();
    m.sim = j.at("sim").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.downloads_csv = j.at("downloads").get<std::string>();
    m.goodput_csv = j.at("goodput").get<std::string>();
    m.duration_s = j.at("duration_s").get<double>();
    m.status = j.at("status").get<std::string>();
    m.error = j.value("error", "");
    m.errors = j.value("errors", std::map<std::string, std::uint64_t>{});
    return m;
  } catch (const json::exception& ex) {
    throw data_error(std::string("run manifest: ") + ex.what());
  }
}

/// Groups manifests by network index; every index in [0, networks) must
/// have at least one run and no manifest may name another index.
inline std::vector<std::vector<run_manifest>> group_runs(std::span<const run_manifest> manifests, std::size_t networks) {
  std::vector<std::vector<run_manifest>> groups(networks);
  for (const auto& m : manifests) {
    if (m.network >= networks)
      throw data_error("run manifest names unknown network " + std::to_string(m.network));
    for (const auto& other : groups[m.network])
      if (other.sim == m.sim)
        throw data_error("duplicate run (" + std::to_string(m.network) + ", " + std::to_string(m.sim) + ")");
    groups[m.network].push_back(m);
  }
  for (std::size_t i = 0; i < networks; ++i) {
    if (groups[i].empty())
      throw data_error("network " + std::to_string(i) + " has no runs");
    std::sort(groups[i].begin(), groups[i].end(), [](const auto& a, const auto& b) { return a.sim < b.sim; });
  }
  return groups;
}

}  // namespace onionsim
