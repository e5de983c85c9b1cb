#include <gtest/gtest.h>

#include <cmath>

#include "onionsim/stats.hpp"

using namespace onionsim;

namespace {

network_estimate net_with(double mu, double eps) {
  network_estimate n;
  n.mu = {mu};
  n.sigma = {0};
  n.epsilon = {eps};
  n.sims = 1;
  return n;
}

const std::vector<double> half{0.5};

}  // namespace

TEST(InverseCdf, Convention) {
  EXPECT_DOUBLE_EQ(inverse_cdf(empirical_distribution({5, 1, 4, 2, 3}), 0.5), 3);
  EXPECT_DOUBLE_EQ(inverse_cdf(empirical_distribution({1, 3}), 0.5), 2);
  EXPECT_DOUBLE_EQ(inverse_cdf(empirical_distribution({1, 9, 3}), 1.0), 9);
  EXPECT_THROW(inverse_cdf(empirical_distribution(std::vector<double>{}), 0.5), usage_error);
  rng g(1);
  std::vector<double> v(57);
  for (auto& x : v)
    x = g.normal();
  const empirical_distribution d(v);
  double prev = -1e300;
  for (double q : default_quantile_grid()) {
    const double x = inverse_cdf(d, q);
    EXPECT_GE(x, prev);
    prev = x;
  }
}

TEST(ResolutionError, Formula) {
  EXPECT_NEAR(resolution_error(0.01, 3), 0.0016667, 1e-7);
  EXPECT_EQ(resolution_error(0.0, 5), 0.0);
  EXPECT_GT(resolution_error(0.01, 10), resolution_error(0.01, 11));
}

TEST(TValue, TablesAndMonotonicity) {
  EXPECT_NEAR(t_value(0.95, 2), 4.30265, 1e-5);
  EXPECT_NEAR(t_value(0.95, 1), 12.7062, 1e-4);
  EXPECT_NEAR(t_value(0.99, 5), 4.0321, 1e-4);
  EXPECT_NEAR(t_value(0.90, 30), 1.6973, 1e-4);
  double prev = 1e9;
  for (double a : {0.99, 0.9, 0.5, 0.1, 0.01}) {
    const double t = t_value(a, 4);
    EXPECT_LT(t, prev);
    prev = t;
  }
}

TEST(NetworkEstimate, HandExamples) {
  const std::vector<empirical_distribution> two{empirical_distribution({10}), empirical_distribution({14})};
  auto e = estimate_network(two, half, 0.95, 0.0);
  EXPECT_DOUBLE_EQ(e.mu[0], 12);
  EXPECT_DOUBLE_EQ(e.sigma[0], 2);
  EXPECT_NEAR(e.epsilon[0], 25.412, 1e-3);

  const std::vector<empirical_distribution> same(3, empirical_distribution({7, 7}));
  e = estimate_network(same, half, 0.95, 0.0);
  EXPECT_DOUBLE_EQ(e.mu[0], 7);
  EXPECT_DOUBLE_EQ(e.epsilon[0], 0);

  const std::vector<empirical_distribution> one{empirical_distribution({4})};
  e = estimate_network(one, half, 0.95, 0.01);
  EXPECT_DOUBLE_EQ(e.mu[0], 4);
  EXPECT_DOUBLE_EQ(e.epsilon[0], resolution_error(0.01, 1));
  EXPECT_THROW(estimate_network({}, half, 0.95, 0.0), usage_error);
}

TEST(TrueEstimate, HandExamples) {
  std::vector<network_estimate> nets{net_with(1, 0), net_with(2, 0), net_with(3, 0)};
  auto t = estimate_true(nets, half, 0.95);
  EXPECT_DOUBLE_EQ(t.mu[0], 2);
  EXPECT_NEAR(t.sigma[0], std::sqrt(2.0 / 3.0), 1e-12);
  EXPECT_NEAR(t.epsilon[0], 2.484, 1e-3);
  EXPECT_NEAR(t.ci_hi[0] - t.ci_lo[0], 2 * t.epsilon[0], 1e-12);

  for (auto& n : nets)
    n.epsilon = {0.1};
  t = estimate_true(nets, half, 0.95);
  EXPECT_NEAR(t.epsilon[0], 2.584, 1e-3);
  EXPECT_DOUBLE_EQ(t.delta[0], 0.1);

  std::vector<network_estimate> same{net_with(5, 0), net_with(5, 0)};
  t = estimate_true(same, half, 0.95);
  EXPECT_DOUBLE_EQ(t.epsilon[0], 0);
  EXPECT_DOUBLE_EQ(t.ci_lo[0], 5);
}

TEST(TrueEstimate, SingleNetwork) {
  std::vector<network_estimate> one{net_with(3, 0.2)};
  EXPECT_THROW(estimate_true(one, half, 0.95), usage_error);
  const auto t = estimate_true(one, half, 0.95, false);
  EXPECT_DOUBLE_EQ(t.mu[0], 3);
  EXPECT_TRUE(std::isnan(t.epsilon[0]));
}

TEST(TrueEstimate, ScalingEquivariance) {
  rng g(12);
  const double k = 3.5;
  std::vector<network_estimate> base, scaled;
  for (int i = 0; i < 4; ++i) {
    std::vector<empirical_distribution> a, b;
    for (int j = 0; j < 3; ++j) {
      std::vector<double> v(20);
      for (auto& x : v)
        x = g.exponential(2.0);
      std::vector<double> w(v);
      for (auto& x : w)
        x *= k;
      a.emplace_back(v, 0.01);
      b.emplace_back(w, 0.01 * k);
    }
    const auto grid = default_quantile_grid();
    base.push_back(estimate_network(a, grid, 0.95, 0.01));
    scaled.push_back(estimate_network(b, grid, 0.95, 0.01 * k));
  }
  const auto grid = default_quantile_grid();
  const auto x = estimate_true(base, grid, 0.95), y = estimate_true(scaled, grid, 0.95);
  for (std::size_t q = 0; q < grid.size(); ++q) {
    EXPECT_NEAR(y.mu[q], k * x.mu[q], 1e-9);
    EXPECT_NEAR(y.sigma[q], k * x.sigma[q], 1e-9);
    EXPECT_NEAR(y.epsilon[q], k * x.epsilon[q], 1e-9);
    EXPECT_GE(x.epsilon[q], x.delta[q]);
    EXPECT_GE(x.delta[q], 0);
  }
}

TEST(Grid, Validation) {
  EXPECT_NO_THROW(validate_grid(default_quantile_grid()));
  EXPECT_EQ(default_quantile_grid().size(), 100u);
  EXPECT_THROW(validate_grid(std::vector<double>{0.5, 0.4}), usage_error);
  EXPECT_THROW(validate_grid(std::vector<double>{0.0}), usage_error);
}

TEST(CiWidthStudy, ShapeAndEdges) {
  const auto rows = ci_width_study(2, 12, half, 300, 4);
  ASSERT_EQ(rows.size(), 11u);
  for (std::size_t i = 1; i < rows.size(); ++i)
    EXPECT_LE(rows[i].median_width, rows[i - 1].median_width);
  EXPECT_TRUE(ci_width_study(2, 10, half, 0, 4).empty());
  EXPECT_THROW(ci_width_study(1, 10, half, 10, 4), usage_error);
  EXPECT_EQ(ci_width_study(2, 5, half, 50, 9)[2].median_width, ci_width_study(2, 5, half, 50, 9)[2].median_width);
}

TEST(GroupRuns, Grouping) {
  std::vector<run_manifest> runs;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      run_manifest m;
      m.network = i;
      m.sim = 2 - j;
      runs.push_back(m);
    }
  const auto g = group_runs(runs, 3);
  ASSERT_EQ(g.size(), 3u);
  for (const auto& grp : g) {
    ASSERT_EQ(grp.size(), 3u);
    EXPECT_EQ(grp[0].sim, 0u);
  }
  runs.push_back(runs[0]);
  EXPECT_THROW(group_runs(runs, 3), data_error);  // duplicate (i, j)
  runs.pop_back();
  runs[0].network = 7;
  EXPECT_THROW(group_runs(runs, 3), data_error);
  EXPECT_THROW(group_runs(std::vector<run_manifest>{}, 1), data_error);
}
