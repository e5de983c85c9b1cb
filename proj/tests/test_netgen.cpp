#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "fixture_util.hpp"
#include "onionsim/netgen.hpp"

using namespace onionsim;

namespace {

const char* small_map = R"(<?xml version="1.0"?>
<graphml xmlns="http://graphml.graphdrawing.org/xmlns">
  <key id="cc" for="node" attr.name="country_code" attr.type="string"/>
  <key id="up" for="node" attr.name="bandwidth_up" attr.type="double"/>
  <key id="dn" for="node" attr.name="bandwidth_down" attr.type="double"/>
  <key id="lat" for="edge" attr.name="latency" attr.type="double"/>
  <key id="loss" for="edge" attr.name="packet_loss" attr.type="double"/>
  <graph edgedefault="undirected">
    <node id="a"><data key="cc">US</data><data key="up">1000</data><data key="dn">2000</data></node>
    <node id="b"><data key="cc">de</data><data key="up">3000</data><data key="dn">4000</data></node>
    <edge source="a" target="b"><data key="lat">25000</data><data key="loss">0.01</data></edge>
  </graph>
</graphml>
)";

staged_relay relay(const std::string& fp, double r, double g, double e, double w, const std::string& cc = "us") {
  staged_relay s;
  s.fingerprint = fp;
  s.ip = "10.0.0.1";
  s.country = cc;
  s.r = r;
  s.g = g;
  s.e = e;
  s.w = w;
  s.b = 1e6;
  s.rate = 1e6;
  s.burst = 2e6;
  return s;
}

sampled_relay with_weight(double w, const std::string& fp) {
  sampled_relay s;
  s.relay.w = w;
  s.relay.fingerprint = fp;
  return s;
}

internet_map two_country_map(int us_cities, int de_cities) {
  internet_map m;
  for (int i = 0; i < us_cities; ++i)
    m.add_city({"us" + std::to_string(i), "us", 1e9, 1e9});
  for (int i = 0; i < de_cities; ++i)
    m.add_city({"de" + std::to_string(i), "de", 1e9, 1e9});
  return m;
}

// Staged model whose positions are exact: relays carry deterministic flags.
staged_model table_model() {
  staged_model m;
  m.consensus_count = 1;
  const std::pair<position, std::int64_t> counts[] = {{position::G, 2040}, {position::M, 3620}, {position::E, 393}, {position::D, 430}};
  int k = 0;
  for (const auto& [p, c] : counts) {
    m.counts[static_cast<int>(p)] = c;
    const bool g = p == position::G || p == position::D, e = p == position::E || p == position::D;
    for (std::int64_t i = 0; i < c; ++i)
      m.relays.push_back(relay("R" + std::to_string(k++), 1.0, g ? 1.0 : 0.0, e ? 1.0 : 0.0, 1.0 + static_cast<double>(i % 17)));
  }
  m.user_probs = {{"us", 0.6}, {"de", 0.4}};
  return m;
}

}  // namespace

TEST(Map, LoadForcesZeroLossAndResolvesKeys) {
  const auto m = parse_map(small_map);
  ASSERT_EQ(m.cities().size(), 2u);
  ASSERT_EQ(m.edges().size(), 1u);
  EXPECT_EQ(m.edges()[0].packet_loss, 0.0);
  EXPECT_EQ(m.cities()[0].country, "us");
  EXPECT_DOUBLE_EQ(m.cities()[1].down_bits, 4000);
  EXPECT_EQ(m.latency_us(1, 0), 25000.0);
  EXPECT_FALSE(m.latency_us(0, 0).has_value());
}

TEST(Map, MissingBandwidthIsSchemaError) {
  std::string text = small_map;
  text.replace(text.find(R"(<data key="up">1000</data>)"), std::string(R"(<data key="up">1000</data>)").size(), "");
  EXPECT_THROW(parse_map(text), data_error);
  EXPECT_THROW(parse_map("<graphml><graph><node"), data_error);
}

TEST(Map, FixtureLoads) {
  const auto m = load_map((testutil::fixture_dir() / "map.graphml").string());
  EXPECT_EQ(m.cities().size(), 20u);
  for (std::size_t a = 0; a < 20; ++a)
    for (std::size_t b = 0; b < 20; ++b)
      EXPECT_TRUE(m.latency_us(a, b).has_value());
}

TEST(TrafficParams, Arithmetic) {
  const auto p = compute_traffic_params(0.1, 1.0, 0.01);
  EXPECT_EQ(p.users, 79200);
  EXPECT_DOUBLE_EQ(p.circuits, 149000.0);
  EXPECT_EQ(p.clients, 792);
  EXPECT_NEAR(p.tau, 149000.0 / 792.0, 1e-12);
  EXPECT_EQ(compute_traffic_params(0.3, 1.0, 0.01).clients, 2376);
  const auto idle = compute_traffic_params(0.1, 0.0, 0.01);
  EXPECT_EQ(idle.circuits, 0.0);
  EXPECT_EQ(idle.tau, 0.0);
  EXPECT_THROW(compute_traffic_params(0.001, 1.0, 0.0001), usage_error);
}

TEST(AuxiliaryHosts, TableRows) {
  auto a = count_auxiliary_hosts(0.1, 792);
  EXPECT_EQ(a.dirauths, 3);
  EXPECT_EQ(a.perf_clients, 79);
  EXPECT_EQ(a.servers, 79);
  a = count_auxiliary_hosts(0.3, 2376);
  EXPECT_EQ(a.perf_clients, 238);
  EXPECT_EQ(a.servers, 238);
  a = count_auxiliary_hosts(0.01, 100);
  EXPECT_EQ(a.perf_clients, 8);
  EXPECT_EQ(a.servers, 10);
}

TEST(ClientBandwidth, MaxOfTenOverPAndOneGbit) {
  EXPECT_DOUBLE_EQ(client_bandwidth(0.01), 1e9);
  EXPECT_DOUBLE_EQ(client_bandwidth(0.001), 1e10);
  EXPECT_DOUBLE_EQ(client_bandwidth(1.0), 1e9);
}

TEST(ScaledCount, Examples) {
  EXPECT_EQ(scaled_count(3620, 0.3), 1086);
  EXPECT_EQ(scaled_count(2040, 0.1), 204);
  EXPECT_EQ(scaled_count(3620, 0.1), 362);
  EXPECT_EQ(scaled_count(393, 0.1), 39);
  EXPECT_EQ(scaled_count(430, 0.1), 43);
  EXPECT_EQ(scaled_count(777, 1.0), 777);
  EXPECT_EQ(scaled_count(3, 0.01), 1);  // floor at one
  EXPECT_EQ(scaled_count(0, 0.5), 0);
}

TEST(Subsample, HandExample) {
  std::vector<sampled_relay> rs;
  for (int w : {4, 1, 6, 3, 5, 2})
    rs.push_back(with_weight(w, "f" + std::to_string(w)));
  const auto two = subsample_position(rs, 2);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0].relay.w, 2);
  EXPECT_EQ(two[1].relay.w, 5);
  EXPECT_EQ(subsample_position(rs, 1)[0].relay.w, 3);  // lower median of 6
  const auto all = subsample_position(rs, 6);
  for (int i = 0; i < 6; ++i)
    EXPECT_EQ(all[i].relay.w, i + 1);
  EXPECT_THROW(subsample_position(rs, 7), usage_error);
}

TEST(Subsample, LargerBucketsFirstAndTiesByFingerprint) {
  EXPECT_EQ(bucket_sizes(7, 3), (std::vector<std::size_t>{3, 2, 2}));
  std::vector<sampled_relay> rs{with_weight(1, "c"), with_weight(1, "a"), with_weight(1, "b")};
  EXPECT_EQ(subsample_position(rs, 1)[0].relay.fingerprint, "b");
}

TEST(Sampling, UniformWeightsGiveUniformInclusion) {
  staged_model m;
  for (int i = 0; i < 10; ++i)
    m.relays.push_back(relay("R" + std::to_string(i), 0.5, 0, 0, 1));
  m.counts[static_cast<int>(position::M)] = 3;
  rng gen(11);
  std::vector<int> hits(10, 0);
  const int trials = 10000;
  for (int t = 0; t < trials; ++t)
    for (const auto& s : sample_full_network(m, gen))
      ++hits[std::stoi(s.relay.fingerprint.substr(1))];
  const double p = 0.3, sd = std::sqrt(trials * p * (1 - p));
  for (int h : hits)
    EXPECT_NEAR(h, trials * p, 3 * sd);
}

TEST(Sampling, ZeroRunningFractionNeverSampledAndFlags) {
  staged_model m;
  m.relays = {relay("A", 0.0, 0, 0, 1), relay("B", 1.0, 1.0, 0.0, 1), relay("C", 1.0, 1.0, 0.0, 1), relay("D", 0.5, 1.0, 1.0, 1)};
  m.counts[static_cast<int>(position::G)] = 3;
  rng gen(5);
  for (int t = 0; t < 500; ++t) {
    const auto s = sample_full_network(m, gen);
    ASSERT_EQ(s.size(), 3u);
    for (const auto& x : s) {
      EXPECT_NE(x.relay.fingerprint, "A");
      EXPECT_TRUE(x.guard);
      EXPECT_EQ(x.exit, x.relay.fingerprint == "D");
    }
  }
  m.counts[static_cast<int>(position::G)] = 4;
  try {
    sample_full_network(m, gen);
    FAIL();
  } catch (const data_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('4'), std::string::npos);
    EXPECT_NE(msg.find('3'), std::string::npos);
  }
}

TEST(Sampling, InclusionMonotoneInRunningFraction) {
  staged_model m;
  for (int i = 0; i < 20; ++i)
    m.relays.push_back(relay("R" + std::to_string(i), 0.05 * (i + 1), 0, 0, 1));
  m.counts[static_cast<int>(position::M)] = 5;
  rng gen(17);
  std::vector<int> hits(20, 0);
  for (int t = 0; t < 20000; ++t)
    for (const auto& s : sample_full_network(m, gen))
      ++hits[std::stoi(s.relay.fingerprint.substr(1))];
  // Spearman rank correlation between r (already ranked) and hit counts
  std::vector<int> order(20);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return hits[a] < hits[b]; });
  double d2 = 0;
  for (int rank = 0; rank < 20; ++rank)
    d2 += std::pow(order[rank] - rank, 2);
  const double rho = 1 - 6 * d2 / (20.0 * (400 - 1));
  EXPECT_GT(rho, 0.95);
}

TEST(Sampling, GuardCountConcentratesOnSumOfG) {
  staged_model m;
  rng setup(2);
  for (int i = 0; i < 400; ++i)
    m.relays.push_back(relay("R" + std::to_string(i), 1.0, setup.uniform(), 0, 1));
  m.counts[static_cast<int>(position::M)] = 400;  // takes everyone
  double expected = 0, var = 0;
  for (const auto& r : m.relays) {
    expected += r.g;
    var += r.g * (1 - r.g);
  }
  rng gen(3);
  double mean = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    int guards = 0;
    for (const auto& s : sample_full_network(m, gen))
      guards += s.guard;
    mean += guards / double(trials);
  }
  EXPECT_NEAR(mean, expected, 4 * std::sqrt(var / trials));
}

TEST(Placement, ClientsFollowCountryDistribution) {
  const auto map = two_country_map(3, 2);
  rng gen(8);
  const auto only_us = place_clients({{"us", 1.0}}, map, 500, gen);
  for (auto c : only_us)
    EXPECT_EQ(map.cities()[c].country, "us");
  EXPECT_EQ(std::set<std::size_t>(only_us.begin(), only_us.end()).size(), 3u);

  const auto half = place_clients({{"us", 0.5}, {"de", 0.5}}, map, 10000, gen);
  const double us = std::count_if(half.begin(), half.end(), [&](auto c) { return map.cities()[c].country == "us"; });
  EXPECT_NEAR(us, 5000, 3 * std::sqrt(10000 * 0.25));
  EXPECT_TRUE(place_clients({{"us", 1.0}}, map, 0, gen).empty());

  // no cities for the only country -> global fallback
  const auto fallback = place_clients({{"jp", 1.0}}, map, 50, gen);
  EXPECT_EQ(fallback.size(), 50u);
}

TEST(Placement, RelayUsesOwnCountryWhenPossible) {
  const auto map = two_country_map(3, 2);
  rng gen(1);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(map.cities()[place_relay("de", map, gen)].country, "de");
    EXPECT_LT(place_relay("jp", map, gen), 5u);
  }
}

TEST(Generate, DeterministicAndConsistent) {
  testutil::scratch_dir dir("gen");
  const auto staged = read_staged(testutil::stage_fixture(dir));
  const auto map = load_map((testutil::fixture_dir() / "map.graphml").string());
  const scale_params params{0.3, 0.01, 0.001, 77};
  const auto a = generate(staged, map, params);
  const auto b = generate(staged, map, params);
  EXPECT_EQ(serialize_config(a), serialize_config(b));

  const auto traffic = compute_traffic_params(0.3, 0.01, 0.001);
  const auto aux = count_auxiliary_hosts(0.3, traffic.clients);
  EXPECT_EQ(a.count(host_role::dirauth), 3u);
  EXPECT_EQ(a.count(host_role::markov_client), static_cast<std::size_t>(traffic.clients));
  EXPECT_EQ(a.count(host_role::perf_client), static_cast<std::size_t>(aux.perf_clients));
  EXPECT_EQ(a.count(host_role::server), static_cast<std::size_t>(aux.servers));

  per_position<int> seen{};
  for (const auto& h : a.hosts) {
    if (h.role == host_role::relay) {
      EXPECT_GT(h.relay->capacity, 0.0);
      EXPECT_GE(h.relay->weight, 0.0);
      ++seen[static_cast<int>(classify_position(h.relay->guard, h.relay->exit))];
    }
    if (h.role == host_role::markov_client) {
      EXPECT_DOUBLE_EQ(h.bw_up, client_bandwidth(0.001));
      EXPECT_DOUBLE_EQ(h.markov->users, 1000.0);
    }
  }
  for (int k = 0; k < 4; ++k)
    EXPECT_GE(seen[k], 1);

  const auto other = generate(staged, map, {0.3, 0.01, 0.001, 78});
  std::set<std::string> fa, fb;
  for (const auto& h : a.hosts)
    if (h.role == host_role::relay)
      fa.insert(h.relay->fingerprint);
  for (const auto& h : other.hosts)
    if (h.role == host_role::relay)
      fb.insert(h.relay->fingerprint);
  EXPECT_NE(fa, fb);
}

TEST(Generate, ConfigRoundTrip) {
  testutil::scratch_dir dir("gen-rt");
  const auto staged = read_staged(testutil::stage_fixture(dir));
  const auto map = load_map((testutil::fixture_dir() / "map.graphml").string());
  const auto cfg = generate(staged, map, {0.2, 0.01, 0.01, 3}, "map.graphml");
  const auto text = serialize_config(cfg);
  const auto back = config_from_json(json::parse(text));
  EXPECT_EQ(back.hosts, cfg.hosts);
  EXPECT_EQ(serialize_config(back), text);
  auto j = json::parse(text);
  j["version"] = "nope";
  EXPECT_THROW(config_from_json(j), data_error);
}

TEST(Generate, TableScaleRelayTotal) {
  const auto model = table_model();
  const auto map = two_country_map(3, 2);
  const auto cfg = generate(model, map, {0.3, 0.0, 0.0001, 1});
  EXPECT_NEAR(static_cast<double>(cfg.count(host_role::relay)), 1948.0, 4.0);
}
