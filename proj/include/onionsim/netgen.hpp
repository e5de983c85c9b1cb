#pragma once

// Generation of a concrete, scaled network configuration from a staged model
// and an Internet map.

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "onionsim/common.hpp"
#include "onionsim/staging.hpp"

namespace onionsim {

inline constexpr const char* config_schema_version = "onionsim-config/1";

// Active users and circuits per 10 minutes in the full-size network.
inline constexpr double full_network_users = 792000.0;
inline constexpr double full_network_circuits = 1490000.0;

inline constexpr int directory_authority_count = 3;
inline constexpr double perf_interval_s = 60.0;
inline constexpr double server_bandwidth_bits = 10e9;
inline constexpr double dirauth_bandwidth_bits = 1e9;

struct city {
  std::string id;
  std::string country;
  double up_bits = 0.0;
  double down_bits = 0.0;
};

struct map_edge {
  std::size_t a = 0;
  std::size_t b = 0;
  double latency_us = 0.0;
  double packet_loss = 0.0;
};

/// Cities and symmetric one-way latencies between them.
class internet_map {
public:
  internet_map() = default;

  std::size_t add_city(city c) {
    if (index_.count(c.id))
      throw data_error("duplicate city id " + c.id);
    index_.emplace(c.id, cities_.size());
    by_country_[c.country].push_back(cities_.size());
    cities_.push_back(std::move(c));
    return cities_.size() - 1;
  }

  // Packet loss is always stored as zero.
  void add_edge(std::size_t a, std::size_t b, double latency_us) {
    edges_.push_back({a, b, latency_us, 0.0});
    latency_[key(a, b)] = latency_us;
  }

  const std::vector<city>& cities() const { return cities_; }
  const std::vector<map_edge>& edges() const { return edges_; }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end())
      return std::nullopt;
    return it->second;
  }

  std::size_t at(const std::string& id) const {
    auto idx = find(id);
    if (!idx)
      throw data_error("unknown city id " + id);
    return *idx;
  }

  const std::vector<std::size_t>* cities_in(const std::string& country) const {
    auto it = by_country_.find(country);
    return it == by_country_.end() ? nullptr : &it->second;
  }

  std::optional<double> latency_us(std::size_t a, std::size_t b) const {
    auto it = latency_.find(key(a, b));
    if (it == latency_.end())
      return std::nullopt;
    return it->second;
  }

private:
  static std::uint64_t key(std::size_t a, std::size_t b) {
    if (a > b)
      std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
  }

  std::vector<city> cities_;
  std::vector<map_edge> edges_;
  std::unordered_map<std::string, std::size_t> index_;
  std::map<std::string, std::vector<std::size_t>> by_country_;
  std::unordered_map<std::uint64_t, double> latency_;
};

/// Parses a GraphML map. Node attributes: `country_code`, `bandwidth_up`,
/// `bandwidth_down` (bits/s). Edge attributes: `latency` (microseconds),
/// `packet_loss` (ignored; loss is forced to zero).
inline internet_map parse_map(const std::string& xml_text, const std::string& where = "map") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(xml_text);
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& ex) {
    throw data_error(where + ": malformed graph: " + ex.what());
  }
  auto graphml = tree.get_child_optional("graphml");
  if (!graphml)
    throw data_error(where + ": missing <graphml> root");

  std::map<std::string, std::string> key_names;  // key id -> attr.name
  for (const auto& [tag, node] : *graphml) {
    if (tag != "key")
      continue;
    const auto id = node.get<std::string>("<xmlattr>.id", "");
    const auto name = node.get<std::string>(pt::ptree::path_type("<xmlattr>/attr.name", '/'), id);
    key_names[id] = name;
  }
  auto graph = graphml->get_child_optional("graph");
  if (!graph)
    throw data_error(where + ": missing <graph>");

  auto attributes = [&](const pt::ptree& element) {
    std::map<std::string, std::string> attrs;
    for (const auto& [tag, data] : element) {
      if (tag != "data")
        continue;
      const auto key = data.get<std::string>("<xmlattr>.key", "");
      auto it = key_names.find(key);
      attrs[it == key_names.end() ? key : it->second] = data.get_value<std::string>();
    }
    return attrs;
  };
  auto number = [&](const std::map<std::string, std::string>& attrs, const char* name, const std::string& ctx) {
    auto it = attrs.find(name);
    if (it == attrs.end())
      throw data_error(where + ": " + ctx + " missing attribute '" + name + "'");
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used != it->second.size() || !(v >= 0.0))
        throw std::invalid_argument("bad");
      return v;
    } catch (const std::exception&) {
      throw data_error(where + ": " + ctx + " attribute '" + name + "' is not a nonnegative number");
    }
  };

  internet_map m;
  for (const auto& [tag, node] : *graph) {
    if (tag != "node")
      continue;
    city c;
    c.id = node.get<std::string>("<xmlattr>.id", "");
    if (c.id.empty())
      throw data_error(where + ": node without id");
    const auto attrs = attributes(node);
    auto cc = attrs.find("country_code");
    if (cc == attrs.end())
      throw data_error(where + ": node " + c.id + " missing attribute 'country_code'");
    c.country = cc->second;
    std::transform(c.country.begin(), c.country.end(), c.country.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    c.up_bits = number(attrs, "bandwidth_up", "node " + c.id);
    c.down_bits = number(attrs, "bandwidth_down", "node " + c.id);
    m.add_city(std::move(c));
  }
  for (const auto& [tag, edge] : *graph) {
    if (tag != "edge")
      continue;
    const auto source = edge.get<std::string>("<xmlattr>.source", "");
    const auto target = edge.get<std::string>("<xmlattr>.target", "");
    auto a = m.find(source), b = m.find(target);
    if (!a || !b)
      throw data_error(where + ": edge references unknown node " + (a ? target : source));
    const auto attrs = attributes(edge);
    m.add_edge(*a, *b, number(attrs, "latency", "edge " + source + "-" + target));
  }
  if (m.cities().empty())
    throw data_error(where + ": map has no cities");
  return m;
}

inline internet_map load_map(const std::string& path) { return parse_map(read_file(path), path); }

struct scale_params {
  double scale = 1.0;      // s
  double load = 1.0;       // load factor
  double pscale = 1.0;     // process scale p
  std::uint64_t seed = 0;

  void validate() const {
    if (!(scale > 0.0 && scale <= 1.0))
      throw usage_error("network scale must be in (0, 1]");
    if (!(load >= 0.0))
      throw usage_error("load factor must be >= 0");
    if (!(pscale > 0.0 && pscale <= 1.0))
      throw usage_error("process scale must be in (0, 1]");
  }
};

struct traffic_params {
  std::int64_t users = 0;       // u
  double circuits = 0.0;        // c, per 10 minutes
  std::int64_t clients = 0;     // Markov client processes
  double tau = 0.0;             // circuits per client per 10 minutes
};

inline traffic_params compute_traffic_params(double scale, double load, double pscale) {
  scale_params{scale, load, pscale, 0}.validate();
  traffic_params t;
  const double users = scale * full_network_users;
  t.users = round_half_up(users);
  t.circuits = load * scale * full_network_circuits;
  const double processes = pscale * users;
  t.clients = round_half_up(processes);
  if (t.clients < 1)
    throw usage_error("process scale " + format_double(pscale) + " at network scale " + format_double(scale) +
                      " yields no client processes; increase the process or network scale");
  t.tau = t.circuits / processes;
  return t;
}

// round-half-up(s * C), but never below one when C >= 1.
inline std::int64_t scaled_count(std::int64_t full_count, double scale) {
  if (full_count < 0 || !(scale > 0.0 && scale <= 1.0))
    throw usage_error("scaled_count: bad arguments");
  const auto m = round_half_up(scale * static_cast<double>(full_count));
  return full_count >= 1 ? std::max<std::int64_t>(m, 1) : 0;
}

struct auxiliary_counts {
  std::int64_t dirauths = directory_authority_count;
  std::int64_t perf_clients = 0;
  std::int64_t servers = 0;
};

inline auxiliary_counts count_auxiliary_hosts(double scale, std::int64_t clients) {
  auxiliary_counts a;
  a.perf_clients = round_half_up(scale * full_network_users / 1000.0);
  a.servers = round_half_up(static_cast<double>(clients) / 10.0);
  return a;
}

// max(10/p Mbit/s, 1 Gbit/s)
inline double client_bandwidth(double pscale) {
  if (!(pscale > 0.0))
    throw usage_error("process scale must be positive");
  return std::max(10.0 / pscale * 1e6, 1e9);
}

struct sampled_relay {
  staged_relay relay;
  bool guard = false;
  bool exit = false;

  position pos() const { return classify_position(guard, exit); }
};

/// Draws sum(C) relays without replacement, weighted by running fraction,
/// then assigns guard/exit flags by independent Bernoulli draws.
///
/// Weighted sampling uses exponential-race keys (key = E / r with
/// E ~ Exp(1)); taking the n smallest keys is distributed as successive
/// draws proportional to the remaining weights.
inline std::vector<sampled_relay> sample_full_network(const staged_model& staged, rng& gen) {
  const auto needed = static_cast<std::size_t>(staged.total_count());
  std::size_t available = 0;
  for (const auto& r : staged.relays)
    available += r.r > 0.0 ? 1 : 0;
  if (available < needed)
    throw data_error("insufficient relay pool: need " + std::to_string(needed) + " relays with nonzero running fraction, have " +
                     std::to_string(available));

  std::vector<std::pair<double, std::size_t>> keys;
  keys.reserve(staged.relays.size());
  for (std::size_t i = 0; i < staged.relays.size(); ++i) {
    const double e = -std::log(gen.uniform_open_low());
    if (staged.relays[i].r > 0.0)
      keys.emplace_back(e / staged.relays[i].r, i);
  }
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(needed), keys.end());

  std::vector<sampled_relay> out;
  out.reserve(needed);
  for (std::size_t k = 0; k < needed; ++k) {
    sampled_relay s;
    s.relay = staged.relays[keys[k].second];
    s.guard = gen.bernoulli(s.relay.g);
    s.exit = gen.bernoulli(s.relay.e);
    out.push_back(std::move(s));
  }
  return out;
}

/// Sizes of m contiguous buckets over n items, larger buckets first.
inline std::vector<std::size_t> bucket_sizes(std::size_t n, std::size_t m) {
  if (m == 0 || m > n)
    throw usage_error("cannot split " + std::to_string(n) + " relays into " + std::to_string(m) + " buckets");
  std::vector<std::size_t> sizes(m, n / m);
  for (std::size_t i = 0; i < n % m; ++i)
    ++sizes[i];
  return sizes;
}

/// Bucketed-median subsample: sort by weight (ties by fingerprint), split into
/// m near-equal buckets, keep each bucket's lower-median element.
inline std::vector<sampled_relay> subsample_position(std::vector<sampled_relay> relays, std::size_t m) {
  const auto sizes = bucket_sizes(relays.size(), m);
  std::sort(relays.begin(), relays.end(), [](const sampled_relay& a, const sampled_relay& b) {
    if (a.relay.w != b.relay.w)
      return a.relay.w < b.relay.w;
    return a.relay.fingerprint < b.relay.fingerprint;
  });
  std::vector<sampled_relay> out;
  out.reserve(m);
  std::size_t start = 0;
  for (auto size : sizes) {
    out.push_back(relays[start + (size - 1) / 2]);
    start += size;
  }
  return out;
}

inline std::size_t place_relay(const std::string& country, const internet_map& map, rng& gen) {
  if (map.cities().empty())
    throw usage_error("cannot place a host on an empty map");
  if (const auto* in_country = map.cities_in(country); in_country && !in_country->empty())
    return (*in_country)[gen.index(in_country->size())];
  return gen.index(map.cities().size());
}

inline constexpr int client_country_retries = 16;

inline std::vector<std::size_t> place_clients(const std::map<std::string, double>& user_probs, const internet_map& map,
                                              std::size_t count, rng& gen) {
  std::vector<std::size_t> out;
  if (count == 0)
    return out;
  if (map.cities().empty())
    throw usage_error("cannot place clients on an empty map");
  std::vector<std::string> countries;
  std::vector<double> probs;
  for (const auto& [cc, p] : user_probs) {
    countries.push_back(cc);
    probs.push_back(p);
  }
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::optional<std::size_t> chosen;
    for (int attempt = 0; attempt < client_country_retries && !chosen && !countries.empty(); ++attempt) {
      const auto& cc = countries[gen.weighted_index(probs)];
      if (const auto* in_country = map.cities_in(cc); in_country && !in_country->empty())
        chosen = (*in_country)[gen.index(in_country->size())];
    }
    out.push_back(chosen ? *chosen : gen.index(map.cities().size()));
  }
  return out;
}

enum class host_role { relay, dirauth, markov_client, perf_client, server };

inline const char* role_name(host_role r) {
  switch (r) {
  case host_role::relay: return "relay";
  case host_role::dirauth: return "dirauth";
  case host_role::markov_client: return "markov_client";
  case host_role::perf_client: return "perf_client";
  case host_role::server: return "server";
  }
  return "?";
}

inline host_role parse_role(std::string_view s) {
  for (auto r : {host_role::relay, host_role::dirauth, host_role::markov_client, host_role::perf_client, host_role::server})
    if (s == role_name(r))
      return r;
  throw data_error("unknown host role '" + std::string(s) + "'");
}

struct relay_spec {
  std::string fingerprint;
  bool guard = false;
  bool exit = false;
  double capacity = 0.0;  // bytes/s
  double rate = 0.0;      // bytes/s
  double burst = 0.0;     // bytes
  double weight = 0.0;

  bool operator==(const relay_spec&) const = default;
};

struct markov_spec {
  std::string country;
  double tau = 0.0;
  double users = 1.0;

  bool operator==(const markov_spec&) const = default;
};

struct perf_spec {
  double interval_s = perf_interval_s;
  double offset_s = 0.0;

  bool operator==(const perf_spec&) const = default;
};

struct host_spec {
  host_role role = host_role::relay;
  std::string city;
  double bw_up = 0.0;    // bits/s
  double bw_down = 0.0;  // bits/s
  std::optional<relay_spec> relay;
  std::optional<markov_spec> markov;
  std::optional<perf_spec> perf;

  bool operator==(const host_spec&) const = default;
};

struct network_config {
  scale_params params;
  traffic_params traffic;
  std::vector<host_spec> hosts;
  std::string map;

  std::size_t count(host_role r) const {
    return static_cast<std::size_t>(std::count_if(hosts.begin(), hosts.end(), [r](const host_spec& h) { return h.role == r; }));
  }
};

/// Generates a network configuration; a pure function of its inputs.
inline network_config generate(const staged_model& staged, const internet_map& map, const scale_params& params,
                               const std::string& map_reference = "") {
  params.validate();
  rng gen(params.seed);
  network_config cfg;
  cfg.params = params;
  cfg.map = map_reference;
  cfg.traffic = compute_traffic_params(params.scale, params.load, params.pscale);

  const auto sampled = sample_full_network(staged, gen);
  per_position<std::vector<sampled_relay>> by_position;
  for (const auto& s : sampled)
    by_position[static_cast<std::size_t>(s.pos())].push_back(s);

  for (std::int64_t i = 0; i < directory_authority_count; ++i) {
    host_spec h;
    h.role = host_role::dirauth;
    h.city = map.cities()[gen.index(map.cities().size())].id;
    h.bw_up = h.bw_down = dirauth_bandwidth_bits;
    h.relay = relay_spec{"dirauth-" + std::to_string(i), false, false, dirauth_bandwidth_bits / 8.0, 0.0, 0.0, 0.0};
    cfg.hosts.push_back(std::move(h));
  }

  for (auto p : all_positions) {
    auto& pool = by_position[static_cast<std::size_t>(p)];
    // Flag draws can leave fewer relays at a position than the target.
    const auto target = static_cast<std::size_t>(scaled_count(staged.counts[static_cast<std::size_t>(p)], params.scale));
    const auto m = std::min(target, pool.size());
    if (m == 0)
      continue;
    for (auto& s : subsample_position(pool, m)) {
      host_spec h;
      h.role = host_role::relay;
      h.city = map.cities()[place_relay(s.relay.country, map, gen)].id;
      h.bw_up = h.bw_down = s.relay.b * 8.0;
      h.relay = relay_spec{s.relay.fingerprint, s.guard, s.exit, s.relay.b, s.relay.rate, s.relay.burst, s.relay.w};
      cfg.hosts.push_back(std::move(h));
    }
  }

  const double client_bits = client_bandwidth(params.pscale);
  const auto client_cities = place_clients(staged.user_probs, map, static_cast<std::size_t>(cfg.traffic.clients), gen);
  for (auto c : client_cities) {
    host_spec h;
    h.role = host_role::markov_client;
    h.city = map.cities()[c].id;
    h.bw_up = h.bw_down = client_bits;
    h.markov = markov_spec{map.cities()[c].country, cfg.traffic.tau, 1.0 / params.pscale};
    cfg.hosts.push_back(std::move(h));
  }

  const auto aux = count_auxiliary_hosts(params.scale, cfg.traffic.clients);
  const auto perf_cities = place_clients(staged.user_probs, map, static_cast<std::size_t>(aux.perf_clients), gen);
  for (auto c : perf_cities) {
    host_spec h;
    h.role = host_role::perf_client;
    h.city = map.cities()[c].id;
    h.bw_up = h.bw_down = client_bandwidth(1.0);
    h.perf = perf_spec{perf_interval_s, gen.uniform(0.0, perf_interval_s)};
    cfg.hosts.push_back(std::move(h));
  }

  for (std::int64_t i = 0; i < aux.servers; ++i) {
    host_spec h;
    h.role = host_role::server;
    h.city = map.cities()[gen.index(map.cities().size())].id;
    h.bw_up = h.bw_down = server_bandwidth_bits;
    cfg.hosts.push_back(std::move(h));
  }
  return cfg;
}

inline json config_to_json(const network_config& cfg) {
  json j;
  j["version"] = config_schema_version;
  j["map"] = cfg.map;
  j["params"] = {{"s", cfg.params.scale},
                 {"load", cfg.params.load},
                 {"pscale", cfg.params.pscale},
                 {"seed", cfg.params.seed},
                 {"u", cfg.traffic.users},
                 {"c", cfg.traffic.circuits},
                 {"clients", cfg.traffic.clients},
                 {"tau", cfg.traffic.tau}};
  json hosts = json::array();
  for (const auto& h : cfg.hosts) {
    json hj = {{"role", role_name(h.role)}, {"city", h.city}, {"bw_up", h.bw_up}, {"bw_down", h.bw_down}};
    if (h.relay)
      hj["relay"] = {{"fp", h.relay->fingerprint},   {"guard", h.relay->guard}, {"exit", h.relay->exit},
                     {"capacity", h.relay->capacity}, {"rate", h.relay->rate},   {"burst", h.relay->burst},
                     {"weight", h.relay->weight}};
    if (h.markov)
      hj["markov"] = {{"cc", h.markov->country}, {"tau", h.markov->tau}, {"users", h.markov->users}};
    if (h.perf)
      hj["perf"] = {{"interval_s", h.perf->interval_s}, {"offset_s", h.perf->offset_s}};
    if (h.role == host_role::server)
      hj["server"] = json::object();
    hosts.push_back(std::move(hj));
  }
  j["hosts"] = std::move(hosts);
  return j;
}

inline std::string serialize_config(const network_config& cfg) { return config_to_json(cfg).dump(1) + "\n"; }

inline network_config config_from_json(const json& j) {
  const std::string where = "network config";
  const auto version = detail::required<std::string>(j, "version", where);
  if (version != config_schema_version)
    throw data_error("network config version mismatch: expected " + std::string(config_schema_version) + ", found " + version);
  network_config cfg;
  cfg.map = j.value("map", "");
  const auto p = detail::required<json>(j, "params", where);
  cfg.params.scale = detail::required<double>(p, "s", where);
  cfg.params.load = detail::required<double>(p, "load", where);
  cfg.params.pscale = detail::required<double>(p, "pscale", where);
  cfg.params.seed = detail::required<std::uint64_t>(p, "seed", where);
  cfg.traffic.users = detail::required<std::int64_t>(p, "u", where);
  cfg.traffic.circuits = detail::required<double>(p, "c", where);
  cfg.traffic.clients = detail::required<std::int64_t>(p, "clients", where);
  cfg.traffic.tau = detail::required<double>(p, "tau", where);
  const auto hosts = detail::required<json>(j, "hosts", where);
  for (std::size_t i = 0; i < hosts.size(); ++i) {
    const auto& hj = hosts[i];
    const std::string hw = where + " host " + std::to_string(i);
    host_spec h;
    h.role = parse_role(detail::required<std::string>(hj, "role", hw));
    h.city = detail::required<std::string>(hj, "city", hw);
    h.bw_up = detail::required<double>(hj, "bw_up", hw);
    h.bw_down = detail::required<double>(hj, "bw_down", hw);
    if (auto r = hj.find("relay"); r != hj.end()) {
      relay_spec rs;
      rs.fingerprint = detail::required<std::string>(*r, "fp", hw);
      rs.guard = detail::required<bool>(*r, "guard", hw);
      rs.exit = detail::required<bool>(*r, "exit", hw);
      rs.capacity = detail::required<double>(*r, "capacity", hw);
      rs.rate = detail::required<double>(*r, "rate", hw);
      rs.burst = detail::required<double>(*r, "burst", hw);
      rs.weight = detail::required<double>(*r, "weight", hw);
      if (!(rs.capacity > 0.0))
        throw data_error(hw + ": relay capacity must be positive");
      if (!(rs.weight >= 0.0))
        throw data_error(hw + ": negative relay weight");
      h.relay = rs;
    }
    if (auto m = hj.find("markov"); m != hj.end())
      h.markov = markov_spec{detail::required<std::string>(*m, "cc", hw), detail::required<double>(*m, "tau", hw),
                             detail::required<double>(*m, "users", hw)};
    if (auto pf = hj.find("perf"); pf != hj.end())
      h.perf = perf_spec{detail::required<double>(*pf, "interval_s", hw), detail::required<double>(*pf, "offset_s", hw)};
    if ((h.role == host_role::relay || h.role == host_role::dirauth) && !h.relay)
      throw data_error(hw + ": relay host without relay record");
    if (h.role == host_role::markov_client && !h.markov)
      throw data_error(hw + ": markov client without markov record");
    if (h.role == host_role::perf_client && !h.perf)
      throw data_error(hw + ": perf client without perf record");
    cfg.hosts.push_back(std::move(h));
  }
  return cfg;
}

inline network_config read_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& ex) {
    throw data_error(path + ": parse error: " + ex.what());
  }
  return config_from_json(j);
}

}  // namespace onionsim
