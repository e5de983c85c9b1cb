#pragma once

// Deterministic flow-level simulator.
//
// Transfers are fluid flows whose rates are recomputed (max-min fair) on every
// arrival, departure, and 1 s token-bucket refill; rates are constant between
// those events so progress is exact. No packet-level TCP behavior is modeled.

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "onionsim/common.hpp"
#include "onionsim/maxmin.hpp"
#include "onionsim/netgen.hpp"
#include "onionsim/traffic.hpp"

namespace onionsim {

inline constexpr double fallback_latency_us = 50'000.0;
inline constexpr double metrics_resolution_s = 0.01;
inline constexpr double markov_idle_timeout_s = 300.0;
inline constexpr double markov_absolute_timeout_s = 600.0;

enum class download_kind { perf50k, perf1m, perf5m, markov };

inline const char* download_kind_name(download_kind k) {
  switch (k) {
  case download_kind::perf50k: return "perf50k";
  case download_kind::perf1m: return "perf1m";
  case download_kind::perf5m: return "perf5m";
  case download_kind::markov: return "markov";
  }
  return "?";
}

inline download_kind parse_download_kind(std::string_view s) {
  for (auto k : {download_kind::perf50k, download_kind::perf1m, download_kind::perf5m, download_kind::markov})
    if (s == download_kind_name(k))
      return k;
  throw data_error("unknown download kind '" + std::string(s) + "'");
}

struct perf_size {
  download_kind kind;
  double bytes;
  double timeout_s;
};

inline constexpr std::array<perf_size, 3> perf_sizes{{
    {download_kind::perf50k, 50.0 * 1024, 15.0},
    {download_kind::perf1m, 1024.0 * 1024, 60.0},
    {download_kind::perf5m, 5.0 * 1024 * 1024, 120.0},
}};

enum class download_outcome { ok, timeout };

struct download_record {
  download_kind kind = download_kind::perf50k;
  std::size_t client = 0;  // host index
  double start_s = 0.0;
  double ttfb_s = std::nan("");
  double ttlb_s = std::nan("");
  download_outcome outcome = download_outcome::ok;
};

struct metrics_record {
  std::vector<download_record> downloads;
  std::vector<double> relay_bytes;  // per simulated second, summed over relays
  std::map<std::string, std::uint64_t> errors;
};

class circuit_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct relay_candidate {
  std::size_t host = 0;
  bool guard = false;
  bool exit = false;
  double weight = 0.0;
};

struct circuit_relays {
  std::size_t guard = 0;
  std::size_t middle = 0;
  std::size_t exit = 0;
};

namespace detail {

// Weighted pick among candidates passing `eligible`; uniform when all weights
// are zero.
template <typename Pred>
std::optional<std::size_t> weighted_pick(std::span<const relay_candidate> relays, Pred eligible, rng& gen) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& r : relays)
    if (eligible(r)) {
      total += r.weight;
      ++count;
    }
  if (count == 0)
    return std::nullopt;
  if (total > 0.0) {
    double target = gen.uniform() * total;
    std::optional<std::size_t> last;
    for (const auto& r : relays) {
      if (!eligible(r) || r.weight <= 0.0)
        continue;
      last = r.host;
      if (target < r.weight)
        return r.host;
      target -= r.weight;
    }
    return last;
  }
  auto k = gen.index(count);
  for (const auto& r : relays)
    if (eligible(r) && k-- == 0)
      return r.host;
  return std::nullopt;
}

}  // namespace detail

/// Guard by weight among guard-flagged relays, then exit among exit-flagged
/// relays other than the guard, then middle among the rest. No guard state is
/// kept between circuits.
inline circuit_relays build_circuit(std::span<const relay_candidate> relays, rng& gen) {
  circuit_relays c;
  auto guard = detail::weighted_pick(relays, [](const relay_candidate& r) { return r.guard; }, gen);
  if (!guard)
    throw circuit_error("no guard-flagged relay");
  c.guard = *guard;
  auto exit = detail::weighted_pick(relays, [&](const relay_candidate& r) { return r.exit && r.host != c.guard; }, gen);
  if (!exit)
    throw circuit_error("no exit-flagged relay distinct from the guard");
  c.exit = *exit;
  auto middle = detail::weighted_pick(relays, [&](const relay_candidate& r) { return r.host != c.guard && r.host != c.exit; }, gen);
  if (!middle)
    throw circuit_error("no relay left for the middle position");
  c.middle = *middle;
  return c;
}

inline double one_way_latency_us(const internet_map& map, std::size_t a, std::size_t b) {
  return map.latency_us(a, b).value_or(fallback_latency_us);
}

// Round trip over client, guard, middle, exit, server (city indices).
inline double path_rtt_us(const internet_map& map, std::span<const std::size_t, 5> cities) {
  double one_way = 0.0;
  for (std::size_t i = 0; i + 1 < cities.size(); ++i)
    one_way += one_way_latency_us(map, cities[i], cities[i + 1]);
  return 2.0 * one_way;
}

struct sim_options {
  double duration_s = 3600.0;
  std::uint64_t seed = 0;
  markov_model stream_model = default_stream_model();
  markov_model packet_model = default_packet_model();
  std::size_t walk_budget = default_walk_budget;
};

struct token_bucket {
  double rate = 0.0;   // bytes/s; <= 0 disables the bucket
  double burst = 0.0;  // bytes
  double tokens = 0.0;

  bool enabled() const { return rate > 0.0; }

  void refill() {
    if (enabled())
      tokens = std::min(burst, tokens + rate);
  }

  void drain(double bytes) {
    if (enabled())
      tokens = std::max(0.0, tokens - bytes);
  }
};

/// One simulation over a network configuration.
class simulator {
public:
  simulator(const network_config& cfg, const internet_map& map, sim_options options)
      : cfg_(cfg), map_(map), opt_(std::move(options)), gen_(derive_seed(opt_.seed, 0xC1C)) {
    if (!(opt_.duration_s >= 0.0))
      throw usage_error("duration must be >= 0");
    const auto n = cfg_.hosts.size();
    host_city_.resize(n);
    element_of_.resize(n);
    for (std::size_t h = 0; h < n; ++h) {
      const auto& host = cfg_.hosts[h];
      host_city_[h] = map_.at(host.city);
      if (host.role == host_role::relay || host.role == host_role::dirauth) {
        if (!host.relay)
          throw data_error("relay host " + std::to_string(h) + " has no relay record");
        element_of_[h] = {capacity_.size(), capacity_.size()};
        relay_element_.push_back(capacity_.size());
        relay_host_.push_back(h);
        capacity_.push_back(host.relay->capacity);
        token_bucket bucket{host.relay->rate, host.relay->burst, host.relay->burst};
        buckets_.push_back(bucket);
        if (host.role == host_role::relay)
          candidates_.push_back({h, host.relay->guard, host.relay->exit, host.relay->weight});
      } else {
        // up, down
        element_of_[h] = {capacity_.size(), capacity_.size() + 1};
        capacity_.push_back(host.bw_up / 8.0);
        capacity_.push_back(host.bw_down / 8.0);
      }
      if (host.role == host_role::server)
        servers_.push_back(h);
    }
    relay_index_of_element_.assign(capacity_.size(), no_relay);
    for (std::size_t i = 0; i < relay_element_.size(); ++i)
      relay_index_of_element_[relay_element_[i]] = i;
    metrics_.relay_bytes.assign(static_cast<std::size_t>(std::ceil(opt_.duration_s)), 0.0);

    if (opt_.duration_s <= 0.0)
      return;
    push(0.0, ev::tick, 0);
    std::size_t markov_index = 0;
    for (std::size_t h = 0; h < n; ++h) {
      const auto& host = cfg_.hosts[h];
      if (host.role == host_role::markov_client) {
        client_state cs;
        cs.host = h;
        cs.gen = rng(derive_seed(opt_.seed, 1, markov_index));
        cs.process = circuit_process{host.markov->tau};
        clients_.push_back(std::move(cs));
        schedule_next_circuit(clients_.size() - 1, 0.0);
        ++markov_index;
      } else if (host.role == host_role::perf_client) {
        push(host.perf->offset_s, ev::perf_start, h, 0);
      }
    }
  }

  double now() const { return now_; }
  const metrics_record& metrics() const { return metrics_; }
  std::size_t active_flows() const { return active_.size(); }
  std::size_t processed_events() const { return processed_; }

  double relay_tokens(std::size_t relay_host) const { return buckets_[relay_slot(relay_host)].tokens; }
  double relay_capacity(std::size_t relay_host) const { return capacity_[relay_element_[relay_slot(relay_host)]]; }

  // Current rate of the flow carrying download `record`, or nullopt once it
  // is no longer active.
  std::optional<double> download_rate(std::size_t record) const {
    for (auto f : active_)
      if (flows_[f].record == static_cast<std::ptrdiff_t>(record))
        return flows_[f].rate;
    return std::nullopt;
  }

  /// Starts a download over an explicit circuit at the current time; returns
  /// the index of its download record.
  std::size_t start_download(std::size_t client, circuit_relays path, std::size_t server, double bytes, double timeout_s,
                             download_kind kind, double demand_cap = std::numeric_limits<double>::infinity()) {
    download_record rec;
    rec.kind = kind;
    rec.client = client;
    rec.start_s = now_;
    metrics_.downloads.push_back(rec);
    const auto record = metrics_.downloads.size() - 1;
    start_flow(client, path, server, bytes, true, timeout_s, false, demand_cap, static_cast<std::ptrdiff_t>(record));
    return record;
  }

  double circuit_rtt_s(std::size_t client, circuit_relays path, std::size_t server) const {
    const std::array<std::size_t, 5> cities{host_city_[client], host_city_[path.guard], host_city_[path.middle], host_city_[path.exit],
                                            host_city_[server]};
    return path_rtt_us(map_, cities) / 1e6;
  }

  /// Processes the next event; false once the queue is empty or the next
  /// event lies past the duration.
  bool advance() {
    while (!queue_.empty()) {
      const event e = queue_.top();
      if (e.time > opt_.duration_s) {
        finish();
        return false;
      }
      queue_.pop();
      if (e.kind == ev::progress && e.a != generation_)
        continue;
      if (e.time < now_)
        throw std::logic_error("event time moved backwards");
      move_to(e.time);
      ++processed_;
      dispatch(e);
      return true;
    }
    finish();
    return false;
  }

  metrics_record run() {
    while (advance()) {
    }
    return metrics_;
  }

private:
  static constexpr std::size_t no_relay = static_cast<std::size_t>(-1);

  enum class ev { tick, perf_start, circuit_create, stream_start, flow_activate, flow_timeout, idle_check, progress };

  struct event {
    double time;
    std::uint64_t seq;
    ev kind;
    std::uint64_t a = 0, b = 0;

    bool operator>(const event& o) const { return time != o.time ? time > o.time : seq > o.seq; }
  };

  enum class flow_state { pending, active, done, timed_out };

  struct flow {
    std::array<std::uint32_t, 5> elements{};
    std::array<std::size_t, 3> relays{};
    double bytes_total = 0.0;
    double bytes_done = 0.0;
    double request_time = 0.0;
    double first_byte = std::nan("");
    double demand_cap = std::numeric_limits<double>::infinity();
    double rate = 0.0;
    double zero_since = std::nan("");
    std::uint64_t idle_token = 0;
    std::ptrdiff_t record = -1;
    bool idle_timeout = false;
    flow_state state = flow_state::pending;
  };

  struct client_state {
    std::size_t host = 0;
    rng gen{0};
    circuit_process process;
    std::uint64_t circuits = 0;
  };

  struct circuit {
    std::size_t client_slot = 0;
    std::uint64_t index = 0;
    circuit_relays relays;
    std::size_t server = 0;
  };

  std::size_t relay_slot(std::size_t host) const {
    for (std::size_t i = 0; i < relay_host_.size(); ++i)
      if (relay_host_[i] == host)
        return i;
    throw usage_error("host " + std::to_string(host) + " is not a relay");
  }

  void push(double time, ev kind, std::uint64_t a = 0, std::uint64_t b = 0) { queue_.push(event{time, seq_++, kind, a, b}); }

  void schedule_next_circuit(std::size_t slot, double from) {
    auto& cs = clients_[slot];
    if (auto delay = next_circuit_delay(cs.process, cs.gen))
      push(from + *delay / 1e6, ev::circuit_create, slot);
  }

  std::size_t pick_server() {
    if (servers_.empty())
      throw data_error("network config has no server hosts");
    return servers_[gen_.index(servers_.size())];
  }

  void start_flow(std::size_t client, circuit_relays path, std::size_t server, double bytes, bool to_client, double timeout_s,
                  bool idle_timeout, double demand_cap, std::ptrdiff_t record) {
    flow f;
    const auto client_el = to_client ? element_of_[client][1] : element_of_[client][0];
    const auto server_el = to_client ? element_of_[server][0] : element_of_[server][1];
    f.elements = {static_cast<std::uint32_t>(client_el), static_cast<std::uint32_t>(element_of_[path.guard][0]),
                  static_cast<std::uint32_t>(element_of_[path.middle][0]), static_cast<std::uint32_t>(element_of_[path.exit][0]),
                  static_cast<std::uint32_t>(server_el)};
    f.relays = {relay_index_of_element_[element_of_[path.guard][0]], relay_index_of_element_[element_of_[path.middle][0]],
                relay_index_of_element_[element_of_[path.exit][0]]};
    f.bytes_total = bytes;
    f.request_time = now_;
    f.demand_cap = demand_cap;
    f.record = record;
    f.idle_timeout = idle_timeout;
    flows_.push_back(f);
    const auto id = flows_.size() - 1;
    push(now_ + circuit_rtt_s(client, path, server), ev::flow_activate, id);
    push(now_ + timeout_s, ev::flow_timeout, id);
  }

  void dispatch(const event& e) {
    switch (e.kind) {
    case ev::tick: on_tick(static_cast<std::size_t>(e.a)); break;
    case ev::perf_start: on_perf_start(static_cast<std::size_t>(e.a), e.b); break;
    case ev::circuit_create: on_circuit_create(static_cast<std::size_t>(e.a)); break;
    case ev::stream_start: on_stream_start(static_cast<std::size_t>(e.a), e.b); break;
    case ev::flow_activate: on_flow_activate(static_cast<std::size_t>(e.a)); break;
    case ev::flow_timeout: on_flow_timeout(static_cast<std::size_t>(e.a)); break;
    case ev::idle_check: on_idle_check(static_cast<std::size_t>(e.a), e.b); break;
    case ev::progress: on_progress(); break;
    }
  }

  void on_tick(std::size_t second) {
    for (std::size_t i = 0; i < buckets_.size(); ++i) {
      if (second > 0)
        buckets_[i].refill();
      const double b = cfg_.hosts[relay_host_[i]].relay->capacity;
      capacity_[relay_element_[i]] = buckets_[i].enabled() ? std::min(b, buckets_[i].tokens) : b;
    }
    if (static_cast<double>(second + 1) < opt_.duration_s)
      push(static_cast<double>(second + 1), ev::tick, second + 1);
    recompute();
  }

  void on_perf_start(std::size_t host, std::uint64_t j) {
    const auto& perf = *cfg_.hosts[host].perf;
    const auto& size = perf_sizes[j % perf_sizes.size()];
    try {
      const auto path = build_circuit(candidates_, gen_);
      start_download(host, path, pick_server(), size.bytes, size.timeout_s, size.kind);
    } catch (const circuit_error&) {
      ++metrics_.errors["circuit_failure"];
    }
    if (perf.interval_s > 0.0)
      push(now_ + perf.interval_s, ev::perf_start, host, j + 1);
    recompute();
  }

  void on_circuit_create(std::size_t slot) {
    auto& cs = clients_[slot];
    const auto index = cs.circuits++;
    schedule_next_circuit(slot, now_);
    circuit c;
    c.client_slot = slot;
    c.index = index;
    try {
      c.relays = build_circuit(candidates_, gen_);
    } catch (const circuit_error&) {
      ++metrics_.errors["circuit_failure"];
      return;
    }
    c.server = pick_server();
    circuits_.push_back(c);
    const auto id = circuits_.size() - 1;
    rng walk_gen(derive_seed(opt_.seed, 2, slot, index, 0));
    const auto walk = walk_markov(opt_.stream_model, walk_gen, opt_.walk_budget);
    if (walk.truncated)
      ++metrics_.errors["walk_truncated"];
    double t = now_;
    std::uint64_t stream = 0;
    for (const auto& evt : walk.events) {
      t += evt.delay_us / 1e6;
      if (evt.kind == event_kind::stream_create)
        push(t, ev::stream_start, id, stream++);
    }
  }

  void on_stream_start(std::size_t circuit_id, std::uint64_t stream) {
    const auto& c = circuits_[circuit_id];
    const auto client = clients_[c.client_slot].host;
    rng walk_gen(derive_seed(opt_.seed, 2, c.client_slot, c.index, 1 + stream));
    const auto walk = walk_markov(opt_.packet_model, walk_gen, opt_.walk_budget);
    if (walk.truncated)
      ++metrics_.errors["walk_truncated"];
    double to_client = 0.0, to_server = 0.0, client_time = 0.0, server_time = 0.0;
    for (const auto& evt : walk.events) {
      if (evt.kind == event_kind::packet_to_client) {
        to_client += packet_bytes;
        client_time += evt.delay_us / 1e6;
      } else if (evt.kind == event_kind::packet_to_server) {
        to_server += packet_bytes;
        server_time += evt.delay_us / 1e6;
      }
    }
    const auto inf = std::numeric_limits<double>::infinity();
    if (to_server > 0.0)
      start_flow(client, c.relays, c.server, to_server, false, markov_absolute_timeout_s, true,
                 server_time > 0.0 ? to_server / server_time : inf, -1);
    if (to_client > 0.0) {
      download_record rec;
      rec.kind = download_kind::markov;
      rec.client = client;
      rec.start_s = now_;
      metrics_.downloads.push_back(rec);
      start_flow(client, c.relays, c.server, to_client, true, markov_absolute_timeout_s, true,
                 client_time > 0.0 ? to_client / client_time : inf, static_cast<std::ptrdiff_t>(metrics_.downloads.size() - 1));
    }
  }

  void on_flow_activate(std::size_t id) {
    auto& f = flows_[id];
    if (f.state != flow_state::pending)
      return;
    f.state = flow_state::active;
    active_.push_back(static_cast<std::uint32_t>(id));
    recompute();
  }

  void on_flow_timeout(std::size_t id) {
    auto& f = flows_[id];
    if (f.state == flow_state::done || f.state == flow_state::timed_out)
      return;
    const bool was_active = f.state == flow_state::active;
    f.state = flow_state::timed_out;
    if (f.record >= 0) {
      auto& rec = metrics_.downloads[static_cast<std::size_t>(f.record)];
      rec.outcome = download_outcome::timeout;
      if (!std::isnan(f.first_byte))
        rec.ttfb_s = f.first_byte - f.request_time;
      ++metrics_.errors["timeout"];
    }
    if (was_active) {
      std::erase(active_, static_cast<std::uint32_t>(id));
      recompute();
    }
  }

  void on_idle_check(std::size_t id, std::uint64_t token) {
    auto& f = flows_[id];
    if (f.state != flow_state::active || f.idle_token != token || std::isnan(f.zero_since))
      return;
    on_flow_timeout(id);
  }

  void on_progress() {
    bool any = false;
    std::vector<std::uint32_t> still;
    still.reserve(active_.size());
    for (auto id : active_) {
      auto& f = flows_[id];
      const double remaining = f.bytes_total - f.bytes_done;
      // The second test catches completions too close to resolve in time.
      if (remaining <= completion_slack(f) || (f.rate > 0.0 && now_ + remaining / f.rate <= now_)) {
        f.bytes_done = f.bytes_total;
        f.state = flow_state::done;
        if (f.record >= 0) {
          auto& rec = metrics_.downloads[static_cast<std::size_t>(f.record)];
          rec.outcome = download_outcome::ok;
          rec.ttfb_s = (std::isnan(f.first_byte) ? now_ : f.first_byte) - f.request_time;
          rec.ttlb_s = now_ - f.request_time;
        }
        any = true;
      } else {
        still.push_back(id);
      }
    }
    active_.swap(still);
    if (any)
      recompute();
    else
      schedule_progress();
  }

  static double completion_slack(const flow& f) { return 1e-6 + 1e-12 * f.bytes_total; }

  // Brings every active flow and bucket forward to time t; the interval never
  // crosses a whole second because refill ticks are events.
  void move_to(double t) {
    const double dt = t - now_;
    if (dt > 0.0 && !active_.empty()) {
      const auto second = static_cast<std::size_t>(std::floor(now_));
      double relay_total = 0.0;
      for (auto id : active_) {
        auto& f = flows_[id];
        if (!(f.rate > 0.0))
          continue;
        const double bytes = std::min(f.rate * dt, f.bytes_total - f.bytes_done);
        if (bytes <= 0.0)
          continue;
        f.bytes_done += bytes;
        for (auto r : f.relays) {
          buckets_[r].drain(bytes);
          relay_total += bytes;
        }
      }
      if (second < metrics_.relay_bytes.size())
        metrics_.relay_bytes[second] += relay_total;
    }
    now_ = t;
  }

  void recompute() {
    caps_.assign(capacity_.begin(), capacity_.end());
    paths_.resize(active_.size());
    for (std::size_t i = 0; i < active_.size(); ++i) {
      const auto& f = flows_[active_[i]];
      auto& p = paths_[i];
      p.assign(f.elements.begin(), f.elements.end());
      if (std::isfinite(f.demand_cap)) {
        p.push_back(static_cast<std::uint32_t>(caps_.size()));
        caps_.push_back(f.demand_cap);
      }
    }
    const auto rates = allocator_.allocate(caps_, std::span<const std::vector<std::uint32_t>>(paths_.data(), active_.size()));
    for (std::size_t i = 0; i < active_.size(); ++i) {
      const auto id = active_[i];
      auto& f = flows_[id];
      f.rate = rates[i];
      if (f.rate > 0.0) {
        if (std::isnan(f.first_byte))
          f.first_byte = now_;
        f.zero_since = std::nan("");
      } else if (std::isnan(f.zero_since)) {
        f.zero_since = now_;
        ++f.idle_token;
        if (f.idle_timeout)
          push(now_ + markov_idle_timeout_s, ev::idle_check, id, f.idle_token);
      }
    }
    schedule_progress();
  }

  void schedule_progress() {
    ++generation_;
    double next = std::numeric_limits<double>::infinity();
    for (auto id : active_) {
      const auto& f = flows_[id];
      if (f.rate > 0.0)
        next = std::min(next, now_ + (f.bytes_total - f.bytes_done) / f.rate);
    }
    if (std::isfinite(next))
      push(std::max(next, now_), ev::progress, generation_);
  }

  void finish() {
    if (finished_)
      return;
    finished_ = true;
    if (opt_.duration_s > now_)
      move_to(opt_.duration_s);
    // Downloads still in flight at the end are censored: neither a success
    // nor a timeout, so they are dropped from the record.
    std::vector<bool> unfinished(metrics_.downloads.size(), false);
    for (const auto& f : flows_)
      if (f.record >= 0 && (f.state == flow_state::pending || f.state == flow_state::active))
        unfinished[static_cast<std::size_t>(f.record)] = true;
    std::size_t keep = 0;
    for (std::size_t i = 0; i < metrics_.downloads.size(); ++i)
      if (!unfinished[i])
        metrics_.downloads[keep++] = metrics_.downloads[i];
    metrics_.downloads.resize(keep);
  }

  const network_config& cfg_;
  const internet_map& map_;
  sim_options opt_;
  rng gen_;

  std::vector<std::size_t> host_city_;
  std::vector<std::array<std::size_t, 2>> element_of_;
  std::vector<double> capacity_;
  std::vector<std::size_t> relay_element_;
  std::vector<std::size_t> relay_host_;
  std::vector<std::size_t> relay_index_of_element_;
  std::vector<token_bucket> buckets_;
  std::vector<relay_candidate> candidates_;
  std::vector<std::size_t> servers_;
  std::vector<client_state> clients_;
  std::vector<circuit> circuits_;
  std::vector<flow> flows_;
  std::vector<std::uint32_t> active_;

  std::priority_queue<event, std::vector<event>, std::greater<>> queue_;
  std::uint64_t seq_ = 0;
  std::uint64_t generation_ = 0;
  double now_ = 0.0;
  std::size_t processed_ = 0;
  bool finished_ = false;

  max_min_allocator allocator_;
  std::vector<double> caps_;
  std::vector<std::vector<std::uint32_t>> paths_;
  metrics_record metrics_;
};

inline metrics_record run(const network_config& cfg, const internet_map& map, double duration_s, std::uint64_t seed) {
  sim_options opt;
  opt.duration_s = duration_s;
  opt.seed = seed;
  return simulator(cfg, map, std::move(opt)).run();
}

/// Per-second relay goodput in Gbit/s, multiplied by 1/extrapolation_scale.
inline std::vector<double> relay_goodput_series(const metrics_record& m, double extrapolation_scale = 1.0) {
  if (!(extrapolation_scale > 0.0))
    throw usage_error("extrapolation scale must be positive");
  std::vector<double> out;
  out.reserve(m.relay_bytes.size());
  for (double bytes : m.relay_bytes)
    out.push_back(bytes * 8.0 / 1e9 / extrapolation_scale);
  return out;
}

inline double quantize(double x, double resolution) {
  if (std::isnan(x) || resolution <= 0.0)
    return x;
  return std::round(x / resolution) * resolution;
}

inline std::string downloads_csv(const metrics_record& m) {
  std::string out = "kind,client,start_s,ttfb_s,ttlb_s,outcome\n";
  for (const auto& d : m.downloads) {
    out += download_kind_name(d.kind);
    out += ',' + std::to_string(d.client);
    out += ',' + format_fixed(d.start_s, 2);
    out += ',' + format_fixed(quantize(d.ttfb_s, metrics_resolution_s), 2);
    out += ',' + format_fixed(quantize(d.ttlb_s, metrics_resolution_s), 2);
    out += d.outcome == download_outcome::ok ? ",ok\n" : ",timeout\n";
  }
  return out;
}

inline std::string goodput_csv(const metrics_record& m) {
  std::string out = "second,goodput_bits\n";
  for (std::size_t s = 0; s < m.relay_bytes.size(); ++s)
    out += std::to_string(s) + ',' + format_fixed(m.relay_bytes[s] * 8.0, 0) + '\n';
  return out;
}

namespace detail {

inline double parse_csv_number(const std::string& field, const std::string& where) {
  if (field.empty())
    return std::nan("");
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size())
      throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw data_error(where + ": bad number '" + field + "'");
  }
}

inline std::vector<std::vector<std::string>> csv_rows(const std::string& text, const std::string& header, const std::string& where) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != header)
    throw data_error(where + ": expected header '" + header + "'");
  std::vector<std::vector<std::string>> rows;
  const auto columns = split(header, ',').size();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty())
      continue;
    auto fields = split(line, ',');
    if (fields.size() != columns)
      throw data_error(where + ":" + std::to_string(lineno) + ": expected " + std::to_string(columns) + " fields");
    rows.push_back(std::move(fields));
  }
  return rows;
}

}  // namespace detail

/// Reads the two metrics CSVs back; error counts are not part of them.
inline metrics_record parse_metrics(const std::string& downloads_text, const std::string& goodput_text, const std::string& where = "metrics") {
  metrics_record m;
  for (const auto& row : detail::csv_rows(downloads_text, "kind,client,start_s,ttfb_s,ttlb_s,outcome", where + " downloads")) {
    download_record d;
    d.kind = parse_download_kind(row[0]);
    d.client = static_cast<std::size_t>(detail::parse_csv_number(row[1], where));
    d.start_s = detail::parse_csv_number(row[2], where);
    d.ttfb_s = detail::parse_csv_number(row[3], where);
    d.ttlb_s = detail::parse_csv_number(row[4], where);
    if (row[5] == "ok")
      d.outcome = download_outcome::ok;
    else if (row[5] == "timeout")
      d.outcome = download_outcome::timeout;
    else
      throw data_error(where + ": unknown outcome '" + row[5] + "'");
    m.downloads.push_back(d);
  }
  for (const auto& row : detail::csv_rows(goodput_text, "second,goodput_bits", where + " goodput"))
    m.relay_bytes.push_back(detail::parse_csv_number(row[1], where) / 8.0);
  return m;
}

}  // namespace onionsim
