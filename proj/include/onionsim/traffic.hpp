#pragma once

// Markov traffic models: emission distributions, model validation and walks,
// and the per-client circuit arrival process.

#include <map>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "onionsim/common.hpp"

namespace onionsim {

enum class distribution_family { exponential, log_normal, normal, pareto, uniform };

inline const char* family_name(distribution_family f) {
  switch (f) {
  case distribution_family::exponential: return "exponential";
  case distribution_family::log_normal: return "log_normal";
  case distribution_family::normal: return "normal";
  case distribution_family::pareto: return "pareto";
  case distribution_family::uniform: return "uniform";
  }
  return "?";
}

inline distribution_family parse_family(std::string_view s) {
  for (auto f : {distribution_family::exponential, distribution_family::log_normal, distribution_family::normal,
                 distribution_family::pareto, distribution_family::uniform})
    if (s == family_name(f))
      return f;
  throw data_error("unknown distribution family '" + std::string(s) + "'");
}

/// Parameters by family:
///   exponential {rate}          mean 1/rate
///   log_normal  {mu, sigma}     of the underlying normal
///   normal      {mean, stddev}
///   pareto      {scale, shape}  scale = minimum value
///   uniform     {lo, hi}
struct distribution_spec {
  distribution_family family = distribution_family::uniform;
  std::vector<double> params;

  void validate() const {
    auto need = [&](std::size_t n) {
      if (params.size() != n)
        throw data_error(std::string(family_name(family)) + " takes " + std::to_string(n) + " parameters, got " +
                         std::to_string(params.size()));
    };
    switch (family) {
    case distribution_family::exponential:
      need(1);
      if (!(params[0] > 0.0))
        throw data_error("exponential rate must be > 0");
      break;
    case distribution_family::log_normal:
    case distribution_family::normal:
      need(2);
      if (!(params[1] >= 0.0))
        throw data_error(std::string(family_name(family)) + " sigma must be >= 0");
      break;
    case distribution_family::pareto:
      need(2);
      if (!(params[0] > 0.0) || !(params[1] > 0.0))
        throw data_error("pareto scale and shape must be > 0");
      break;
    case distribution_family::uniform:
      need(2);
      if (!(params[0] <= params[1]))
        throw data_error("uniform requires lo <= hi");
      break;
    }
  }

  bool operator==(const distribution_spec&) const = default;
};

// Negative draws are truncated to zero.
inline double sample_distribution(const distribution_spec& spec, rng& gen) {
  spec.validate();
  double x = 0.0;
  switch (spec.family) {
  case distribution_family::exponential:
    x = gen.exponential(1.0 / spec.params[0]);
    break;
  case distribution_family::log_normal:
    x = std::exp(gen.normal(spec.params[0], spec.params[1]));
    break;
  case distribution_family::normal:
    x = gen.normal(spec.params[0], spec.params[1]);
    break;
  case distribution_family::pareto:
    x = spec.params[0] / std::pow(gen.uniform_open_low(), 1.0 / spec.params[1]);
    break;
  case distribution_family::uniform:
    x = spec.params[0] == spec.params[1] ? spec.params[0] : gen.uniform(spec.params[0], spec.params[1]);
    break;
  }
  return std::max(x, 0.0);
}

enum class event_kind { stream_create, packet_to_server, packet_to_client, delay };

inline const char* event_kind_name(event_kind k) {
  switch (k) {
  case event_kind::stream_create: return "stream_create";
  case event_kind::packet_to_server: return "packet_to_server";
  case event_kind::packet_to_client: return "packet_to_client";
  case event_kind::delay: return "delay";
  }
  return "?";
}

inline event_kind parse_event_kind(std::string_view s) {
  for (auto k : {event_kind::stream_create, event_kind::packet_to_server, event_kind::packet_to_client, event_kind::delay})
    if (s == event_kind_name(k))
      return k;
  throw data_error("unknown emission kind '" + std::string(s) + "'");
}

struct emission {
  event_kind kind = event_kind::delay;
  distribution_spec delay;  // microseconds

  bool operator==(const emission&) const = default;
};

struct markov_state {
  std::string name;
  bool terminal = false;
  std::optional<emission> emits;
  std::vector<std::pair<std::size_t, double>> transitions;

  bool operator==(const markov_state&) const = default;
};

/// A finite state machine whose states optionally emit timed events.
class markov_model {
public:
  markov_model() = default;

  /// Validates and takes ownership; throws data_error on any violation.
  /// Transitions are kept sorted by target state so a model walks the same way
  /// however its rows were written.
  markov_model(std::vector<markov_state> states, std::size_t start) : states_(std::move(states)), start_(start) {
    for (auto& s : states_)
      std::sort(s.transitions.begin(), s.transitions.end());
    validate();
  }

  const std::vector<markov_state>& states() const { return states_; }
  std::size_t start() const { return start_; }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < states_.size(); ++i)
      if (states_[i].name == name)
        return i;
    return std::nullopt;
  }

  bool operator==(const markov_model&) const = default;

private:
  void validate() const {
    if (states_.empty())
      throw data_error("markov model has no states");
    if (start_ >= states_.size())
      throw data_error("markov model start state out of range");
    bool any_terminal = false;
    for (const auto& s : states_) {
      if (s.emits)
        s.emits->delay.validate();
      if (s.terminal) {
        any_terminal = true;
        if (!s.transitions.empty())
          throw data_error("terminal state '" + s.name + "' has outgoing transitions");
        continue;
      }
      double sum = 0.0;
      for (const auto& [to, p] : s.transitions) {
        if (to >= states_.size())
          throw data_error("state '" + s.name + "' transitions to an unknown state");
        if (!(p >= 0.0))
          throw data_error("state '" + s.name + "' has a negative transition probability");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw data_error("transition row of state '" + s.name + "' sums to " + format_double(sum));
    }
    if (!any_terminal)
      throw data_error("markov model has no terminal state");
    std::vector<bool> seen(states_.size(), false);
    std::queue<std::size_t> frontier;
    frontier.push(start_);
    seen[start_] = true;
    while (!frontier.empty()) {
      const auto s = frontier.front();
      frontier.pop();
      for (const auto& [to, p] : states_[s].transitions)
        if (p > 0.0 && !seen[to]) {
          seen[to] = true;
          frontier.push(to);
        }
    }
    for (std::size_t i = 0; i < states_.size(); ++i)
      if (!seen[i])
        throw data_error("state '" + states_[i].name + "' is unreachable from the start state");
  }

  std::vector<markov_state> states_;
  std::size_t start_ = 0;
};

inline markov_model markov_from_json(const json& j) {
  auto states_it = j.find("states");
  if (states_it == j.end() || !states_it->is_array())
    throw data_error("markov model: missing array 'states'");
  const json& states_j = *states_it;
  std::vector<markov_state> states;
  std::map<std::string, std::size_t> index;
  for (const auto& sj : states_j) {
    markov_state s;
    s.name = sj.at("name").get<std::string>();
    if (!index.emplace(s.name, states.size()).second)
      throw data_error("duplicate markov state '" + s.name + "'");
    s.terminal = sj.value("terminal", false);
    states.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < states_j.size(); ++i) {
    const auto& sj = states_j[i];
    if (auto e = sj.find("emission"); e != sj.end() && !e->is_null()) {
      emission em;
      em.kind = parse_event_kind(e->at("kind").get<std::string>());
      em.delay.family = parse_family(e->at("family").get<std::string>());
      em.delay.params = e->at("params").get<std::vector<double>>();
      states[i].emits = em;
    }
    if (auto t = sj.find("transitions"); t != sj.end()) {
      for (const auto& [to, p] : t->items()) {
        auto it = index.find(to);
        if (it == index.end())
          throw data_error("state '" + states[i].name + "' transitions to unknown state '" + to + "'");
        states[i].transitions.emplace_back(it->second, p.get<double>());
      }
    }
  }
  std::size_t start = 0;
  if (auto s = j.find("start"); s != j.end()) {
    auto it = index.find(s->get<std::string>());
    if (it == index.end())
      throw data_error("unknown start state '" + s->get<std::string>() + "'");
    start = it->second;
  }
  return markov_model(std::move(states), start);
}

inline json markov_to_json(const markov_model& m) {
  json states = json::array();
  for (const auto& s : m.states()) {
    json sj = {{"name", s.name}, {"terminal", s.terminal}};
    if (s.emits)
      sj["emission"] = {{"kind", event_kind_name(s.emits->kind)},
                        {"family", family_name(s.emits->delay.family)},
                        {"params", s.emits->delay.params}};
    if (!s.terminal) {
      json t = json::object();
      for (const auto& [to, p] : s.transitions)
        t[m.states()[to].name] = p;
      sj["transitions"] = std::move(t);
    }
    states.push_back(std::move(sj));
  }
  return {{"start", m.states()[m.start()].name}, {"states", std::move(states)}};
}

inline markov_model load_markov(const std::string& path) {
  try {
    return markov_from_json(json::parse(read_file(path)));
  } catch (const json::exception& ex) {
    throw data_error(path + ": " + ex.what());
  }
}

struct timed_event {
  event_kind kind = event_kind::delay;
  double delay_us = 0.0;  // since the previous event

  bool operator==(const timed_event&) const = default;
};

struct walk_result {
  std::vector<timed_event> events;
  bool truncated = false;
};

inline constexpr std::size_t default_walk_budget = 1'000'000;

/// Walks from the start state. Each visited state emits its event (if any);
/// the walk stops at a terminal state or once `budget` events were emitted.
inline walk_result walk_markov(const markov_model& model, rng& gen, std::size_t budget = default_walk_budget) {
  walk_result out;
  const auto& states = model.states();
  // Bounds cycles through states that never emit.
  const std::size_t max_steps = budget * 64 + 64;
  std::size_t state = model.start();
  for (std::size_t step = 0;; ++step) {
    const auto& s = states[state];
    if (s.emits) {
      if (out.events.size() >= budget) {
        out.truncated = true;
        break;
      }
      out.events.push_back({s.emits->kind, sample_distribution(s.emits->delay, gen)});
    }
    if (s.terminal)
      break;
    if (step >= max_steps) {
      out.truncated = true;
      break;
    }
    double u = gen.uniform();
    std::size_t next = s.transitions.back().first;
    for (const auto& [to, p] : s.transitions) {
      if (u < p) {
        next = to;
        break;
      }
      u -= p;
    }
    state = next;
  }
  return out;
}

// Microseconds in ten minutes.
inline constexpr double ten_minutes_us = 6e8;

struct circuit_process {
  double tau = 0.0;  // circuits per 10 minutes
};

/// Exponential inter-arrival with mean 6e8/tau microseconds; nullopt when
/// tau is zero (the client never builds circuits).
inline std::optional<double> next_circuit_delay(const circuit_process& proc, rng& gen) {
  if (proc.tau < 0.0)
    throw usage_error("circuit rate must be >= 0");
  if (proc.tau == 0.0)
    return std::nullopt;
  return gen.exponential(ten_minutes_us / proc.tau);
}

// Synthetic stand-ins for measured models. A circuit carries a geometric
// number of streams (mean 5) with exponential inter-arrivals (mean 15 s).
// A stream alternates to-server and to-client bursts of geometric length with
// log-normal per-packet delays.
inline constexpr double default_stream_continue = 0.8;
inline constexpr double default_mean_streams_per_circuit = 1.0 / (1.0 - default_stream_continue);
inline constexpr double default_stream_interarrival_us = 15e6;
inline constexpr double packet_bytes = 1434.0;

inline markov_model default_stream_model() {
  std::vector<markov_state> s(3);
  s[0].name = "start";
  s[0].transitions = {{1, 1.0}};
  s[1].name = "stream";
  s[1].emits = emission{event_kind::stream_create, {distribution_family::exponential, {1.0 / default_stream_interarrival_us}}};
  s[1].transitions = {{1, default_stream_continue}, {2, 1.0 - default_stream_continue}};
  s[2].name = "end";
  s[2].terminal = true;
  return markov_model(std::move(s), 0);
}

inline markov_model default_packet_model() {
  std::vector<markov_state> s(4);
  s[0].name = "start";
  s[0].transitions = {{1, 1.0}};
  s[1].name = "to_server";
  // median ~ 2 ms between request packets
  s[1].emits = emission{event_kind::packet_to_server, {distribution_family::log_normal, {std::log(2000.0), 1.0}}};
  s[1].transitions = {{1, 0.6}, {2, 0.4}};
  s[2].name = "to_client";
  // median ~ 1 ms between response packets
  s[2].emits = emission{event_kind::packet_to_client, {distribution_family::log_normal, {std::log(1000.0), 1.0}}};
  s[2].transitions = {{2, 0.97}, {1, 0.01}, {3, 0.02}};
  s[3].name = "end";
  s[3].terminal = true;
  return markov_model(std::move(s), 0);
}

}  // namespace onionsim
