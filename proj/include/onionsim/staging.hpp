#pragma once

// Staging: reduce a history of relay snapshots, descriptors, and per-country
// user counts into a compact per-relay / per-position summary.

#include <array>
#include <cctype>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "onionsim/common.hpp"

namespace onionsim {

inline constexpr const char* staged_schema_version = "onionsim-staged/1";

enum class position { D = 0, E = 1, G = 2, M = 3 };

inline constexpr std::array<position, 4> all_positions{position::D, position::E, position::G, position::M};

inline const char* position_name(position p) {
  switch (p) {
  case position::D: return "D";
  case position::E: return "E";
  case position::G: return "G";
  case position::M: return "M";
  }
  return "?";
}

inline position parse_position(std::string_view name) {
  if (name == "D") return position::D;
  if (name == "E") return position::E;
  if (name == "G") return position::G;
  if (name == "M") return position::M;
  throw data_error("unknown position '" + std::string(name) + "'");
}

// D: exit+guard, E: exit, G: guard, M: middle.
constexpr position classify_position(bool is_guard, bool is_exit) {
  if (is_guard && is_exit)
    return position::D;
  if (is_exit)
    return position::E;
  if (is_guard)
    return position::G;
  return position::M;
}

template <typename T>
using per_position = std::array<T, 4>;

struct snapshot_relay {
  std::string fingerprint;
  std::string ip;
  std::string country;
  bool is_guard = false;
  bool is_exit = false;
  double weight = 0.0;
};

struct consensus_snapshot {
  std::int64_t timestamp = 0;
  std::vector<snapshot_relay> relays;
};

struct descriptor_record {
  std::string fingerprint;
  double observed_bandwidth = 0.0;  // bytes/s
  double bandwidth_rate = 0.0;      // bytes/s
  double bandwidth_burst = 0.0;     // bytes
};

struct user_count_record {
  std::string date;
  std::string country;
  std::int64_t count = 0;
};

struct staged_relay {
  std::string fingerprint;
  std::string ip;
  std::string country;
  double r = 0.0;  // running fraction
  double g = 0.0;  // guard fraction among snapshots containing the relay
  double e = 0.0;  // exit fraction among snapshots containing the relay
  double w = 0.0;  // median normalized weight
  double b = 0.0;  // max observed bandwidth, bytes/s
  double rate = 0.0;   // median token rate, bytes/s
  double burst = 0.0;  // median token burst, bytes

  bool operator==(const staged_relay&) const = default;
};

struct staged_model {
  std::vector<staged_relay> relays;
  per_position<std::int64_t> counts{};  // C
  per_position<double> weights{};       // W
  std::map<std::string, double> user_probs;  // U
  std::int64_t consensus_count = 0;

  std::int64_t total_count() const {
    std::int64_t n = 0;
    for (auto c : counts)
      n += c;
    return n;
  }

  bool operator==(const staged_model&) const = default;
};

namespace detail {

inline bool valid_country(const std::string& cc) {
  return cc.size() == 2 && std::islower(static_cast<unsigned char>(cc[0])) && std::islower(static_cast<unsigned char>(cc[1]));
}

template <typename T>
T required(const json& j, const char* field, const std::string& where) {
  auto it = j.find(field);
  if (it == j.end())
    throw data_error(where + ": missing field '" + field + "'");
  try {
    return it->template get<T>();
  } catch (const json::exception& ex) {
    throw data_error(where + ": field '" + field + "': " + ex.what());
  }
}

// Every JSON value in a file: one document, an array of documents, or one
// document per line. `where` receives "path:line" for diagnostics.
template <typename Fn>
void for_each_record(const std::string& path, Fn&& fn) {
  const std::string text = read_file(path);
  const auto whole = json::parse(text, nullptr, false);
  if (!whole.is_discarded()) {
    if (whole.is_array()) {
      for (std::size_t i = 0; i < whole.size(); ++i)
        fn(whole[i], path + ":record " + std::to_string(i + 1));
    } else {
      fn(whole, path);
    }
    return;
  }
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos)
      continue;
    const std::string where = path + ":" + std::to_string(lineno);
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& ex) {
      throw data_error(where + ": parse error: " + ex.what());
    }
    fn(record, where);
  }
}

inline std::vector<std::string> input_files(const std::string& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path))
    throw data_error("no such file or directory: " + path);
  std::vector<std::string> files;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (!entry.is_regular_file())
        continue;
      const auto ext = entry.path().extension().string();
      if (ext == ".json" || ext == ".jsonl")
        files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  return files;
}

}  // namespace detail

inline consensus_snapshot parse_snapshot(const json& j, const std::string& where) {
  consensus_snapshot snap;
  snap.timestamp = detail::required<std::int64_t>(j, "timestamp", where);
  auto relays = j.find("relays");
  if (relays == j.end() || !relays->is_array())
    throw data_error(where + ": missing array 'relays'");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < relays->size(); ++i) {
    const json& rj = (*relays)[i];
    const std::string rwhere = where + " relay " + std::to_string(i);
    snapshot_relay r;
    r.fingerprint = detail::required<std::string>(rj, "fp", rwhere);
    r.ip = detail::required<std::string>(rj, "ip", rwhere);
    r.country = detail::required<std::string>(rj, "cc", rwhere);
    r.is_guard = detail::required<bool>(rj, "guard", rwhere);
    r.is_exit = detail::required<bool>(rj, "exit", rwhere);
    r.weight = detail::required<double>(rj, "weight", rwhere);
    if (!(r.weight >= 0.0))
      throw data_error(rwhere + ": negative weight");
    if (!detail::valid_country(r.country))
      throw data_error(rwhere + ": country '" + r.country + "' is not two lowercase letters");
    if (!seen.insert(r.fingerprint).second)
      throw data_error(where + ": duplicate fingerprint " + r.fingerprint + " in snapshot " + std::to_string(snap.timestamp));
    snap.relays.push_back(std::move(r));
  }
  return snap;
}

/// Reads every snapshot under `path` (a file or a directory of .json/.jsonl
/// files) and returns them sorted by timestamp.
inline std::vector<consensus_snapshot> load_snapshots(const std::string& path) {
  std::vector<consensus_snapshot> snaps;
  for (const auto& file : detail::input_files(path))
    detail::for_each_record(file, [&](const json& j, const std::string& where) { snaps.push_back(parse_snapshot(j, where)); });
  std::stable_sort(snaps.begin(), snaps.end(), [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  for (std::size_t i = 1; i < snaps.size(); ++i)
    if (snaps[i].timestamp == snaps[i - 1].timestamp)
      throw data_error("duplicate snapshot timestamp " + std::to_string(snaps[i].timestamp));
  return snaps;
}

inline std::vector<descriptor_record> load_descriptors(const std::string& path) {
  std::vector<descriptor_record> out;
  for (const auto& file : detail::input_files(path)) {
    detail::for_each_record(file, [&](const json& j, const std::string& where) {
      descriptor_record d;
      d.fingerprint = detail::required<std::string>(j, "fp", where);
      d.observed_bandwidth = detail::required<double>(j, "obs_bw", where);
      d.bandwidth_rate = detail::required<double>(j, "rate", where);
      d.bandwidth_burst = detail::required<double>(j, "burst", where);
      if (d.observed_bandwidth < 0 || d.bandwidth_rate < 0 || d.bandwidth_burst < 0)
        throw data_error(where + ": negative bandwidth value");
      out.push_back(std::move(d));
    });
  }
  return out;
}

inline std::vector<user_count_record> load_user_counts(const std::string& path) {
  std::vector<user_count_record> out;
  for (const auto& file : detail::input_files(path)) {
    detail::for_each_record(file, [&](const json& j, const std::string& where) {
      user_count_record u;
      u.date = detail::required<std::string>(j, "date", where);
      u.country = detail::required<std::string>(j, "cc", where);
      u.count = detail::required<std::int64_t>(j, "count", where);
      if (u.count < 0)
        throw data_error(where + ": negative user count");
      if (!detail::valid_country(u.country))
        throw data_error(where + ": country '" + u.country + "' is not two lowercase letters");
      out.push_back(std::move(u));
    });
  }
  return out;
}

struct relay_stats_result {
  std::vector<staged_relay> relays;  // sorted by fingerprint
  std::size_t dropped_without_descriptor = 0;
};

inline std::vector<double> normalized_weights(const consensus_snapshot& snap) {
  double total = 0.0;
  for (const auto& r : snap.relays)
    total += r.weight;
  std::vector<double> out(snap.relays.size(), 0.0);
  if (total > 0.0)
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = snap.relays[i].weight / total;
  return out;
}

inline relay_stats_result compute_relay_stats(const std::vector<consensus_snapshot>& snapshots,
                                              const std::vector<descriptor_record>& descriptors) {
  if (snapshots.empty())
    throw usage_error("compute_relay_stats needs at least one snapshot");

  struct accum {
    std::size_t present = 0, guard = 0, exit = 0;
    std::vector<double> weights;
    std::int64_t latest = std::numeric_limits<std::int64_t>::min();
    std::string ip, country;
  };
  std::map<std::string, accum> by_fp;
  for (const auto& snap : snapshots) {
    const auto norm = normalized_weights(snap);
    for (std::size_t i = 0; i < snap.relays.size(); ++i) {
      const auto& r = snap.relays[i];
      auto& a = by_fp[r.fingerprint];
      ++a.present;
      a.guard += r.is_guard ? 1 : 0;
      a.exit += r.is_exit ? 1 : 0;
      a.weights.push_back(norm[i]);
      if (snap.timestamp >= a.latest) {
        a.latest = snap.timestamp;
        a.ip = r.ip;
        a.country = r.country;
      }
    }
  }

  struct desc_accum {
    double max_observed = 0.0;
    std::vector<double> rates, bursts;
  };
  std::map<std::string, desc_accum> descs;
  for (const auto& d : descriptors) {
    auto& a = descs[d.fingerprint];
    a.max_observed = std::max(a.max_observed, d.observed_bandwidth);
    a.rates.push_back(d.bandwidth_rate);
    a.bursts.push_back(d.bandwidth_burst);
  }

  relay_stats_result result;
  const double n_snap = static_cast<double>(snapshots.size());
  for (auto& [fp, a] : by_fp) {
    auto d = descs.find(fp);
    if (d == descs.end()) {
      ++result.dropped_without_descriptor;
      continue;
    }
    staged_relay s;
    s.fingerprint = fp;
    s.ip = a.ip;
    s.country = a.country;
    s.r = static_cast<double>(a.present) / n_snap;
    s.g = static_cast<double>(a.guard) / static_cast<double>(a.present);
    s.e = static_cast<double>(a.exit) / static_cast<double>(a.present);
    s.w = median(std::move(a.weights));
    s.b = d->second.max_observed;
    s.rate = median(d->second.rates);
    s.burst = median(d->second.bursts);
    result.relays.push_back(std::move(s));
  }
  if (result.dropped_without_descriptor > 0)
    std::clog << "warning: dropped " << result.dropped_without_descriptor << " relay(s) without descriptors\n";
  return result;
}

struct network_stats {
  per_position<std::int64_t> counts{};
  per_position<double> weights{};
};

inline network_stats compute_network_stats(const std::vector<consensus_snapshot>& snapshots) {
  if (snapshots.empty())
    throw usage_error("compute_network_stats needs at least one snapshot");
  per_position<std::vector<double>> counts, weights;
  for (const auto& snap : snapshots) {
    per_position<double> c{}, w{};
    const auto norm = normalized_weights(snap);
    for (std::size_t i = 0; i < snap.relays.size(); ++i) {
      const auto p = static_cast<std::size_t>(classify_position(snap.relays[i].is_guard, snap.relays[i].is_exit));
      c[p] += 1.0;
      w[p] += norm[i];
    }
    for (std::size_t p = 0; p < 4; ++p) {
      counts[p].push_back(c[p]);
      weights[p].push_back(w[p]);
    }
  }
  network_stats out;
  for (std::size_t p = 0; p < 4; ++p) {
    out.counts[p] = round_half_up(median(counts[p]));
    out.weights[p] = median(weights[p]);
  }
  return out;
}

inline std::map<std::string, double> compute_user_probs(const std::vector<user_count_record>& records) {
  std::map<std::string, std::map<std::string, double>> by_day;
  std::set<std::string> countries;
  for (const auto& r : records) {
    by_day[r.date][r.country] += static_cast<double>(r.count);
    countries.insert(r.country);
  }
  if (by_day.empty())
    throw data_error("no user-count records");

  // A country absent on a day has probability 0 that day.
  std::map<std::string, std::vector<double>> daily;
  for (const auto& [day, counts] : by_day) {
    double total = 0.0;
    for (const auto& [cc, n] : counts)
      total += n;
    if (total <= 0.0)
      continue;
    for (const auto& cc : countries) {
      auto it = counts.find(cc);
      daily[cc].push_back(it == counts.end() ? 0.0 : it->second / total);
    }
  }
  if (daily.empty())
    throw data_error("user counts are zero on every day");

  std::map<std::string, double> probs;
  double total = 0.0;
  for (auto& [cc, ps] : daily) {
    const double m = median(std::move(ps));
    probs[cc] = m;
    total += m;
  }
  if (!(total > 0.0))
    throw data_error("median user probabilities are all zero");
  for (auto& [cc, p] : probs)
    p /= total;
  return probs;
}

inline staged_model stage(const std::vector<consensus_snapshot>& snapshots,
                          const std::vector<descriptor_record>& descriptors,
                          const std::vector<user_count_record>& users) {
  staged_model m;
  m.relays = compute_relay_stats(snapshots, descriptors).relays;
  const auto net = compute_network_stats(snapshots);
  m.counts = net.counts;
  m.weights = net.weights;
  m.user_probs = compute_user_probs(users);
  m.consensus_count = static_cast<std::int64_t>(snapshots.size());
  return m;
}

inline json staged_to_json(const staged_model& m) {
  json j;
  j["version"] = staged_schema_version;
  j["consensus_count"] = m.consensus_count;
  json relays = json::array();
  for (const auto& r : m.relays) {
    relays.push_back({{"fp", r.fingerprint},
                      {"ip", r.ip},
                      {"cc", r.country},
                      {"r", r.r},
                      {"g", r.g},
                      {"e", r.e},
                      {"w", r.w},
                      {"b", r.b},
                      {"lambda", r.rate},
                      {"beta", r.burst}});
  }
  j["relays"] = std::move(relays);
  json c = json::object(), w = json::object();
  for (auto p : all_positions) {
    c[position_name(p)] = m.counts[static_cast<std::size_t>(p)];
    w[position_name(p)] = m.weights[static_cast<std::size_t>(p)];
  }
  j["C"] = std::move(c);
  j["W"] = std::move(w);
  j["U"] = m.user_probs;
  return j;
}

inline staged_model staged_from_json(const json& j) {
  const std::string where = "staged model";
  const auto version = detail::required<std::string>(j, "version", where);
  if (version != staged_schema_version)
    throw data_error("staged model version mismatch: expected " + std::string(staged_schema_version) + ", found " + version);
  staged_model m;
  m.consensus_count = detail::required<std::int64_t>(j, "consensus_count", where);
  const auto relays = detail::required<json>(j, "relays", where);
  for (std::size_t i = 0; i < relays.size(); ++i) {
    const auto& rj = relays[i];
    const std::string rw = where + " relay " + std::to_string(i);
    staged_relay r;
    r.fingerprint = detail::required<std::string>(rj, "fp", rw);
    r.ip = detail::required<std::string>(rj, "ip", rw);
    r.country = detail::required<std::string>(rj, "cc", rw);
    r.r = detail::required<double>(rj, "r", rw);
    r.g = detail::required<double>(rj, "g", rw);
    r.e = detail::required<double>(rj, "e", rw);
    r.w = detail::required<double>(rj, "w", rw);
    r.b = detail::required<double>(rj, "b", rw);
    r.rate = detail::required<double>(rj, "lambda", rw);
    r.burst = detail::required<double>(rj, "beta", rw);
    for (double f : {r.r, r.g, r.e})
      if (!(f >= 0.0 && f <= 1.0))
        throw data_error(rw + ": fraction outside [0,1]");
    if (!(r.w >= 0.0))
      throw data_error(rw + ": negative weight");
    m.relays.push_back(std::move(r));
  }
  const auto c = detail::required<json>(j, "C", where);
  const auto w = detail::required<json>(j, "W", where);
  if (c.size() != 4 || w.size() != 4)
    throw data_error(where + ": C and W must have exactly the positions D, E, G, M");
  for (auto p : all_positions) {
    const auto idx = static_cast<std::size_t>(p);
    m.counts[idx] = detail::required<std::int64_t>(c, position_name(p), where + " C");
    m.weights[idx] = detail::required<double>(w, position_name(p), where + " W");
    if (m.counts[idx] < 0)
      throw data_error(where + ": negative position count");
  }
  m.user_probs = detail::required<std::map<std::string, double>>(j, "U", where);
  double total = 0.0;
  for (const auto& [cc, p] : m.user_probs) {
    if (p < 0.0)
      throw data_error(where + ": negative user probability for " + cc);
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw data_error(where + ": user probabilities sum to " + format_double(total));
  return m;
}

inline void write_staged(const staged_model& m, const std::string& path) {
  write_file(path, staged_to_json(m).dump(1) + "\n");
}

inline staged_model read_staged(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& ex) {
    throw data_error(path + ": parse error: " + ex.what());
  }
  return staged_from_json(j);
}

}  // namespace onionsim
