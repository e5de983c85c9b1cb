#pragma once

#include <cstdint>
#include <limits>
#include <queue>
#include <span>
#include <vector>

#include "onionsim/common.hpp"

namespace onionsim {

/// Max-min fair rates by progressive filling.
///
/// `capacities[e]` bounds the summed rate of the flows that list element e in
/// their path. All unfrozen flows rise at a common level; the element with the
/// smallest fair level (remaining capacity / unfrozen flows) saturates next and
/// freezes its flows at that level. Fair levels only grow as flows freeze, so
/// a lazy min-heap over elements finds each next bottleneck.
///
/// A flow with an empty path is unconstrained and receives +infinity.
class max_min_allocator {
public:
  std::vector<double> allocate(std::span<const double> capacities, std::span<const std::vector<std::uint32_t>> paths) {
    const std::size_t n_elem = capacities.size();
    rates_.assign(paths.size(), std::numeric_limits<double>::infinity());
    frozen_.assign(paths.size(), false);
    if (unfrozen_.size() < n_elem) {
      unfrozen_.resize(n_elem, 0);
      frozen_sum_.resize(n_elem, 0.0);
      members_.resize(n_elem);
      version_.resize(n_elem, 0);
    }
    touched_.clear();
    for (std::size_t f = 0; f < paths.size(); ++f) {
      for (auto e : paths[f]) {
        if (e >= n_elem)
          throw usage_error("flow path references an unknown element");
        if (unfrozen_[e]++ == 0 && members_[e].empty())
          touched_.push_back(e);
        members_[e].push_back(static_cast<std::uint32_t>(f));
      }
    }

    using entry = std::pair<double, std::pair<std::uint32_t, std::uint64_t>>;  // level, (element, version)
    std::priority_queue<entry, std::vector<entry>, std::greater<>> heap;
    auto level_of = [&](std::uint32_t e) { return std::max(0.0, capacities[e] - frozen_sum_[e]) / unfrozen_[e]; };
    for (auto e : touched_)
      heap.push({level_of(e), {e, version_[e]}});

    while (!heap.empty()) {
      const auto [level, id] = heap.top();
      heap.pop();
      const auto [e, ver] = id;
      if (ver != version_[e] || unfrozen_[e] == 0)
        continue;
      for (auto f : members_[e]) {
        if (frozen_[f])
          continue;
        frozen_[f] = true;
        rates_[f] = level;
        for (auto other : paths[f]) {
          --unfrozen_[other];
          frozen_sum_[other] += level;
          ++version_[other];
          if (other != e && unfrozen_[other] > 0)
            heap.push({level_of(other), {other, version_[other]}});
        }
      }
    }

    for (auto e : touched_) {
      unfrozen_[e] = 0;
      frozen_sum_[e] = 0.0;
      members_[e].clear();
    }
    return rates_;
  }

private:
  std::vector<double> rates_;
  std::vector<bool> frozen_;
  std::vector<std::uint32_t> unfrozen_;
  std::vector<double> frozen_sum_;
  std::vector<std::vector<std::uint32_t>> members_;
  std::vector<std::uint64_t> version_;
  std::vector<std::uint32_t> touched_;
};

inline std::vector<double> max_min_allocate(std::span<const double> capacities, std::span<const std::vector<std::uint32_t>> paths) {
  return max_min_allocator{}.allocate(capacities, paths);
}

}  // namespace onionsim
