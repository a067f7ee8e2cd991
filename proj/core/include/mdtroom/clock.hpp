#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>

namespace mdtroom {

/// Milliseconds since the Unix epoch.
using Clock = std::function<std::int64_t()>;

inline Clock system_clock() {
  return [] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
}

/// Deterministic clock for scripted runs: starts at `epoch_ms` and advances
/// `step_ms` per reading.
inline Clock fixed_step_clock(std::int64_t epoch_ms = 1704067200000, std::int64_t step_ms = 1000) {
  auto now = std::make_shared<std::int64_t>(epoch_ms);
  return [now, step_ms] {
    auto t = *now;
    *now += step_ms;
    return t;
  };
}

}  // namespace mdtroom
