#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "hrd/lattice.hpp"

namespace hrd {

enum class EventKind { none, extinct, fast_onsite, fast_mixed, slow_mixed, slow_pure, diff_left, diff_right };

constexpr std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::none: return "None";
    case EventKind::extinct: return "Extinct";
    case EventKind::fast_onsite: return "FastOnsite";
    case EventKind::fast_mixed: return "FastMixed";
    case EventKind::slow_mixed: return "SlowMixed";
    case EventKind::slow_pure: return "SlowPure";
    case EventKind::diff_left: return "DiffLeft";
    case EventKind::diff_right: return "DiffRight";
  }
  return "?";
}

constexpr bool is_discrete_jump(EventKind k) { return k == EventKind::slow_mixed || k == EventKind::slow_pure; }

/// Indices are 1-based in records (site j, macrosite l, reaction r within
/// its class); 0 means "not applicable".
struct Event {
  EventKind kind = EventKind::none;
  double time = 0.0;
  int site = 0;
  int macro = 0;
  int reaction = 0;
  int gamma_d = 0;
};

struct JumpRecord {
  double t = 0.0;
  EventKind kind = EventKind::none;
  int macro = 0;
  int reaction = 0;
  int gamma_d = 0;
  std::vector<std::int64_t> nu_before;  // filled by the PDMP engine
  std::vector<std::int64_t> nu_after;
};

/// Output times {0, dt, 2dt, ..., T}; T is appended when it is not on the grid.
inline std::vector<double> output_grid(double horizon, double dt_out) {
  std::vector<double> out;
  if (!(dt_out > 0.0)) {
    out = {0.0, horizon};
    return out;
  }
  const double ratio = horizon / dt_out;
  const auto whole = static_cast<long>(std::floor(ratio + 1e-9));
  for (long i = 0; i <= whole; ++i) out.push_back(std::min(horizon, static_cast<double>(i) * dt_out));
  if (std::abs(ratio - static_cast<double>(whole)) > 1e-9) out.push_back(horizon);
  else out.back() = horizon;
  return out;
}

/// Snapshots of the lattice process: counts X_j (u_j = X_j / mu) and the
/// macrosite counts, plus the log of discrete jumps.
struct Trajectory {
  double mu = 1.0;
  std::vector<double> times;
  std::vector<std::vector<std::int64_t>> counts;
  std::vector<std::vector<std::int64_t>> discrete;
  std::vector<JumpRecord> jumps;
  std::uint64_t events = 0;
  bool truncated = false;
  std::string truncation_reason;

  Field concentration(std::size_t snapshot) const {
    const auto& x = counts[snapshot];
    Field f(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) f[j] = static_cast<double>(x[j]) / mu;
    return f;
  }
};

struct PdmpTrajectory {
  std::vector<double> times;
  std::vector<Field> fields;
  std::vector<std::vector<std::int64_t>> discrete;
  std::vector<JumpRecord> jumps;
  bool truncated = false;
  std::string truncation_reason;
  // Diagnostics.
  double min_field = std::numeric_limits<double>::infinity();
  std::uint64_t negative_steps = 0;  // flow steps that left the nonnegative cone
  double step_error_estimate = 0.0;  // max step-halving discrepancy (sup norm)
  std::uint64_t step_error_flags = 0;  // output intervals where it exceeded 10% of the step
};

}  // namespace hrd
