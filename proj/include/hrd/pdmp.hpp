#pragma once

// Limit process v = (v_C, v_D): between jumps v_C solves
//   v' = Delta v + F(v, nu)
// on an M-point periodic grid (Strang splitting, spectral heat half-steps,
// pointwise RK4 reaction step); jumps arrive with hazard
//   Lambda = sum_l [ sum_{RDC_SLOW} lambda_r(int_{J_l} a^r v, nu_l) + sum_{RD} lambda_r(nu_l) ]
// and change only nu.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "hrd/errors.hpp"
#include "hrd/lattice.hpp"
#include "hrd/network.hpp"
#include "hrd/rng.hpp"
#include "hrd/trajectory.hpp"

namespace hrd {

struct PdmpSolver {
  int M = 256;
  double h = 1e-3;
  bool monitor_error = true;  // step-halving estimate once per output interval

  friend bool operator==(const PdmpSolver&, const PdmpSolver&) = default;
};

struct PdmpOptions {
  std::uint64_t max_jumps = 1'000'000;
  double wall_seconds = 0.0;  // 0: unlimited
};

struct PdmpState {
  double t = 0.0;
  Field field;
  std::vector<std::int64_t> nu;
  double hazard_accum = 0.0;
  double exp_threshold = 0.0;
};

/// One slow channel on one macrosite.
struct SlowChannel {
  int macro = 0;     // 0-based
  int reaction = 0;  // index into RDC_SLOW then RD (0-based)
  double rate = 0.0;
};

/// Immutable per-study data: solver grid, macrosite map and a-weights.
class PdmpModel {
 public:
  PdmpModel(const ReactionNetwork& net, int n_macro, PdmpSolver solver = {})
      : net_(&net), grid_(solver.M, n_macro), solver_(solver) {
    if (!(solver.h > 0.0)) throw Error(ErrorCode::validation_error, "pdmp_solver.h must be positive");
    for (const auto& r : net.slow_mixed()) a_.push_back(site_weights(*r.a_weight, grid_, WeightKind::a));
    macro_of_.resize(static_cast<std::size_t>(grid_.n_sites()));
    for (int j = 0; j < grid_.n_sites(); ++j) macro_of_[j] = grid_.macro_index(j);
    if (net.truncation() == nullptr) {
      // F(., d) as one polynomial in y per discrete value.
      for (int d = 0; d <= net.d_max(); ++d) {
        std::vector<double> c;
        auto add = [&](const Reaction& r) {
          for (const auto& t : r.rate.terms()) {
            if (c.size() <= static_cast<std::size_t>(t.conc_exp)) c.resize(static_cast<std::size_t>(t.conc_exp) + 1, 0.0);
            c[t.conc_exp] += r.gamma_c * t.coeff * detail::ipow(d, t.count_exp);
          }
        };
        for (const auto& r : net.fast_onsite()) add(r);
        for (const auto& r : net.fast_mixed()) add(r);
        if (c.empty()) c.push_back(0.0);
        debit_poly_.push_back(std::move(c));
      }
    }
  }

  /// F(y, d), from the compiled polynomial when available.
  double debit(double y, std::int64_t d) const {
    if (d >= 0 && static_cast<std::size_t>(d) < debit_poly_.size()) {
      const auto& c = debit_poly_[static_cast<std::size_t>(d)];
      double acc = c.back();
      for (std::size_t i = c.size() - 1; i-- > 0;) acc = acc * y + c[i];
      return acc;
    }
    return net_->debit(y, static_cast<double>(d));
  }

  const ReactionNetwork& network() const { return *net_; }
  const Grid& grid() const { return grid_; }
  const PdmpSolver& solver() const { return solver_; }
  int macro_of(int j) const { return macro_of_[j]; }
  int n_slow_mixed() const { return static_cast<int>(net_->slow_mixed().size()); }
  int n_slow() const { return n_slow_mixed() + static_cast<int>(net_->slow_discrete().size()); }

  const Reaction& slow_reaction(int r) const {
    return r < n_slow_mixed() ? net_->slow_mixed()[r] : net_->slow_discrete()[r - n_slow_mixed()];
  }

  /// Quadrature of int_{J_l} a^r v on the solver grid (cell-average weights).
  double macro_integral(int r, int l0, const Field& v) const {
    const int first = grid_.macro_first(l0);
    double s = 0.0;
    for (int j = first; j < first + grid_.sites_per_macro(); ++j) s += a_[r][j] * v[j];
    return s;
  }

  double channel_rate(int r, int l0, const Field& v, const std::vector<std::int64_t>& nu) const {
    const auto d = static_cast<double>(nu[l0]);
    if (r < n_slow_mixed()) return net_->rate(net_->slow_mixed()[r], std::max(0.0, macro_integral(r, l0, v)), d);
    return net_->rate(net_->slow_discrete()[r - n_slow_mixed()], 0.0, d);
  }

  double hazard(const Field& v, const std::vector<std::int64_t>& nu) const {
    double s = 0.0;
    for (int l = 0; l < grid_.n_macro(); ++l)
      for (int r = 0; r < n_slow(); ++r) s += channel_rate(r, l, v, nu);
    return s;
  }

  std::vector<SlowChannel> channels(const Field& v, const std::vector<std::int64_t>& nu) const {
    std::vector<SlowChannel> out;
    for (int l = 0; l < grid_.n_macro(); ++l)
      for (int r = 0; r < n_slow(); ++r) out.push_back({l, r, channel_rate(r, l, v, nu)});
    return out;
  }

 private:
  const ReactionNetwork* net_;
  Grid grid_;
  PdmpSolver solver_;
  std::vector<std::vector<double>> a_;
  std::vector<int> macro_of_;
  std::vector<std::vector<double>> debit_poly_;
};

inline double hazard(const Field& v, const std::vector<std::int64_t>& nu, const PdmpModel& model) {
  return model.hazard(v, nu);
}

struct Transition {
  int macro = 0;     // 1-based
  int reaction = 0;  // 1-based within its class
  EventKind kind = EventKind::slow_pure;
  int gamma_d = 0;
  std::vector<std::int64_t> nu_after;
};

/// Draws (l, r) with probability lambda_r / Lambda; the field is untouched.
inline Transition sample_transition(const Field& v, const std::vector<std::int64_t>& nu, const PdmpModel& model,
                                    Rng& rng) {
  const auto chans = model.channels(v, nu);
  double total = 0.0;
  for (const auto& c : chans) total += c.rate;
  if (!(total > 0.0)) throw Error(ErrorCode::zero_hazard, "transition requested with zero hazard");
  const double u = rng.uniform() * total;
  double acc = 0.0;
  std::size_t pick = chans.size();
  for (std::size_t i = 0; i < chans.size(); ++i) {
    acc += chans[i].rate;
    if (u < acc && chans[i].rate > 0.0) {
      pick = i;
      break;
    }
  }
  if (pick == chans.size()) {
    for (std::size_t i = chans.size(); i-- > 0;)
      if (chans[i].rate > 0.0) {
        pick = i;
        break;
      }
  }
  const auto& c = chans[pick];
  const auto& rx = model.slow_reaction(c.reaction);
  Transition t;
  t.macro = c.macro + 1;
  const bool mixed = c.reaction < model.n_slow_mixed();
  t.kind = mixed ? EventKind::slow_mixed : EventKind::slow_pure;
  t.reaction = (mixed ? c.reaction : c.reaction - model.n_slow_mixed()) + 1;
  t.gamma_d = rx.gamma_d;
  t.nu_after = nu;
  t.nu_after[c.macro] += rx.gamma_d;
  return t;
}

/// Per-replicate worker: owns the spectral buffers (not shareable).
class PdmpEngine {
 public:
  explicit PdmpEngine(const PdmpModel& model) : model_(&model), heat_(model.grid().n_sites()) {}

  const PdmpModel& model() const { return *model_; }

  PdmpState make_state(Field field, std::vector<std::int64_t> nu, Rng& rng, double t0 = 0.0) const {
    if (field.size() != static_cast<std::size_t>(model_->grid().n_sites())) {
      throw Error(ErrorCode::invalid_grid, "initial field is not on the solver grid");
    }
    if (nu.size() != static_cast<std::size_t>(model_->grid().n_macro())) {
      throw Error(ErrorCode::invalid_grid, "initial discrete vector must have k entries");
    }
    for (double x : field)
      if (!(x >= 0.0)) throw Error(ErrorCode::negative_initial, "initial field is negative");
    for (auto d : nu)
      if (d < 0) throw Error(ErrorCode::negative_initial, "initial discrete count negative");
    return {t0, std::move(field), std::move(nu), 0.0, rng.exponential()};
  }

  /// One Strang step of length dt.
  void flow_step(Field& v, const std::vector<std::int64_t>& nu, double dt) const {
    heat_.apply_in_place(v, 0.5 * dt);
    const PdmpModel& m = *model_;
    for (std::size_t j = 0; j < v.size(); ++j) {
      const auto d = nu[m.macro_of(static_cast<int>(j))];
      const double y = v[j];
      const double k1 = m.debit(y, d);
      const double k2 = m.debit(y + 0.5 * dt * k1, d);
      const double k3 = m.debit(y + 0.5 * dt * k2, d);
      const double k4 = m.debit(y + dt * k3, d);
      v[j] = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    heat_.apply_in_place(v, 0.5 * dt);
    for (double x : v) {
      if (!std::isfinite(x)) throw Error(ErrorCode::step_rejected, "field became non-finite");
    }
  }

  Field flow(Field v, const std::vector<std::int64_t>& nu, double dt) const {
    flow_step(v, nu, dt);
    return v;
  }

  /// Sup-norm gap between one step of dt and two steps of dt/2, and the
  /// size of the step itself.
  std::pair<double, double> step_halving(const Field& v, const std::vector<std::int64_t>& nu, double dt) const {
    const Field one = flow(v, nu, dt);
    Field two = flow(v, nu, 0.5 * dt);
    flow_step(two, nu, 0.5 * dt);
    double gap = 0.0, move = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      gap = std::max(gap, std::abs(one[j] - two[j]));
      move = std::max(move, std::abs(one[j] - v[j]));
    }
    return {gap, move};
  }

  /// Flows to min(T*, horizon). Returns true when the accumulated hazard
  /// reached the Exp(1) threshold first (state.t = T*).
  bool advance_to_jump(PdmpState& s, double horizon) {
    if (!(s.hazard_accum < s.exp_threshold)) {
      throw Error(ErrorCode::validation_error, "hazard already past the jump threshold");
    }
    const double h = model_->solver().h;
    double lam = model_->hazard(s.field, s.nu);
    while (s.t < horizon) {
      double next = h * std::floor(s.t / h);
      while (next <= s.t) next += h;
      next = std::min(next, horizon);
      const double dt = next - s.t;
      Field v = flow(s.field, s.nu, dt);
      const double lam_next = model_->hazard(v, s.nu);
      const double inc = 0.5 * (lam + lam_next) * dt;
      if (s.hazard_accum + inc >= s.exp_threshold) {
        locate_crossing(s, lam, dt);
        return true;
      }
      s.hazard_accum += inc;
      note_field(v);
      s.field = std::move(v);
      s.t = next;
      lam = lam_next;
    }
    return false;
  }

  std::uint64_t negative_steps() const { return negative_steps_; }
  double min_field() const { return min_field_; }

 private:
  // Bisection on the sub-step for accum + trapezoid(0, s) = threshold.
  void locate_crossing(PdmpState& s, double lam0, double dt) {
    double lo = 0.0, hi = dt;
    Field at_hi = flow(s.field, s.nu, dt);
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (!(mid > lo && mid < hi)) break;
      Field v = flow(s.field, s.nu, mid);
      const double lam_mid = model_->hazard(v, s.nu);
      const double acc = s.hazard_accum + 0.5 * (lam0 + lam_mid) * mid;
      const double tol = 1e-8 * std::max(1.0, lam_mid);
      if (acc >= s.exp_threshold) {
        hi = mid;
        at_hi = std::move(v);
      } else {
        lo = mid;
      }
      if (std::abs(acc - s.exp_threshold) <= tol && acc >= s.exp_threshold) break;
    }
    note_field(at_hi);
    s.field = std::move(at_hi);
    s.t += hi;
    s.hazard_accum = s.exp_threshold;
  }

  void note_field(const Field& v) {
    double lo = std::numeric_limits<double>::infinity();
    for (double x : v) lo = std::min(lo, x);
    min_field_ = std::min(min_field_, lo);
    if (lo < 0.0) ++negative_steps_;
  }

  const PdmpModel* model_;
  HeatSemigroup heat_;
  std::uint64_t negative_steps_ = 0;
  double min_field_ = std::numeric_limits<double>::infinity();
};

/// Continues `s` to `horizon`, recording snapshots on the output grid
/// (relative to the state's current time) and every jump.
inline PdmpTrajectory simulate_pdmp(PdmpEngine& eng, PdmpState& s, double horizon, double dt_out, Rng& rng,
                                    PdmpOptions opt = {}) {
  if (!(horizon > 0.0)) throw Error(ErrorCode::validation_error, "horizon must be positive");
  PdmpTrajectory tr;
  const double t0 = s.t;
  const auto grid = output_grid(horizon, dt_out);
  auto snapshot = [&] {
    tr.times.push_back(s.t);
    tr.fields.push_back(s.field);
    tr.discrete.push_back(s.nu);
  };
  snapshot();
  const auto& model = eng.model();
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t i = 1; i < grid.size() && !tr.truncated; ++i) {
    const double target = t0 + grid[i];
    if (model.solver().monitor_error && s.t < target) {
      const double dt = std::min(model.solver().h, target - s.t);
      const auto [gap, move] = eng.step_halving(s.field, s.nu, dt);
      tr.step_error_estimate = std::max(tr.step_error_estimate, gap);
      if (gap > 0.1 * move && gap > 1e-12) ++tr.step_error_flags;
    }
    while (eng.advance_to_jump(s, target)) {
      if (tr.jumps.size() >= opt.max_jumps) {
        tr.truncated = true;
        tr.truncation_reason = "jump budget exhausted";
        break;
      }
      auto jump = sample_transition(s.field, s.nu, model, rng);
      tr.jumps.push_back({s.t, jump.kind, jump.macro, jump.reaction, jump.gamma_d, s.nu, jump.nu_after});
      s.nu = std::move(jump.nu_after);
      s.hazard_accum = 0.0;
      s.exp_threshold = rng.exponential();
      if (opt.wall_seconds > 0.0) {
        const std::chrono::duration<double> el = std::chrono::steady_clock::now() - start;
        if (el.count() > opt.wall_seconds) {
          tr.truncated = true;
          tr.truncation_reason = "wall-clock budget exhausted";
          break;
        }
      }
    }
    if (tr.truncated) break;
    snapshot();
  }
  tr.min_field = eng.min_field();
  tr.negative_steps = eng.negative_steps();
  return tr;
}

}  // namespace hrd
