#pragma once

// Exact simulation of the lattice jump process u^N = (u_C^N, u_D^N).
//
// Channels per microsite j: each fast reaction (RC and S1) at rate
// mu lambda_r(u_j[, u_D at l_j]) and two diffusion hops at rate N^2 X_j each.
// Channels per macrosite l: each RDC_SLOW reaction at rate
// lambda_r(sum_{j in J_l} a_{j,N} u_j, u_D,l), optionally multiplied by the
// positivity indicator, and each RD reaction at rate lambda_r(u_D,l).
//
// The index is three-level: diffusion is sampled from an exact integer
// Fenwick tree over X_j, fast reactions from a Fenwick tree over per-site
// totals, slow reactions from a Fenwick tree over (l, r).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hrd/errors.hpp"
#include "hrd/fenwick.hpp"
#include "hrd/lattice.hpp"
#include "hrd/network.hpp"
#include "hrd/rng.hpp"
#include "hrd/trajectory.hpp"

namespace hrd {

struct SsaOptions {
  bool positivity_guard = true;
  std::uint64_t max_events = 10'000'000'000ULL;
  double wall_seconds = 0.0;  // 0: unlimited
  std::uint64_t rebuild_interval = std::uint64_t{1} << 20;
};

/// Scaled lattice state. Concentrations are stored as integer molecule
/// counts; u_j = X_j / mu is derived.
struct MicroState {
  double t = 0.0;
  double mu = 1.0;
  std::vector<std::int64_t> counts;    // X_j, j = 0..N-1
  std::vector<std::int64_t> discrete;  // u_D per macrosite
  std::vector<double> macro_avgs;      // [l * n_slow_mixed + r]

  double concentration(std::size_t j) const { return static_cast<double>(counts[j]) / mu; }

  Field concentrations() const {
    Field f(counts.size());
    for (std::size_t j = 0; j < counts.size(); ++j) f[j] = concentration(j);
    return f;
  }
};

/// Precomputed model data for one (network, N, k, mu): weights, C-jump
/// quanta of the slow mixed reactions and a lookup table of per-site fast
/// rates. Immutable and shareable across threads.
class SsaModel {
 public:
  SsaModel(const ReactionNetwork& net, Grid grid, double mu, bool positivity_guard = true)
      : net_(&net), grid_(grid), mu_(mu), guard_(positivity_guard) {
    if (!(mu > 0.0)) throw Error(ErrorCode::validation_error, "mu must be positive");
    for (const auto& r : net.fast_onsite()) fast_.push_back({&r, false});
    for (const auto& r : net.fast_mixed()) fast_.push_back({&r, true});
    for (const auto& r : net.slow_mixed()) {
      a_.push_back(site_weights(*r.a_weight, grid_, WeightKind::a));
      const auto b = site_weights(*r.b_weight, grid_, WeightKind::b);
      std::vector<std::int64_t> q(b.size());
      for (std::size_t j = 0; j < b.size(); ++j) q[j] = std::llround(r.gamma_c * b[j]);
      quanta_.push_back(std::move(q));
    }
    build_fast_table();
  }

  const ReactionNetwork& network() const { return *net_; }
  const Grid& grid() const { return grid_; }
  double mu() const { return mu_; }
  bool positivity_guard() const { return guard_; }
  int n_sites() const { return grid_.n_sites(); }
  int n_macro() const { return grid_.n_macro(); }

  int n_fast() const { return static_cast<int>(fast_.size()); }
  int n_slow_mixed() const { return static_cast<int>(net_->slow_mixed().size()); }
  int n_slow_discrete() const { return static_cast<int>(net_->slow_discrete().size()); }
  int n_slow() const { return n_slow_mixed() + n_slow_discrete(); }

  const Reaction& fast_reaction(int r) const { return *fast_[r].reaction; }
  bool fast_is_mixed(int r) const { return fast_[r].mixed; }
  const Reaction& slow_reaction(int r) const {
    return r < n_slow_mixed() ? net_->slow_mixed()[r] : net_->slow_discrete()[r - n_slow_mixed()];
  }

  /// a^r_{j,N} over all N sites.
  const std::vector<double>& a_weights(int r) const { return a_[r]; }
  /// round(gamma_c b^r_{j,N}) molecules added to site j by a slow mixed event.
  const std::vector<std::int64_t>& quanta(int r) const { return quanta_[r]; }

  /// mu lambda_r(X / mu, d) for fast reaction r.
  double fast_rate(int r, std::int64_t x, std::int64_t d) const {
    const auto& fr = fast_[r];
    const double y2 = fr.mixed ? static_cast<double>(d) : 0.0;
    return mu_ * net_->rate(*fr.reaction, static_cast<double>(x) / mu_, y2);
  }

  /// Per-reaction fast rates at (X, d) followed by their sum (n_fast() + 1
  /// entries), or nullptr when (X, d) is outside the precomputed table.
  const double* table_row(std::int64_t x, std::int64_t d) const {
    if (x < 0 || x > table_x_max_ || d < 0 || d > table_d_max_) return nullptr;
    const double* row = &table_[static_cast<std::size_t>((d * (table_x_max_ + 1) + x) * (n_fast() + 1))];
    return std::isnan(row[n_fast()]) ? nullptr : row;
  }

  void fill_fast_row(std::int64_t x, std::int64_t d, double* row) const {
    double total = 0.0;
    for (int r = 0; r < n_fast(); ++r) {
      row[r] = fast_rate(r, x, d);
      total += row[r];
    }
    row[n_fast()] = total;
  }

  /// Rate of slow reaction r (mixed first, then discrete) on a macrosite.
  double slow_rate(int r, double avg, std::int64_t d, bool guard_ok) const {
    if (r < n_slow_mixed()) {
      if (guard_ && !guard_ok) return 0.0;
      return net_->rate(net_->slow_mixed()[r], std::max(0.0, avg), static_cast<double>(d));
    }
    return net_->rate(net_->slow_discrete()[r - n_slow_mixed()], 0.0, static_cast<double>(d));
  }

  /// From-scratch sum_{j in J_l} a^r_{j,N} X_j / mu.
  double macro_avg(int r, int l0, std::span<const std::int64_t> counts) const {
    const int first = grid_.macro_first(l0);
    double s = 0.0;
    for (int j = first; j < first + grid_.sites_per_macro(); ++j) s += a_[r][j] * static_cast<double>(counts[j]);
    return s / mu_;
  }

  /// Positivity indicator: 1 iff every site of J_l stays nonnegative after
  /// the C-jump of slow mixed reaction r.
  bool guard_ok(int r, int l0, std::span<const std::int64_t> counts) const {
    const int first = grid_.macro_first(l0);
    for (int j = first; j < first + grid_.sites_per_macro(); ++j)
      if (counts[j] + quanta_[r][j] < 0) return false;
    return true;
  }

 private:
  struct FastEntry {
    const Reaction* reaction;
    bool mixed;
  };

  void build_fast_table() {
    const double x_hi = std::ceil(mu_ * net_->u_max());
    table_d_max_ = net_->fast_mixed().empty() ? 0 : net_->d_max();
    const double entries = (x_hi + 1) * (table_d_max_ + 1) * (n_fast() + 1);
    if (n_fast() == 0 || entries > 8e6) {
      table_x_max_ = -1;
      return;
    }
    table_x_max_ = static_cast<std::int64_t>(x_hi);
    table_.assign(static_cast<std::size_t>(entries), 0.0);
    for (std::int64_t d = 0; d <= table_d_max_; ++d) {
      for (std::int64_t x = 0; x <= table_x_max_; ++x) {
        double* row = &table_[static_cast<std::size_t>((d * (table_x_max_ + 1) + x) * (n_fast() + 1))];
        try {
          fill_fast_row(x, d, row);
        } catch (const Error&) {
          row[n_fast()] = std::numeric_limits<double>::quiet_NaN();  // recomputed (and rethrown) on use
        }
      }
    }
    if (net_->fast_mixed().empty()) table_d_max_ = std::numeric_limits<std::int64_t>::max();
  }

  const ReactionNetwork* net_;
  Grid grid_;
  double mu_;
  bool guard_;
  std::vector<FastEntry> fast_;
  std::vector<std::vector<double>> a_;
  std::vector<std::vector<std::int64_t>> quanta_;
  std::vector<double> table_;
  std::int64_t table_x_max_ = -1;
  std::int64_t table_d_max_ = 0;
};

/// X_j = round(mu (P_N f0)_j) and u_D = d0.
inline MicroState init_state(const Field& projected_f0, const std::vector<std::int64_t>& d0, const SsaModel& model) {
  const Grid& g = model.grid();
  if (projected_f0.size() != static_cast<std::size_t>(g.n_sites())) {
    throw Error(ErrorCode::invalid_grid, "initial profile has the wrong number of sites");
  }
  if (d0.size() != static_cast<std::size_t>(g.n_macro())) {
    throw Error(ErrorCode::invalid_grid, "initial discrete vector must have k entries");
  }
  MicroState s;
  s.mu = model.mu();
  s.counts.resize(projected_f0.size());
  for (std::size_t j = 0; j < projected_f0.size(); ++j) {
    if (!(projected_f0[j] >= 0.0)) {
      throw Error(ErrorCode::negative_initial, "initial concentration negative at site " + std::to_string(j + 1));
    }
    s.counts[j] = std::llround(model.mu() * projected_f0[j]);
  }
  for (auto d : d0) {
    if (d < 0) throw Error(ErrorCode::negative_initial, "initial discrete count negative");
  }
  s.discrete = d0;
  s.macro_avgs.assign(static_cast<std::size_t>(g.n_macro() * model.n_slow_mixed()), 0.0);
  for (int l = 0; l < g.n_macro(); ++l)
    for (int r = 0; r < model.n_slow_mixed(); ++r)
      s.macro_avgs[l * model.n_slow_mixed() + r] = model.macro_avg(r, l, s.counts);
  return s;
}

inline MicroState init_state(const std::function<double(double)>& f0, const std::vector<std::int64_t>& d0,
                             const SsaModel& model) {
  return init_state(project(f0, model.grid()), d0, model);
}

/// Positivity indicator for slow mixed reaction r (0-based) on macrosite l (1-based).
inline int positivity_guard(const MicroState& s, const SsaModel& model, int r, int l) {
  return model.guard_ok(r, l - 1, s.counts) ? 1 : 0;
}

namespace detail {

/// Site of every molecule, so a uniformly chosen molecule yields site j with
/// probability X_j / sum X in O(1). Slots are dense in [0, size).
class MoleculeTable {
 public:
  /// Without membership lists only hops are supported (no add or remove).
  void assign(std::span<const std::int64_t> counts, bool membership = true) {
    site_.clear();
    pos_.clear();
    members_.assign(counts.size(), {});
    membership_ = true;
    for (std::size_t j = 0; j < counts.size(); ++j)
      for (std::int64_t i = 0; i < counts[j]; ++i) add(static_cast<int>(j));
    membership_ = membership;
    if (!membership_) {
      members_.clear();
      pos_.clear();
    }
  }

  std::int64_t size() const { return static_cast<std::int64_t>(site_.size()); }
  int site(std::int64_t slot) const { return site_[static_cast<std::size_t>(slot)]; }

  void add(int j) {
    const auto slot = static_cast<int>(site_.size());
    site_.push_back(j);
    pos_.push_back(static_cast<int>(members_[j].size()));
    members_[j].push_back(slot);
  }

  void remove(int j) {
    const int slot = members_[j].back();
    members_[j].pop_back();
    const int last = static_cast<int>(site_.size()) - 1;
    if (slot != last) {
      const int owner = site_[last];
      site_[slot] = owner;
      pos_[slot] = pos_[last];
      members_[owner][pos_[slot]] = slot;
    }
    site_.pop_back();
    pos_.pop_back();
  }

  void move(std::int64_t slot64, int to) {
    const auto slot = static_cast<int>(slot64);
    if (!membership_) {
      site_[slot] = to;
      return;
    }
    const int from = site_[slot];
    auto& src = members_[from];
    const int moved = src.back();
    src[pos_[slot]] = moved;
    pos_[moved] = pos_[slot];
    src.pop_back();
    site_[slot] = to;
    pos_[slot] = static_cast<int>(members_[to].size());
    members_[to].push_back(slot);
  }

 private:
  std::vector<int> site_;
  std::vector<int> pos_;
  std::vector<std::vector<int>> members_;
  bool membership_ = true;
};

}  // namespace detail

class SsaEngine {
 public:
  struct Proposal {
    double time;
    bool fires;
  };

  SsaEngine(const SsaModel& model, MicroState init, SsaOptions opt = {})
      : model_(&model), opt_(opt), s_(std::move(init)) {
    if (opt_.positivity_guard != model.positivity_guard()) {
      throw Error(ErrorCode::validation_error, "engine and model disagree on the positivity guard");
    }
    const int n = model.n_sites();
    n2_ = static_cast<double>(n) * n;
    inv_n2_ = 1.0 / n2_;
    nf_ = model.n_fast();
    nsm_ = model.n_slow_mixed();
    ns_ = model.n_slow();
    hops_only_ = nf_ == 0 && nsm_ == 0;
    macro_of_.resize(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) macro_of_[j] = model.grid().macro_index(j);
    fast_row_.assign(static_cast<std::size_t>(n), nullptr);
    overflow_.assign(static_cast<std::size_t>(n * (nf_ + 1)), 0.0);
    site_fast_.assign(static_cast<std::size_t>(n), 0.0);
    block_fast_.assign(static_cast<std::size_t>((n + kBlock - 1) / kBlock), 0.0);
    slow_tree_.resize(static_cast<std::size_t>(model.n_macro() * ns_));
    deficits_.assign(static_cast<std::size_t>(model.n_macro() * nsm_), 0);
    molecules_.assign(s_.counts, !hops_only_);
    rebuild();
    until_rebuild_ = opt_.rebuild_interval;
  }

  // Row pointers may refer into this engine's own buffers.
  SsaEngine(const SsaEngine&) = delete;
  SsaEngine& operator=(const SsaEngine&) = delete;
  SsaEngine(SsaEngine&&) = default;
  SsaEngine& operator=(SsaEngine&&) = default;

  const MicroState& state() const { return s_; }
  const SsaModel& model() const { return *model_; }
  const SsaOptions& options() const { return opt_; }
  std::uint64_t events() const { return events_; }

  double diffusion_total() const { return 2.0 * n2_ * static_cast<double>(xsum_); }
  double total_propensity() const { return diffusion_total() + fast_total_ + slow_tree_.total(); }
  std::int64_t molecule_total() const { return xsum_; }

  /// Recomputes every cache (macro averages, guard counts, trees) from the state.
  void rebuild() {
    const int n = model_->n_sites();
    xsum_ = 0;
    for (auto v : s_.counts) xsum_ += v;
    for (int j = 0; j < n; ++j) refresh_fast(j);
    resum_fast();
    for (int l = 0; l < model_->n_macro(); ++l) {
      for (int r = 0; r < nsm_; ++r) {
        s_.macro_avgs[l * nsm_ + r] = model_->macro_avg(r, l, s_.counts);
        int bad = 0;
        const int first = model_->grid().macro_first(l);
        for (int j = first; j < first + model_->grid().sites_per_macro(); ++j)
          if (s_.counts[j] + model_->quanta(r)[j] < 0) ++bad;
        deficits_[l * nsm_ + r] = bad;
      }
      refresh_slow(l);
    }
    slow_tree_.rebuild();
  }

  /// Draws the next event time; reports no event if it falls after t_limit.
  Proposal propose(Rng& rng, double t_limit = std::numeric_limits<double>::infinity()) {
    const double total = total_propensity();
    if (!(total > 0.0)) return {t_limit, false};
    const double t = s_.t + rng.exponential() / total;
    if (t > t_limit) return {t_limit, false};
    return {t, true};
  }

  /// Moves the clock without an event (memoryless: valid after a rejected proposal).
  void advance_to(double t) { s_.t = t; }

  /// Selects a channel with probability rate / R and applies it at `time`.
  Event fire(Rng& rng, double time) {
    s_.t = time;
    const double r_diff = diffusion_total();
    const double r_fast = fast_total_;
    const double r_slow = slow_tree_.total();
    double u = rng.uniform() * (r_diff + r_fast + r_slow);
    Event e;
    e.time = time;
    if (u < r_diff || (r_fast <= 0.0 && r_slow <= 0.0)) {
      auto idx = static_cast<std::int64_t>(u * inv_n2_);
      idx = std::clamp<std::int64_t>(idx, 0, 2 * xsum_ - 1);
      const std::int64_t slot = idx >> 1;
      const int j = molecules_.site(slot);
      const bool left = (idx & 1) == 0;
      const int n = model_->n_sites();
      const int dest = left ? (j == 0 ? n - 1 : j - 1) : (j + 1 == n ? 0 : j + 1);
      molecules_.move(slot, dest);
      if (hops_only_) {
        --s_.counts[j];
        ++s_.counts[dest];
      } else {
        move_molecule(j, dest);
      }
      e.kind = left ? EventKind::diff_left : EventKind::diff_right;
      e.site = j + 1;
    } else {
      u -= r_diff;
      if (u < r_fast || r_slow <= 0.0) {
        double residual = u;
        const int j = find_fast_site(residual);
        const double* rates = fast_row_[j];
        int r = 0;
        for (double acc = 0.0; r < nf_; ++r) {
          acc += rates[r];
          if (residual < acc && rates[r] > 0.0) break;
        }
        if (r == nf_) r = last_positive(rates, nf_);
        const auto& rx = model_->fast_reaction(r);
        if (s_.counts[j] + rx.gamma_c < 0) {
          throw Error(ErrorCode::negativity_breach, "fast reaction '" + rx.id + "' at site " + std::to_string(j + 1));
        }
        change_site(j, rx.gamma_c);
        const int l = macro_of_[j];
        if (nsm_ > 0) refresh_slow(l);
        e.kind = model_->fast_is_mixed(r) ? EventKind::fast_mixed : EventKind::fast_onsite;
        e.site = j + 1;
        e.macro = l + 1;
        e.reaction = model_->fast_is_mixed(r) ? r - static_cast<int>(model_->network().fast_onsite().size()) + 1 : r + 1;
      } else {
        const double residual = std::min(u - r_fast, std::nextafter(r_slow, 0.0));
        const auto idx = static_cast<int>(slow_tree_.find(residual));
        const int l = idx / ns_, r = idx % ns_;
        apply_slow(l, r);
        e.kind = r < nsm_ ? EventKind::slow_mixed : EventKind::slow_pure;
        e.macro = l + 1;
        e.reaction = (r < nsm_ ? r : r - nsm_) + 1;
        e.gamma_d = model_->slow_reaction(r).gamma_d;
      }
    }
    ++events_;
    if (--until_rebuild_ == 0) {
      rebuild();
      until_rebuild_ = opt_.rebuild_interval;
    }
    return e;
  }

  /// One Gillespie step. Returns kind none (clock moved to t_limit) when the
  /// next event falls beyond t_limit, extinct when the total rate is zero.
  Event step(Rng& rng, double t_limit = std::numeric_limits<double>::infinity()) {
    if (!(total_propensity() > 0.0)) {
      if (std::isfinite(t_limit)) s_.t = t_limit;
      return {EventKind::extinct, s_.t};
    }
    const auto p = propose(rng, t_limit);
    if (!p.fires) {
      advance_to(p.time);
      return {EventKind::none, p.time};
    }
    return fire(rng, p.time);
  }

  /// Channel rates in canonical order as held by the index: per site
  /// (fast..., left, right), then per macrosite (slow mixed..., slow discrete...).
  std::vector<double> propensities() const {
    std::vector<double> out;
    const int n = model_->n_sites();
    for (int j = 0; j < n; ++j) {
      for (int r = 0; r < nf_; ++r) out.push_back(fast_row_[j][r]);
      const double hop = n2_ * static_cast<double>(s_.counts[j]);
      out.push_back(hop);
      out.push_back(hop);
    }
    for (int i = 0; i < model_->n_macro() * ns_; ++i) out.push_back(slow_tree_.leaf(static_cast<std::size_t>(i)));
    return out;
  }

  /// Same vector, evaluated from the raw state without any cache.
  std::vector<double> recompute_propensities() const {
    std::vector<double> out;
    const int n = model_->n_sites();
    for (int j = 0; j < n; ++j) {
      const auto d = s_.discrete[macro_of_[j]];
      for (int r = 0; r < nf_; ++r) out.push_back(model_->fast_rate(r, s_.counts[j], d));
      const double hop = n2_ * static_cast<double>(s_.counts[j]);
      out.push_back(hop);
      out.push_back(hop);
    }
    for (int l = 0; l < model_->n_macro(); ++l) {
      for (int r = 0; r < ns_; ++r) {
        const double avg = r < nsm_ ? model_->macro_avg(r, l, s_.counts) : 0.0;
        const bool ok = r < nsm_ ? model_->guard_ok(r, l, s_.counts) : true;
        out.push_back(model_->slow_rate(r, avg, s_.discrete[l], ok));
      }
    }
    return out;
  }

 private:
  static int last_positive(const double* rates, int n) {
    for (int r = n - 1; r >= 0; --r)
      if (rates[r] > 0.0) return r;
    return 0;
  }

  void refresh_fast(int j) {
    if (nf_ == 0) return;
    const std::int64_t x = s_.counts[j], d = s_.discrete[macro_of_[j]];
    const double* row = model_->table_row(x, d);
    if (row == nullptr) {
      double* own = &overflow_[static_cast<std::size_t>(j * (nf_ + 1))];
      model_->fill_fast_row(x, d, own);
      row = own;
    }
    fast_row_[j] = row;
    const double delta = row[nf_] - site_fast_[j];
    if (delta != 0.0) {
      site_fast_[j] = row[nf_];
      block_fast_[j / kBlock] += delta;
      fast_total_ += delta;
    }
  }

  /// Exact block and grand totals from the per-site totals.
  void resum_fast() {
    fast_total_ = 0.0;
    for (std::size_t b = 0; b < block_fast_.size(); ++b) {
      double s = 0.0;
      const std::size_t end = std::min(site_fast_.size(), (b + 1) * kBlock);
      for (std::size_t j = b * kBlock; j < end; ++j) s += site_fast_[j];
      block_fast_[b] = s;
      fast_total_ += s;
    }
  }

  /// Site holding the target mass; on return `target` is the offset within it.
  int find_fast_site(double& target) const {
    const std::size_t nb = block_fast_.size();
    std::size_t b = 0;
    for (; b + 1 < nb && target >= block_fast_[b]; ++b) target -= block_fast_[b];
    const std::size_t first = b * kBlock, end = std::min(site_fast_.size(), first + kBlock);
    std::size_t j = first;
    for (; j + 1 < end && target >= site_fast_[j]; ++j) target -= site_fast_[j];
    if (site_fast_[j] > 0.0) return static_cast<int>(j);
    // Rounding ran past the last positive site.
    for (std::size_t i = site_fast_.size(); i-- > 0;)
      if (site_fast_[i] > 0.0) {
        target = 0.0;
        return static_cast<int>(i);
      }
    return static_cast<int>(j);
  }

  void refresh_slow(int l) {
    for (int r = 0; r < ns_; ++r) {
      const bool mixed = r < nsm_;
      const double avg = mixed ? s_.macro_avgs[l * nsm_ + r] : 0.0;
      const bool ok = mixed ? deficits_[l * nsm_ + r] == 0 : true;
      slow_tree_.set(static_cast<std::size_t>(l * ns_ + r), model_->slow_rate(r, avg, s_.discrete[l], ok));
    }
  }

  /// X_j += dx with all per-site caches (the molecule table is already
  /// updated when a molecule merely hops); slow rates of l_j are left stale.
  void change_site(int j, std::int64_t dx, bool update_molecules = true) {
    const std::int64_t before = s_.counts[j];
    const std::int64_t after = before + dx;
    s_.counts[j] = after;
    xsum_ += dx;
    if (update_molecules) {
      for (std::int64_t i = 0; i < dx; ++i) molecules_.add(j);
      for (std::int64_t i = 0; i > dx; --i) molecules_.remove(j);
    }
    refresh_fast(j);
    if (nsm_ > 0) {
      const int l = macro_of_[j];
      for (int r = 0; r < nsm_; ++r) {
        s_.macro_avgs[l * nsm_ + r] += model_->a_weights(r)[j] * static_cast<double>(dx) / s_.mu;
        const auto q = model_->quanta(r)[j];
        deficits_[l * nsm_ + r] += static_cast<int>(after + q < 0) - static_cast<int>(before + q < 0);
      }
    }
  }

  void move_molecule(int from, int to) {
    const int lf = macro_of_[from], lt = macro_of_[to];
    bool same_weights = lf == lt;
    for (int r = 0; r < nsm_ && same_weights; ++r)
      same_weights = model_->a_weights(r)[from] == model_->a_weights(r)[to];
    if (from == to) return;  // single-site ring
    if (same_weights) {
      // The macro average is unchanged; only the counts and guard tallies move.
      bool deficit_changed = false;
      for (int side = 0; side < 2; ++side) {
        const int idx = side == 0 ? from : to;
        const std::int64_t dx = side == 0 ? -1 : 1;
        const std::int64_t before = s_.counts[idx];
        s_.counts[idx] = before + dx;
        refresh_fast(idx);
        for (int r = 0; r < nsm_; ++r) {
          const auto q = model_->quanta(r)[idx];
          const int delta = static_cast<int>(before + dx + q < 0) - static_cast<int>(before + q < 0);
          deficits_[lf * nsm_ + r] += delta;
          deficit_changed |= delta != 0;
        }
      }
      if (deficit_changed) refresh_slow(lf);
      return;
    }
    change_site(from, -1, false);
    change_site(to, +1, false);
    refresh_slow(lf);
    if (lt != lf) refresh_slow(lt);
  }

  void apply_slow(int l, int r) {
    const auto& rx = model_->slow_reaction(r);
    const bool mixed = r < nsm_;
    const int first = model_->grid().macro_first(l);
    const int width = model_->grid().sites_per_macro();
    if (s_.discrete[l] + rx.gamma_d < 0) {
      throw Error(ErrorCode::negativity_breach, "reaction '" + rx.id + "' would make u_D negative");
    }
    if (mixed) {
      const auto& q = model_->quanta(r);
      for (int j = first; j < first + width; ++j) {
        if (s_.counts[j] + q[j] < 0) {
          throw Error(ErrorCode::negativity_breach,
                      "reaction '" + rx.id + "' would make site " + std::to_string(j + 1) + " negative");
        }
      }
      for (int j = first; j < first + width; ++j)
        if (q[j] != 0) change_site(j, q[j]);
    }
    s_.discrete[l] += rx.gamma_d;
    if (!model_->network().fast_mixed().empty()) {
      for (int j = first; j < first + width; ++j) refresh_fast(j);
    }
    refresh_slow(l);
  }

  const SsaModel* model_;
  SsaOptions opt_;
  MicroState s_;
  double n2_ = 0.0, inv_n2_ = 0.0;
  int nf_ = 0, nsm_ = 0, ns_ = 0;
  bool hops_only_ = false;  // no rate depends on the site counts beyond the hop rates
  std::vector<int> macro_of_;
  std::int64_t xsum_ = 0;
  detail::MoleculeTable molecules_;
  static constexpr std::size_t kBlock = 64;
  std::vector<const double*> fast_row_;
  std::vector<double> overflow_;
  std::vector<double> site_fast_;
  std::vector<double> block_fast_;
  double fast_total_ = 0.0;
  FenwickTree<double> slow_tree_;
  std::vector<int> deficits_;
  std::uint64_t events_ = 0;
  std::uint64_t until_rebuild_ = 0;
};

struct RecorderSpec {
  double dt_out = 0.1;
  bool log_events = true;
};

/// Observer hook for `simulate`: `interval(t0, t1, engine)` is called for
/// every stretch [t0, t1) on which the state is constant, before the event
/// at t1 (if any) is applied.
struct NullSsaObserver {
  void interval(double, double, const SsaEngine&) {}
};

/// Runs the engine to `horizon`, sampling snapshots at the output grid.
/// Budget exhaustion returns the partial trajectory flagged truncated.
template <typename Observer = NullSsaObserver>
Trajectory simulate(SsaEngine& eng, double horizon, const RecorderSpec& rec, Rng& rng, Observer&& obs = {}) {
  if (!(horizon > 0.0)) throw Error(ErrorCode::validation_error, "horizon must be positive");
  Trajectory tr;
  tr.mu = eng.state().mu;
  const double t0 = eng.state().t;
  const auto grid = output_grid(horizon, rec.dt_out);
  auto snapshot = [&] {
    tr.times.push_back(eng.state().t);
    tr.counts.push_back(eng.state().counts);
    tr.discrete.push_back(eng.state().discrete);
  };
  snapshot();
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t first_event = eng.events();
  const auto& opt = eng.options();

  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double target = t0 + grid[i];
    while (true) {
      const std::uint64_t done = eng.events() - first_event;
      if (done >= opt.max_events) {
        tr.truncated = true;
        tr.truncation_reason = "event budget exhausted";
      } else if (opt.wall_seconds > 0.0 && (done & 0xffff) == 0 && done > 0) {
        const std::chrono::duration<double> el = std::chrono::steady_clock::now() - start;
        if (el.count() > opt.wall_seconds) {
          tr.truncated = true;
          tr.truncation_reason = "wall-clock budget exhausted";
        }
      }
      if (tr.truncated) break;
      const double now = eng.state().t;
      const auto p = eng.propose(rng, target);
      obs.interval(now, p.time, eng);
      if (!p.fires) {
        eng.advance_to(target);
        break;
      }
      const Event e = eng.fire(rng, p.time);
      if (rec.log_events && is_discrete_jump(e.kind)) {
        tr.jumps.push_back({e.time, e.kind, e.macro, e.reaction, e.gamma_d, {}, {}});
      }
    }
    if (tr.truncated) break;
    snapshot();
  }
  tr.events = eng.events() - first_event;
  return tr;
}

}  // namespace hrd
