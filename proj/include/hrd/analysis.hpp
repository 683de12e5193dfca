#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <type_traits>
#include <variant>
#include <vector>

#include "json.hpp"

#include "hrd/hash.hpp"
#include "hrd/lattice.hpp"
#include "hrd/pdmp.hpp"
#include "hrd/rng.hpp"
#include "hrd/ssa.hpp"
#include "hrd/stats.hpp"
#include "hrd/trajectory.hpp"

namespace hrd {

// ---------------------------------------------------------------------------
// Observables

struct Observable {
  enum class Kind { inner_product, point_value, macro_count, jump_count };

  Kind kind = Kind::inner_product;
  std::string name;
  std::function<double(double)> f;  // inner_product
  double x0 = 0.0;                  // point_value
  int macro = 1;                    // macro_count, 1-based

  static Observable inner_product(std::string name, std::function<double(double)> f) {
    return {Kind::inner_product, std::move(name), std::move(f), 0.0, 1};
  }
  static Observable point_value(double x0) {
    if (!(x0 >= 0.0 && x0 <= 1.0)) throw Error(ErrorCode::validation_error, "point_value needs x0 in [0, 1]");
    std::ostringstream os;
    os << "u(" << x0 << ")";
    return {Kind::point_value, os.str(), {}, x0, 1};
  }
  static Observable macro_count(int l) { return {Kind::macro_count, "d_" + std::to_string(l), {}, 0.0, l}; }
  static Observable jump_count() { return {Kind::jump_count, "jumps", {}, 0.0, 1}; }

  bool discrete() const { return kind == Kind::macro_count || kind == Kind::jump_count; }
};

/// Observable evaluated on an n-site state; the test function is replaced by
/// its cell averages so that <u, f> is exact for piecewise-constant u.
class BoundObservable {
 public:
  BoundObservable(const Observable& o, int n) : kind_(o.kind), macro_(o.macro - 1) {
    if (kind_ == Observable::Kind::inner_product) {
      const Field pf = project(o.f, n);
      w_.resize(static_cast<std::size_t>(n));
      for (int j = 0; j < n; ++j) w_[j] = pf[j] / n;
    } else if (kind_ == Observable::Kind::point_value) {
      site_ = std::min(n - 1, static_cast<int>(std::floor(o.x0 * n)));
    }
  }

  /// Value at a state given as concentrations (`scale` multiplies `u`),
  /// discrete counts and the number of discrete jumps so far.
  template <typename T>
  double operator()(std::span<const T> u, double scale, std::span<const std::int64_t> d, std::size_t jumps) const {
    switch (kind_) {
      case Observable::Kind::inner_product: {
        double s = 0.0;
        for (std::size_t j = 0; j < w_.size(); ++j) s += w_[j] * static_cast<double>(u[j]);
        return s * scale;
      }
      case Observable::Kind::point_value: return static_cast<double>(u[site_]) * scale;
      case Observable::Kind::macro_count:
        if (macro_ < 0 || static_cast<std::size_t>(macro_) >= d.size()) {
          throw Error(ErrorCode::index_out_of_range, "macro_count index outside 1..k");
        }
        return static_cast<double>(d[macro_]);
      case Observable::Kind::jump_count: return static_cast<double>(jumps);
    }
    return 0.0;
  }

 private:
  Observable::Kind kind_;
  int macro_;
  int site_ = 0;
  std::vector<double> w_;
};

namespace detail {

/// Index of the last snapshot at or before t (piecewise-constant in time).
inline std::size_t snapshot_at(const std::vector<double>& times, double t) {
  const auto it = std::upper_bound(times.begin(), times.end(), t + 1e-9 * std::max(1.0, std::abs(t)));
  if (it == times.begin()) throw Error(ErrorCode::index_out_of_range, "time before the first snapshot");
  return static_cast<std::size_t>(it - times.begin()) - 1;
}

inline std::size_t jumps_until(const std::vector<JumpRecord>& jumps, double t) {
  return static_cast<std::size_t>(std::upper_bound(jumps.begin(), jumps.end(), t,
                                                   [](double x, const JumpRecord& r) { return x < r.t; }) -
                                  jumps.begin());
}

}  // namespace detail

/// values[observable][time] for one trajectory.
inline std::vector<std::vector<double>> observe(const Trajectory& tr, const std::vector<BoundObservable>& obs,
                                                const std::vector<double>& times) {
  std::vector<std::vector<double>> out(obs.size(), std::vector<double>(times.size()));
  for (std::size_t t = 0; t < times.size(); ++t) {
    const std::size_t i = detail::snapshot_at(tr.times, times[t]);
    const std::size_t jumps = detail::jumps_until(tr.jumps, times[t]);
    for (std::size_t o = 0; o < obs.size(); ++o) {
      out[o][t] = obs[o](std::span<const std::int64_t>(tr.counts[i]), 1.0 / tr.mu, tr.discrete[i], jumps);
    }
  }
  return out;
}

inline std::vector<std::vector<double>> observe(const PdmpTrajectory& tr, const std::vector<BoundObservable>& obs,
                                                const std::vector<double>& times) {
  std::vector<std::vector<double>> out(obs.size(), std::vector<double>(times.size()));
  for (std::size_t t = 0; t < times.size(); ++t) {
    const std::size_t i = detail::snapshot_at(tr.times, times[t]);
    const std::size_t jumps = detail::jumps_until(tr.jumps, times[t]);
    for (std::size_t o = 0; o < obs.size(); ++o) {
      out[o][t] = obs[o](tr.fields[i].values(), 1.0, tr.discrete[i], jumps);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ensembles

struct CellStats {
  std::size_t count = 0;
  double mean = 0.0;
  double variance = 0.0;
  double se = 0.0;
  std::vector<double> sorted;

  friend bool operator==(const CellStats&, const CellStats&) = default;
};

struct ReplicateFailure {
  std::size_t replicate = 0;
  std::string code;
  std::string message;
};

struct EnsembleStats {
  std::vector<std::string> observables;
  std::vector<double> times;
  std::vector<std::vector<CellStats>> cells;  // [observable][time]
  std::size_t replicates = 0;
  std::vector<ReplicateFailure> failures;

  const CellStats& at(std::string_view name, std::size_t time_index) const {
    for (std::size_t o = 0; o < observables.size(); ++o)
      if (observables[o] == name) return cells[o].at(time_index);
    throw Error(ErrorCode::index_out_of_range, "unknown observable '" + std::string(name) + "'");
  }

  friend bool operator==(const EnsembleStats& a, const EnsembleStats& b) {
    return a.observables == b.observables && a.times == b.times && a.cells == b.cells && a.replicates == b.replicates;
  }
};

inline CellStats make_cell(std::vector<double> samples) {
  std::sort(samples.begin(), samples.end());
  const Summary s = summarize(samples);
  return {s.count, s.mean, s.variance, s.se, std::move(samples)};
}

inline unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

template <typename T>
struct ReplicateResults {
  std::vector<std::optional<T>> values;  // indexed by replicate
  std::vector<ReplicateFailure> failures;
};

/// Work queue over replicate indices. Each worker calls `fn(i)`; results and
/// failures are gathered by index, so the outcome does not depend on the
/// thread count or scheduling. Throws ReplicateFailures when more than
/// `max_failure_fraction` of the replicates fail.
template <typename T, typename Fn>
ReplicateResults<T> run_replicates(std::size_t replicates, unsigned threads, Fn&& fn,
                                   double max_failure_fraction = 0.01) {
  ReplicateResults<T> out;
  out.values.resize(replicates);
  std::vector<std::optional<ReplicateFailure>> fail(replicates);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < replicates; i = next++) {
      try {
        out.values[i].emplace(fn(i));
      } catch (const Error& e) {
        fail[i] = ReplicateFailure{i, std::string(to_string(e.code())), e.what()};
      } catch (const std::exception& e) {
        fail[i] = ReplicateFailure{i, "InternalError", e.what()};
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads == 0 ? default_threads() : threads,
                                                    static_cast<unsigned>(std::max<std::size_t>(1, replicates))));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  for (auto& f : fail)
    if (f) out.failures.push_back(std::move(*f));
  if (static_cast<double>(out.failures.size()) > max_failure_fraction * static_cast<double>(replicates)) {
    std::ostringstream os;
    os << out.failures.size() << " of " << replicates << " replicates failed; first: " << out.failures.front().message;
    throw Error(ErrorCode::replicate_failures, os.str());
  }
  return out;
}

struct SsaSetup {
  const SsaModel* model = nullptr;
  MicroState init;
  SsaOptions options;
};

struct PdmpSetup {
  const PdmpModel* model = nullptr;
  Field init;
  std::vector<std::int64_t> nu0;
  PdmpOptions options;
};

using EngineSetup = std::variant<SsaSetup, PdmpSetup>;

struct EnsembleSpec {
  double horizon = 1.0;
  double dt_out = 0.01;
  std::vector<double> times;  // observation times; empty means the output grid
  std::size_t replicates = 2;
  std::uint64_t root_seed = 0;
  unsigned threads = 0;  // 0: hardware concurrency
  double max_failure_fraction = 0.01;
  // Optional per-replicate hooks, called from worker threads.
  std::function<void(std::size_t, const Trajectory&)> on_ssa;
  std::function<void(std::size_t, const PdmpTrajectory&)> on_pdmp;
};

namespace detail {

[[noreturn]] inline void truncated(const std::string& reason) {
  if (reason.starts_with("jump")) throw Error(ErrorCode::jump_budget_exceeded, reason);
  throw Error(ErrorCode::event_budget_exceeded, reason);
}

}  // namespace detail

/// One SSA replicate with the stream (root_seed, i). Truncation is an error.
inline Trajectory run_replicate(const SsaSetup& s, double horizon, double dt_out, std::uint64_t root_seed,
                                std::size_t i) {
  SsaEngine eng(*s.model, s.init, s.options);
  Rng rng = Rng::for_stream(root_seed, i);
  Trajectory tr = simulate(eng, horizon, RecorderSpec{dt_out, true}, rng);
  if (tr.truncated) detail::truncated(tr.truncation_reason);
  return tr;
}

inline PdmpTrajectory run_replicate(const PdmpSetup& s, double horizon, double dt_out, std::uint64_t root_seed,
                                    std::size_t i) {
  PdmpEngine eng(*s.model);
  Rng rng = Rng::for_stream(root_seed, i);
  PdmpState st = eng.make_state(s.init, s.nu0, rng);
  PdmpTrajectory tr = simulate_pdmp(eng, st, horizon, dt_out, rng, s.options);
  if (tr.truncated) detail::truncated(tr.truncation_reason);
  return tr;
}

inline int engine_sites(const EngineSetup& e) {
  return std::visit([](const auto& s) { return s.model->grid().n_sites(); }, e);
}

/// Raw samples [observable][time][replicate] for the successful replicates,
/// in replicate order.
struct EnsembleSamples {
  std::vector<std::vector<std::vector<double>>> values;
  std::vector<ReplicateFailure> failures;
};

inline EnsembleSamples sample_ensemble(const EngineSetup& engine, const EnsembleSpec& spec,
                                       const std::vector<Observable>& observables) {
  if (spec.replicates < 2) throw Error(ErrorCode::validation_error, "an ensemble needs at least 2 replicates");
  const std::vector<double> times = spec.times.empty() ? output_grid(spec.horizon, spec.dt_out) : spec.times;
  const int n = engine_sites(engine);
  std::vector<BoundObservable> bound;
  for (const auto& o : observables) bound.emplace_back(o, n);
  std::mutex hook;

  using Row = std::vector<std::vector<double>>;
  auto res = run_replicates<Row>(
      spec.replicates, spec.threads,
      [&](std::size_t i) -> Row {
        return std::visit(
            [&](const auto& setup) -> Row {
              auto tr = run_replicate(setup, spec.horizon, spec.dt_out, spec.root_seed, i);
              if constexpr (std::is_same_v<decltype(tr), Trajectory>) {
                if (spec.on_ssa) {
                  std::lock_guard lock(hook);
                  spec.on_ssa(i, tr);
                }
              } else {
                if (spec.on_pdmp) {
                  std::lock_guard lock(hook);
                  spec.on_pdmp(i, tr);
                }
              }
              return observe(tr, bound, times);
            },
            engine);
      },
      spec.max_failure_fraction);

  EnsembleSamples out;
  out.failures = std::move(res.failures);
  out.values.assign(observables.size(), std::vector<std::vector<double>>(times.size()));
  for (const auto& v : res.values) {
    if (!v) continue;
    for (std::size_t o = 0; o < observables.size(); ++o)
      for (std::size_t t = 0; t < times.size(); ++t) out.values[o][t].push_back((*v)[o][t]);
  }
  return out;
}

inline EnsembleStats run_ensemble(const EngineSetup& engine, const EnsembleSpec& spec,
                                  const std::vector<Observable>& observables) {
  auto samples = sample_ensemble(engine, spec, observables);
  EnsembleStats st;
  st.times = spec.times.empty() ? output_grid(spec.horizon, spec.dt_out) : spec.times;
  st.replicates = spec.replicates;
  st.failures = std::move(samples.failures);
  for (std::size_t o = 0; o < observables.size(); ++o) {
    st.observables.push_back(observables[o].name);
    std::vector<CellStats> row;
    for (auto& s : samples.values[o]) row.push_back(make_cell(std::move(s)));
    st.cells.push_back(std::move(row));
  }
  return st;
}

// ---------------------------------------------------------------------------
// Cylinder test functions phi(u) = g(<u_C, f>, u_D) with g(s, d) = G(s) h(d)

/// `linear` is unbounded and only meant for checking generators.
struct CylinderFn {
  enum class Shape { constant, linear, tanh, gaussian };

  std::string name;
  Shape shape = Shape::tanh;
  double scale = 1.0;   // scale (s - center), tanh(scale (s - center)) or exp(-scale (s - center)^2)
  double center = 0.0;
  std::function<double(double)> f = [](double) { return 1.0; };
  std::vector<double> d_weights;  // h(d) = 1 + sum_l d_weights[l] d_l

  double G(double s) const {
    switch (shape) {
      case Shape::constant: return 1.0;
      case Shape::linear: return scale * (s - center);
      case Shape::tanh: return std::tanh(scale * (s - center));
      case Shape::gaussian: return std::exp(-scale * (s - center) * (s - center));
    }
    return 0.0;
  }

  double dG(double s) const {
    const double x = s - center;
    switch (shape) {
      case Shape::constant: return 0.0;
      case Shape::linear: return scale;
      case Shape::tanh: {
        const double c = std::cosh(scale * x);
        return scale / (c * c);
      }
      case Shape::gaussian: return -2.0 * scale * x * std::exp(-scale * x * x);
    }
    return 0.0;
  }

  double h(std::span<const std::int64_t> d) const {
    double v = 1.0;
    for (std::size_t l = 0; l < d_weights.size() && l < d.size(); ++l) v += d_weights[l] * static_cast<double>(d[l]);
    return v;
  }
};

/// Fixed catalog used by the Dynkin checks.
inline std::vector<CylinderFn> cylinder_catalog(int k) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::vector<CylinderFn> out;
  out.push_back({"tanh_mass", CylinderFn::Shape::tanh, 2.0, 0.0, [](double) { return 1.0; }, {}});
  std::vector<double> first(static_cast<std::size_t>(k), 0.0);
  first[0] = 0.5;
  out.push_back({"gauss_sin_d1", CylinderFn::Shape::gaussian, 1.0, 0.0,
                 [=](double x) { return std::sin(two_pi * x); }, first});
  out.push_back({"tanh_cos_dsum", CylinderFn::Shape::tanh, 3.0, 0.2,
                 [=](double x) { return 1.0 + std::cos(two_pi * x); },
                 std::vector<double>(static_cast<std::size_t>(k), 0.25)});
  return out;
}

/// Cylinder function with its test function projected onto an n-site grid:
/// s = sum_j w_j u_j with w_j = (P_n f)_j / n, and lap_w = Delta_n w.
struct BoundCylinder {
  CylinderFn fn;
  std::vector<double> w;
  std::vector<double> lap_w;

  BoundCylinder(CylinderFn c, int n) : fn(std::move(c)) {
    const Field pf = project(fn.f, n);
    Field wf(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) wf[j] = pf[j] / n;
    const Field lw = discrete_laplacian(wf);
    w.assign(wf.begin(), wf.end());
    lap_w.assign(lw.begin(), lw.end());
  }

  template <typename T>
  double s(std::span<const T> u, double scale) const {
    double v = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) v += w[j] * static_cast<double>(u[j]);
    return v * scale;
  }

  double operator()(double s_val, std::span<const std::int64_t> d) const { return fn.G(s_val) * fn.h(d); }
};

/// Generator of the lattice jump process, by full channel summation with the
/// engine's rates (including the positivity guard and rounded C-jump quanta).
class MicroGenerator {
 public:
  explicit MicroGenerator(const SsaModel& m) : m_(&m) {}

  double apply(const BoundCylinder& phi, std::span<const std::int64_t> x, std::span<const std::int64_t> d) const {
    const SsaModel& m = *m_;
    const int n = m.n_sites();
    const double mu = m.mu(), inv_mu = 1.0 / mu, n2 = static_cast<double>(n) * n;
    const double s = phi.s(x, inv_mu);
    const double h = phi.fn.h(d);
    const double g0 = phi.fn.G(s) * h;
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      const std::int64_t xj = x[j];
      const std::int64_t dj = d[m.grid().macro_index(j)];
      for (int r = 0; r < m.n_fast(); ++r) {
        const double rate = m.fast_rate(r, xj, dj);
        if (rate <= 0.0) continue;
        const int gc = m.fast_reaction(r).gamma_c;
        if (xj + gc < 0) continue;
        sum += rate * (phi.fn.G(s + gc * phi.w[j] * inv_mu) * h - g0);
      }
      if (xj > 0) {
        const int left = j == 0 ? n - 1 : j - 1, right = j + 1 == n ? 0 : j + 1;
        const double hop = n2 * static_cast<double>(xj);
        sum += hop * (phi.fn.G(s + (phi.w[left] - phi.w[j]) * inv_mu) * h - g0);
        sum += hop * (phi.fn.G(s + (phi.w[right] - phi.w[j]) * inv_mu) * h - g0);
      }
    }
    std::vector<std::int64_t> d_after(d.begin(), d.end());
    for (int l = 0; l < m.n_macro(); ++l) {
      const int first = m.grid().macro_first(l), width = m.grid().sites_per_macro();
      for (int r = 0; r < m.n_slow(); ++r) {
        const bool mixed = r < m.n_slow_mixed();
        const double avg = mixed ? m.macro_avg(r, l, x) : 0.0;
        const bool ok = mixed ? m.guard_ok(r, l, x) : true;
        const double rate = m.slow_rate(r, avg, d[l], ok);
        if (rate <= 0.0) continue;
        double s_after = s;
        if (mixed) {
          const auto& q = m.quanta(r);
          for (int j = first; j < first + width; ++j) s_after += q[j] * phi.w[j] * inv_mu;
        }
        d_after[l] = d[l] + m.slow_reaction(r).gamma_d;
        sum += rate * (phi(s_after, d_after) - g0);
        d_after[l] = d[l];
      }
    }
    return sum;
  }

 private:
  const SsaModel* m_;
};

/// Generator of the limit PDMP on the solver grid: g_s <f, Delta v + F(v)>
/// plus the slow jump terms. The diffusion part uses the self-adjointness of
/// the discrete Laplacian: <w, Delta v> = <Delta w, v>.
class LimitGenerator {
 public:
  explicit LimitGenerator(const PdmpModel& m) : m_(&m) {}

  double apply(const BoundCylinder& phi, const Field& v, std::span<const std::int64_t> nu) const {
    const PdmpModel& m = *m_;
    const std::size_t n = v.size();
    const double s = phi.s(v.values(), 1.0);
    const double h = phi.fn.h(nu);
    double drift = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      drift += phi.lap_w[j] * v[j] + phi.w[j] * m.debit(v[j], nu[m.macro_of(static_cast<int>(j))]);
    }
    double sum = phi.fn.dG(s) * h * drift;
    const double g0 = phi.fn.G(s) * h;
    std::vector<std::int64_t> nu_vec(nu.begin(), nu.end());
    for (int l = 0; l < m.grid().n_macro(); ++l) {
      for (int r = 0; r < m.n_slow(); ++r) {
        const double rate = m.channel_rate(r, l, v, nu_vec);
        if (rate <= 0.0) continue;
        nu_vec[l] += m.slow_reaction(r).gamma_d;
        sum += rate * (phi(s, nu_vec) - g0);
        nu_vec[l] = nu[l];
      }
    }
    return sum;
  }

 private:
  const PdmpModel* m_;
};

// ---------------------------------------------------------------------------
// Dynkin residuals M(t) = phi(u(t)) - phi(u(0)) - int_0^t A phi(u(s)) ds

namespace detail {

inline void check_quadrature(const std::vector<double>& times) {
  if (times.size() < 2) throw Error(ErrorCode::quadrature_too_coarse, "need at least two snapshots");
  const double span = times.back() - times.front();
  double widest = 0.0;
  for (std::size_t i = 1; i < times.size(); ++i) widest = std::max(widest, times[i] - times[i - 1]);
  if (widest > 0.01 * span * (1.0 + 1e-9)) {
    std::ostringstream os;
    os << "snapshot spacing " << widest << " exceeds 1% of the horizon " << span;
    throw Error(ErrorCode::quadrature_too_coarse, os.str());
  }
}

/// Trapezoid residual at the requested times, given phi and A phi at every snapshot.
inline std::vector<double> trapezoid_residual(const std::vector<double>& snap_t, const std::vector<double>& phi,
                                              const std::vector<double>& aphi, const std::vector<double>& times) {
  std::vector<double> integral(snap_t.size(), 0.0);
  for (std::size_t i = 1; i < snap_t.size(); ++i)
    integral[i] = integral[i - 1] + 0.5 * (aphi[i - 1] + aphi[i]) * (snap_t[i] - snap_t[i - 1]);
  std::vector<double> out;
  for (double t : times) {
    const std::size_t i = snapshot_at(snap_t, t);
    out.push_back(phi[i] - phi[0] - integral[i]);
  }
  return out;
}

}  // namespace detail

inline std::vector<double> dynkin_path(const Trajectory& tr, const BoundCylinder& phi, const MicroGenerator& gen,
                                       const std::vector<double>& times) {
  detail::check_quadrature(tr.times);
  std::vector<double> p(tr.times.size()), a(tr.times.size());
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    p[i] = phi(phi.s(std::span<const std::int64_t>(tr.counts[i]), 1.0 / tr.mu), tr.discrete[i]);
    a[i] = gen.apply(phi, tr.counts[i], tr.discrete[i]);
  }
  return detail::trapezoid_residual(tr.times, p, a, times);
}

inline std::vector<double> dynkin_path(const PdmpTrajectory& tr, const BoundCylinder& phi, const LimitGenerator& gen,
                                       const std::vector<double>& times) {
  detail::check_quadrature(tr.times);
  std::vector<double> p(tr.times.size()), a(tr.times.size());
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    p[i] = phi(phi.s(tr.fields[i].values(), 1.0), tr.discrete[i]);
    a[i] = gen.apply(phi, tr.fields[i], tr.discrete[i]);
  }
  return detail::trapezoid_residual(tr.times, p, a, times);
}

/// Exact micro residual: A phi is integrated over every constant-state
/// interval between events, so no quadrature error enters.
inline std::vector<std::vector<double>> dynkin_exact(SsaEngine& eng, const std::vector<BoundCylinder>& phis,
                                                     const MicroGenerator& gen, const std::vector<double>& times,
                                                     Rng& rng) {
  const double t0 = eng.state().t;
  auto value = [&](const BoundCylinder& phi) {
    return phi(phi.s(std::span<const std::int64_t>(eng.state().counts), 1.0 / eng.state().mu), eng.state().discrete);
  };
  std::vector<double> start, integral(phis.size(), 0.0);
  for (const auto& phi : phis) start.push_back(value(phi));
  std::vector<std::vector<double>> out(phis.size());
  const std::uint64_t budget = eng.options().max_events, first_event = eng.events();
  for (double target : times) {
    while (true) {
      if (eng.events() - first_event >= budget) throw Error(ErrorCode::event_budget_exceeded, "event budget");
      const double now = eng.state().t;
      const auto p = eng.propose(rng, t0 + target);
      if (p.time > now) {
        for (std::size_t q = 0; q < phis.size(); ++q)
          integral[q] += gen.apply(phis[q], eng.state().counts, eng.state().discrete) * (p.time - now);
      }
      if (!p.fires) {
        eng.advance_to(t0 + target);
        break;
      }
      eng.fire(rng, p.time);
    }
    for (std::size_t q = 0; q < phis.size(); ++q) out[q].push_back(value(phis[q]) - start[q] - integral[q]);
  }
  return out;
}

struct DynkinPoint {
  double t = 0.0;
  double mean = 0.0;
  double se = 0.0;
  std::size_t count = 0;

  bool within(double k_se) const { return std::abs(mean) <= k_se * se || mean == 0.0; }
};

struct DynkinSeries {
  std::string name;
  std::vector<DynkinPoint> points;
};

struct DynkinSpec {
  double horizon = 1.0;
  double dt_out = 0.001;
  std::vector<double> times{0.25, 0.5, 1.0};
  std::size_t replicates = 100;
  std::uint64_t root_seed = 0;
  unsigned threads = 0;
  bool exact = false;  // SSA only: integrate between events instead of over snapshots
  double max_failure_fraction = 0.01;
};

inline std::vector<DynkinSeries> dynkin_residual(const EngineSetup& engine, const std::vector<CylinderFn>& catalog,
                                                 const DynkinSpec& spec) {
  if (spec.replicates < 2) throw Error(ErrorCode::validation_error, "Dynkin residuals need at least 2 replicates");
  if (!spec.exact && spec.dt_out > 0.01 * spec.horizon * (1.0 + 1e-9)) {
    throw Error(ErrorCode::quadrature_too_coarse, "dt_out must be at most 1% of the horizon");
  }
  const int n = engine_sites(engine);
  std::vector<BoundCylinder> phis;
  for (const auto& c : catalog) phis.emplace_back(c, n);

  using Row = std::vector<std::vector<double>>;  // [phi][time]
  auto res = run_replicates<Row>(
      spec.replicates, spec.threads,
      [&](std::size_t i) -> Row {
        if (const auto* s = std::get_if<SsaSetup>(&engine)) {
          const MicroGenerator gen(*s->model);
          if (spec.exact) {
            SsaEngine eng(*s->model, s->init, s->options);
            Rng rng = Rng::for_stream(spec.root_seed, i);
            return dynkin_exact(eng, phis, gen, spec.times, rng);
          }
          const Trajectory tr = run_replicate(*s, spec.horizon, spec.dt_out, spec.root_seed, i);
          Row row;
          for (const auto& phi : phis) row.push_back(dynkin_path(tr, phi, gen, spec.times));
          return row;
        }
        const auto& p = std::get<PdmpSetup>(engine);
        const LimitGenerator gen(*p.model);
        const PdmpTrajectory tr = run_replicate(p, spec.horizon, spec.dt_out, spec.root_seed, i);
        Row row;
        for (const auto& phi : phis) row.push_back(dynkin_path(tr, phi, gen, spec.times));
        return row;
      },
      spec.max_failure_fraction);

  std::vector<DynkinSeries> out;
  for (std::size_t q = 0; q < phis.size(); ++q) {
    DynkinSeries series{catalog[q].name, {}};
    for (std::size_t t = 0; t < spec.times.size(); ++t) {
      std::vector<double> xs;
      for (const auto& v : res.values)
        if (v) xs.push_back((*v)[q][t]);
      std::sort(xs.begin(), xs.end());
      const Summary s = summarize(xs);
      series.points.push_back({spec.times[t], s.mean, s.se, s.count});
    }
    out.push_back(std::move(series));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convergence ladder

struct LadderRung {
  int N = 0;
  double mu = 0.0;

  double scale_ratio() const { return std::log(static_cast<double>(N)) / mu; }
};

/// Throws LadderNotAdmissible unless N increases, mu^{-1} log N decreases and
/// every N is a multiple of k.
inline void validate_ladder(const std::vector<LadderRung>& rungs, int k) {
  if (rungs.empty()) throw Error(ErrorCode::ladder_not_admissible, "empty ladder");
  for (std::size_t i = 0; i < rungs.size(); ++i) {
    const auto& r = rungs[i];
    if (r.N < 2 || !(r.mu > 0.0) || r.N % k != 0) {
      throw Error(ErrorCode::ladder_not_admissible,
                  "rung " + std::to_string(i + 1) + ": need N >= 2 divisible by k and mu > 0");
    }
    if (i == 0) continue;
    if (r.N <= rungs[i - 1].N) throw Error(ErrorCode::ladder_not_admissible, "N must increase along the ladder");
    if (!(r.scale_ratio() < rungs[i - 1].scale_ratio())) {
      std::ostringstream os;
      os << "log(N)/mu must decrease: " << rungs[i - 1].scale_ratio() << " -> " << r.scale_ratio();
      throw Error(ErrorCode::ladder_not_admissible, os.str());
    }
  }
}

struct LadderSpec {
  const ReactionNetwork* net = nullptr;
  int k = 1;
  std::function<double(double)> f0;
  std::vector<std::int64_t> d0;
  double horizon = 1.0;
  double dt_out = 0.1;
  std::vector<double> times{0.5, 1.0};
  std::vector<LadderRung> rungs;
  std::size_t replicates = 300;
  std::uint64_t root_seed = 0;
  std::vector<Observable> observables;
  SsaOptions ssa_options;
  PdmpOptions pdmp_options;
  PdmpSolver reference_solver{512, 5e-4, false};
  std::size_t reference_factor = 4;
  std::filesystem::path cache_dir;  // empty: no on-disk cache
  std::string reference_key;        // canonical description of (network, initial data)
  unsigned threads = 0;
  int noise_splits = 16;
  double pass_fraction = 0.8;
  double tv_limit = 0.1;
  bool pdmp_rung = false;  // compare a second PDMP ensemble against the reference
};

struct LadderCell {
  std::string observable;
  double t = 0.0;
  bool discrete = false;
  double distance = 0.0;  // W1 or TV
  double floor = 0.0;     // noise floor at this rung's sample size
  double excess() const { return std::max(0.0, distance - floor); }
};

struct LadderRungReport {
  LadderRung rung;
  bool pdmp = false;
  std::vector<LadderCell> cells;
  std::size_t failures = 0;
  double seconds = 0.0;
};

struct LadderVerdict {
  std::size_t pairs = 0;
  std::size_t decreasing = 0;
  double fraction = 0.0;
  double max_last_tv = 0.0;
  bool trend_pass = false;
  bool tv_pass = false;
  bool pass = false;
};

struct LadderReport {
  std::vector<LadderRungReport> rungs;
  LadderVerdict verdict;
  std::string reference_hash;
  bool reference_from_cache = false;
  std::size_t reference_replicates = 0;
  std::uint64_t root_seed = 0;
  std::vector<double> times;
};

namespace detail {

inline double sample_distance(std::span<const double> a, std::span<const double> b, bool discrete) {
  if (!discrete) return wasserstein1(a, b);
  std::vector<std::int64_t> ia, ib;
  for (double x : a) ia.push_back(std::llround(x));
  for (double x : b) ib.push_back(std::llround(x));
  return tv_distance(empirical_pmf<std::int64_t>(ia), empirical_pmf<std::int64_t>(ib));
}

/// Mean distance between random halves of the reference, rescaled from
/// two samples of size R_ref/2 to samples of sizes (R, R_ref).
inline double split_half_floor(const std::vector<double>& ref, bool discrete, std::size_t r, int splits,
                               std::uint64_t seed) {
  const std::size_t half = ref.size() / 2;
  if (half == 0) return 0.0;
  Rng rng(seed);
  std::vector<std::size_t> idx(ref.size());
  double total = 0.0;
  for (int s = 0; s < splits; ++s) {
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
    std::vector<double> a, b;
    for (std::size_t i = 0; i < half; ++i) a.push_back(ref[idx[i]]);
    for (std::size_t i = half; i < 2 * half; ++i) b.push_back(ref[idx[i]]);
    total += sample_distance(a, b, discrete);
  }
  const double mean = total / splits;
  const double n_ref = static_cast<double>(ref.size());
  return mean * std::sqrt((1.0 / static_cast<double>(r) + 1.0 / n_ref) / (4.0 / n_ref));
}

inline nlohmann::json reference_descriptor(const LadderSpec& spec) {
  std::vector<std::string> names;
  for (const auto& o : spec.observables) names.push_back(o.name);
  return {{"reference_key", spec.reference_key},
          {"k", spec.k},
          {"d0", spec.d0},
          {"T", spec.horizon},
          {"dt_out", spec.dt_out},
          {"times", spec.times},
          {"M", spec.reference_solver.M},
          {"h", spec.reference_solver.h},
          {"replicates", spec.reference_factor * spec.replicates},
          {"root_seed", spec.root_seed},
          {"observables", names}};
}

}  // namespace detail

/// Reference samples [observable][time][replicate] from the high-accuracy
/// PDMP, read from or written to `cache_dir` keyed by the descriptor hash.
inline std::vector<std::vector<std::vector<double>>> reference_samples(const LadderSpec& spec, std::string& hash,
                                                                       bool& from_cache) {
  const nlohmann::json desc = detail::reference_descriptor(spec);
  hash = sha256_hex(desc.dump());
  from_cache = false;
  std::filesystem::path file;
  if (!spec.cache_dir.empty()) {
    file = spec.cache_dir / ("reference-" + hash + ".json");
    std::ifstream in(file);
    if (in) {
      try {
        const auto j = nlohmann::json::parse(in);
        if (j.at("descriptor") == desc) {
          from_cache = true;
          return j.at("samples").get<std::vector<std::vector<std::vector<double>>>>();
        }
      } catch (const nlohmann::json::exception&) {
        // Unreadable cache entries are recomputed.
      }
    }
  }
  const PdmpModel model(*spec.net, spec.k, spec.reference_solver);
  const Field v0 = project(spec.f0, spec.reference_solver.M);
  EnsembleSpec es;
  es.horizon = spec.horizon;
  es.dt_out = spec.dt_out;
  es.times = spec.times;
  es.replicates = spec.reference_factor * spec.replicates;
  es.root_seed = derive_stream_seed(spec.root_seed, 0x7265660000000000ULL);
  es.threads = spec.threads;
  auto samples = sample_ensemble(PdmpSetup{&model, v0, spec.d0, spec.pdmp_options}, es, spec.observables).values;
  if (!file.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(spec.cache_dir, ec);
    const auto tmp = file.string() + ".tmp";
    {
      std::ofstream out(tmp);
      out << nlohmann::json{{"descriptor", desc}, {"samples", samples}}.dump();
    }
    std::filesystem::rename(tmp, file, ec);
  }
  return samples;
}

inline LadderVerdict ladder_verdict(const std::vector<LadderRungReport>& rungs, double pass_fraction,
                                    double tv_limit) {
  LadderVerdict v;
  if (rungs.empty()) return v;
  const auto& first = rungs.front().cells;
  const auto& last = rungs.back().cells;
  for (std::size_t c = 0; c < last.size(); ++c) {
    ++v.pairs;
    const double a = first[c].excess(), b = last[c].excess();
    if (b < a || b == 0.0) ++v.decreasing;
    if (last[c].discrete) v.max_last_tv = std::max(v.max_last_tv, last[c].distance);
  }
  v.fraction = v.pairs ? static_cast<double>(v.decreasing) / static_cast<double>(v.pairs) : 0.0;
  v.trend_pass = v.fraction >= pass_fraction;
  v.tv_pass = v.max_last_tv <= tv_limit;
  v.pass = v.trend_pass && v.tv_pass;
  return v;
}

/// Runs each rung's SSA ensemble and compares its fixed-time marginals with
/// the PDMP reference: W1 for continuous observables, TV for discrete ones.
inline LadderReport convergence_ladder(const LadderSpec& spec) {
  if (spec.net == nullptr || !spec.f0) throw Error(ErrorCode::validation_error, "ladder needs a network and f0");
  if (!spec.pdmp_rung) validate_ladder(spec.rungs, spec.k);
  if (spec.replicates < 2) throw Error(ErrorCode::validation_error, "ladder needs at least 2 replicates");
  LadderReport report;
  report.root_seed = spec.root_seed;
  report.times = spec.times;
  const auto ref = reference_samples(spec, report.reference_hash, report.reference_from_cache);
  report.reference_replicates = ref.empty() || ref[0].empty() ? 0 : ref[0][0].size();

  std::vector<std::vector<double>> floors(spec.observables.size(), std::vector<double>(spec.times.size()));
  for (std::size_t o = 0; o < spec.observables.size(); ++o)
    for (std::size_t t = 0; t < spec.times.size(); ++t)
      floors[o][t] = detail::split_half_floor(ref[o][t], spec.observables[o].discrete(), spec.replicates,
                                              spec.noise_splits, derive_stream_seed(spec.root_seed, 1000 + o * 64 + t));

  EnsembleSpec es;
  es.horizon = spec.horizon;
  es.dt_out = spec.dt_out;
  es.times = spec.times;
  es.replicates = spec.replicates;
  es.threads = spec.threads;

  auto compare = [&](LadderRungReport& rr, const EnsembleSamples& got) {
    rr.failures = got.failures.size();
    for (std::size_t o = 0; o < spec.observables.size(); ++o) {
      for (std::size_t t = 0; t < spec.times.size(); ++t) {
        const bool disc = spec.observables[o].discrete();
        rr.cells.push_back({spec.observables[o].name, spec.times[t], disc,
                            detail::sample_distance(got.values[o][t], ref[o][t], disc), floors[o][t]});
      }
    }
  };

  if (spec.pdmp_rung) {
    const auto start = std::chrono::steady_clock::now();
    const PdmpModel model(*spec.net, spec.k, spec.reference_solver);
    es.root_seed = derive_stream_seed(spec.root_seed, 0x70646d7000000000ULL);
    const auto got = sample_ensemble(PdmpSetup{&model, project(spec.f0, spec.reference_solver.M), spec.d0,
                                               spec.pdmp_options},
                                     es, spec.observables);
    LadderRungReport rr{{spec.reference_solver.M, std::numeric_limits<double>::infinity()}, true, {}, 0, 0.0};
    compare(rr, got);
    rr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.rungs.push_back(std::move(rr));
  }
  for (std::size_t i = 0; i < spec.rungs.size() && !spec.pdmp_rung; ++i) {
    const auto start = std::chrono::steady_clock::now();
    const auto& rung = spec.rungs[i];
    const SsaModel model(*spec.net, Grid(rung.N, spec.k), rung.mu, spec.ssa_options.positivity_guard);
    es.root_seed = derive_stream_seed(spec.root_seed, i + 1);
    const auto got =
        sample_ensemble(SsaSetup{&model, init_state(spec.f0, spec.d0, model), spec.ssa_options}, es, spec.observables);
    LadderRungReport rr{rung, false, {}, 0, 0.0};
    compare(rr, got);
    rr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.rungs.push_back(std::move(rr));
  }
  report.verdict = ladder_verdict(report.rungs, spec.pass_fraction, spec.tv_limit);
  return report;
}

inline nlohmann::json to_json(const LadderReport& r) {
  nlohmann::json rungs = nlohmann::json::array();
  for (const auto& rr : r.rungs) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : rr.cells) {
      nlohmann::json cell{{"observable", c.observable}, {"t", c.t}, {"se_floor", c.floor}};
      cell[c.discrete ? "tv" : "w1"] = c.distance;
      cells.push_back(std::move(cell));
    }
    nlohmann::json jr{{"engine", rr.pdmp ? "pdmp" : "ssa"}, {"N", rr.rung.N}, {"failures", rr.failures},
                      {"seconds", rr.seconds}, {"cells", std::move(cells)}};
    if (!rr.pdmp) {
      jr["mu"] = rr.rung.mu;
      jr["log_N_over_mu"] = rr.rung.scale_ratio();
    }
    rungs.push_back(std::move(jr));
  }
  const auto& v = r.verdict;
  return {{"rungs", std::move(rungs)},
          {"verdict",
           {{"pairs", v.pairs},
            {"decreasing", v.decreasing},
            {"fraction", v.fraction},
            {"max_last_tv", v.max_last_tv},
            {"trend_pass", v.trend_pass},
            {"tv_pass", v.tv_pass},
            {"pass", v.pass}}},
          {"provenance",
           {{"root_seed", r.root_seed},
            {"reference_hash", r.reference_hash},
            {"reference_from_cache", r.reference_from_cache},
            {"reference_replicates", r.reference_replicates},
            {"times", r.times}}}};
}

}  // namespace hrd
