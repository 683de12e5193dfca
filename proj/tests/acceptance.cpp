// Acceptance gate: runs every criterion at its stated tolerance and prints
// one PASS/FAIL line each. Arguments select a subset, e.g. `acceptance 1 4`.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hrd/analysis.hpp"
#include "hrd/config.hpp"
#include "hrd/io.hpp"
#include "hrd/stats.hpp"

using namespace hrd;
namespace fs = std::filesystem;

namespace {

const std::string kConfigs = HRD_SOURCE_DIR "/configs/";

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << x;
  return os.str();
}

ReactionNetwork network_of(std::vector<Reaction> rs) {
  NetworkSpec s;
  s.reactions = std::move(rs);
  s.u_max = 10.0;
  s.d_max = 1;
  return validate_network(s).value();
}

std::int64_t total(const MicroState& s) {
  std::int64_t n = 0;
  for (auto x : s.counts) n += x;
  return n;
}

// Criterion 1 ---------------------------------------------------------------

Outcome spectral_exactness() {
  double max_rel = 0.0, max_res = 0.0, max_dense = 0.0;
  bool ok = true;
  for (int n : {4, 8, 16, 32}) {
    std::vector<double> formula;
    for (const auto& p : eigenpairs(n)) {
      const double exact = 2.0 * n * n * (1.0 - std::cos(std::numbers::pi * p.m / n));
      formula.push_back(exact);
      // Rayleigh quotient of the returned vector, independent of the stored beta.
      const Field lap = discrete_laplacian(p.vector);
      const double rayleigh = -inner(p.vector, lap) / inner(p.vector, p.vector);
      for (double beta : {p.beta, rayleigh}) {
        const double err = exact == 0.0 ? std::abs(beta) : std::abs(beta - exact) / exact;
        max_rel = std::max(max_rel, err);
        ok &= err <= 1e-12;
      }
      double res = 0.0;
      for (std::size_t j = 0; j < lap.size(); ++j) res = std::max(res, std::abs(lap[j] + p.beta * p.vector[j]));
      max_res = std::max(max_res, exact == 0.0 ? res : res / exact);
      ok &= exact == 0.0 ? res <= 1e-8 : res <= 1e-8 * exact;
    }
    if (formula.size() != static_cast<std::size_t>(n)) ok = false;
    // Dense symmetric solve of the lattice Laplacian as an outside check.
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (int j = 0; j < n; ++j) {
      a(j, j) = 2.0 * n * n;
      a(j, (j + 1) % n) -= 1.0 * n * n;
      a(j, (j + n - 1) % n) -= 1.0 * n * n;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a, Eigen::EigenvaluesOnly);
    std::vector<double> dense(solver.eigenvalues().data(), solver.eigenvalues().data() + n);
    std::sort(formula.begin(), formula.end());
    std::sort(dense.begin(), dense.end());
    for (int i = 0; i < n; ++i) {
      const double err = std::abs(dense[i] - formula[i]) / std::max(1.0, formula[i]);
      max_dense = std::max(max_dense, err);
    }
  }
  ok &= max_dense <= 1e-12;
  return {ok, "max rel eigenvalue error " + fmt(max_rel) + ", max scaled residual " + fmt(max_res) +
                  ", dense-solver spectrum error " + fmt(max_dense)};
}

// Criterion 2 ---------------------------------------------------------------

Outcome semigroup_contraction() {
  std::mt19937_64 gen(20240602);
  const std::vector<int> sizes{4, 6, 8, 12, 16, 24, 32, 64, 100, 128};
  std::uniform_int_distribution<std::size_t> pick(0, sizes.size() - 1);
  std::uniform_real_distribution<double> val(-1.0, 1.0), logt(-6.0, 0.0);
  int contraction_bad = 0, law_bad = 0;
  double worst_excess = 0.0, worst_law = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = sizes[pick(gen)];
    HeatSemigroup heat(n);
    Field f(static_cast<std::size_t>(n));
    for (std::size_t j = 0; j < f.size(); ++j) f[j] = val(gen);
    const double s = std::pow(10.0, logt(gen)), t = std::pow(10.0, logt(gen));
    const Field tf = heat(f, t);
    const double excess = sup_norm(tf) - sup_norm(f);
    worst_excess = std::max(worst_excess, excess);
    contraction_bad += excess > 1e-12 * sup_norm(f);
    double law = 0.0;
    const Field a = heat(tf, s), b = heat(f, s + t);
    for (std::size_t j = 0; j < a.size(); ++j) law = std::max(law, std::abs(a[j] - b[j]));
    worst_law = std::max(worst_law, law);
    law_bad += law > 1e-10;
  }
  return {contraction_bad == 0 && law_bad == 0,
          "1000 trials: contraction violations " + std::to_string(contraction_bad) + " (max excess " +
              fmt(worst_excess) + "), composition violations " + std::to_string(law_bad) + " (max " +
              fmt(worst_law) + ")"};
}

// Criterion 3 ---------------------------------------------------------------

Outcome ssa_conservation() {
  const auto net = network_of({});
  const SsaModel model(net, Grid(64, 1), 100.0);
  const auto init = init_state(
      [](double x) { return 0.25 + 0.2 * std::sin(2.0 * std::numbers::pi * x); }, {0}, model);
  const std::int64_t before = total(init);
  std::atomic<std::uint64_t> events{0}, breaches{0};
  auto res = run_replicates<int>(100, 0, [&](std::size_t i) {
    SsaEngine eng(model, init);
    Rng rng = Rng::for_stream(31, i);
    std::uint64_t local = 0, bad = 0;
    while (true) {
      const auto e = eng.step(rng, 1.0);
      if (e.kind == EventKind::none || e.kind == EventKind::extinct) break;
      ++local;
      bad += eng.molecule_total() != before;
      if ((local & 63) == 0) bad += total(eng.state()) != before;
    }
    bad += total(eng.state()) != before;
    events += local;
    breaches += bad;
    return 0;
  });
  const bool ok = res.failures.empty() && breaches == 0;
  return {ok, "100 seeds, " + std::to_string(events.load()) + " events, " + std::to_string(breaches.load()) +
                  " count changes (total " + std::to_string(before) + ")"};
}

// Criteria 4 and 9 ----------------------------------------------------------

struct LinearRun {
  std::size_t cells = 0, passed = 0;
  double worst_z = 0.0;
  std::vector<std::string> csv_hashes;
  std::size_t failures = 0;
};

LinearRun linear_mean_field() {
  const Config cfg = parse_config(kConfigs + "linear_birth_death.json");
  const auto net = cfg.build_network();
  const SsaModel model(net, Grid(cfg.N, cfg.k), cfg.mu, cfg.positivity);
  const MicroState init = init_state(cfg.f0.project_to(cfg.N), cfg.d0, model);
  const auto res = run_replicates<Trajectory>(cfg.R, 0, [&](std::size_t i) {
    SsaEngine eng(model, init, cfg.ssa_options());
    Rng rng = Rng::for_stream(cfg.root_seed, i);
    return simulate(eng, cfg.T, RecorderSpec{cfg.dt_out, false}, rng);
  });
  LinearRun out;
  out.failures = res.failures.size();
  if (!res.failures.empty()) return out;

  // du/dt = Lap u + a - b u with a = 2, b = 1: u(t) = a/b + e^{-bt} T(t)(u0 - a/b).
  const double a = 2.0, b = 1.0;
  Field u0(static_cast<std::size_t>(cfg.N));
  for (int j = 0; j < cfg.N; ++j) u0[j] = init.concentration(j) - a / b;
  const HeatSemigroup heat(cfg.N);
  const auto& times = res.values[0]->times;
  for (std::size_t ti = 0; ti < times.size(); ++ti) {
    if (times[ti] <= 0.0) continue;  // the initial state is deterministic
    const Field w = heat(u0, times[ti]);
    for (int j = 0; j < cfg.N; ++j) {
      std::vector<double> xs;
      xs.reserve(cfg.R);
      for (const auto& tr : res.values) xs.push_back(static_cast<double>(tr->counts[ti][j]) / cfg.mu);
      const Summary s = summarize(xs);
      const double oracle = a / b + std::exp(-b * times[ti]) * w[j];
      const double z = std::abs(s.mean - oracle) / s.se;
      out.worst_z = std::max(out.worst_z, z);
      ++out.cells;
      out.passed += z <= 3.0;
    }
  }
  for (const auto& tr : res.values) out.csv_hashes.push_back(sha256_hex(trajectory_csv(*tr)));
  return out;
}

LinearRun first_linear_run;

Outcome mean_field_oracle() {
  first_linear_run = linear_mean_field();
  const auto& r = first_linear_run;
  if (r.failures) return {false, std::to_string(r.failures) + " replicate failures"};
  const double frac = static_cast<double>(r.passed) / static_cast<double>(r.cells);
  return {frac >= 0.95, std::to_string(r.passed) + "/" + std::to_string(r.cells) + " (site, time) cells within 3 SE (" +
                            fmt(100.0 * frac) + "%), max |z| " + fmt(r.worst_z)};
}

Outcome determinism() {
  if (first_linear_run.csv_hashes.empty()) first_linear_run = linear_mean_field();
  const LinearRun again = linear_mean_field();
  std::size_t same = 0;
  for (std::size_t i = 0; i < std::min(again.csv_hashes.size(), first_linear_run.csv_hashes.size()); ++i)
    same += again.csv_hashes[i] == first_linear_run.csv_hashes[i];
  const bool ok = !again.csv_hashes.empty() && again.csv_hashes.size() == first_linear_run.csv_hashes.size() &&
                  same == again.csv_hashes.size();
  return {ok, std::to_string(same) + "/" + std::to_string(again.csv_hashes.size()) +
                  " replicate trajectory CSVs byte-identical on rerun"};
}

// Criteria 5 and 6 ----------------------------------------------------------

Reaction switch_on(const char* id, double c) {
  return {id, ReactionClass::rd, 0, +1, RatePolynomial({{0, 0, c}, {0, 1, -c}}), {}, {}};
}

std::vector<double> first_jump_times(const PdmpModel& model, std::uint64_t seed) {
  PdmpEngine eng(model);
  std::vector<double> out;
  for (int i = 0; i < 10000; ++i) {
    auto rng = Rng::for_stream(seed, static_cast<std::uint64_t>(i));
    auto s = eng.make_state(Field(static_cast<std::size_t>(model.grid().n_sites()), 0.0), {0}, rng);
    if (!eng.advance_to_jump(s, 1e6)) throw std::runtime_error("no jump before the horizon");
    out.push_back(s.t);
  }
  return out;
}

Outcome jump_time_law() {
  std::string detail;
  bool ok = true;
  for (double c : {0.5, 2.0}) {
    const auto net = network_of({switch_on("on", c)});
    const PdmpModel model(net, 1, {4, 1e-2});
    const auto ks = ks_test(first_jump_times(model, 51), [c](double t) { return 1.0 - std::exp(-c * t); });
    ok &= ks.p_value > 0.01;
    detail += "constant " + fmt(c) + ": p=" + fmt(ks.p_value) + "; ";
  }
  // Birth at rate 1 from an empty field gives v(t) = t, so the hazard
  // int v (1 - d) dx = t integrates to t^2 / 2.
  Reaction birth{"birth", ReactionClass::rc, +1, 0, RatePolynomial::constant(1.0), {}, {}};
  Reaction on{"field_on", ReactionClass::rdc_slow, -1, +1, RatePolynomial({{1, 0, 1.0}, {1, 1, -1.0}}), {}, {}};
  on.a_weight = WeightFunction::constant(1.0);
  on.b_weight = WeightFunction::constant(1.0);
  const auto net = network_of({birth, on});
  const PdmpModel model(net, 1, {4, 1e-2});
  const auto ks = ks_test(first_jump_times(model, 52), [](double t) { return 1.0 - std::exp(-0.5 * t * t); });
  ok &= ks.p_value > 0.01;
  detail += "linear: p=" + fmt(ks.p_value) + " (10^4 draws each)";
  return {ok, detail};
}

Outcome transition_frequencies() {
  const auto net = network_of({switch_on("slow", 1.0), switch_on("fast", 3.0)});
  const PdmpModel model(net, 1, {4, 1e-2});
  auto rng = Rng::for_stream(61, 0);
  const int n = 10000;
  int second = 0;
  for (int i = 0; i < n; ++i) second += sample_transition(Field(4, 0.0), {0}, model, rng).reaction == 2;
  const double p = static_cast<double>(second) / n;
  const double se = std::sqrt(0.75 * 0.25 / n);
  return {std::abs(p - 0.75) <= 3.0 * se,
          "frequency " + fmt(p, 4) + " vs 0.75, |z| = " + fmt(std::abs(p - 0.75) / se)};
}

// Criterion 7 ---------------------------------------------------------------

Outcome dynkin_residuals() {
  const Config cfg = parse_config(kConfigs + "toggle_dynkin.json");
  const auto net = cfg.build_network();
  const auto catalog = cylinder_catalog(cfg.k);
  const DynkinSpec spec = dynkin_spec(cfg);
  const SsaModel ssa(net, Grid(cfg.N, cfg.k), cfg.mu, cfg.positivity);
  const PdmpModel pdmp(net, cfg.k, cfg.solver);
  std::size_t points = 0, inside = 0;
  double worst = 0.0;
  std::string worst_at;
  auto tally = [&](const char* gen, const std::vector<DynkinSeries>& series) {
    for (const auto& s : series)
      for (const auto& p : s.points) {
        ++points;
        inside += p.within(3.0);
        const double z = p.se > 0.0 ? std::abs(p.mean) / p.se : (p.mean == 0.0 ? 0.0 : INFINITY);
        if (z > worst) {
          worst = z;
          worst_at = std::string(gen) + "/" + s.name + "@" + fmt(p.t);
        }
      }
  };
  tally("micro", dynkin_residual(SsaSetup{&ssa, init_state(cfg.f0.project_to(cfg.N), cfg.d0, ssa), cfg.ssa_options()},
                                 catalog, spec));
  tally("limit", dynkin_residual(PdmpSetup{&pdmp, cfg.f0.project_to(cfg.solver.M), cfg.d0, cfg.pdmp_options()},
                                 catalog, spec));
  return {points == 18 && inside == points, std::to_string(inside) + "/" + std::to_string(points) +
                                                 " residual means within 3 SE, max |z| " + fmt(worst) + " at " +
                                                 worst_at};
}

// Criterion 8 ---------------------------------------------------------------

Outcome convergence_ladder_criterion() {
  const Config cfg = parse_config(kConfigs + "toggle_ladder.json");
  const auto net = cfg.build_network();
  const fs::path cache = fs::temp_directory_path() / "hrd_acceptance_cache";
  fs::remove_all(cache);
  const LadderSpec spec = ladder_spec(cfg, net, cache);
  const LadderReport rep = convergence_ladder(spec);
  fs::remove_all(cache);
  std::ostringstream os;
  os << rep.verdict.decreasing << "/" << rep.verdict.pairs << " pairs decrease after floor subtraction ("
     << fmt(100.0 * rep.verdict.fraction) << "%), max last-rung TV " << fmt(rep.verdict.max_last_tv);
  os << "; first->last excess:";
  const auto& first = rep.rungs.front().cells;
  const auto& last = rep.rungs.back().cells;
  for (std::size_t i = 0; i < first.size(); ++i)
    os << " " << first[i].observable << "@" << fmt(first[i].t) << " " << fmt(first[i].excess()) << "->"
       << fmt(last[i].excess());
  return {rep.verdict.pass, os.str()};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));
  const unsigned cores = std::max(1u, std::thread::hardware_concurrency());
  // The ladder budget is stated for a 4-core desktop.
  const double ladder_budget = 1800.0 * 4.0 / std::min(4u, cores);
  const std::vector<Criterion> criteria{
      {1, "spectral exactness", 1.0, spectral_exactness},
      {2, "semigroup contraction and law", 5.0, semigroup_contraction},
      {3, "SSA conservation", 60.0, ssa_conservation},
      {4, "mean-field oracle", 300.0, mean_field_oracle},
      {5, "jump-time law", 30.0, jump_time_law},
      {6, "transition-measure frequencies", 10.0, transition_frequencies},
      {7, "Dynkin residuals", 600.0, dynkin_residuals},
      {8, "convergence ladder", ladder_budget, convergence_ladder_criterion},
      {9, "determinism", 300.0, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_seconds;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("[%s] criterion %d %s: %s; %.1f s (budget %.0f s%s)\n", pass ? "PASS" : "FAIL", c.id, c.name,
                o.detail.c_str(), secs, c.budget_seconds, in_time ? "" : ", exceeded");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
