#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hrd/ssa.hpp"
#include "hrd/stats.hpp"

using namespace hrd;

namespace {

ReactionNetwork network_of(std::vector<Reaction> rs, int d_max = 1) {
  NetworkSpec s;
  s.reactions = std::move(rs);
  s.u_max = 10.0;
  s.d_max = d_max;
  return validate_network(s).value();
}

Reaction birth(double a) { return {"birth", ReactionClass::rc, +1, 0, RatePolynomial::constant(a), {}, {}}; }
Reaction death(double b) { return {"death", ReactionClass::rc, -1, 0, RatePolynomial({{1, 0, b}}), {}, {}}; }

std::int64_t total(const MicroState& s) {
  std::int64_t t = 0;
  for (auto x : s.counts) t += x;
  return t;
}

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    m = std::max(m, std::abs(a[i] - b[i]) / scale);
  }
  return m;
}

}  // namespace

TEST(Ssa, InitStateExamples) {
  const auto net = network_of({});
  {
    SsaModel m(net, Grid(8, 2), 100.0);
    const auto s = init_state([](double) { return 1.0; }, {0, 0}, m);
    for (auto x : s.counts) EXPECT_EQ(x, 100);
  }
  {
    SsaModel m(net, Grid(2, 1), 4.0);
    const auto s = init_state([](double x) { return x; }, {0}, m);
    EXPECT_EQ(s.counts, (std::vector<std::int64_t>{1, 3}));
  }
  {
    SsaModel m(net, Grid(8, 4), 10.0);
    const auto s = init_state([](double) { return 0.5; }, {0, 1, 0, 1}, m);
    EXPECT_EQ(s.discrete, (std::vector<std::int64_t>{0, 1, 0, 1}));
    EXPECT_THROW(init_state([](double) { return -0.1; }, {0, 1, 0, 1}, m), Error);
    EXPECT_THROW(init_state([](double) { return 0.1; }, {0, -1, 0, 1}, m), Error);
  }
}

TEST(Ssa, InitialRoundingWithinHalfQuantum) {
  const auto net = network_of({});
  SsaModel m(net, Grid(32, 4), 37.0);
  const auto f0 = [](double x) { return 1.3 + std::sin(2 * std::numbers::pi * x); };
  const Field p = project(f0, 32);
  const auto s = init_state(p, {0, 0, 0, 0}, m);
  for (std::size_t j = 0; j < p.size(); ++j) EXPECT_LE(std::abs(s.concentration(j) - p[j]), 0.5 / 37.0 + 1e-15);
}

TEST(Ssa, DiffusionConservesMoleculesExactly) {
  const auto net = network_of({});
  SsaModel m(net, Grid(16, 4), 20.0);
  const auto s0 = init_state([](double x) { return 1.0 + x; }, {0, 0, 0, 0}, m);
  SsaEngine eng(m, s0);
  auto rng = Rng::for_stream(1, 0);
  const auto before = total(s0);
  for (int i = 0; i < 200000; ++i) {
    const auto e = eng.step(rng);
    ASSERT_TRUE(e.kind == EventKind::diff_left || e.kind == EventKind::diff_right);
    ASSERT_EQ(eng.molecule_total(), before);
  }
  EXPECT_EQ(total(eng.state()), before);
}

TEST(Ssa, FastOnsiteChangesTotalByGamma) {
  const auto net = network_of({birth(1.0), death(1.0)});
  SsaModel m(net, Grid(8, 1), 30.0);
  SsaEngine eng(m, init_state([](double) { return 1.0; }, {0}, m));
  auto rng = Rng::for_stream(2, 0);
  for (int i = 0; i < 100000; ++i) {
    const auto before = eng.molecule_total();
    const auto e = eng.step(rng);
    const auto after = eng.molecule_total();
    if (e.kind == EventKind::fast_onsite) {
      EXPECT_EQ(after - before, m.fast_reaction(e.reaction - 1).gamma_c);
    } else {
      EXPECT_EQ(after, before);
    }
  }
}

TEST(Ssa, WaitingTimeIsExponential) {
  // Single site, empty: the only live channel is birth at rate mu * 0.02 = 2.
  const auto net = network_of({birth(0.02)});
  SsaModel m(net, Grid(1, 1), 100.0);
  const auto s0 = init_state([](double) { return 0.0; }, {0}, m);
  std::vector<double> waits;
  auto rng = Rng::for_stream(3, 0);
  for (int i = 0; i < 10000; ++i) {
    SsaEngine eng(m, s0);
    EXPECT_DOUBLE_EQ(eng.total_propensity(), 2.0);
    waits.push_back(eng.step(rng).time);
  }
  const auto ks = ks_test(waits, [](double t) { return 1.0 - std::exp(-2.0 * t); });
  EXPECT_GT(ks.p_value, 0.01) << "D=" << ks.statistic;
}

TEST(Ssa, PureBirthCountMatchesPoisson) {
  const int n = 8;
  const double mu = 50.0, a = 1.0, t_end = 1.0;
  const auto net = network_of({birth(a)});
  SsaModel m(net, Grid(n, 1), mu);
  const auto s0 = init_state([](double) { return 0.0; }, {0}, m);
  std::vector<double> births;
  for (int rep = 0; rep < 500; ++rep) {
    SsaEngine eng(m, s0);
    auto rng = Rng::for_stream(4, static_cast<std::uint64_t>(rep));
    while (eng.step(rng, t_end).kind != EventKind::none) {
    }
    births.push_back(static_cast<double>(eng.molecule_total()));
  }
  const auto s = summarize(births);
  EXPECT_LE(std::abs(s.mean - n * mu * a * t_end), 3 * s.se);
}

TEST(Ssa, StepHonoursTimeLimit) {
  const auto net = network_of({birth(1.0)});
  SsaModel m(net, Grid(4, 1), 1.0);
  SsaEngine eng(m, init_state([](double) { return 0.0; }, {0}, m));
  auto rng = Rng::for_stream(5, 0);
  const auto e = eng.step(rng, 1e-9);
  EXPECT_EQ(e.kind, EventKind::none);
  EXPECT_EQ(eng.state().t, 1e-9);

  const auto none = network_of({});
  SsaModel z(none, Grid(4, 1), 1.0);
  SsaEngine frozen(z, init_state([](double) { return 0.0; }, {0}, z));
  EXPECT_EQ(frozen.total_propensity(), 0.0);
  EXPECT_EQ(frozen.step(rng).kind, EventKind::extinct);
}

TEST(Ssa, PositivityGuard) {
  const auto net = validate_network(toggle_field()).value();
  SsaModel m(net, Grid(8, 2), 10.0);
  auto s = init_state([](double) { return 1.0; }, {0, 0}, m);
  EXPECT_EQ(positivity_guard(s, m, 0, 1), 1);
  s.counts[2] = 0;
  EXPECT_EQ(positivity_guard(s, m, 0, 1), 0);
  EXPECT_EQ(positivity_guard(s, m, 0, 2), 1);

  // A producing slow reaction never trips the guard.
  auto p = ToggleFieldParams{};
  p.consumed = +1;
  const auto producing = validate_network(toggle_field(p)).value();
  SsaModel mp(producing, Grid(8, 2), 10.0);
  auto z = init_state([](double) { return 0.0; }, {0, 0}, mp);
  EXPECT_EQ(positivity_guard(z, mp, 0, 1), 1);
}

TEST(Ssa, GuardedEngineZeroesBlockedChannel) {
  const auto net = validate_network(toggle_field()).value();
  SsaModel m(net, Grid(8, 2), 10.0);
  auto s = init_state([](double) { return 1.0; }, {0, 0}, m);
  s.counts[1] = 2;  // consumes 4 per site: site 2 cannot pay
  SsaEngine eng(m, s);
  const auto props = eng.propensities();
  // Slow block follows the 8 sites x (3 fast + 2 hops); macrosite 1 activation first.
  const std::size_t slow0 = 8 * 5;
  EXPECT_EQ(props[slow0], 0.0);
  EXPECT_GT(props[slow0 + 2], 0.0);
  EXPECT_EQ(max_rel_diff(props, eng.recompute_propensities()), 0.0);
}

TEST(Ssa, UnguardedEngineReportsNegativityBreach) {
  const auto net = validate_network(toggle_field()).value();
  SsaModel m(net, Grid(4, 1), 10.0, false);
  SsaOptions opt;
  opt.positivity_guard = false;
  // One molecule in total, so an activation overdraws every site.
  auto s = init_state([](double) { return 0.0; }, {0}, m);
  s.counts[0] = 1;
  s.macro_avgs = {m.macro_avg(0, 0, s.counts)};
  SsaEngine eng(m, s, opt);
  auto rng = Rng::for_stream(6, 0);
  bool breached = false;
  for (int i = 0; i < 100000 && !breached; ++i) {
    try {
      if (eng.step(rng).kind == EventKind::extinct) break;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::negativity_breach);
      breached = true;
    }
  }
  EXPECT_TRUE(breached);
}

TEST(Ssa, GuardKeepsStateNonnegativeAcrossSeeds) {
  const auto net = validate_network(toggle_field()).value();
  SsaModel m(net, Grid(8, 2), 5.0);
  const auto s0 = init_state([](double x) { return 0.25 + 0.15 * std::sin(2 * std::numbers::pi * x); }, {0, 1}, m);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    SsaEngine eng(m, s0);
    auto rng = Rng::for_stream(seed, 0);
    while (eng.step(rng, 0.3).kind != EventKind::none) {
      for (auto x : eng.state().counts) ASSERT_GE(x, 0);
      for (auto d : eng.state().discrete) ASSERT_GE(d, 0);
    }
  }
}

TEST(Ssa, IncrementalIndexMatchesRecomputation) {
  const auto net = validate_network(toggle_field()).value();
  SsaModel m(net, Grid(16, 4), 20.0);
  SsaOptions opt;
  opt.rebuild_interval = std::uint64_t{1} << 40;  // exercise the incremental path only
  SsaEngine eng(m, init_state([](double x) { return 0.3 + 0.2 * std::cos(2 * std::numbers::pi * x); },
                              {0, 1, 0, 1}, m),
                opt);
  auto rng = Rng::for_stream(7, 0);
  for (int i = 0; i < 100000; ++i) {
    eng.step(rng);
    ASSERT_LE(max_rel_diff(eng.propensities(), eng.recompute_propensities()), 1e-9) << "event " << i;
    if (i % 1000 == 0) {
      for (int l = 0; l < 4; ++l) {
        const double fresh = m.macro_avg(0, l, eng.state().counts);
        ASSERT_NEAR(eng.state().macro_avgs[l], fresh, 1e-9 * std::max(1.0, fresh));
      }
    }
  }
}

TEST(Ssa, TotalPropensityAfterManyEvents) {
  const auto net = validate_network(toggle_field()).value();
  SsaModel m(net, Grid(32, 4), 50.0);
  SsaEngine eng(m, init_state([](double) { return 0.25; }, {0, 0, 1, 1}, m));
  auto rng = Rng::for_stream(8, 0);
  for (int i = 0; i < 1000000; ++i) eng.step(rng);
  double fresh = 0.0;
  for (double r : eng.recompute_propensities()) fresh += r;
  EXPECT_NEAR(eng.total_propensity(), fresh, 1e-9 * fresh);
}

TEST(Ssa, SimulateRecordsOutputGrid) {
  const auto net = network_of({birth(1.0), death(1.0)});
  SsaModel m(net, Grid(4, 1), 10.0);
  SsaEngine eng(m, init_state([](double) { return 1.0; }, {0}, m));
  auto rng = Rng::for_stream(9, 0);
  const auto tr = simulate(eng, 1.0, {0.1, true}, rng);
  ASSERT_EQ(tr.times.size(), 11u);
  EXPECT_EQ(tr.times.front(), 0.0);
  EXPECT_EQ(tr.times.back(), 1.0);
  EXPECT_FALSE(tr.truncated);
}

TEST(Ssa, ZeroNetworkTrajectoryIsConstant) {
  const auto net = network_of({});
  SsaModel m(net, Grid(4, 2), 10.0);
  SsaEngine eng(m, init_state([](double) { return 0.0; }, {1, 0}, m));
  auto rng = Rng::for_stream(10, 0);
  const auto tr = simulate(eng, 2.0, {0.5, true}, rng);
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    EXPECT_EQ(tr.counts[i], tr.counts[0]);
    EXPECT_EQ(tr.discrete[i], tr.discrete[0]);
  }
}

TEST(Ssa, EventBudgetTruncates) {
  const auto net = network_of({birth(1.0)});
  SsaModel m(net, Grid(4, 1), 100.0);
  SsaOptions opt;
  opt.max_events = 10;
  SsaEngine eng(m, init_state([](double) { return 1.0; }, {0}, m), opt);
  auto rng = Rng::for_stream(11, 0);
  const auto tr = simulate(eng, 1.0, {0.1, true}, rng);
  EXPECT_TRUE(tr.truncated);
  EXPECT_EQ(tr.events, 10u);
  EXPECT_LT(tr.times.size(), 11u);
}

TEST(Ssa, IdenticalSeedsGiveIdenticalTrajectories) {
  const auto net = validate_network(toggle_field()).value();
  SsaModel m(net, Grid(16, 4), 20.0);
  const auto s0 = init_state([](double) { return 0.3; }, {0, 0, 1, 1}, m);
  auto run = [&] {
    SsaEngine eng(m, s0);
    auto rng = Rng::for_stream(12, 3);
    return simulate(eng, 0.5, {0.05, true}, rng);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.counts, b.counts);
  EXPECT_EQ(a.discrete, b.discrete);
  EXPECT_EQ(a.times, b.times);
}

TEST(Ssa, DiffusionMeanFollowsHeatSemigroup) {
  const int n = 32;
  const double mu = 100.0;
  const auto net = network_of({});
  SsaModel m(net, Grid(n, 1), mu);
  const auto s0 = init_state([](double x) { return 0.5 + 0.3 * std::sin(2 * std::numbers::pi * x); }, {0}, m);
  const Field expected = heat_semigroup(s0.concentrations(), 1.0);
  std::vector<std::vector<double>> per_site(n);
  for (int rep = 0; rep < 200; ++rep) {
    SsaEngine eng(m, s0);
    auto rng = Rng::for_stream(13, static_cast<std::uint64_t>(rep));
    const auto tr = simulate(eng, 1.0, {1.0, false}, rng);
    const Field u = tr.concentration(tr.times.size() - 1);
    for (int j = 0; j < n; ++j) per_site[j].push_back(u[j]);
  }
  for (int j = 0; j < n; ++j) {
    const auto s = summarize(per_site[j]);
    EXPECT_LE(std::abs(s.mean - expected[j]), 3 * s.se) << "site " << j + 1;
  }
}

TEST(Ssa, ObserverSeesPiecewiseConstantIntervals) {
  const auto net = network_of({birth(1.0), death(1.0)});
  SsaModel m(net, Grid(4, 1), 10.0);
  SsaEngine eng(m, init_state([](double) { return 1.0; }, {0}, m));
  struct Cover {
    double covered = 0.0, last = 0.0;
    bool contiguous = true;
    void interval(double t0, double t1, const SsaEngine&) {
      contiguous = contiguous && t0 == last && t1 >= t0;
      covered += t1 - t0;
      last = t1;
    }
  } cover;
  auto rng = Rng::for_stream(14, 0);
  simulate(eng, 1.0, {0.25, false}, rng, cover);
  EXPECT_TRUE(cover.contiguous);
  EXPECT_NEAR(cover.covered, 1.0, 1e-12);
}

TEST(Ssa, SingleSiteHopsLeaveTheCountAlone) {
  const auto net = network_of({});
  SsaModel m(net, Grid(1, 1), 50.0);
  SsaEngine eng(m, init_state([](double) { return 0.4; }, {0}, m), {});
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) eng.step(rng);
  EXPECT_EQ(eng.state().counts[0], 20);
  EXPECT_EQ(eng.propensities(), eng.recompute_propensities());
}
