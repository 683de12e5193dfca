#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "hrd/pdmp.hpp"
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

// Gene switching on at rate c while off; independent of the field.
Reaction switch_on(double c) {
  return {"on", ReactionClass::rd, 0, +1, RatePolynomial({{0, 0, c}, {0, 1, -c}}), {}, {}};
}

// Switching on at rate int a v while off.
Reaction field_switch_on(double c) {
  Reaction r{"field_on", ReactionClass::rdc_slow, -1, +1, RatePolynomial({{1, 0, c}, {1, 1, -c}}), {}, {}};
  r.a_weight = WeightFunction::constant(1.0);
  r.b_weight = WeightFunction::constant(1.0);
  return r;
}

double max_abs_diff(const Field& a, const Field& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<double> first_jump_times(const PdmpModel& model, int reps, std::uint64_t seed, double horizon) {
  PdmpEngine eng(model);
  std::vector<double> out;
  for (int i = 0; i < reps; ++i) {
    auto rng = Rng::for_stream(seed, static_cast<std::uint64_t>(i));
    auto s = eng.make_state(Field(static_cast<std::size_t>(model.grid().n_sites()), 0.0), {0}, rng);
    EXPECT_TRUE(eng.advance_to_jump(s, horizon));
    out.push_back(s.t);
  }
  return out;
}

}  // namespace

TEST(Pdmp, ZeroReactionFlowIsHeatSemigroup) {
  const auto net = network_of({});
  PdmpModel model(net, 1, {64, 1e-3});
  PdmpEngine eng(model);
  const Field v = project([](double x) { return 1.0 + std::sin(2 * std::numbers::pi * x) + 0.3 * std::cos(6 * std::numbers::pi * x); }, 64);
  EXPECT_LE(max_abs_diff(eng.flow(v, {0}, 1e-3), heat_semigroup(v, 1e-3)), 1e-14);
}

TEST(Pdmp, LinearReactionMatchesClosedForm) {
  const double a = 2.0, b = 1.0, c = 0.7, h = 1e-3;
  const auto net = network_of({birth(a), death(b)});
  PdmpModel model(net, 1, {16, h});
  PdmpEngine eng(model);
  const Field out = eng.flow(Field(16, c), {0}, h);
  const double exact = c * std::exp(-b * h) + a / b * (1 - std::exp(-b * h));
  for (double x : out) EXPECT_NEAR(x, exact, 1e-8);
}

TEST(Pdmp, StrangSplittingIsSecondOrder) {
  // Nonlinear reaction on non-constant smooth data so that the splitting error is visible.
  Reaction quad{"quad", ReactionClass::s1, -1, 0, RatePolynomial({{2, 1, 3.0}}), {}, {}};
  const auto net = network_of({birth(1.0), death(2.0), quad});
  const double horizon = 0.1;
  auto run = [&](double h) {
    PdmpModel model(net, 1, {32, h, false});
    PdmpEngine eng(model);
    Field v = project([](double x) { return 1.0 + 0.5 * std::sin(2 * std::numbers::pi * x); }, 32);
    const auto steps = static_cast<int>(std::lround(horizon / h));
    for (int i = 0; i < steps; ++i) eng.flow_step(v, {1}, h);
    return v;
  };
  const Field ref = run(0.02 / 256);
  const double e1 = max_abs_diff(run(0.02), ref);
  const double e2 = max_abs_diff(run(0.01), ref);
  const double ratio = e1 / e2;
  EXPECT_GT(ratio, 3.5);
  EXPECT_LT(ratio, 8.5);
}

TEST(Pdmp, HazardExamples) {
  const auto none = network_of({birth(1.0)});
  PdmpModel m0(none, 2, {8, 1e-3});
  EXPECT_EQ(m0.hazard(Field(8, 1.0), {0, 1}), 0.0);

  const auto rd = network_of({Reaction{"const", ReactionClass::rd, 0, -1, RatePolynomial({{0, 1, 1.5}}), {}, {}}});
  PdmpModel m1(rd, 4, {8, 1e-3});
  EXPECT_DOUBLE_EQ(m1.hazard(Field(8, 0.0), {1, 1, 1, 1}), 4 * 1.5);

  Reaction lin{"lin", ReactionClass::rdc_slow, -1, +1, RatePolynomial({{1, 0, 1.0}, {1, 1, -1.0}}), {}, {}};
  lin.a_weight = WeightFunction::constant(1.0);
  lin.b_weight = WeightFunction::constant(1.0);
  const auto mixed = network_of({lin});
  PdmpModel m2(mixed, 4, {16, 1e-3});
  const double u0 = 0.8;
  for (int l = 0; l < 4; ++l) EXPECT_NEAR(m2.channel_rate(0, l, Field(16, u0), {0, 0, 0, 0}), u0 / 4, 1e-15);
  EXPECT_NEAR(m2.hazard(Field(16, u0), {0, 0, 0, 0}), u0, 1e-15);
}

TEST(Pdmp, ZeroHazardNeverJumps) {
  const auto net = network_of({birth(1.0), switch_on(1.0)});
  PdmpModel model(net, 1, {8, 1e-2});
  PdmpEngine eng(model);
  auto rng = Rng::for_stream(1, 0);
  auto s = eng.make_state(Field(8, 0.0), {1}, rng);  // already on: rate 0
  EXPECT_FALSE(eng.advance_to_jump(s, 3.0));
  EXPECT_EQ(s.t, 3.0);
  EXPECT_EQ(s.hazard_accum, 0.0);
}

TEST(Pdmp, ConstantHazardJumpTimesAreExponential) {
  for (double c : {0.5, 2.0}) {
    const auto net = network_of({switch_on(c)});
    PdmpModel model(net, 1, {4, 1e-2});
    const auto times = first_jump_times(model, 10000, 2, 1e6);
    const auto ks = ks_test(times, [c](double t) { return 1.0 - std::exp(-c * t); });
    EXPECT_GT(ks.p_value, 0.01) << "c=" << c << " D=" << ks.statistic;
  }
}

TEST(Pdmp, LinearHazardJumpTimes) {
  // Constant production from zero: the spatial mean is exactly t, so Lambda(t) = t.
  const auto net = network_of({birth(1.0), field_switch_on(1.0)});
  PdmpModel model(net, 1, {4, 1e-2});
  const auto times = first_jump_times(model, 10000, 3, 1e6);
  const auto ks = ks_test(times, [](double t) { return 1.0 - std::exp(-0.5 * t * t); });
  EXPECT_GT(ks.p_value, 0.01) << "D=" << ks.statistic;
}

TEST(Pdmp, TransitionFrequencies) {
  const auto net = network_of({switch_on(1.0), Reaction{"fast_on", ReactionClass::rd, 0, +1,
                                                         RatePolynomial({{0, 0, 3.0}, {0, 1, -3.0}}), {}, {}}});
  PdmpModel model(net, 1, {4, 1e-2});
  auto rng = Rng::for_stream(4, 0);
  const int n = 10000;
  int second = 0;
  for (int i = 0; i < n; ++i) {
    const auto t = sample_transition(Field(4, 0.0), {0}, model, rng);
    EXPECT_NE(t.gamma_d, 0);
    EXPECT_EQ(t.nu_after[0], 1);
    second += t.reaction == 2;
  }
  const double p = static_cast<double>(second) / n;
  EXPECT_LE(std::abs(p - 0.75), 3 * std::sqrt(0.75 * 0.25 / n));
}

TEST(Pdmp, SingleEligibleChannelAndZeroHazard) {
  const auto net = network_of({switch_on(1.0)});
  PdmpModel model(net, 2, {4, 1e-2});
  auto rng = Rng::for_stream(5, 0);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_transition(Field(4, 0.0), {1, 0}, model, rng).macro, 2);
  EXPECT_THROW(sample_transition(Field(4, 0.0), {1, 1}, model, rng), Error);
}

TEST(Pdmp, NoSlowReactionsIsPurePde) {
  const auto net = network_of({birth(2.0), death(1.0)});
  PdmpModel model(net, 1, {32, 1e-3});
  PdmpEngine eng(model);
  auto rng = Rng::for_stream(6, 0);
  const Field v0 = project([](double x) { return 0.5 + 0.25 * std::sin(2 * std::numbers::pi * x); }, 32);
  auto s = eng.make_state(v0, {0}, rng);
  const auto tr = simulate_pdmp(eng, s, 1.0, 0.25, rng);
  EXPECT_TRUE(tr.jumps.empty());
  // Linear flow: exact mild solution is e^{-t} T(t) v0 + 2 (1 - e^{-t}).
  Field exact = heat_semigroup(v0, 1.0);
  for (auto& x : exact) x = std::exp(-1.0) * x + 2.0 * (1 - std::exp(-1.0));
  EXPECT_LE(max_abs_diff(tr.fields.back(), exact), 1e-9);
}

TEST(Pdmp, HeatOnlyConservesMean) {
  const auto net = network_of({});
  PdmpModel model(net, 1, {64, 1e-3});
  PdmpEngine eng(model);
  auto rng = Rng::for_stream(7, 0);
  const Field v0 = project([](double x) { return std::exp(std::cos(2 * std::numbers::pi * x)); }, 64);
  auto s = eng.make_state(v0, {0}, rng);
  const auto tr = simulate_pdmp(eng, s, 1.0, 0.1, rng);
  const double m0 = inner(v0, Field(64, 1.0));
  for (const auto& f : tr.fields) EXPECT_NEAR(inner(f, Field(64, 1.0)), m0, 1e-12);
}

TEST(Pdmp, JumpLogMatchesDiscretePath) {
  const auto net = validate_network(toggle_field()).value();
  PdmpModel model(net, 4, {64, 1e-3});
  PdmpEngine eng(model);
  auto rng = Rng::for_stream(8, 0);
  auto s = eng.make_state(Field(64, 0.25), {0, 1, 0, 1}, rng);
  const auto tr = simulate_pdmp(eng, s, 2.0, 0.01, rng);
  ASSERT_FALSE(tr.jumps.empty());
  auto nu = tr.discrete.front();
  std::size_t next_jump = 0;
  for (std::size_t i = 1; i < tr.times.size(); ++i) {
    while (next_jump < tr.jumps.size() && tr.jumps[next_jump].t <= tr.times[i]) {
      EXPECT_EQ(tr.jumps[next_jump].nu_before, nu);
      nu = tr.jumps[next_jump].nu_after;
      ++next_jump;
    }
    EXPECT_EQ(tr.discrete[i], nu);
  }
  EXPECT_EQ(next_jump, tr.jumps.size());
  for (std::size_t i = 1; i < tr.jumps.size(); ++i) EXPECT_GT(tr.jumps[i].t, tr.jumps[i - 1].t);
}

TEST(Pdmp, RestartIsBitIdentical) {
  const auto net = validate_network(toggle_field()).value();
  PdmpModel model(net, 4, {64, 1e-3});
  const Field v0 = project([](double x) { return 0.25 + 0.15 * std::sin(2 * std::numbers::pi * x); }, 64);

  PdmpEngine direct_eng(model);
  auto rng_a = Rng::for_stream(9, 0);
  auto a = direct_eng.make_state(v0, {0, 1, 0, 1}, rng_a);
  const auto direct = simulate_pdmp(direct_eng, a, 2.0, 0.1, rng_a);

  PdmpEngine split_eng(model);
  auto rng_b = Rng::for_stream(9, 0);
  auto b = split_eng.make_state(v0, {0, 1, 0, 1}, rng_b);
  simulate_pdmp(split_eng, b, 1.0, 0.1, rng_b);
  const auto second = simulate_pdmp(split_eng, b, 1.0, 0.1, rng_b);

  EXPECT_EQ(a.t, b.t);
  EXPECT_EQ(a.field, b.field);
  EXPECT_EQ(a.nu, b.nu);
  EXPECT_EQ(direct.fields.back(), second.fields.back());
}

TEST(Pdmp, ToggleFlowStaysInInvariantBand) {
  const auto net = validate_network(toggle_field()).value();
  PdmpModel model(net, 4, {64, 1e-3});
  PdmpEngine eng(model);
  const double rho1 = *net.spec().rho1, rho2 = 0.4;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto rng = Rng::for_stream(10, seed);
    auto s = eng.make_state(
        project([](double x) { return 0.2 + 0.2 * std::sin(2 * std::numbers::pi * x); }, 64), {0, 0, 1, 1}, rng);
    const auto tr = simulate_pdmp(eng, s, 1.0, 0.05, rng);
    for (const auto& f : tr.fields) {
      for (double x : f) {
        EXPECT_GE(x, 0.0);
        EXPECT_LT(x, std::max(rho1, rho2) + 1.0);
      }
    }
    EXPECT_EQ(tr.negative_steps, 0u);
  }
}

TEST(Pdmp, JumpCountMatchesIntegratedHazard) {
  const auto net = validate_network(toggle_field()).value();
  PdmpModel model(net, 4, {64, 1e-3});
  PdmpEngine eng(model);
  std::vector<double> residual;
  for (int rep = 0; rep < 500; ++rep) {
    auto rng = Rng::for_stream(11, static_cast<std::uint64_t>(rep));
    auto s = eng.make_state(Field(64, 0.25), {0, 1, 0, 1}, rng);
    const auto tr = simulate_pdmp(eng, s, 1.0, 0.005, rng);
    double integral = 0.0;
    for (std::size_t i = 1; i < tr.times.size(); ++i) {
      const double l0 = model.hazard(tr.fields[i - 1], tr.discrete[i - 1]);
      const double l1 = model.hazard(tr.fields[i], tr.discrete[i]);
      integral += 0.5 * (l0 + l1) * (tr.times[i] - tr.times[i - 1]);
    }
    residual.push_back(static_cast<double>(tr.jumps.size()) - integral);
  }
  const auto s = summarize(residual);
  EXPECT_LE(std::abs(s.mean), 3 * s.se);
}

TEST(Pdmp, JumpBudgetTruncates) {
  Reaction flip_on{"on", ReactionClass::rd, 0, +1, RatePolynomial({{0, 0, 50.0}, {0, 1, -50.0}}), {}, {}};
  Reaction flip_off{"off", ReactionClass::rd, 0, -1, RatePolynomial({{0, 1, 50.0}}), {}, {}};
  const auto net = network_of({flip_on, flip_off});
  PdmpModel model(net, 1, {4, 1e-2});
  PdmpEngine eng(model);
  auto rng = Rng::for_stream(12, 0);
  auto s = eng.make_state(Field(4, 0.0), {0}, rng);
  PdmpOptions opt;
  opt.max_jumps = 5;
  const auto tr = simulate_pdmp(eng, s, 10.0, 1.0, rng, opt);
  EXPECT_TRUE(tr.truncated);
  EXPECT_EQ(tr.jumps.size(), 5u);
}
