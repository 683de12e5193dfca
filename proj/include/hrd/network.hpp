#pragma once

// Reaction network: species classes, the four-way reaction partition,
// polynomial rate laws and the macrosite weight functions a^r, b^r.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hrd/errors.hpp"

namespace hrd {

/// RC: fast onsite C-only. S1: fast mixed, leaves D alone. RDC_SLOW: slow
/// mixed, acts on a whole macrosite. RD: slow, D only.
enum class ReactionClass { rc, s1, rdc_slow, rd };

constexpr std::string_view to_string(ReactionClass c) {
  switch (c) {
    case ReactionClass::rc: return "RC";
    case ReactionClass::s1: return "S1";
    case ReactionClass::rdc_slow: return "RDC_SLOW";
    case ReactionClass::rd: return "RD";
  }
  return "?";
}

inline std::optional<ReactionClass> parse_reaction_class(std::string_view s) {
  if (s == "RC") return ReactionClass::rc;
  if (s == "S1") return ReactionClass::s1;
  if (s == "RDC_SLOW") return ReactionClass::rdc_slow;
  if (s == "RD") return ReactionClass::rd;
  return std::nullopt;
}

constexpr bool is_fast(ReactionClass c) { return c == ReactionClass::rc || c == ReactionClass::s1; }

namespace detail {
inline double ipow(double x, int n) {
  double r = 1.0;
  while (n > 0) {
    if (n & 1) r *= x;
    x *= x;
    n >>= 1;
  }
  return r;
}
}  // namespace detail

struct RateTerm {
  int conc_exp = 0;   // power of the concentration argument y1
  int count_exp = 0;  // power of the count argument y2
  double coeff = 0.0;

  friend bool operator==(const RateTerm&, const RateTerm&) = default;
};

/// Sparse polynomial in (y1, y2). Duplicate exponent pairs are merged.
class RatePolynomial {
 public:
  RatePolynomial() = default;

  explicit RatePolynomial(std::vector<RateTerm> terms) {
    std::sort(terms.begin(), terms.end(), [](const RateTerm& a, const RateTerm& b) {
      return std::pair(a.conc_exp, a.count_exp) < std::pair(b.conc_exp, b.count_exp);
    });
    for (const auto& t : terms) {
      if (t.conc_exp < 0 || t.count_exp < 0) {
        throw Error(ErrorCode::validation_error, "rate exponents must be nonnegative");
      }
      if (!terms_.empty() && terms_.back().conc_exp == t.conc_exp &&
          terms_.back().count_exp == t.count_exp) {
        terms_.back().coeff += t.coeff;
      } else {
        terms_.push_back(t);
      }
    }
  }

  static RatePolynomial constant(double c) { return RatePolynomial({{0, 0, c}}); }

  double operator()(double y1, double y2 = 0.0) const {
    double v = 0.0;
    for (const auto& t : terms_) v += t.coeff * detail::ipow(y1, t.conc_exp) * detail::ipow(y2, t.count_exp);
    return v;
  }

  double d_dy1(double y1, double y2 = 0.0) const {
    double v = 0.0;
    for (const auto& t : terms_) {
      if (t.conc_exp == 0) continue;
      v += t.coeff * t.conc_exp * detail::ipow(y1, t.conc_exp - 1) * detail::ipow(y2, t.count_exp);
    }
    return v;
  }

  /// Sum of absolute term magnitudes; sets the rounding scale for sign checks.
  double magnitude(double y1, double y2 = 0.0) const {
    double v = 0.0;
    for (const auto& t : terms_)
      v += std::abs(t.coeff * detail::ipow(y1, t.conc_exp) * detail::ipow(y2, t.count_exp));
    return v;
  }

  bool depends_on_concentration() const {
    return std::any_of(terms_.begin(), terms_.end(), [](const RateTerm& t) { return t.conc_exp > 0 && t.coeff != 0.0; });
  }
  bool depends_on_count() const {
    return std::any_of(terms_.begin(), terms_.end(), [](const RateTerm& t) { return t.count_exp > 0 && t.coeff != 0.0; });
  }
  bool is_zero() const {
    return std::all_of(terms_.begin(), terms_.end(), [](const RateTerm& t) { return t.coeff == 0.0; });
  }

  const std::vector<RateTerm>& terms() const { return terms_; }

  friend bool operator==(const RatePolynomial&, const RatePolynomial&) = default;

 private:
  std::vector<RateTerm> terms_;
};

/// Nonnegative weight on [0,1], either a constant or a polynomial in x.
struct WeightFunction {
  enum class Kind { constant, polynomial };

  Kind kind = Kind::constant;
  std::vector<double> coefficients{1.0};  // c_0 + c_1 x + c_2 x^2 + ...
  bool normalize = false;                 // rescale to unit integral at validation

  static WeightFunction constant(double c) { return {Kind::constant, {c}, false}; }
  static WeightFunction polynomial(std::vector<double> c) { return {Kind::polynomial, std::move(c), false}; }

  double operator()(double x) const {
    double v = 0.0;
    for (auto it = coefficients.rbegin(); it != coefficients.rend(); ++it) v = v * x + *it;
    return v;
  }

  /// Exact integral over [a, b] via the antiderivative.
  double integral(double a, double b) const {
    auto anti = [&](double x) {
      double v = 0.0;
      for (std::size_t i = coefficients.size(); i-- > 0;) v = v * x + coefficients[i] / static_cast<double>(i + 1);
      return v * x;
    };
    return anti(b) - anti(a);
  }

  friend bool operator==(const WeightFunction&, const WeightFunction&) = default;
};

/// Smooth cutoff of the rates outside a ball of radius n: lambda^n = eta_n * lambda.
struct TruncationSpec {
  double radius = 1.0;

  /// C-infinity profile: 1 on [0,1], 0 on [2, inf), monotone in between.
  static double profile(double s) {
    if (s <= 1.0) return 1.0;
    if (s >= 2.0) return 0.0;
    auto psi = [](double x) { return x > 0.0 ? std::exp(-1.0 / x) : 0.0; };
    const double x = s - 1.0;
    const double up = psi(1.0 - x);
    return up / (up + psi(x));
  }

  double factor(double y1, double y2) const { return profile((y1 * y1 + y2 * y2) / (radius * radius)); }

  friend bool operator==(const TruncationSpec&, const TruncationSpec&) = default;
};

struct Reaction {
  std::string id;
  ReactionClass cls = ReactionClass::rc;
  int gamma_c = 0;
  int gamma_d = 0;
  RatePolynomial rate;
  std::optional<WeightFunction> a_weight;  // RDC_SLOW only
  std::optional<WeightFunction> b_weight;  // RDC_SLOW only

  friend bool operator==(const Reaction&, const Reaction&) = default;
};

/// Unvalidated network description, as read from a config file.
struct NetworkSpec {
  std::vector<Reaction> reactions;
  double u_max = 10.0;
  int d_max = 1;
  std::optional<double> rho1;
  std::optional<TruncationSpec> truncation;
  int samples_per_axis = 64;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

struct Violation {
  ErrorCode code;
  std::string reaction_id;
  std::string detail;
};

/// Rate of `r` at (y1, y2), multiplied by eta_n when `trunc` is set.
/// Throws NegativeRateAtRuntime if the polynomial is negative there.
inline double eval_rate(const Reaction& r, double y1, double y2, const TruncationSpec* trunc = nullptr) {
  double v = r.rate(y1, y2);
  if (v < 0.0) {
    if (v >= -1e-12 * r.rate.magnitude(y1, y2)) {
      v = 0.0;
    } else {
      std::ostringstream os;
      os << "reaction '" << r.id << "' rate " << v << " at (" << y1 << ", " << y2 << ")";
      throw Error(ErrorCode::negative_rate_at_runtime, os.str());
    }
  }
  if (trunc != nullptr && v != 0.0) v *= trunc->factor(y1, y2);
  return v;
}

struct ValidationResult;
inline ValidationResult validate_network(const NetworkSpec& raw);

/// Immutable, validated network. Only `validate_network` constructs one.
class ReactionNetwork {
 public:
  std::span<const Reaction> reactions(ReactionClass c) const { return by_class_[static_cast<int>(c)]; }
  std::span<const Reaction> fast_onsite() const { return reactions(ReactionClass::rc); }
  std::span<const Reaction> fast_mixed() const { return reactions(ReactionClass::s1); }
  std::span<const Reaction> slow_mixed() const { return reactions(ReactionClass::rdc_slow); }
  std::span<const Reaction> slow_discrete() const { return reactions(ReactionClass::rd); }

  const TruncationSpec* truncation() const { return spec_.truncation ? &*spec_.truncation : nullptr; }
  double u_max() const { return spec_.u_max; }
  int d_max() const { return spec_.d_max; }
  const NetworkSpec& spec() const { return spec_; }

  bool has_fast() const { return !fast_onsite().empty() || !fast_mixed().empty(); }
  bool has_slow() const { return !slow_mixed().empty() || !slow_discrete().empty(); }

  double rate(const Reaction& r, double y1, double y2 = 0.0) const { return eval_rate(r, y1, y2, truncation()); }

  /// Debit of fast onsite reactions, sum_{RC} gamma lambda(y1) + sum_{S1} gamma lambda(y1, y2).
  double debit(double y1, double y2) const {
    double f = 0.0;
    for (const auto& r : fast_onsite()) f += r.gamma_c * rate(r, y1, 0.0);
    for (const auto& r : fast_mixed()) f += r.gamma_c * rate(r, y1, y2);
    return f;
  }

  /// Analytic d/dy1 of the untruncated debit.
  double debit_dy1(double y1, double y2) const {
    double f = 0.0;
    for (const auto& r : fast_onsite()) f += r.gamma_c * r.rate.d_dy1(y1, 0.0);
    for (const auto& r : fast_mixed()) f += r.gamma_c * r.rate.d_dy1(y1, y2);
    return f;
  }

 private:
  friend ValidationResult validate_network(const NetworkSpec& raw);

  explicit ReactionNetwork(NetworkSpec spec) : spec_(std::move(spec)) {
    for (const auto& r : spec_.reactions) by_class_[static_cast<int>(r.cls)].push_back(r);
  }

  NetworkSpec spec_;
  std::vector<Reaction> by_class_[4];
};

struct ValidationResult {
  std::optional<ReactionNetwork> network;  // set iff violations is empty
  std::vector<Violation> violations;
  std::vector<std::string> warnings;

  bool ok() const { return violations.empty(); }
  const ReactionNetwork& value() const;
};

inline const ReactionNetwork& ValidationResult::value() const {
  if (!network) {
    const auto& v = violations.front();
    throw Error(v.code, "reaction '" + v.reaction_id + "': " + v.detail);
  }
  return *network;
}

/// Debit F(y1, y2) of the fast onsite reactions.
inline double debit_F(double y1, double y2, const ReactionNetwork& net) { return net.debit(y1, y2); }

namespace detail {

inline void check_weight(const Reaction& r, const std::optional<WeightFunction>& w, std::string_view name,
                         bool unit_integral, std::vector<Violation>& out, WeightFunction* normalized) {
  if (!w) {
    out.push_back({ErrorCode::unnormalized_weight, r.id, std::string(name) + " is required for RDC_SLOW"});
    return;
  }
  WeightFunction wf = *w;
  if (wf.kind == WeightFunction::Kind::constant && wf.coefficients.size() != 1) {
    out.push_back({ErrorCode::validation_error, r.id, std::string(name) + ": constant weight needs one coefficient"});
    return;
  }
  if (wf.coefficients.empty()) {
    out.push_back({ErrorCode::validation_error, r.id, std::string(name) + ": no coefficients"});
    return;
  }
  constexpr int kSamples = 1025;
  for (int i = 0; i < kSamples; ++i) {
    const double x = static_cast<double>(i) / (kSamples - 1);
    if (wf(x) < 0.0) {
      std::ostringstream os;
      os << name << " negative at x=" << x;
      out.push_back({ErrorCode::validation_error, r.id, os.str()});
      return;
    }
  }
  if (unit_integral) {
    const double integral = wf.integral(0.0, 1.0);
    if (wf.normalize && integral > 0.0) {
      for (auto& c : wf.coefficients) c /= integral;
      wf.normalize = false;
    } else if (std::abs(integral - 1.0) > 1e-12) {
      std::ostringstream os;
      os << name << " integrates to " << integral << ", expected 1";
      out.push_back({ErrorCode::unnormalized_weight, r.id, os.str()});
      return;
    }
  }
  if (normalized) *normalized = wf;
}

}  // namespace detail

/// Checks class/stoichiometry/arity/weight invariants and samples rate
/// nonnegativity on [0, u_max] x {0..d_max}. Modelling caveats (empty fast
/// set, Assumption-2.3-type conditions on F, jumps leaving the box) are
/// warnings only.
inline ValidationResult validate_network(const NetworkSpec& raw) {
  ValidationResult res;
  auto& bad = res.violations;
  NetworkSpec spec = raw;

  if (!(spec.u_max > 0.0) || spec.d_max <= 0) {
    bad.push_back({ErrorCode::validation_error, "", "u_max and d_max must be positive"});
    return res;
  }
  if (spec.truncation && !(spec.truncation->radius > 0.0)) {
    bad.push_back({ErrorCode::validation_error, "", "truncation radius must be positive"});
  }
  const int n_y1 = std::max(2, spec.samples_per_axis);

  for (std::size_t idx = 0; idx < spec.reactions.size(); ++idx) {
    auto& r = spec.reactions[idx];
    if (r.id.empty()) r.id = "r" + std::to_string(idx + 1);

    switch (r.cls) {
      case ReactionClass::rc:
      case ReactionClass::s1:
        if (r.gamma_d != 0) {
          bad.push_back({ErrorCode::mixed_fast_with_d_jump, r.id, "fast reactions must have gamma_d = 0"});
        }
        if (r.cls == ReactionClass::rc && r.rate.depends_on_count()) {
          bad.push_back({ErrorCode::bad_arity, r.id, "RC rate must be univariate in the concentration"});
        }
        if (r.gamma_c == 0) res.warnings.push_back("reaction '" + r.id + "' is fast with gamma_c = 0 (no effect)");
        break;
      case ReactionClass::rd:
        if (r.gamma_c != 0) bad.push_back({ErrorCode::validation_error, r.id, "RD reactions must have gamma_c = 0"});
        if (r.rate.depends_on_concentration()) {
          bad.push_back({ErrorCode::bad_arity, r.id, "RD rate must be univariate in the count"});
        }
        break;
      case ReactionClass::rdc_slow: {
        WeightFunction a_norm, b_norm;
        const std::size_t before = bad.size();
        detail::check_weight(r, r.a_weight, "a_weight", true, bad, &a_norm);
        detail::check_weight(r, r.b_weight, "b_weight", false, bad, &b_norm);
        if (bad.size() == before) {
          r.a_weight = a_norm;
          r.b_weight = b_norm;
        }
        break;
      }
    }
    if (!is_fast(r.cls) && r.gamma_d == 0) {
      bad.push_back({ErrorCode::validation_error, r.id, "slow reactions must change the discrete species"});
    }
    if (is_fast(r.cls) && (r.a_weight || r.b_weight)) {
      res.warnings.push_back("reaction '" + r.id + "': weights ignored for fast reactions");
    }

    // Dense nonnegativity sampling on the validation box.
    const int d_hi = r.cls == ReactionClass::rc ? 0 : spec.d_max;
    const int y1_count = r.cls == ReactionClass::rd ? 1 : n_y1;
    bool negative = false;
    for (int d = 0; d <= d_hi && !negative; ++d) {
      for (int i = 0; i < y1_count && !negative; ++i) {
        const double y1 = spec.u_max * static_cast<double>(i) / static_cast<double>(std::max(1, y1_count - 1));
        const double v = r.rate(y1, d);
        if (!std::isfinite(v) || v < -1e-12 * r.rate.magnitude(y1, d)) {
          std::ostringstream os;
          os << "rate " << v << " at sample point (" << y1 << ", " << d << ")";
          bad.push_back({ErrorCode::negative_rate, r.id, os.str()});
          negative = true;
        }
      }
    }

    // Slow jumps must not leave {0..d_max}: the rate should vanish there.
    if (!is_fast(r.cls) && r.gamma_d != 0 && !negative) {
      for (int d = 0; d <= spec.d_max; ++d) {
        const int next = d + r.gamma_d;
        if (next >= 0 && next <= spec.d_max) continue;
        bool nonzero = false;
        for (int i = 0; i < y1_count; ++i) {
          const double y1 = spec.u_max * static_cast<double>(i) / static_cast<double>(std::max(1, y1_count - 1));
          if (r.rate(y1, d) > 0.0) nonzero = true;
        }
        if (nonzero) {
          std::ostringstream os;
          os << "reaction '" << r.id << "' can move the count from " << d << " to " << next
             << (next < 0 ? " (negative)" : " (outside the validated box)");
          res.warnings.push_back(os.str());
        }
      }
    }
  }

  if (!bad.empty()) return res;

  ReactionNetwork net(spec);
  if (!net.has_fast()) res.warnings.push_back("no RC or S1 reactions: the debit F is identically zero");

  // F(0, y2) >= 0 and, given rho1, F(y1, y2) < 0 beyond rho1.
  for (int d = 0; d <= spec.d_max; ++d) {
    if (net.debit(0.0, d) < 0.0) {
      res.warnings.push_back("F(0, " + std::to_string(d) + ") < 0: positivity of the limit flow is not guaranteed");
      break;
    }
  }
  if (spec.rho1) {
    const double lo = *spec.rho1;
    const double hi = std::max(spec.u_max, 2.0 * lo);
    bool ok = true;
    for (int d = 0; d <= spec.d_max && ok; ++d) {
      for (int i = 1; i <= n_y1 && ok; ++i) {
        const double y1 = lo + (hi - lo) * static_cast<double>(i) / n_y1;
        if (!(net.debit(y1, d) < 0.0)) ok = false;
      }
    }
    if (!ok) res.warnings.push_back("F is not negative beyond rho1: the limit flow may not stay bounded");
  }

  res.network.emplace(std::move(net));
  return res;
}

/// Parameters of the bundled "toggle field" gene model.
struct ToggleFieldParams {
  double production = 0.5;    // a: constant C production
  double degradation = 2.0;   // b: linear C degradation
  double repression = 2.0;    // s: S1 degradation of C when the gene is on
  double activation = 16.0;   // c: activation rate per unit local average
  double deactivation = 1.0;  // e: deactivation rate
  int consumed = -1;          // gamma_c of activation
  double consumed_per_site = 4.0;  // b weight (molecules per microsite, before gamma_c)
  double u_max = 10.0;
};

/// C is produced at rate a and degraded at rate b u (RC); an on-gene adds a
/// degradation channel s u d (S1); each macrosite gene switches on at rate
/// c <a u> (1 - d) consuming C across the macrosite (RDC_SLOW) and off at
/// rate e d (RD).
inline NetworkSpec toggle_field(const ToggleFieldParams& p = {}) {
  NetworkSpec s;
  s.u_max = p.u_max;
  s.d_max = 1;
  s.rho1 = p.production / p.degradation;
  s.reactions.push_back({"production", ReactionClass::rc, +1, 0, RatePolynomial({{0, 0, p.production}}), {}, {}});
  s.reactions.push_back({"degradation", ReactionClass::rc, -1, 0, RatePolynomial({{1, 0, p.degradation}}), {}, {}});
  s.reactions.push_back({"repression", ReactionClass::s1, -1, 0, RatePolynomial({{1, 1, p.repression}}), {}, {}});
  s.reactions.push_back({"activation", ReactionClass::rdc_slow, p.consumed, +1,
                         RatePolynomial({{1, 0, p.activation}, {1, 1, -p.activation}}),
                         WeightFunction::constant(1.0), WeightFunction::constant(p.consumed_per_site)});
  s.reactions.push_back({"deactivation", ReactionClass::rd, 0, -1, RatePolynomial({{0, 1, p.deactivation}}), {}, {}});
  return s;
}

}  // namespace hrd
