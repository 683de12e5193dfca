#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hrd/analysis.hpp"
#include "hrd/errors.hpp"
#include "hrd/lattice.hpp"
#include "hrd/network.hpp"
#include "hrd/pdmp.hpp"
#include "hrd/ssa.hpp"

namespace hrd {

using Json = nlohmann::ordered_json;

struct ConfigIssue {
  std::string path;  // dotted key path, e.g. "grid.N"
  std::string reason;
  int line = 0;  // parse errors only
  int column = 0;
  std::string code = "ValidationError";

  friend bool operator==(const ConfigIssue&, const ConfigIssue&) = default;
};

/// Thrown by parse_config with every issue found; code() is ParseError for
/// malformed text and ValidationError (or the network's own code) otherwise.
class ConfigError : public Error {
 public:
  ConfigError(ErrorCode code, std::vector<ConfigIssue> issues)
      : Error(code, summary(issues)), issues_(std::move(issues)) {}

  const std::vector<ConfigIssue>& issues() const { return issues_; }

 private:
  static std::string summary(const std::vector<ConfigIssue>& issues) {
    std::ostringstream os;
    for (std::size_t i = 0; i < issues.size(); ++i) {
      if (i) os << "; ";
      const auto& is = issues[i];
      if (is.line > 0) os << "line " << is.line << ", column " << is.column << ": ";
      if (!is.path.empty()) os << is.path << ": ";
      os << is.reason;
    }
    return os.str();
  }

  std::vector<ConfigIssue> issues_;
};

/// Initial concentration f0: a polynomial in x, a sine profile
/// mean + amplitude sin(2 pi mode x), or a constant.
struct InitialProfile {
  enum class Kind { polynomial, sine, constant };

  Kind kind = Kind::constant;
  std::vector<double> coefficients;
  double mean = 0.0;
  double amplitude = 0.0;
  int mode = 1;
  double value = 1.0;

  std::function<double(double)> function() const {
    switch (kind) {
      case Kind::polynomial: {
        const auto c = coefficients;
        return [c](double x) {
          double v = 0.0;
          for (auto it = c.rbegin(); it != c.rend(); ++it) v = v * x + *it;
          return v;
        };
      }
      case Kind::sine: {
        const double m = mean, a = amplitude, w = 2.0 * std::numbers::pi * mode;
        return [m, a, w](double x) { return m + a * std::sin(w * x); };
      }
      case Kind::constant: {
        const double v = value;
        return [v](double) { return v; };
      }
    }
    return {};
  }

  /// Cell averages on an n-site grid (exact for polynomials).
  Field project_to(int n) const {
    if (kind == Kind::polynomial) return project_polynomial(coefficients, n);
    return project(function(), n);
  }

  friend bool operator==(const InitialProfile&, const InitialProfile&) = default;
};

enum class EngineChoice { ssa, pdmp, both };

struct StudyConfig {
  std::vector<LadderRung> ladder;
  std::vector<double> times{0.5, 1.0};
  std::vector<std::string> observables{"mass", "sin", "macro"};
  std::vector<double> dynkin_times{0.25, 0.5, 1.0};
  double dynkin_dt_out = 0.001;
  std::size_t reference_factor = 4;
  int reference_M = 512;
  double reference_h = 5e-4;
  std::string cache_dir;

  friend bool operator==(const StudyConfig& a, const StudyConfig& b) {
    auto rungs = [](const StudyConfig& s) {
      std::vector<std::pair<int, double>> v;
      for (const auto& r : s.ladder) v.emplace_back(r.N, r.mu);
      return v;
    };
    return rungs(a) == rungs(b) && a.times == b.times && a.observables == b.observables &&
           a.dynkin_times == b.dynkin_times && a.dynkin_dt_out == b.dynkin_dt_out &&
           a.reference_factor == b.reference_factor && a.reference_M == b.reference_M &&
           a.reference_h == b.reference_h && a.cache_dir == b.cache_dir;
  }
};

struct Config {
  int N = 32;
  int k = 1;
  double mu = 100.0;
  double T = 1.0;
  double dt_out = 0.01;
  NetworkSpec network;
  std::string network_preset;  // preset the reactions came from, if any (printed as network.origin)
  InitialProfile f0;
  std::vector<std::int64_t> d0;
  EngineChoice engine = EngineChoice::ssa;
  PdmpSolver solver;
  std::size_t R = 1;
  std::uint64_t root_seed = 0;
  bool positivity = true;
  std::optional<double> truncation_n;
  std::uint64_t max_events = 10'000'000'000ULL;
  std::uint64_t max_jumps = 1'000'000;
  double wall_seconds = 0.0;
  StudyConfig study;

  friend bool operator==(const Config&, const Config&) = default;

  /// Validated network with the configured truncation applied.
  ReactionNetwork build_network() const {
    NetworkSpec s = network;
    if (truncation_n) s.truncation = TruncationSpec{*truncation_n};
    return validate_network(s).value();
  }

  SsaOptions ssa_options() const {
    SsaOptions o;
    o.positivity_guard = positivity;
    o.max_events = max_events;
    o.wall_seconds = wall_seconds;
    return o;
  }

  PdmpOptions pdmp_options() const { return {max_jumps, wall_seconds}; }
};

constexpr std::string_view to_string(EngineChoice e) {
  switch (e) {
    case EngineChoice::ssa: return "ssa";
    case EngineChoice::pdmp: return "pdmp";
    case EngineChoice::both: return "both";
  }
  return "?";
}

namespace detail {

inline std::pair<int, int> line_column(std::string_view text, std::size_t byte) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

/// Typed, path-tracking reader that collects issues instead of throwing.
class Reader {
 public:
  explicit Reader(std::vector<ConfigIssue>& issues) : issues_(&issues) {}

  void fail(const std::string& path, const std::string& reason, std::string code = "ValidationError") {
    issues_->push_back({path, reason, 0, 0, std::move(code)});
  }

  const Json* section(const Json& root, const std::string& key, bool required) {
    if (!root.contains(key)) {
      if (required) fail(key, "required section is missing");
      return nullptr;
    }
    if (!root.at(key).is_object()) {
      fail(key, "must be an object");
      return nullptr;
    }
    return &root.at(key);
  }

  void known(const Json& obj, const std::string& path, std::initializer_list<std::string_view> keys) {
    for (const auto& [k, v] : obj.items()) {
      bool ok = false;
      for (auto key : keys) ok |= k == key;
      if (!ok) fail(join(path, k), "unknown key");
    }
  }

  template <typename T>
  bool get(const Json& obj, const std::string& path, const std::string& key, T& out, bool required) {
    const std::string p = join(path, key);
    if (!obj.contains(key) || obj.at(key).is_null()) {
      if (required) fail(p, "required key is missing");
      return false;
    }
    const Json& v = obj.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
        if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
          throw std::invalid_argument("expected a nonnegative integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw std::invalid_argument("expected a string");
      }
      out = v.get<T>();
      return true;
    } catch (const std::exception& e) {
      fail(p, e.what());
      return false;
    }
  }

  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }

 private:
  std::vector<ConfigIssue>* issues_;
};

inline std::optional<WeightFunction> read_weight(Reader& rd, const Json& v, const std::string& path) {
  WeightFunction w;
  const Json* coeffs = &v;
  if (v.is_object()) {
    rd.known(v, path, {"coefficients", "normalize"});
    if (!v.contains("coefficients")) {
      rd.fail(path + ".coefficients", "required key is missing");
      return std::nullopt;
    }
    coeffs = &v.at("coefficients");
    if (v.contains("normalize")) rd.get(v, path, "normalize", w.normalize, false);
  } else if (v.is_number()) {
    w.kind = WeightFunction::Kind::constant;
    w.coefficients = {v.get<double>()};
    return w;
  }
  if (!coeffs->is_array() || coeffs->empty()) {
    rd.fail(path, "expected a nonempty list of coefficients");
    return std::nullopt;
  }
  w.coefficients.clear();
  for (const auto& c : *coeffs) {
    if (!c.is_number()) {
      rd.fail(path, "coefficients must be numbers");
      return std::nullopt;
    }
    w.coefficients.push_back(c.get<double>());
  }
  w.kind = w.coefficients.size() == 1 ? WeightFunction::Kind::constant : WeightFunction::Kind::polynomial;
  return w;
}

inline Json write_weight(const WeightFunction& w) {
  Json c = w.coefficients;
  if (!w.normalize) return c;
  return Json{{"coefficients", c}, {"normalize", true}};
}

inline void read_network(Reader& rd, const Json& net, Config& cfg) {
  rd.known(net, "network", {"preset", "origin", "params", "reactions", "u_max", "d_max", "rho1", "samples_per_axis"});
  std::string preset;
  if (rd.get(net, "network", "preset", preset, false)) {
    if (preset != "toggle_field") {
      rd.fail("network.preset", "unknown preset '" + preset + "' (available: toggle_field)");
      return;
    }
    ToggleFieldParams p;
    if (net.contains("params")) {
      const Json& q = net.at("params");
      if (!q.is_object()) {
        rd.fail("network.params", "must be an object");
      } else {
        rd.known(q, "network.params",
                 {"production", "degradation", "repression", "activation", "deactivation", "consumed",
                  "consumed_per_site", "u_max"});
        rd.get(q, "network.params", "production", p.production, false);
        rd.get(q, "network.params", "degradation", p.degradation, false);
        rd.get(q, "network.params", "repression", p.repression, false);
        rd.get(q, "network.params", "activation", p.activation, false);
        rd.get(q, "network.params", "deactivation", p.deactivation, false);
        rd.get(q, "network.params", "consumed", p.consumed, false);
        rd.get(q, "network.params", "consumed_per_site", p.consumed_per_site, false);
        rd.get(q, "network.params", "u_max", p.u_max, false);
      }
    }
    if (net.contains("reactions")) rd.fail("network.reactions", "give either a preset or a reaction list, not both");
    cfg.network = toggle_field(p);
    cfg.network_preset = preset;
    return;
  }
  if (net.contains("params")) rd.fail("network.params", "only valid with a preset");
  rd.get(net, "network", "origin", cfg.network_preset, false);
  NetworkSpec& s = cfg.network;
  s = NetworkSpec{};
  rd.get(net, "network", "u_max", s.u_max, false);
  rd.get(net, "network", "d_max", s.d_max, false);
  double rho1 = 0.0;
  if (rd.get(net, "network", "rho1", rho1, false)) s.rho1 = rho1;
  rd.get(net, "network", "samples_per_axis", s.samples_per_axis, false);
  if (!net.contains("reactions") || !net.at("reactions").is_array()) {
    rd.fail("network.reactions", "required list of reactions is missing");
    return;
  }
  const Json& list = net.at("reactions");
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string path = "network.reactions[" + std::to_string(i) + "]";
    const Json& r = list[i];
    if (!r.is_object()) {
      rd.fail(path, "must be an object");
      continue;
    }
    rd.known(r, path, {"id", "class", "gamma_c", "gamma_d", "rate", "a_weight", "b_weight"});
    Reaction rx;
    rd.get(r, path, "id", rx.id, false);
    std::string cls;
    if (rd.get(r, path, "class", cls, true)) {
      if (const auto c = parse_reaction_class(cls)) {
        rx.cls = *c;
      } else {
        rd.fail(path + ".class", "unknown class '" + cls + "' (RC, S1, RDC_SLOW, RD)");
      }
    }
    rd.get(r, path, "gamma_c", rx.gamma_c, false);
    rd.get(r, path, "gamma_d", rx.gamma_d, false);
    std::vector<RateTerm> terms;
    if (!r.contains("rate") || !r.at("rate").is_array()) {
      rd.fail(path + ".rate", "required list of [i, j, coeff] triples is missing");
    } else {
      for (const auto& t : r.at("rate")) {
        if (!t.is_array() || t.size() != 3 || !t[0].is_number_integer() || !t[1].is_number_integer() ||
            !t[2].is_number() || t[0].get<int>() < 0 || t[1].get<int>() < 0) {
          rd.fail(path + ".rate", "each term must be [i, j, coeff] with nonnegative integer exponents");
          continue;
        }
        terms.push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<double>()});
      }
    }
    rx.rate = RatePolynomial(std::move(terms));
    if (r.contains("a_weight")) rx.a_weight = read_weight(rd, r.at("a_weight"), path + ".a_weight");
    if (r.contains("b_weight")) rx.b_weight = read_weight(rd, r.at("b_weight"), path + ".b_weight");
    s.reactions.push_back(std::move(rx));
  }
}

inline void read_initial(Reader& rd, const Json& init, Config& cfg) {
  rd.known(init, "initial", {"f0", "d0"});
  if (!init.contains("f0")) {
    rd.fail("initial.f0", "required key is missing");
  } else {
    const Json& f = init.at("f0");
    InitialProfile& p = cfg.f0;
    if (f.is_array()) {
      p.kind = InitialProfile::Kind::polynomial;
      for (const auto& c : f) {
        if (!c.is_number()) rd.fail("initial.f0", "polynomial coefficients must be numbers");
        else p.coefficients.push_back(c.get<double>());
      }
      if (p.coefficients.empty()) rd.fail("initial.f0", "empty polynomial");
    } else if (f.is_number()) {
      p.kind = InitialProfile::Kind::constant;
      p.value = f.get<double>();
    } else if (f.is_object()) {
      std::string profile;
      rd.get(f, "initial.f0", "profile", profile, true);
      if (profile == "sine") {
        rd.known(f, "initial.f0", {"profile", "mean", "amplitude", "mode"});
        p.kind = InitialProfile::Kind::sine;
        rd.get(f, "initial.f0", "mean", p.mean, true);
        rd.get(f, "initial.f0", "amplitude", p.amplitude, true);
        rd.get(f, "initial.f0", "mode", p.mode, false);
        if (std::abs(p.amplitude) > p.mean) rd.fail("initial.f0", "sine profile would be negative");
      } else if (profile == "constant") {
        rd.known(f, "initial.f0", {"profile", "value"});
        p.kind = InitialProfile::Kind::constant;
        rd.get(f, "initial.f0", "value", p.value, true);
      } else if (!profile.empty()) {
        rd.fail("initial.f0.profile", "unknown profile '" + profile + "' (sine, constant)");
      }
    } else {
      rd.fail("initial.f0", "expected coefficients, a number or a profile object");
    }
    if (p.kind == InitialProfile::Kind::constant && p.value < 0.0) rd.fail("initial.f0", "must be nonnegative");
  }
  if (!init.contains("d0") || !init.at("d0").is_array()) {
    rd.fail("initial.d0", "required list of k integers is missing");
  } else {
    for (const auto& d : init.at("d0")) {
      if (!d.is_number_integer() || d.get<std::int64_t>() < 0) rd.fail("initial.d0", "entries must be integers >= 0");
      else cfg.d0.push_back(d.get<std::int64_t>());
    }
  }
}

inline void read_study(Reader& rd, const Json& st, Config& cfg) {
  rd.known(st, "study", {"ladder", "times", "observables", "dynkin_times", "dynkin_dt_out", "reference_factor",
                         "reference_M", "reference_h", "cache_dir"});
  StudyConfig& s = cfg.study;
  if (st.contains("ladder")) {
    const Json& l = st.at("ladder");
    if (!l.is_array()) rd.fail("study.ladder", "expected a list of {N, mu}");
    for (std::size_t i = 0; l.is_array() && i < l.size(); ++i) {
      const std::string path = "study.ladder[" + std::to_string(i) + "]";
      if (!l[i].is_object()) {
        rd.fail(path, "expected {N, mu}");
        continue;
      }
      rd.known(l[i], path, {"N", "mu"});
      LadderRung r;
      rd.get(l[i], path, "N", r.N, true);
      rd.get(l[i], path, "mu", r.mu, true);
      s.ladder.push_back(r);
    }
  }
  rd.get(st, "study", "times", s.times, false);
  rd.get(st, "study", "observables", s.observables, false);
  rd.get(st, "study", "dynkin_times", s.dynkin_times, false);
  rd.get(st, "study", "dynkin_dt_out", s.dynkin_dt_out, false);
  rd.get(st, "study", "reference_factor", s.reference_factor, false);
  rd.get(st, "study", "reference_M", s.reference_M, false);
  rd.get(st, "study", "reference_h", s.reference_h, false);
  rd.get(st, "study", "cache_dir", s.cache_dir, false);
}

inline bool valid_observable_name(const std::string& n) {
  if (n == "mass" || n == "sin" || n == "cos" || n == "macro" || n == "jumps") return true;
  if (n.rfind("point:", 0) == 0) {
    try {
      const double x = std::stod(n.substr(6));
      return x >= 0.0 && x <= 1.0;
    } catch (const std::exception&) {
      return false;
    }
  }
  if (n.rfind("macro:", 0) == 0) {
    try {
      return std::stoi(n.substr(6)) >= 1;
    } catch (const std::exception&) {
      return false;
    }
  }
  return false;
}

inline void check(Reader& rd, const Config& c) {
  if (c.k < 1) rd.fail("grid.k", "must be at least 1");
  if (c.N < 1) rd.fail("grid.N", "must be at least 1");
  else if (c.k >= 1 && c.N % c.k != 0) rd.fail("grid.N", "not a multiple of k");
  if (!(c.mu > 0.0)) rd.fail("scale.mu", "must be positive");
  if (!(c.T > 0.0)) rd.fail("horizon.T", "must be positive");
  if (!(c.dt_out > 0.0)) rd.fail("horizon.dt_out", "must be positive");
  else if (c.dt_out > c.T) rd.fail("horizon.dt_out", "must not exceed T");
  if (c.R < 1) rd.fail("ensemble.R", "must be at least 1");
  if (c.k >= 1 && c.d0.size() != static_cast<std::size_t>(c.k)) rd.fail("initial.d0", "must have k entries");
  if (c.solver.M < 1 || (c.k >= 1 && c.solver.M % c.k != 0)) rd.fail("pdmp_solver.M", "must be a positive multiple of k");
  if (!(c.solver.h > 0.0)) rd.fail("pdmp_solver.h", "must be positive");
  if (c.truncation_n && !(*c.truncation_n > 0.0)) rd.fail("guards.truncation_n", "must be positive");
  if (c.wall_seconds < 0.0) rd.fail("budgets.wall_seconds", "must be nonnegative");
  if (c.max_events == 0) rd.fail("budgets.max_events", "must be positive");
  if (c.max_jumps == 0) rd.fail("budgets.max_jumps", "must be positive");
  const auto& s = c.study;
  for (double t : s.times)
    if (!(t > 0.0 && t <= c.T)) rd.fail("study.times", "times must lie in (0, T]");
  for (double t : s.dynkin_times)
    if (!(t > 0.0 && t <= c.T)) rd.fail("study.dynkin_times", "times must lie in (0, T]");
  if (!(s.dynkin_dt_out > 0.0)) rd.fail("study.dynkin_dt_out", "must be positive");
  if (s.reference_factor < 1) rd.fail("study.reference_factor", "must be at least 1");
  if (s.reference_M < 1 || (c.k >= 1 && s.reference_M % c.k != 0)) {
    rd.fail("study.reference_M", "must be a positive multiple of k");
  }
  if (!(s.reference_h > 0.0)) rd.fail("study.reference_h", "must be positive");
  for (const auto& o : s.observables) {
    if (!valid_observable_name(o)) rd.fail("study.observables", "unknown observable '" + o + "'");
    else if (o.rfind("macro:", 0) == 0 && std::stoi(o.substr(6)) > c.k) rd.fail("study.observables", o + " exceeds k");
  }
  if (!s.ladder.empty() && c.k >= 1) {
    try {
      validate_ladder(s.ladder, c.k);
    } catch (const Error& e) {
      rd.fail("study.ladder", e.what(), "LadderNotAdmissible");
    }
  }
  const auto vr = validate_network([&] {
    NetworkSpec n = c.network;
    if (c.truncation_n && *c.truncation_n > 0.0) n.truncation = TruncationSpec{*c.truncation_n};
    return n;
  }());
  for (const auto& v : vr.violations) {
    std::string path = "network";
    for (std::size_t i = 0; i < c.network.reactions.size(); ++i)
      if (!v.reaction_id.empty() && (c.network.reactions[i].id == v.reaction_id ||
                                     (c.network.reactions[i].id.empty() && v.reaction_id == "r" + std::to_string(i + 1))))
        path = "network.reactions[" + std::to_string(i) + "]";
    rd.fail(path, v.detail, std::string(to_string(v.code)));
  }
  if (vr.ok()) {
    for (double x : {0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0})
      if (!(c.f0.function()(x) >= 0.0)) {
        rd.fail("initial.f0", "must be nonnegative on [0, 1]");
        break;
      }
  }
}

}  // namespace detail

/// Parses and validates config text; throws ConfigError listing every issue.
inline Config parse_config_text(std::string_view text) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto [line, col] = detail::line_column(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ConfigError(ErrorCode::parse_error, {{"", e.what(), line, col, "ParseError"}});
  }
  std::vector<ConfigIssue> issues;
  detail::Reader rd(issues);
  Config cfg;
  if (!root.is_object()) {
    throw ConfigError(ErrorCode::parse_error, {{"", "top level must be an object", 1, 1, "ParseError"}});
  }
  rd.known(root, "", {"grid", "scale", "horizon", "network", "initial", "engine", "pdmp_solver", "ensemble", "guards",
                      "budgets", "study"});
  if (const Json* g = rd.section(root, "grid", true)) {
    rd.known(*g, "grid", {"N", "k"});
    rd.get(*g, "grid", "N", cfg.N, true);
    rd.get(*g, "grid", "k", cfg.k, true);
  }
  if (const Json* s = rd.section(root, "scale", true)) {
    rd.known(*s, "scale", {"mu"});
    rd.get(*s, "scale", "mu", cfg.mu, true);
  }
  if (const Json* h = rd.section(root, "horizon", true)) {
    rd.known(*h, "horizon", {"T", "dt_out"});
    rd.get(*h, "horizon", "T", cfg.T, true);
    rd.get(*h, "horizon", "dt_out", cfg.dt_out, true);
  }
  if (const Json* n = rd.section(root, "network", true)) detail::read_network(rd, *n, cfg);
  if (const Json* i = rd.section(root, "initial", true)) detail::read_initial(rd, *i, cfg);
  if (root.contains("engine")) {
    std::string e;
    if (rd.get(root, "", "engine", e, false)) {
      if (e == "ssa") cfg.engine = EngineChoice::ssa;
      else if (e == "pdmp") cfg.engine = EngineChoice::pdmp;
      else if (e == "both") cfg.engine = EngineChoice::both;
      else rd.fail("engine", "expected ssa, pdmp or both");
    }
  }
  if (const Json* p = rd.section(root, "pdmp_solver", false)) {
    rd.known(*p, "pdmp_solver", {"M", "h", "monitor_error"});
    rd.get(*p, "pdmp_solver", "M", cfg.solver.M, false);
    rd.get(*p, "pdmp_solver", "h", cfg.solver.h, false);
    rd.get(*p, "pdmp_solver", "monitor_error", cfg.solver.monitor_error, false);
  }
  if (const Json* e = rd.section(root, "ensemble", false)) {
    rd.known(*e, "ensemble", {"R", "root_seed"});
    rd.get(*e, "ensemble", "R", cfg.R, false);
    rd.get(*e, "ensemble", "root_seed", cfg.root_seed, false);
  }
  if (const Json* g = rd.section(root, "guards", false)) {
    rd.known(*g, "guards", {"positivity", "truncation_n"});
    rd.get(*g, "guards", "positivity", cfg.positivity, false);
    double n = 0.0;
    if (rd.get(*g, "guards", "truncation_n", n, false)) cfg.truncation_n = n;
  }
  if (const Json* b = rd.section(root, "budgets", false)) {
    rd.known(*b, "budgets", {"max_events", "max_jumps", "wall_seconds"});
    rd.get(*b, "budgets", "max_events", cfg.max_events, false);
    rd.get(*b, "budgets", "max_jumps", cfg.max_jumps, false);
    rd.get(*b, "budgets", "wall_seconds", cfg.wall_seconds, false);
  }
  // Default study times are fractions of the horizon.
  cfg.study.times = {0.5 * cfg.T, cfg.T};
  cfg.study.dynkin_times = {0.25 * cfg.T, 0.5 * cfg.T, cfg.T};
  if (const Json* s = rd.section(root, "study", false)) detail::read_study(rd, *s, cfg);
  if (issues.empty()) detail::check(rd, cfg);
  if (!issues.empty()) {
    bool network_only = true;
    for (const auto& is : issues) network_only &= is.code != "ValidationError";
    ErrorCode code = ErrorCode::validation_error;
    if (network_only) {
      for (int c = 0; c <= static_cast<int>(ErrorCode::io_error); ++c)
        if (to_string(static_cast<ErrorCode>(c)) == issues.front().code) code = static_cast<ErrorCode>(c);
    }
    throw ConfigError(code, std::move(issues));
  }
  return cfg;
}

inline Config parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Resolved form: presets are expanded into explicit reactions.
inline Json to_json(const Config& c) {
  Json reactions = Json::array();
  for (const auto& r : c.network.reactions) {
    Json rate = Json::array();
    for (const auto& t : r.rate.terms()) rate.push_back(Json::array({t.conc_exp, t.count_exp, t.coeff}));
    Json jr{{"id", r.id}, {"class", to_string(r.cls)}, {"gamma_c", r.gamma_c}, {"gamma_d", r.gamma_d},
            {"rate", rate}};
    if (r.a_weight) jr["a_weight"] = detail::write_weight(*r.a_weight);
    if (r.b_weight) jr["b_weight"] = detail::write_weight(*r.b_weight);
    reactions.push_back(std::move(jr));
  }
  Json net = Json::object();
  if (!c.network_preset.empty()) net["origin"] = c.network_preset;
  net["u_max"] = c.network.u_max;
  net["d_max"] = c.network.d_max;
  if (c.network.rho1) net["rho1"] = *c.network.rho1;
  net["samples_per_axis"] = c.network.samples_per_axis;
  net["reactions"] = std::move(reactions);

  Json f0;
  switch (c.f0.kind) {
    case InitialProfile::Kind::polynomial: f0 = c.f0.coefficients; break;
    case InitialProfile::Kind::sine:
      f0 = {{"profile", "sine"}, {"mean", c.f0.mean}, {"amplitude", c.f0.amplitude}, {"mode", c.f0.mode}};
      break;
    case InitialProfile::Kind::constant: f0 = {{"profile", "constant"}, {"value", c.f0.value}}; break;
  }
  Json guards{{"positivity", c.positivity}};
  if (c.truncation_n) guards["truncation_n"] = *c.truncation_n;
  Json ladder = Json::array();
  for (const auto& r : c.study.ladder) ladder.push_back({{"N", r.N}, {"mu", r.mu}});
  return Json{
      {"grid", {{"N", c.N}, {"k", c.k}}},
      {"scale", {{"mu", c.mu}}},
      {"horizon", {{"T", c.T}, {"dt_out", c.dt_out}}},
      {"network", std::move(net)},
      {"initial", {{"f0", std::move(f0)}, {"d0", c.d0}}},
      {"engine", to_string(c.engine)},
      {"pdmp_solver", {{"M", c.solver.M}, {"h", c.solver.h}, {"monitor_error", c.solver.monitor_error}}},
      {"ensemble", {{"R", c.R}, {"root_seed", c.root_seed}}},
      {"guards", std::move(guards)},
      {"budgets", {{"max_events", c.max_events}, {"max_jumps", c.max_jumps}, {"wall_seconds", c.wall_seconds}}},
      {"study",
       {{"ladder", std::move(ladder)},
        {"times", c.study.times},
        {"observables", c.study.observables},
        {"dynkin_times", c.study.dynkin_times},
        {"dynkin_dt_out", c.study.dynkin_dt_out},
        {"reference_factor", c.study.reference_factor},
        {"reference_M", c.study.reference_M},
        {"reference_h", c.study.reference_h},
        {"cache_dir", c.study.cache_dir}}}};
}

inline std::string print_config(const Config& c) { return to_json(c).dump(2) + "\n"; }

/// Observables named in a study: mass, sin, cos, point:x, macro (all k),
/// macro:l and jumps.
inline std::vector<Observable> study_observables(const Config& c) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  std::vector<Observable> out;
  for (const auto& n : c.study.observables) {
    if (n == "mass") out.push_back(Observable::inner_product("mass", [](double) { return 1.0; }));
    else if (n == "sin") out.push_back(Observable::inner_product("sin", [=](double x) { return std::sin(two_pi * x); }));
    else if (n == "cos") out.push_back(Observable::inner_product("cos", [=](double x) { return std::cos(two_pi * x); }));
    else if (n == "jumps") out.push_back(Observable::jump_count());
    else if (n == "macro")
      for (int l = 1; l <= c.k; ++l) out.push_back(Observable::macro_count(l));
    else if (n.rfind("macro:", 0) == 0) out.push_back(Observable::macro_count(std::stoi(n.substr(6))));
    else if (n.rfind("point:", 0) == 0) out.push_back(Observable::point_value(std::stod(n.substr(6))));
  }
  return out;
}

/// Ladder study described by a config; `net` must outlive the spec.
inline LadderSpec ladder_spec(const Config& c, const ReactionNetwork& net, const std::filesystem::path& default_cache) {
  LadderSpec spec;
  spec.net = &net;
  spec.k = c.k;
  spec.f0 = c.f0.function();
  spec.d0 = c.d0;
  spec.horizon = c.T;
  spec.dt_out = c.dt_out;
  spec.times = c.study.times;
  spec.rungs = c.study.ladder;
  spec.replicates = std::max<std::size_t>(2, c.R);
  spec.root_seed = c.root_seed;
  spec.observables = study_observables(c);
  spec.ssa_options = c.ssa_options();
  spec.pdmp_options = c.pdmp_options();
  spec.reference_solver = {c.study.reference_M, c.study.reference_h, false};
  spec.reference_factor = c.study.reference_factor;
  spec.cache_dir = c.study.cache_dir.empty() ? default_cache : std::filesystem::path(c.study.cache_dir);
  const Json resolved = to_json(c);
  spec.reference_key =
      Json{{"network", resolved["network"]}, {"initial", resolved["initial"]}, {"guards", resolved["guards"]}}.dump();
  return spec;
}

inline DynkinSpec dynkin_spec(const Config& c) {
  DynkinSpec spec;
  spec.horizon = c.T;
  spec.dt_out = c.study.dynkin_dt_out;
  spec.times = c.study.dynkin_times;
  spec.replicates = std::max<std::size_t>(2, c.R);
  spec.root_seed = c.root_seed;
  return spec;
}

}  // namespace hrd
