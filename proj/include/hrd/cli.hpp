#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hrd/analysis.hpp"
#include "hrd/config.hpp"
#include "hrd/io.hpp"
#include "hrd/lattice.hpp"
#include "hrd/network.hpp"
#include "hrd/pdmp.hpp"
#include "hrd/ssa.hpp"

namespace hrd::cli {

inline constexpr std::string_view kVersion = "hrd 1.0.0";

enum Exit : int { ok = 0, validation_failure = 1, budget_exhausted = 2, internal_error = 3 };

inline int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::negative_rate:
    case ErrorCode::bad_arity:
    case ErrorCode::unnormalized_weight:
    case ErrorCode::mixed_fast_with_d_jump:
    case ErrorCode::invalid_grid:
    case ErrorCode::negative_initial:
    case ErrorCode::ladder_not_admissible:
    case ErrorCode::quadrature_too_coarse:
    case ErrorCode::parse_error:
    case ErrorCode::validation_error: return validation_failure;
    case ErrorCode::event_budget_exceeded:
    case ErrorCode::jump_budget_exceeded: return budget_exhausted;
    default: return internal_error;
  }
}

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> replicates;
  bool quiet = false;
};

class Runner {
 public:
  Runner(Options opt, std::ostream& out, std::ostream& err) : opt_(std::move(opt)), out_(out), err_(err) {}

  int run(const std::string& command) {
    try {
      if (opt_.config.empty()) throw Error(ErrorCode::validation_error, "--config is required");
      if (command == "validate") return validate();
      cfg_ = parse_config(opt_.config);
      if (opt_.seed) cfg_.root_seed = *opt_.seed;
      if (opt_.replicates) {
        if (*opt_.replicates < 1) throw Error(ErrorCode::validation_error, "--replicates must be at least 1");
        cfg_.R = *opt_.replicates;
      }
      if (command == "spectrum") return spectrum();
      net_.emplace(cfg_.build_network());
      if (command == "ssa") return ssa();
      if (command == "pdmp") return pdmp();
      if (command == "converge") return converge();
      if (command == "dynkin") return dynkin();
      throw Error(ErrorCode::validation_error, "unknown subcommand '" + command + "'");
    } catch (const ConfigError& e) {
      nlohmann::ordered_json issues = nlohmann::ordered_json::array();
      for (const auto& is : e.issues()) {
        nlohmann::ordered_json j{{"code", is.code}, {"path", is.path}, {"reason", is.reason}};
        if (is.line > 0) {
          j["line"] = is.line;
          j["column"] = is.column;
        }
        issues.push_back(std::move(j));
      }
      report_error(to_string(e.code()), e.what(), {{"issues", issues}});
      return exit_code_for(e.code());
    } catch (const Error& e) {
      report_error(to_string(e.code()), e.what());
      return exit_code_for(e.code());
    } catch (const std::exception& e) {
      report_error("InternalError", e.what());
      return internal_error;
    }
  }

 private:
  void report_error(std::string_view code, std::string_view message, nlohmann::ordered_json extra = {}) {
    nlohmann::ordered_json j{{"error", code}, {"message", message}};
    if (extra.is_object())
      for (auto& [k, v] : extra.items()) j[k] = v;
    err_ << j.dump() << std::endl;
  }

  void say(const std::string& line) {
    if (!opt_.quiet) out_ << line << '\n';
  }

  std::filesystem::path out_dir() const {
    if (!opt_.out.empty()) return opt_.out;
    if (const char* env = std::getenv("HRD_OUT"); env != nullptr && *env != '\0') return env;
    return "out";
  }

  nlohmann::ordered_json provenance() const {
    return {{"tool", kVersion}, {"root_seed", cfg_.root_seed}, {"config_sha256", sha256_hex(to_json(cfg_).dump())}};
  }

  static std::string replicate_name(const std::string& stem, std::size_t i, std::size_t r, const char* ext) {
    if (r == 1) return stem + ext;
    std::ostringstream os;
    os << stem << '_' << std::setw(4) << std::setfill('0') << i << ext;
    return os.str();
  }

  int validate() {
    nlohmann::ordered_json report{{"config", opt_.config}};
    int code = ok;
    try {
      cfg_ = parse_config(opt_.config);
      const auto vr = validate_network([&] {
        NetworkSpec n = cfg_.network;
        if (cfg_.truncation_n) n.truncation = TruncationSpec{*cfg_.truncation_n};
        return n;
      }());
      report["valid"] = true;
      report["warnings"] = vr.warnings;
      report["reactions"] = cfg_.network.reactions.size();
    } catch (const ConfigError& e) {
      report["valid"] = false;
      nlohmann::ordered_json issues = nlohmann::ordered_json::array();
      for (const auto& is : e.issues()) issues.push_back({{"code", is.code}, {"path", is.path}, {"reason", is.reason}});
      report["violations"] = issues;
      code = exit_code_for(e.code());
      report_error(to_string(e.code()), e.what(), {{"issues", issues}});
    }
    out_ << report.dump(2) << '\n';
    return code;
  }

  int spectrum() {
    const int n = cfg_.N;
    const auto pairs = eigenpairs(n);
    std::string csv = "m,mode,beta,beta_formula,eigen_residual,orthonormality_residual\n";
    for (const auto& p : pairs) {
      const Field lap = discrete_laplacian(p.vector);
      double eig = 0.0;
      for (std::size_t j = 0; j < lap.size(); ++j) eig = std::max(eig, std::abs(lap[j] + p.beta * p.vector[j]));
      double orth = 0.0;
      for (const auto& q : pairs) {
        const double target = (&q == &p) ? 1.0 : 0.0;
        orth = std::max(orth, std::abs(inner(p.vector, q.vector) - target));
      }
      csv += std::to_string(p.m) + "," + std::string(to_string(p.mode)) + "," + format_double(p.beta) + "," +
             format_double(laplacian_eigenvalue(p.m, n)) + "," + format_double(eig) + "," + format_double(orth) + "\n";
    }
    OutputDir dir(out_dir());
    dir.write("spectrum.csv", csv, {{"rows", pairs.size()}});
    dir.finish(to_json(cfg_), {{"command", "spectrum"}, {"provenance", provenance()}});
    say("spectrum: " + std::to_string(pairs.size()) + " eigenpairs for N=" + std::to_string(n) + " -> " +
        (dir.dir() / dir.versioned("spectrum.csv")).string());
    return ok;
  }

  int ssa() {
    const SsaModel model(*net_, Grid(cfg_.N, cfg_.k), cfg_.mu, cfg_.positivity);
    const MicroState init = init_state(cfg_.f0.project_to(cfg_.N), cfg_.d0, model);
    const SsaOptions sopt = cfg_.ssa_options();
    auto res = run_replicates<Trajectory>(
        cfg_.R, 0,
        [&](std::size_t i) {
          SsaEngine eng(model, init, sopt);
          Rng rng = Rng::for_stream(cfg_.root_seed, i);
          return simulate(eng, cfg_.T, RecorderSpec{cfg_.dt_out, true}, rng);
        },
        1.0);
    OutputDir dir(out_dir());
    nlohmann::ordered_json reps = nlohmann::ordered_json::array();
    bool truncated = false;
    for (std::size_t i = 0; i < cfg_.R; ++i) {
      nlohmann::ordered_json rep{{"replicate", i}};
      if (!res.values[i]) {
        for (const auto& f : res.failures)
          if (f.replicate == i) rep["failure"] = {{"code", f.code}, {"message", f.message}};
        reps.push_back(std::move(rep));
        continue;
      }
      const Trajectory& tr = *res.values[i];
      truncated |= tr.truncated;
      const auto csv = replicate_name("trajectory", i, cfg_.R, ".csv");
      const auto log = replicate_name("jumps", i, cfg_.R, ".jsonl");
      dir.write(csv, trajectory_csv(tr), {{"replicate", i}, {"truncated", tr.truncated}});
      dir.write(log, jump_log_jsonl(tr.jumps), {{"replicate", i}});
      rep["events"] = tr.events;
      rep["jumps"] = tr.jumps.size();
      rep["snapshots"] = tr.times.size();
      rep["truncated"] = tr.truncated;
      if (tr.truncated) rep["truncation_reason"] = tr.truncation_reason;
      reps.push_back(std::move(rep));
    }
    return finish_run(dir, "ssa", reps, truncated, res.failures);
  }

  int pdmp() {
    const PdmpModel model(*net_, cfg_.k, cfg_.solver);
    const Field v0 = cfg_.f0.project_to(cfg_.solver.M);
    const PdmpOptions popt = cfg_.pdmp_options();
    auto res = run_replicates<PdmpTrajectory>(
        cfg_.R, 0,
        [&](std::size_t i) {
          PdmpEngine eng(model);
          Rng rng = Rng::for_stream(cfg_.root_seed, i);
          PdmpState st = eng.make_state(v0, cfg_.d0, rng);
          return simulate_pdmp(eng, st, cfg_.T, cfg_.dt_out, rng, popt);
        },
        1.0);
    OutputDir dir(out_dir());
    nlohmann::ordered_json reps = nlohmann::ordered_json::array();
    bool truncated = false;
    for (std::size_t i = 0; i < cfg_.R; ++i) {
      nlohmann::ordered_json rep{{"replicate", i}};
      if (!res.values[i]) {
        for (const auto& f : res.failures)
          if (f.replicate == i) rep["failure"] = {{"code", f.code}, {"message", f.message}};
        reps.push_back(std::move(rep));
        continue;
      }
      const PdmpTrajectory& tr = *res.values[i];
      truncated |= tr.truncated;
      dir.write(replicate_name("trajectory", i, cfg_.R, ".csv"), trajectory_csv(tr, cfg_.N),
                {{"replicate", i}, {"truncated", tr.truncated}});
      dir.write(replicate_name("jumps", i, cfg_.R, ".jsonl"), jump_log_jsonl(tr.jumps), {{"replicate", i}});
      rep["jumps"] = tr.jumps.size();
      rep["snapshots"] = tr.times.size();
      rep["min_field"] = tr.min_field;
      rep["negative_steps"] = tr.negative_steps;
      rep["step_error_estimate"] = tr.step_error_estimate;
      rep["step_error_flags"] = tr.step_error_flags;
      rep["truncated"] = tr.truncated;
      if (tr.truncated) rep["truncation_reason"] = tr.truncation_reason;
      reps.push_back(std::move(rep));
    }
    return finish_run(dir, "pdmp", reps, truncated, res.failures);
  }

  int finish_run(OutputDir& dir, const char* engine, const nlohmann::ordered_json& reps, bool truncated,
                 const std::vector<ReplicateFailure>& failures) {
    nlohmann::ordered_json summary{{"engine", engine},
                                   {"replicates", cfg_.R},
                                   {"truncated", truncated},
                                   {"failures", failures.size()},
                                   {"runs", reps},
                                   {"provenance", provenance()}};
    dir.write("summary.json", summary.dump(2) + "\n");
    dir.finish(to_json(cfg_), {{"command", engine}, {"provenance", provenance()}});
    say(std::string(engine) + ": " + std::to_string(cfg_.R) + " replicate(s) -> " + dir.dir().string());
    if (!failures.empty()) {
      report_error(failures.front().code, failures.front().message, {{"failures", failures.size()}});
      return internal_error;
    }
    if (truncated) {
      std::string code = "EventBudgetExceeded";
      for (const auto& r : reps)
        if (r.contains("truncation_reason") && r["truncation_reason"].get<std::string>().starts_with("jump"))
          code = "JumpBudgetExceeded";
      report_error(code, "run stopped at the budget; outputs are partial and flagged truncated");
      return budget_exhausted;
    }
    return ok;
  }

  int converge() {
    if (cfg_.study.ladder.empty()) throw Error(ErrorCode::validation_error, "study.ladder is empty");
    const LadderSpec spec = ladder_spec(cfg_, *net_, out_dir() / "cache");
    const auto resolved = to_json(cfg_);
    const LadderReport rep = convergence_ladder(spec);
    auto j = nlohmann::ordered_json(to_json(rep));
    j["provenance"]["config_sha256"] = sha256_hex(resolved.dump());
    j["provenance"]["tool"] = kVersion;
    OutputDir dir(out_dir());
    dir.write("ladder_report.json", j.dump(2) + "\n", {{"pass", rep.verdict.pass}});
    dir.finish(resolved, {{"command", "converge"}, {"provenance", provenance()}});
    std::ostringstream os;
    os << "converge: " << rep.verdict.decreasing << "/" << rep.verdict.pairs << " pairs decreasing, max last TV "
       << rep.verdict.max_last_tv << ", verdict " << (rep.verdict.pass ? "PASS" : "FAIL");
    say(os.str());
    return ok;
  }

  int dynkin() {
    const DynkinSpec spec = dynkin_spec(cfg_);
    const auto catalog = cylinder_catalog(cfg_.k);
    std::string csv = "generator,phi,t,mean,se,count,within_3se\n";
    auto emit = [&](const char* gen, const std::vector<DynkinSeries>& series) {
      for (const auto& s : series)
        for (const auto& p : s.points)
          csv += std::string(gen) + "," + s.name + "," + format_double(p.t) + "," + format_double(p.mean) + "," +
                 format_double(p.se) + "," + std::to_string(p.count) + "," + (p.within(3.0) ? "1" : "0") + "\n";
    };
    if (cfg_.engine != EngineChoice::pdmp) {
      const SsaModel model(*net_, Grid(cfg_.N, cfg_.k), cfg_.mu, cfg_.positivity);
      emit("micro", dynkin_residual(SsaSetup{&model, init_state(cfg_.f0.project_to(cfg_.N), cfg_.d0, model),
                                             cfg_.ssa_options()},
                                    catalog, spec));
    }
    if (cfg_.engine != EngineChoice::ssa) {
      const PdmpModel model(*net_, cfg_.k, cfg_.solver);
      emit("limit", dynkin_residual(PdmpSetup{&model, cfg_.f0.project_to(cfg_.solver.M), cfg_.d0,
                                              cfg_.pdmp_options()},
                                    catalog, spec));
    }
    OutputDir dir(out_dir());
    dir.write("dynkin.csv", csv);
    dir.finish(to_json(cfg_), {{"command", "dynkin"}, {"provenance", provenance()}});
    say("dynkin: residual table -> " + (dir.dir() / dir.versioned("dynkin.csv")).string());
    return ok;
  }

  Options opt_;
  std::ostream& out_;
  std::ostream& err_;
  Config cfg_;
  std::optional<ReactionNetwork> net_;
};

/// Parses argv and runs one subcommand; returns the process exit code.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Hybrid reaction-diffusion simulator", "hrd"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1, 1);
  Options opt;
  std::uint64_t seed = 0;
  std::size_t replicates = 0;
  for (const char* name : {"ssa", "pdmp", "converge", "dynkin", "spectrum", "validate"}) {
    static const std::map<std::string, std::string> help{
        {"ssa", "lattice jump process: trajectory CSV, jump log, summary"},
        {"pdmp", "limit PDMP: trajectory CSV, jump log, summary"},
        {"converge", "(N, mu) ladder against the PDMP reference"},
        {"dynkin", "martingale residual table for the cylinder catalog"},
        {"spectrum", "eigenpairs of the discrete Laplacian"},
        {"validate", "validate the config and its network"}};
    auto* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", opt.config, "config file (JSON)")->required();
    sub->add_option("--out", opt.out, "output directory (default $HRD_OUT or ./out)");
    sub->add_option("--seed", seed, "root seed (overrides the config)");
    sub->add_option("--replicates", replicates, "replicate count (overrides the config)");
    sub->add_flag("--quiet", opt.quiet, "no progress lines on stdout");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return ok;
  } catch (const CLI::ParseError& e) {
    nlohmann::ordered_json j{{"error", "UsageError"}, {"message", e.what()}};
    err << j.dump() << std::endl;
    return validation_failure;
  }
  const auto* sub = app.get_subcommands().front();
  if (sub->count("--seed")) opt.seed = seed;
  if (sub->count("--replicates")) opt.replicates = replicates;
  return Runner(opt, out, err).run(sub->get_name());
}

}  // namespace hrd::cli
