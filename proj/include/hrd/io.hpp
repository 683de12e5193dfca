#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "json.hpp"

#include "hrd/errors.hpp"
#include "hrd/hash.hpp"
#include "hrd/lattice.hpp"
#include "hrd/trajectory.hpp"

namespace hrd {

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

namespace detail {

inline void csv_header(std::ostream& os, std::size_t n, std::size_t k) {
  os << 't';
  for (std::size_t j = 1; j <= n; ++j) os << ",site_" << j;
  for (std::size_t l = 1; l <= k; ++l) os << ",macro_" << l;
  os << '\n';
}

inline void csv_discrete(std::ostream& os, const std::vector<std::int64_t>& d) {
  for (auto x : d) os << ',' << x;
  os << '\n';
}

}  // namespace detail

/// Snapshot CSV: t, the concentrations u_j = X_j / mu and the macrosite counts.
inline std::string trajectory_csv(const Trajectory& tr) {
  std::ostringstream os;
  const std::size_t n = tr.counts.empty() ? 0 : tr.counts[0].size();
  const std::size_t k = tr.discrete.empty() ? 0 : tr.discrete[0].size();
  detail::csv_header(os, n, k);
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    os << format_double(tr.times[i]);
    for (auto x : tr.counts[i]) os << ',' << format_double(static_cast<double>(x) / tr.mu);
    detail::csv_discrete(os, tr.discrete[i]);
  }
  return os.str();
}

/// Field at the midpoints of an n-cell grid (piecewise-constant lookup).
inline std::vector<double> midpoint_resample(const Field& v, int n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  const auto m = static_cast<double>(v.size());
  for (int j = 0; j < n; ++j) {
    const auto idx = static_cast<std::size_t>(std::min(m - 1.0, std::floor((j + 0.5) / n * m)));
    out[j] = v[idx];
  }
  return out;
}

/// PDMP snapshot CSV with the field resampled to `n` sites (0: solver grid).
inline std::string trajectory_csv(const PdmpTrajectory& tr, int n = 0) {
  std::ostringstream os;
  const int sites = n > 0 ? n : (tr.fields.empty() ? 0 : static_cast<int>(tr.fields[0].size()));
  const std::size_t k = tr.discrete.empty() ? 0 : tr.discrete[0].size();
  detail::csv_header(os, static_cast<std::size_t>(sites), k);
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    os << format_double(tr.times[i]);
    for (double x : midpoint_resample(tr.fields[i], sites)) os << ',' << format_double(x);
    detail::csv_discrete(os, tr.discrete[i]);
  }
  return os.str();
}

/// One JSON object per discrete jump; PDMP records add nu_before / nu_after.
inline std::string jump_log_jsonl(const std::vector<JumpRecord>& jumps) {
  std::string out;
  for (const auto& j : jumps) {
    nlohmann::ordered_json o{{"t", j.t}, {"kind", to_string(j.kind)}, {"l", j.macro}, {"r", j.reaction},
                             {"gamma_d", j.gamma_d}};
    if (!j.nu_before.empty()) {
      o["nu_before"] = j.nu_before;
      o["nu_after"] = j.nu_after;
    }
    out += o.dump();
    out += '\n';
  }
  return out;
}

/// Writes `content` to `path` through a temporary file and a rename.
inline void write_atomic(const std::filesystem::path& path, std::string_view content) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io_error, "cannot write '" + tmp + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::io_error, "short write to '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::io_error, "cannot rename '" + tmp + "': " + ec.message());
}

/// Output directory with a manifest. A directory that already holds a
/// manifest gets a new version: every file of this run is suffixed "-vN"
/// and earlier files are left untouched.
class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error(ErrorCode::io_error, "cannot create '" + dir_.string() + "': " + ec.message());
    while (std::filesystem::exists(dir_ / versioned("manifest.json"))) ++version_;
  }

  int version() const { return version_; }
  const std::filesystem::path& dir() const { return dir_; }

  /// File name with the run's version suffix before the extension.
  std::string versioned(const std::string& name) const {
    if (version_ == 1) return name;
    const auto dot = name.rfind('.');
    const std::string suffix = "-v" + std::to_string(version_);
    return dot == std::string::npos ? name + suffix : name.substr(0, dot) + suffix + name.substr(dot);
  }

  std::filesystem::path write(const std::string& name, std::string_view content, nlohmann::ordered_json meta = {}) {
    const auto file = versioned(name);
    write_atomic(dir_ / file, content);
    nlohmann::ordered_json entry{{"path", file}, {"sha256", sha256_hex(content)}, {"bytes", content.size()}};
    if (meta.is_object())
      for (auto& [k, v] : meta.items()) entry[k] = v;
    artifacts_.push_back(std::move(entry));
    return dir_ / file;
  }

  /// Writes the manifest: resolved config, its hash, and every artifact.
  std::filesystem::path finish(const nlohmann::ordered_json& config, nlohmann::ordered_json extra = {}) {
    const std::string cfg = config.dump();
    nlohmann::ordered_json m{{"version", version_},
                             {"config_sha256", sha256_hex(cfg)},
                             {"config", config},
                             {"artifacts", artifacts_}};
    if (extra.is_object())
      for (auto& [k, v] : extra.items()) m[k] = v;
    const auto file = dir_ / versioned("manifest.json");
    write_atomic(file, m.dump(2) + "\n");
    return file;
  }

 private:
  std::filesystem::path dir_;
  int version_ = 1;
  nlohmann::ordered_json artifacts_ = nlohmann::ordered_json::array();
};

}  // namespace hrd
