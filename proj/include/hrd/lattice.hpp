#pragma once

// Periodic 1-D lattice on I = (0, 1]: microsites I_j = ((j-1)/N, j/N],
// macrosites J_l (unions of N/k consecutive microsites), the projection
// P_N, the discrete Laplacian Delta_N and its heat semigroup T_N(t).
//
// Public functions take 1-based site/macrosite indices where they name a
// site; storage is 0-based.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hrd/errors.hpp"
#include "hrd/network.hpp"

namespace hrd {

class Grid {
 public:
  Grid(int n_sites, int n_macro) : n_(n_sites), k_(n_macro) {
    if (n_ <= 0 || k_ <= 0) throw Error(ErrorCode::invalid_grid, "N and k must be positive");
    if (n_ % k_ != 0) {
      throw Error(ErrorCode::invalid_grid,
                  "N=" + std::to_string(n_) + " is not a multiple of k=" + std::to_string(k_));
    }
  }

  int n_sites() const { return n_; }
  int n_macro() const { return k_; }
  int sites_per_macro() const { return n_ / k_; }
  double site_length() const { return 1.0 / n_; }

  /// Midpoint of site j (0-based).
  double midpoint(int j0) const { return (j0 + 0.5) / n_; }
  /// Macrosite (0-based) of site j (0-based).
  int macro_index(int j0) const { return j0 / sites_per_macro(); }
  /// First site (0-based) of macrosite l (0-based); the block is [first, first + N/k).
  int macro_first(int l0) const { return l0 * sites_per_macro(); }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int n_;
  int k_;
};

/// Site values of a step function in H^N. Indexing wraps modulo N.
class Field {
 public:
  Field() = default;
  explicit Field(std::size_t n, double value = 0.0) : v_(n, value) {}
  explicit Field(std::vector<double> values) : v_(std::move(values)) {}

  std::size_t size() const { return v_.size(); }
  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  /// Periodic access: X_{j+N} = X_j.
  double wrapped(long j) const {
    const long n = static_cast<long>(v_.size());
    return v_[static_cast<std::size_t>(((j % n) + n) % n)];
  }

  std::span<double> values() { return v_; }
  std::span<const double> values() const { return v_; }
  std::vector<double>& raw() { return v_; }
  const std::vector<double>& raw() const { return v_; }

  auto begin() { return v_.begin(); }
  auto end() { return v_.end(); }
  auto begin() const { return v_.begin(); }
  auto end() const { return v_.end(); }

  friend bool operator==(const Field&, const Field&) = default;

 private:
  std::vector<double> v_;
};

/// <f, g>_2 = N^{-1} sum_j f_j g_j.
inline double inner(const Field& f, const Field& g) {
  double s = 0.0;
  for (std::size_t j = 0; j < f.size(); ++j) s += f[j] * g[j];
  return s / static_cast<double>(f.size());
}

struct Norms {
  double sup = 0.0;
  double l2 = 0.0;
};

inline Norms norms(const Field& v) {
  Norms n;
  double ss = 0.0;
  for (double x : v) {
    n.sup = std::max(n.sup, std::abs(x));
    ss += x * x;
  }
  n.l2 = v.size() == 0 ? 0.0 : std::sqrt(ss / static_cast<double>(v.size()));
  return n;
}

inline double sup_norm(const Field& v) { return norms(v).sup; }

// ---------------------------------------------------------------------------
// Projection P_N

/// Component j of P_N f is N * int_{I_j} f, by composite Simpson with
/// `panels` (even) panels per site.
inline Field project(const std::function<double(double)>& f, int n, int panels = 8) {
  if (n <= 0) throw Error(ErrorCode::invalid_grid, "N must be positive");
  if (panels < 2 || panels % 2 != 0) throw Error(ErrorCode::insufficient_samples, "Simpson needs an even panel count");
  Field out(static_cast<std::size_t>(n));
  const double h = 1.0 / (static_cast<double>(n) * panels);
  for (int j = 0; j < n; ++j) {
    const double x0 = static_cast<double>(j) / n;
    double s = f(x0) + f(x0 + panels * h);
    for (int p = 1; p < panels; ++p) s += (p % 2 == 1 ? 4.0 : 2.0) * f(x0 + p * h);
    out[j] = s * h / 3.0 * n;
  }
  return out;
}

inline Field project(const std::function<double(double)>& f, const Grid& g, int panels = 8) {
  return project(f, g.n_sites(), panels);
}

/// Exact projection of a polynomial given by its coefficients.
inline Field project_polynomial(const std::vector<double>& coefficients, int n) {
  const WeightFunction w = WeightFunction::polynomial(coefficients);
  Field out(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) out[j] = w.integral(static_cast<double>(j) / n, static_cast<double>(j + 1) / n) * n;
  return out;
}

/// Projection from dense samples f(i/S), i = 0..S, with S a multiple of N
/// and S >= 8N. Simpson per site when S/N is even, trapezoid otherwise.
inline Field project_samples(std::span<const double> samples, int n) {
  if (samples.size() < 2) throw Error(ErrorCode::insufficient_samples, "need at least two samples");
  const std::size_t s = samples.size() - 1;
  if (s < 8 * static_cast<std::size_t>(n) || s % static_cast<std::size_t>(n) != 0) {
    throw Error(ErrorCode::insufficient_samples,
                "need S >= 8N sample intervals with S a multiple of N (got S=" + std::to_string(s) + ")");
  }
  const std::size_t per = s / static_cast<std::size_t>(n);
  const double h = 1.0 / static_cast<double>(s);
  Field out(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const std::size_t b = static_cast<std::size_t>(j) * per;
    double acc = 0.0;
    if (per % 2 == 0) {
      acc = samples[b] + samples[b + per];
      for (std::size_t p = 1; p < per; ++p) acc += (p % 2 == 1 ? 4.0 : 2.0) * samples[b + p];
      acc *= h / 3.0;
    } else {
      acc = 0.5 * (samples[b] + samples[b + per]);
      for (std::size_t p = 1; p < per; ++p) acc += samples[b + p];
      acc *= h;
    }
    out[j] = acc * n;
  }
  return out;
}

/// P_n of a step function given on its own uniform grid. Identity when the
/// grids coincide.
inline Field project(const Field& step, int n) {
  const std::size_t src = step.size();
  const std::size_t dst = static_cast<std::size_t>(n);
  if (src == dst) return step;
  Field out(dst);
  if (src % dst == 0) {
    const std::size_t r = src / dst;
    for (std::size_t j = 0; j < dst; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < r; ++i) s += step[j * r + i];
      out[j] = s / static_cast<double>(r);
    }
    return out;
  }
  // General overlap integration.
  for (std::size_t j = 0; j < dst; ++j) {
    const double a = static_cast<double>(j) / dst, b = static_cast<double>(j + 1) / dst;
    const auto i0 = static_cast<std::size_t>(std::floor(a * src));
    const auto i1 = std::min(src - 1, static_cast<std::size_t>(std::ceil(b * src)) - 1);
    double s = 0.0;
    for (std::size_t i = i0; i <= i1; ++i) {
      const double lo = std::max(a, static_cast<double>(i) / src);
      const double hi = std::min(b, static_cast<double>(i + 1) / src);
      if (hi > lo) s += step[i] * (hi - lo);
    }
    out[j] = s * dst;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Discrete Laplacian and spectrum

inline Field discrete_laplacian(const Field& v) {
  const std::size_t n = v.size();
  const double n2 = static_cast<double>(n) * static_cast<double>(n);
  Field out(n);
  if (n == 0) return out;
  for (std::size_t j = 0; j < n; ++j) {
    const double left = v[(j + n - 1) % n];
    const double right = v[(j + 1) % n];
    out[j] = n2 * (left - 2.0 * v[j] + right);
  }
  return out;
}

/// beta_{m,N} = 2 N^2 (1 - cos(pi m / N)).
inline double laplacian_eigenvalue(int m, int n) {
  const double nn = static_cast<double>(n);
  return 2.0 * nn * nn * (1.0 - std::cos(std::numbers::pi * m / nn));
}

enum class EigenMode { constant, cosine, sine, alternating };

inline std::string_view to_string(EigenMode m) {
  switch (m) {
    case EigenMode::constant: return "constant";
    case EigenMode::cosine: return "cos";
    case EigenMode::sine: return "sin";
    case EigenMode::alternating: return "alternating";
  }
  return "?";
}

struct EigenPair {
  int m = 0;
  EigenMode mode = EigenMode::constant;
  double beta = 0.0;
  Field vector;
};

/// Orthonormal eigenbasis of Delta_N in <.,.>_2: the constant, sqrt2 cos and
/// sqrt2 sin of pi m j / N for even 0 < m < N, and cos(pi j) when N is even.
/// Ordered by m ascending, cos before sin.
inline std::vector<EigenPair> eigenpairs(int n) {
  if (n <= 0) throw Error(ErrorCode::invalid_grid, "N must be positive");
  std::vector<EigenPair> out;
  out.reserve(static_cast<std::size_t>(n));
  const double nn = static_cast<double>(n);
  out.push_back({0, EigenMode::constant, 0.0, Field(static_cast<std::size_t>(n), 1.0)});
  for (int m = 2; m < n; m += 2) {
    Field c(static_cast<std::size_t>(n)), s(static_cast<std::size_t>(n));
    for (int j = 1; j <= n; ++j) {
      // Reduce the angle argument exactly in integers before scaling.
      const long q = (static_cast<long>(m) * j) % (2L * n);
      const double theta = std::numbers::pi * static_cast<double>(q) / nn;
      c[j - 1] = std::numbers::sqrt2 * std::cos(theta);
      s[j - 1] = std::numbers::sqrt2 * std::sin(theta);
    }
    const double beta = laplacian_eigenvalue(m, n);
    out.push_back({m, EigenMode::cosine, beta, std::move(c)});
    out.push_back({m, EigenMode::sine, beta, std::move(s)});
  }
  if (n % 2 == 0) {
    Field a(static_cast<std::size_t>(n));
    for (int j = 1; j <= n; ++j) a[j - 1] = (j % 2 == 0) ? 1.0 : -1.0;
    out.push_back({n, EigenMode::alternating, laplacian_eigenvalue(n, n), std::move(a)});
  }
  return out;
}

inline std::vector<EigenPair> eigenpairs(const Grid& g) { return eigenpairs(g.n_sites()); }

namespace detail {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 FFT; `inverse` omits the 1/N factor.
class Fft {
 public:
  explicit Fft(std::size_t n) : n_(n), rev_(n), tw_(n / 2) {
    int bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      rev_[i] = r;
    }
    for (std::size_t i = 0; i < n / 2; ++i) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
      tw_[i] = {std::cos(a), std::sin(a)};
    }
  }

  void run(std::vector<std::complex<double>>& a, bool inverse) const {
    for (std::size_t i = 0; i < n_; ++i)
      if (i < rev_[i]) std::swap(a[i], a[rev_[i]]);
    // Plain real arithmetic: std::complex multiplication carries NaN recovery.
    auto* x = reinterpret_cast<double*>(a.data());
    const double sign = inverse ? -1.0 : 1.0;
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2, stride = n_ / len;
      for (std::size_t i = 0; i < n_; i += len) {
        for (std::size_t k = 0; k < half; ++k) {
          const double wr = tw_[k * stride].real(), wi = sign * tw_[k * stride].imag();
          double* p = x + 2 * (i + k);
          double* q = x + 2 * (i + k + half);
          const double vr = q[0] * wr - q[1] * wi;
          const double vi = q[0] * wi + q[1] * wr;
          q[0] = p[0] - vr;
          q[1] = p[1] - vi;
          p[0] += vr;
          p[1] += vi;
        }
      }
    }
  }

 private:
  std::size_t n_;
  std::vector<std::size_t> rev_;
  std::vector<std::complex<double>> tw_;
};

}  // namespace detail

/// Heat semigroup T_N(t) = exp(t Delta_N) by spectral synthesis. Uses an FFT
/// when N is a power of two and the explicit eigenbasis otherwise. Holds
/// scratch buffers: one instance per thread.
class HeatSemigroup {
 public:
  explicit HeatSemigroup(int n) : n_(static_cast<std::size_t>(n)) {
    if (n <= 0) throw Error(ErrorCode::invalid_grid, "N must be positive");
    if (detail::is_power_of_two(n_)) {
      fft_.emplace(n_);
      buf_.resize(n_);
      beta_.resize(n_);
      // DFT frequency q carries beta_{2q,N}; frequencies q and N-q share it.
      for (std::size_t q = 0; q < n_; ++q) {
        const std::size_t qq = std::min(q, n_ - q);
        beta_[q] = laplacian_eigenvalue(static_cast<int>(2 * qq), n);
      }
    } else {
      basis_ = eigenpairs(n);
    }
  }

  std::size_t size() const { return n_; }
  bool uses_fft() const { return fft_.has_value(); }

  Field operator()(const Field& f, double t) const {
    Field out = f;
    apply_in_place(out, t);
    return out;
  }

  void apply_in_place(Field& f, double t) const {
    if (t < 0.0) throw Error(ErrorCode::validation_error, "heat semigroup needs t >= 0");
    if (f.size() != n_) throw Error(ErrorCode::invalid_grid, "field size does not match the semigroup");
    if (t == 0.0) return;
    if (fft_) {
      if (t != cached_t_) {
        mult_.resize(n_);
        for (std::size_t q = 0; q < n_; ++q) mult_[q] = std::exp(-beta_[q] * t) / static_cast<double>(n_);
        cached_t_ = t;
      }
      for (std::size_t j = 0; j < n_; ++j) buf_[j] = {f[j], 0.0};
      fft_->run(buf_, false);
      for (std::size_t q = 0; q < n_; ++q) buf_[q] = {buf_[q].real() * mult_[q], buf_[q].imag() * mult_[q]};
      fft_->run(buf_, true);
      for (std::size_t j = 0; j < n_; ++j) f[j] = buf_[j].real();
    } else {
      Field out(n_, 0.0);
      for (const auto& e : basis_) {
        const double c = inner(f, e.vector) * std::exp(-e.beta * t);
        for (std::size_t j = 0; j < n_; ++j) out[j] += c * e.vector[j];
      }
      f = std::move(out);
    }
  }

 private:
  std::size_t n_;
  std::optional<detail::Fft> fft_;
  std::vector<double> beta_;
  std::vector<EigenPair> basis_;
  mutable std::vector<std::complex<double>> buf_;
  mutable std::vector<double> mult_;
  mutable double cached_t_ = -1.0;
};

inline Field heat_semigroup(const Field& v, double t) {
  if (t < 0.0) throw Error(ErrorCode::validation_error, "heat semigroup needs t >= 0");
  if (t == 0.0) return v;
  return HeatSemigroup(static_cast<int>(v.size()))(v, t);
}

// ---------------------------------------------------------------------------
// Macrosites

/// l_j = ceil(j k / N) for 1 <= j <= N.
inline int macrosite_of(int j, const Grid& g) {
  if (j < 1 || j > g.n_sites()) {
    throw Error(ErrorCode::index_out_of_range,
                "site " + std::to_string(j) + " outside 1.." + std::to_string(g.n_sites()));
  }
  const long num = static_cast<long>(j) * g.n_macro();
  return static_cast<int>((num + g.n_sites() - 1) / g.n_sites());
}

enum class WeightKind { a, b };

/// Per-site weights on all N sites: kind a gives int_{I_j} w, kind b gives
/// N int_{I_j} w.
inline std::vector<double> site_weights(const WeightFunction& w, const Grid& g, WeightKind kind) {
  const int n = g.n_sites();
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const double integral = w.integral(static_cast<double>(j) / n, static_cast<double>(j + 1) / n);
    out[j] = kind == WeightKind::a ? integral : integral * n;
  }
  return out;
}

/// Weights restricted to macrosite l (1-based); length N/k.
inline std::vector<double> macro_weights(const WeightFunction& w, const Grid& g, int l, WeightKind kind) {
  if (l < 1 || l > g.n_macro()) {
    throw Error(ErrorCode::index_out_of_range,
                "macrosite " + std::to_string(l) + " outside 1.." + std::to_string(g.n_macro()));
  }
  const auto all = site_weights(w, g, kind);
  const int first = g.macro_first(l - 1);
  return {all.begin() + first, all.begin() + first + g.sites_per_macro()};
}

}  // namespace hrd
