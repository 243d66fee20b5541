#pragma once

// Annealed Ulam discretization of the random transfer operator on S^1, its
// stationary density, and the Lyapunov exponent of the stationary measure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rigidity/circle_dynamics.hpp"
#include "rigidity/errors.hpp"
#include "rigidity/random.hpp"
#include "rigidity/stats.hpp"

namespace rigidity {

/// Row-stochastic sparse matrix on uniform bins [j/N, (j+1)/N); row j holds
/// where the mass of bin j goes. Stored CSR, columns sorted within a row.
class UlamOperator {
 public:
  UlamOperator(int n_bins, std::vector<std::size_t> row_start, std::vector<int> cols,
               std::vector<double> vals)
      : n_bins_(n_bins),
        row_start_(std::move(row_start)),
        cols_(std::move(cols)),
        vals_(std::move(vals)) {}

  int n_bins() const { return n_bins_; }

  std::span<const int> row_cols(int j) const {
    return {cols_.data() + row_start_[j], row_start_[j + 1] - row_start_[j]};
  }
  std::span<const double> row_vals(int j) const {
    return {vals_.data() + row_start_[j], row_start_[j + 1] - row_start_[j]};
  }

  double entry(int j, int k) const {
    const auto c = row_cols(j);
    const auto it = std::lower_bound(c.begin(), c.end(), k);
    if (it == c.end() || *it != k) return 0.0;
    return row_vals(j)[static_cast<std::size_t>(it - c.begin())];
  }

  double row_sum(int j) const {
    double s = 0.0;
    for (double v : row_vals(j)) s += v;
    return s;
  }

  /// Density action: returns mass * matrix.
  std::vector<double> push(std::span<const double> mass) const {
    std::vector<double> out(static_cast<std::size_t>(n_bins_), 0.0);
    for (int j = 0; j < n_bins_; ++j) {
      const double m = mass[static_cast<std::size_t>(j)];
      if (m == 0.0) continue;
      const auto c = row_cols(j);
      const auto v = row_vals(j);
      for (std::size_t e = 0; e < c.size(); ++e) out[static_cast<std::size_t>(c[e])] += m * v[e];
    }
    return out;
  }

  std::size_t nonzeros() const { return vals_.size(); }

 private:
  int n_bins_;
  std::vector<std::size_t> row_start_;
  std::vector<int> cols_;
  std::vector<double> vals_;
};

/// Bin masses of the stationary density on the uniform grid.
class UlamDensity {
 public:
  explicit UlamDensity(std::vector<double> mass) : mass_(std::move(mass)) {
    require(!mass_.empty(), ErrorKind::InvalidArgument, "density needs at least one bin");
    double total = 0.0;
    for (double m : mass_) {
      require(std::isfinite(m) && m >= 0.0, ErrorKind::InvalidArgument,
              "bin masses must be finite and nonnegative");
      total += m;
    }
    require(total > 0.0, ErrorKind::InvalidArgument, "density has zero mass");
    for (double& m : mass_) m /= total;
  }

  static UlamDensity uniform(int n_bins) {
    return UlamDensity(std::vector<double>(static_cast<std::size_t>(n_bins), 1.0));
  }

  int n_bins() const { return static_cast<int>(mass_.size()); }
  const std::vector<double>& mass() const { return mass_; }
  double left_endpoint(int j) const { return static_cast<double>(j) / n_bins(); }

  int bin_of(double x) const {
    const int n = n_bins();
    const int j = static_cast<int>(std::floor(frac(x) * n));
    return std::clamp(j, 0, n - 1);
  }

  /// Piecewise-constant density value q(x) = N * mass[bin(x)].
  double density_at(double x) const { return mass_[static_cast<std::size_t>(bin_of(x))] * n_bins(); }

  double min_mass() const { return *std::min_element(mass_.begin(), mass_.end()); }
  double max_mass() const { return *std::max_element(mass_.begin(), mass_.end()); }

 private:
  std::vector<double> mass_;
};

namespace detail {

struct RowAccumulator {
  std::vector<std::pair<int, double>> entries;

  void add(int k, double w) {
    for (auto& [c, v] : entries) {
      if (c == k) {
        v += w;
        return;
      }
    }
    entries.emplace_back(k, w);
  }
};

inline void validate_ulam_args(int n_bins, int subdivisions) {
  require(n_bins >= 64, ErrorKind::InvalidArgument, "n_bins must be >= 64");
  require(subdivisions >= 8, ErrorKind::InvalidArgument, "subdivisions must be >= 8");
}

/// Ulam matrix from weighted maps: each bin pushes `subdivisions` sub-bin
/// midpoints; a point landing exactly on a bin boundary goes right.
inline UlamOperator assemble_ulam(std::span<const ExpandingCircleMap> maps,
                                  std::span<const double> weights, int n_bins, int subdivisions) {
  const auto n = static_cast<std::size_t>(n_bins);
  std::vector<std::vector<std::pair<int, double>>> rows(n);
  parallel_for(n, [&](std::size_t j) {
    RowAccumulator acc;
    std::vector<std::pair<int, int>> counts;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      counts.clear();
      for (int s = 0; s < subdivisions; ++s) {
        const double x =
            (static_cast<double>(j) + (static_cast<double>(s) + 0.5) / subdivisions) / n_bins;
        int k = static_cast<int>(std::floor(frac(maps[i].lift(x)) * n_bins));
        k = std::clamp(k, 0, n_bins - 1);
        bool found = false;
        for (auto& [c, cnt] : counts) {
          if (c == k) {
            ++cnt;
            found = true;
            break;
          }
        }
        if (!found) counts.emplace_back(k, 1);
      }
      for (const auto& [c, cnt] : counts)
        acc.add(c, weights[i] * static_cast<double>(cnt) / subdivisions);
    }
    std::sort(acc.entries.begin(), acc.entries.end());
    rows[j] = std::move(acc.entries);
  });

  std::vector<std::size_t> row_start(n + 1, 0);
  for (std::size_t j = 0; j < n; ++j) row_start[j + 1] = row_start[j] + rows[j].size();
  std::vector<int> cols;
  std::vector<double> vals;
  cols.reserve(row_start[n]);
  vals.reserve(row_start[n]);
  for (const auto& r : rows) {
    for (const auto& [c, v] : r) {
      cols.push_back(c);
      vals.push_back(v);
    }
  }
  return UlamOperator(n_bins, std::move(row_start), std::move(cols), std::move(vals));
}

}  // namespace detail

inline constexpr int kDefaultSubdivisions = 1536;

/// Ulam matrix of a single map (used for per-map invariance defects).
inline UlamOperator build_ulam(const ExpandingCircleMap& f, int n_bins,
                               int subdivisions = kDefaultSubdivisions) {
  detail::validate_ulam_args(n_bins, subdivisions);
  const double one = 1.0;
  return detail::assemble_ulam({&f, 1}, {&one, 1}, n_bins, subdivisions);
}

/// Annealed operator sum_i p_i U_i. Throws InvalidSystem if a map fails the
/// expansion certificate.
inline UlamOperator build_annealed_ulam(const RandomCircleSystem& system, int n_bins,
                                        int subdivisions = kDefaultSubdivisions) {
  detail::validate_ulam_args(n_bins, subdivisions);
  for (std::size_t i = 0; i < system.size(); ++i) {
    if (!certify_expanding(system.map(i), kDefaultCertifyGrid).ok)
      throw Error(ErrorKind::InvalidSystem, "map " + std::to_string(i) + " is not expanding");
  }
  return detail::assemble_ulam(system.maps(), system.probs(), n_bins, subdivisions);
}

inline double l1_distance(std::span<const double> a, std::span<const double> b) {
  CompensatedSum s;
  for (std::size_t i = 0; i < a.size(); ++i) s.add(std::abs(a[i] - b[i]));
  return s.value();
}

/// || q * op - q ||_1.
inline double invariance_defect(const UlamOperator& op, const UlamDensity& q) {
  const auto next = op.push(q.mass());
  return l1_distance(next, q.mass());
}

/// Power iteration from the uniform vector. The returned q satisfies
/// ||q * op - q||_1 < tol; throws NoConvergence after max_iters.
inline UlamDensity stationary_density(const UlamOperator& op, double tol = 1e-12,
                                      int max_iters = 10000) {
  require(tol > 0.0 && tol <= 1e-3, ErrorKind::InvalidArgument, "tol must lie in (0, 1e-3]");
  require(max_iters >= 100, ErrorKind::InvalidArgument, "max_iters must be >= 100");
  const auto n = static_cast<std::size_t>(op.n_bins());
  std::vector<double> q(n, 1.0 / static_cast<double>(n));
  double residual = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    auto next = op.push(q);
    CompensatedSum total;
    for (double v : next) total.add(v);
    for (double& v : next) v /= total.value();
    residual = l1_distance(next, q);
    if (residual < tol) return UlamDensity(std::move(q));
    q = std::move(next);
  }
  throw Error(ErrorKind::NoConvergence, "stationary density residual " +
                                            std::to_string(residual) + " after " +
                                            std::to_string(max_iters) + " iterations");
}

/// sum_i p_i sum_j q_j log|f_i'(midpoint_j)|; deterministic, std_error 0.
inline ExponentEstimate lyapunov_quadrature(const RandomCircleSystem& system, const UlamDensity& q) {
  const int n = q.n_bins();
  CompensatedSum total;
  for (std::size_t i = 0; i < system.size(); ++i) {
    CompensatedSum s;
    for (int j = 0; j < n; ++j) {
      const double mid = (static_cast<double>(j) + 0.5) / n;
      s.add(q.mass()[static_cast<std::size_t>(j)] * std::log(std::abs(system.map(i).derivative(mid))));
    }
    total.add(system.probs()[i] * s.value());
  }
  return {total.value(), 0.0, 0};
}

/// Birkhoff averages of log|f'| along i.i.d. random orbits from Lebesgue-random
/// starts. Orbit r uses stream r of `seed`; reduction is in orbit order.
inline ExponentEstimate lyapunov_birkhoff(const RandomCircleSystem& system, std::uint64_t seed,
                                          int n_orbits, std::int64_t n_steps,
                                          std::int64_t burn_in = 1000) {
  require(n_orbits >= 8, ErrorKind::InvalidArgument, "n_orbits must be >= 8");
  require(n_steps >= 1000, ErrorKind::InvalidArgument, "n_steps must be >= 1000");
  require(burn_in >= 100, ErrorKind::InvalidArgument, "burn_in must be >= 100");
  std::vector<double> per_orbit(static_cast<std::size_t>(n_orbits));
  const auto& cdf = system.cumulative();
  parallel_for(per_orbit.size(), [&](std::size_t r) {
    Rng rng(seed, r);
    double x = rng.uniform();
    for (std::int64_t t = 0; t < burn_in; ++t) x = system.map(rng.pick(cdf))(x);
    CompensatedSum s;
    for (std::int64_t t = 0; t < n_steps; ++t) {
      const auto& f = system.map(rng.pick(cdf));
      const auto [y, dy] = f.lift_and_derivative(x);
      s.add(std::log(std::abs(dy)));
      x = frac(y);
    }
    per_orbit[r] = s.value() / static_cast<double>(n_steps);
  });
  const auto ms = mean_stderr(per_orbit);
  return {ms.mean, ms.std_error, static_cast<std::int64_t>(n_orbits) * n_steps};
}

}  // namespace rigidity
