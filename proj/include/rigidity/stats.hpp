#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace rigidity {

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// A Lyapunov exponent (nats per step) with its standard error.
/// n_samples is 0 for deterministic (quadrature) estimates.
struct ExponentEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::int64_t n_samples = 0;
};

struct MeanStderr {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Mean and standard error (sample std / sqrt(n)) of independent replicates,
/// reduced in index order.
inline MeanStderr mean_stderr(std::span<const double> xs) {
  MeanStderr out;
  if (xs.empty()) return out;
  CompensatedSum s;
  for (double x : xs) s.add(x);
  out.mean = s.value() / static_cast<double>(xs.size());
  if (xs.size() < 2) return out;
  CompensatedSum ss;
  for (double x : xs) ss.add((x - out.mean) * (x - out.mean));
  const double var = ss.value() / static_cast<double>(xs.size() - 1);
  out.std_error = std::sqrt(var / static_cast<double>(xs.size()));
  return out;
}

/// Statistical agreement test used throughout the suites: |a - b| within
/// k standard errors, plus an absolute floor of 1e-12 so that deterministic
/// estimators (zero spread) are not failed by last-bit round-off.
inline bool within_stderr(double a, double b, double std_error, double k = 3.0) {
  return std::abs(a - b) <= k * std_error + 1e-12;
}

}  // namespace rigidity
