#pragma once

// Expanding maps of the circle with a trigonometric perturbation:
//   F(x) = d*x + rho + sum_k (a_k sin(2 pi k x) + b_k cos(2 pi k x))
// F is the lift; the circle map is F mod 1.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rigidity/errors.hpp"
#include "rigidity/random.hpp"

namespace rigidity {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline double frac(double x) {
  const double f = x - std::floor(x);
  return f >= 1.0 ? 0.0 : f;
}

struct TrigTerm {
  int k = 1;
  double a = 0.0;  // sin coefficient
  double b = 0.0;  // cos coefficient
};

/// Dense trigonometric polynomial in one variable, evaluated with the
/// angle-addition recurrence (one sin/cos pair per call).
class TrigSeries {
 public:
  TrigSeries() = default;
  explicit TrigSeries(std::span<const TrigTerm> terms) {
    int kmax = 0;
    for (const auto& t : terms) {
      require(t.k >= 1, ErrorKind::InvalidArgument, "trig frequency must be >= 1");
      require(std::isfinite(t.a) && std::isfinite(t.b), ErrorKind::InvalidArgument,
              "trig coefficients must be finite");
      kmax = std::max(kmax, t.k);
    }
    a_.assign(kmax + 1, 0.0);
    b_.assign(kmax + 1, 0.0);
    for (const auto& t : terms) {
      a_[t.k] += t.a;
      b_[t.k] += t.b;
    }
  }

  bool empty() const { return a_.size() <= 1; }

  struct Value {
    double p = 0.0;
    double dp = 0.0;
    double ddp = 0.0;
  };

  /// P, P', P'' at x (period 1).
  Value eval(double x) const {
    Value v;
    if (empty()) return v;
    const double theta = kTwoPi * frac(x);
    const double s1 = std::sin(theta), c1 = std::cos(theta);
    double s = s1, c = c1;
    for (std::size_t k = 1; k < a_.size(); ++k) {
      if (k > 1) {
        const double sn = s * c1 + c * s1;
        c = c * c1 - s * s1;
        s = sn;
      }
      const double w = kTwoPi * static_cast<double>(k);
      v.p += a_[k] * s + b_[k] * c;
      v.dp += w * (a_[k] * c - b_[k] * s);
      v.ddp -= w * w * (a_[k] * s + b_[k] * c);
    }
    return v;
  }

  /// Upper bound on sup |P''| (a Lipschitz constant for P').
  double second_derivative_bound() const {
    double sum = 0.0;
    for (std::size_t k = 1; k < a_.size(); ++k) {
      const double w = kTwoPi * static_cast<double>(k);
      sum += w * w * (std::abs(a_[k]) + std::abs(b_[k]));
    }
    return sum;
  }

  /// Upper bound on sup |P'|.
  double derivative_bound() const {
    double sum = 0.0;
    for (std::size_t k = 1; k < a_.size(); ++k)
      sum += kTwoPi * static_cast<double>(k) * (std::abs(a_[k]) + std::abs(b_[k]));
    return sum;
  }

  /// Upper bound on sup |P|.
  double sup_bound() const {
    double sum = 0.0;
    for (std::size_t k = 1; k < a_.size(); ++k) sum += std::abs(a_[k]) + std::abs(b_[k]);
    return sum;
  }

 private:
  std::vector<double> a_{0.0};
  std::vector<double> b_{0.0};
};

class ExpandingCircleMap {
 public:
  ExpandingCircleMap(int degree, double rotation, std::vector<TrigTerm> terms = {})
      : degree_(degree), rotation_(rotation), terms_(std::move(terms)), series_(terms_) {
    require(std::abs(degree) >= 2, ErrorKind::InvalidArgument, "|degree| must be >= 2");
    require(std::isfinite(rotation) && rotation >= 0.0 && rotation < 1.0,
            ErrorKind::InvalidArgument, "rotation must lie in [0,1)");
  }

  int degree() const { return degree_; }
  double rotation() const { return rotation_; }
  const std::vector<TrigTerm>& terms() const { return terms_; }
  bool is_affine() const { return series_.empty(); }

  double lift(double x) const { return degree_ * x + rotation_ + series_.eval(x).p; }
  double operator()(double x) const { return frac(lift(x)); }

  double derivative(double x) const { return degree_ + series_.eval(x).dp; }
  double second_derivative(double x) const { return series_.eval(x).ddp; }

  /// Lift value and derivative from a single trig evaluation.
  std::pair<double, double> lift_and_derivative(double x) const {
    const auto v = series_.eval(x);
    return {degree_ * x + rotation_ + v.p, degree_ + v.dp};
  }

  /// Global Lipschitz bound on F': sum (2 pi k)^2 (|a_k| + |b_k|).
  double derivative_lipschitz() const { return series_.second_derivative_bound(); }

  const TrigSeries& perturbation() const { return series_; }

 private:
  int degree_;
  double rotation_;
  std::vector<TrigTerm> terms_;
  TrigSeries series_;
};

inline double eval_lift(const ExpandingCircleMap& f, double x) { return f.lift(x); }
inline double derivative(const ExpandingCircleMap& f, double x) { return f.derivative(x); }

struct ExpansionCertificate {
  double margin = 0.0;  // certified lower bound of min|F'| minus 1
  bool ok = false;
};

/// Certified lower bound on min |F'|: grid minimum minus Lip(F') * spacing.
inline ExpansionCertificate certify_expanding(const ExpandingCircleMap& f, int grid_n) {
  require(grid_n >= 64, ErrorKind::InvalidArgument, "certify_expanding needs grid_n >= 64");
  double min_abs = std::abs(f.derivative(0.0));
  for (int j = 1; j < grid_n; ++j)
    min_abs = std::min(min_abs, std::abs(f.derivative(static_cast<double>(j) / grid_n)));
  ExpansionCertificate cert;
  cert.margin = min_abs - f.derivative_lipschitz() / grid_n - 1.0;
  cert.ok = cert.margin > 0.0;
  return cert;
}

inline ExpansionCertificate require_expanding(const ExpandingCircleMap& f, int grid_n) {
  auto cert = certify_expanding(f, grid_n);
  if (!cert.ok)
    throw Error(ErrorKind::NotExpanding,
                "certified margin " + std::to_string(cert.margin) + " <= 0");
  return cert;
}

inline constexpr int kDefaultCertifyGrid = 1024;

/// Finite family of expanding maps chosen i.i.d. with the given weights.
class RandomCircleSystem {
 public:
  RandomCircleSystem(std::vector<ExpandingCircleMap> maps, std::vector<double> probs,
                     int certify_grid = kDefaultCertifyGrid)
      : maps_(std::move(maps)), probs_(std::move(probs)) {
    require(!maps_.empty(), ErrorKind::InvalidSystem, "system needs at least one map");
    require(maps_.size() == probs_.size(), ErrorKind::InvalidSystem,
            "maps and probs differ in length");
    try {
      cumulative_ = cumulative_probs(probs_);
    } catch (const Error& e) {
      throw Error(ErrorKind::InvalidSystem, e.what());
    }
    for (std::size_t i = 0; i < maps_.size(); ++i) {
      const auto cert = certify_expanding(maps_[i], certify_grid);
      if (!cert.ok)
        throw Error(ErrorKind::InvalidSystem, "map " + std::to_string(i) +
                                                  " is not certified expanding (margin " +
                                                  std::to_string(cert.margin) + ")");
    }
  }

  /// Single map with probability one.
  explicit RandomCircleSystem(ExpandingCircleMap map)
      : RandomCircleSystem(std::vector<ExpandingCircleMap>{std::move(map)}, {1.0}) {}

  std::size_t size() const { return maps_.size(); }
  const std::vector<ExpandingCircleMap>& maps() const { return maps_; }
  const ExpandingCircleMap& map(std::size_t i) const { return maps_[i]; }
  const std::vector<double>& probs() const { return probs_; }
  const std::vector<double>& cumulative() const { return cumulative_; }

 private:
  std::vector<ExpandingCircleMap> maps_;
  std::vector<double> probs_;
  std::vector<double> cumulative_;
};

// --- JSON records: {degree, rotation, coeffs: [[k, a, b], ...]} ---

inline nlohmann::json to_json(const ExpandingCircleMap& f) {
  nlohmann::json coeffs = nlohmann::json::array();
  for (const auto& t : f.terms()) coeffs.push_back({t.k, t.a, t.b});
  return {{"degree", f.degree()}, {"rotation", f.rotation()}, {"coeffs", coeffs}};
}

namespace detail {
inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                                const std::string& where) {
  require(j.is_object(), ErrorKind::Config, where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    require(known, ErrorKind::Config, "unknown key '" + key + "' in " + where);
  }
}
}  // namespace detail

inline ExpandingCircleMap circle_map_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {"degree", "rotation", "coeffs"}, "circle map");
  require(j.contains("degree") && j.at("degree").is_number_integer(), ErrorKind::Config,
          "circle map needs integer 'degree'");
  const int degree = j.at("degree").get<int>();
  const double rotation = j.value("rotation", 0.0);
  std::vector<TrigTerm> terms;
  if (j.contains("coeffs")) {
    for (const auto& c : j.at("coeffs")) {
      require(c.is_array() && c.size() == 3 && c[0].is_number_integer(), ErrorKind::Config,
              "coeff entries must be [k, a, b]");
      terms.push_back({c[0].get<int>(), c[1].get<double>(), c[2].get<double>()});
    }
  }
  return ExpandingCircleMap(degree, rotation, std::move(terms));
}

inline nlohmann::json to_json(const RandomCircleSystem& s) {
  nlohmann::json maps = nlohmann::json::array();
  for (const auto& f : s.maps()) maps.push_back(to_json(f));
  return {{"maps", maps}, {"probs", s.probs()}};
}

inline RandomCircleSystem circle_system_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {"maps", "probs"}, "circle system");
  require(j.contains("maps") && j.at("maps").is_array(), ErrorKind::Config,
          "circle system needs 'maps'");
  std::vector<ExpandingCircleMap> maps;
  for (const auto& m : j.at("maps")) maps.push_back(circle_map_from_json(m));
  std::vector<double> probs;
  if (j.contains("probs"))
    probs = j.at("probs").get<std::vector<double>>();
  else
    probs.assign(maps.size(), 1.0 / static_cast<double>(maps.size()));
  return RandomCircleSystem(std::move(maps), std::move(probs));
}

}  // namespace rigidity
