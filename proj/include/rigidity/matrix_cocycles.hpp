#pragma once

// I.i.d. products of integer matrices: Lyapunov exponents and spectra, exact
// predicates (positivity, commutation, common eigenlines in dim 2, cone
// invariance, hyperbolicity, irreducibility) and the dominated splitting of a
// single automorphism.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "json.hpp"
#include "rigidity/errors.hpp"
#include "rigidity/int_matrix.hpp"
#include "rigidity/int_polynomial.hpp"
#include "rigidity/random.hpp"
#include "rigidity/stats.hpp"

namespace rigidity {

class MatrixFamily {
 public:
  MatrixFamily(std::vector<IntMatrix> matrices, std::vector<double> probs)
      : matrices_(std::move(matrices)), probs_(std::move(probs)) {
    require(!matrices_.empty(), ErrorKind::InvalidArgument, "empty matrix family");
    require(matrices_.size() == probs_.size(), ErrorKind::InvalidArgument, "one probability per matrix");
    for (const auto& m : matrices_)
      require(m.dim() == matrices_.front().dim(), ErrorKind::InvalidArgument, "matrix dimensions differ");
    cdf_ = cumulative_probs(probs_);
    for (const auto& m : matrices_) {
      std::vector<double> a;
      for (auto v : m.entries()) a.push_back(static_cast<double>(v));
      dense_.push_back(std::move(a));
    }
  }
  explicit MatrixFamily(IntMatrix m) : MatrixFamily(std::vector<IntMatrix>{std::move(m)}, {1.0}) {}

  int dim() const { return matrices_.front().dim(); }
  std::size_t size() const { return matrices_.size(); }
  const IntMatrix& matrix(std::size_t i) const { return matrices_[i]; }
  const std::vector<IntMatrix>& matrices() const { return matrices_; }
  const std::vector<double>& probs() const { return probs_; }
  const std::vector<double>& cumulative() const { return cdf_; }
  /// Row-major doubles of matrix i.
  const std::vector<double>& dense(std::size_t i) const { return dense_[i]; }

  /// Every member has |det| = 1.
  bool in_gl() const {
    return std::all_of(matrices_.begin(), matrices_.end(), [](const IntMatrix& m) { return m.is_unimodular(); });
  }

 private:
  std::vector<IntMatrix> matrices_;
  std::vector<double> probs_;
  std::vector<double> cdf_;
  std::vector<std::vector<double>> dense_;
};

inline nlohmann::json to_json(const MatrixFamily& f) {
  auto ms = nlohmann::json::array();
  for (const auto& m : f.matrices()) ms.push_back(to_json(m));
  return {{"matrices", ms}, {"probs", f.probs()}};
}

inline MatrixFamily matrix_family_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::Config, "matrix family must be an object");
  for (const auto& [k, v] : j.items())
    require(k == "matrices" || k == "probs", ErrorKind::Config, "unknown key '" + k + "' in matrix family");
  require(j.contains("matrices") && j["matrices"].is_array(), ErrorKind::Config, "matrix family needs 'matrices'");
  std::vector<IntMatrix> ms;
  for (const auto& m : j["matrices"]) ms.push_back(int_matrix_from_json(m));
  std::vector<double> p;
  if (j.contains("probs")) {
    require(j["probs"].is_array(), ErrorKind::Config, "'probs' must be a list");
    for (const auto& v : j["probs"]) {
      require(v.is_number(), ErrorKind::Config, "'probs' entries must be numbers");
      p.push_back(v.get<double>());
    }
  } else {
    p.assign(ms.size(), 1.0 / static_cast<double>(ms.size()));
    if (!p.empty()) p.back() = 1.0 - (static_cast<double>(ms.size()) - 1.0) / static_cast<double>(ms.size());
  }
  try {
    return MatrixFamily(std::move(ms), std::move(p));
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, e.what());
  }
}

// ---------------------------------------------------------------------------
// Lyapunov exponents.

inline constexpr int kDefaultMatrixBurnIn = 100;

namespace detail {

inline void apply(const std::vector<double>& a, int d, const double* v, double* out) {
  for (int i = 0; i < d; ++i) {
    double s = 0.0;
    for (int k = 0; k < d; ++k) s += a[static_cast<std::size_t>(i * d + k)] * v[k];
    out[i] = s;
  }
}

inline double norm(const double* v, int d) {
  double s = 0.0;
  for (int i = 0; i < d; ++i) s += v[i] * v[i];
  return std::sqrt(s);
}

inline void check_run_args(int n_steps, int n_reps, int burn_in) {
  require(n_steps >= 1000, ErrorKind::InvalidArgument, "n_steps must be >= 1000");
  require(n_reps >= 2, ErrorKind::InvalidArgument, "n_reps must be >= 2");
  require(burn_in >= 0, ErrorKind::InvalidArgument, "burn_in must be >= 0");
}

}  // namespace detail

/// Top exponent: each rep pushes a random unit vector through i.i.d. draws
/// (burn_in unrecorded steps first), renormalizing every step.
inline ExponentEstimate top_lyapunov(const MatrixFamily& family, std::uint64_t seed, int n_steps, int n_reps,
                                     int burn_in = kDefaultMatrixBurnIn) {
  detail::check_run_args(n_steps, n_reps, burn_in);
  const int d = family.dim();
  std::vector<double> per_rep(static_cast<std::size_t>(n_reps));
  parallel_for(per_rep.size(), [&](std::size_t r) {
    Rng rng(seed, r);
    std::array<double, kMaxDim> v{}, w{};
    for (int i = 0; i < d; ++i) v[static_cast<std::size_t>(i)] = rng.normal();
    const double n0 = detail::norm(v.data(), d);
    for (int i = 0; i < d; ++i) v[static_cast<std::size_t>(i)] /= n0;
    CompensatedSum acc;
    for (int t = 0; t < burn_in + n_steps; ++t) {
      detail::apply(family.dense(rng.pick(family.cumulative())), d, v.data(), w.data());
      const double nw = detail::norm(w.data(), d);
      for (int i = 0; i < d; ++i) v[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)] / nw;
      if (t >= burn_in) acc.add(std::log(nw));
    }
    per_rep[r] = acc.value() / n_steps;
  });
  const auto ms = mean_stderr(per_rep);
  return {ms.mean, ms.std_error, static_cast<std::int64_t>(n_steps) * n_reps};
}

struct SpectrumEstimate {
  std::vector<double> exponents;  // descending
  std::vector<double> stderrs;
  std::int64_t n_samples = 0;
};

/// Full spectrum by the QR cocycle method (modified Gram-Schmidt each step);
/// exponents are time averages of log |R_kk|.
inline SpectrumEstimate lyapunov_spectrum_qr(const MatrixFamily& family, std::uint64_t seed, int n_steps, int n_reps,
                                             int burn_in = kDefaultMatrixBurnIn) {
  detail::check_run_args(n_steps, n_reps, burn_in);
  const int d = family.dim();
  const auto du = static_cast<std::size_t>(d);
  std::vector<std::vector<double>> per_rep(static_cast<std::size_t>(n_reps), std::vector<double>(du));
  parallel_for(per_rep.size(), [&](std::size_t r) {
    Rng rng(seed, r);
    // Columns q_k stored contiguously: q[k * d + i].
    std::array<double, kMaxDim * kMaxDim> q{}, z{};
    for (int k = 0; k < d; ++k) q[static_cast<std::size_t>(k * d + k)] = 1.0;
    std::array<CompensatedSum, kMaxDim> acc{};
    for (int t = 0; t < burn_in + n_steps; ++t) {
      const auto& a = family.dense(rng.pick(family.cumulative()));
      for (int k = 0; k < d; ++k) detail::apply(a, d, &q[static_cast<std::size_t>(k * d)], &z[static_cast<std::size_t>(k * d)]);
      for (int k = 0; k < d; ++k) {
        double* zk = &z[static_cast<std::size_t>(k * d)];
        for (int j = 0; j < k; ++j) {
          const double* qj = &q[static_cast<std::size_t>(j * d)];
          double dot = 0.0;
          for (int i = 0; i < d; ++i) dot += qj[i] * zk[i];
          for (int i = 0; i < d; ++i) zk[i] -= dot * qj[i];
        }
        const double rkk = detail::norm(zk, d);
        double* qk = &q[static_cast<std::size_t>(k * d)];
        for (int i = 0; i < d; ++i) qk[i] = zk[i] / rkk;
        if (t >= burn_in) acc[static_cast<std::size_t>(k)].add(std::log(rkk));
      }
    }
    for (std::size_t k = 0; k < du; ++k) per_rep[r][k] = acc[k].value() / n_steps;
    std::sort(per_rep[r].begin(), per_rep[r].end(), std::greater<>());
  });
  SpectrumEstimate out;
  out.n_samples = static_cast<std::int64_t>(n_steps) * n_reps;
  for (std::size_t k = 0; k < du; ++k) {
    std::vector<double> col;
    for (const auto& rep : per_rep) col.push_back(rep[k]);
    const auto ms = mean_stderr(col);
    out.exponents.push_back(ms.mean);
    out.stderrs.push_back(ms.std_error);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Exact predicates.

inline bool is_positive(const IntMatrix& m) {
  return std::all_of(m.entries().begin(), m.entries().end(), [](std::int64_t v) { return v > 0; });
}

inline bool commute(const IntMatrix& m, const IntMatrix& n) { return m * n == n * m; }

/// No eigenvalue on the unit circle, decided exactly: the eigenvalues of
/// B = A + A^{-1} are lambda + 1/lambda, which is real in [-2, 2] exactly
/// when |lambda| = 1. Works with det(A) B = det(A) A + adj(A) to stay in Z.
inline bool is_hyperbolic(const IntMatrix& a) {
  const BigInt det = a.determinant();
  require(det != 0, ErrorKind::InvalidArgument, "singular matrix");
  const auto adj = a.adjugate();
  const int n = a.dim();
  std::vector<std::int64_t> b;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) b.push_back(narrow(det * a(i, j) + adj[static_cast<std::size_t>(i * n + j)]));
  const auto p = IntMatrix(n, std::move(b)).char_poly();
  const BigRational bound = BigRational(2 * (det < 0 ? BigInt(-det) : det));
  return !has_root_in(p, -bound, bound);
}

/// Characteristic polynomial of A^2 from that of A: p(x) p(-x) = (-1)^n q(x^2).
inline IntPoly graeffe(const IntPoly& p) {
  const int n = poly_degree(p);
  IntPoly neg = p;
  for (std::size_t i = 1; i < neg.size(); i += 2) neg[i] = -neg[i];
  const IntPoly r = poly_mul(p, neg);
  IntPoly q;
  for (std::size_t i = 0; i < r.size(); i += 2) q.push_back(n % 2 == 0 ? r[i] : BigInt(-r[i]));
  trim(q);
  return q;
}

inline std::vector<std::complex<double>> eigenvalues(const IntMatrix& a) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(a.to_eigen(), false);
  std::vector<std::complex<double>> out;
  for (int i = 0; i < a.dim(); ++i) out.push_back(es.eigenvalues()[i]);
  return out;
}

inline constexpr double kModulusTolerance = 1e-9;

namespace detail {

/// Eigenvalues sorted by modulus and split into groups of equal modulus
/// (relative tolerance kModulusTolerance).
inline std::vector<std::vector<std::complex<double>>> modulus_groups(const IntMatrix& a) {
  auto ev = eigenvalues(a);
  std::sort(ev.begin(), ev.end(), [](auto x, auto y) { return std::abs(x) < std::abs(y); });
  std::vector<std::vector<std::complex<double>>> groups;
  for (const auto& z : ev) {
    if (!groups.empty()) {
      const double prev = std::abs(groups.back().back());
      if (std::abs(std::abs(z) - prev) <= kModulusTolerance * std::max(1.0, std::abs(z))) {
        groups.back().push_back(z);
        continue;
      }
    }
    groups.push_back({z});
  }
  return groups;
}

inline bool conjugate_pair(std::complex<double> x, std::complex<double> y) {
  const double scale = std::max(1.0, std::abs(x));
  return std::abs(x.imag()) > kModulusTolerance * scale && std::abs(x.real() - y.real()) <= kModulusTolerance * scale &&
         std::abs(x.imag() + y.imag()) <= kModulusTolerance * scale;
}

}  // namespace detail

struct GenericReport {
  bool generic = true;
  std::vector<std::string> reasons;
  bool exact = true;  // false when an irreducibility verdict came from the numeric path
};

/// Generic automorphism test: hyperbolic, char(A) and char(A^4) irreducible
/// over Q, and no three eigenvalues of equal modulus (pairs must be complex
/// conjugates).
inline GenericReport is_generic_automorphism(const IntMatrix& a) {
  require(a.dim() >= kMinDim && a.dim() <= kMaxDim, ErrorKind::DimensionUnsupported, "dimension must be in [2, 6]");
  GenericReport rep;
  auto fail = [&](std::string why) {
    rep.generic = false;
    rep.reasons.push_back(std::move(why));
  };
  if (a.determinant() == 0) {
    fail("singular matrix");
    return rep;
  }
  if (!a.is_unimodular()) fail("determinant is not +-1");

  if (!is_hyperbolic(a)) fail("not hyperbolic: eigenvalue on the unit circle");
  for (const auto& z : eigenvalues(a))
    if (std::abs(std::abs(z) - 1.0) < kModulusTolerance) {
      fail("numeric guard: eigenvalue modulus within 1e-9 of 1");
      break;
    }

  const IntPoly p = a.char_poly();
  const auto irr = check_irreducible(p);
  rep.exact = rep.exact && irr.exact;
  if (!irr.irreducible) fail("characteristic polynomial " + to_string(p) + " has factor " + to_string(irr.factor));
  const IntPoly p4 = graeffe(graeffe(p));
  const auto irr4 = check_irreducible(p4);
  rep.exact = rep.exact && irr4.exact;
  if (!irr4.irreducible) fail("characteristic polynomial of A^4 " + to_string(p4) + " has factor " + to_string(irr4.factor));

  for (const auto& g : detail::modulus_groups(a)) {
    if (g.size() >= 3) fail("three or more eigenvalues share a modulus");
    else if (g.size() == 2 && !detail::conjugate_pair(g[0], g[1]))
      fail("two eigenvalues share a modulus without being complex conjugates");
  }
  return rep;
}

struct SplittingBlock {
  double log_modulus = 0.0;
  int dim = 1;
};

/// Finest dominated splitting of a hyperbolic automorphism: eigenvalues
/// grouped by modulus, ascending in log-modulus.
inline std::vector<SplittingBlock> finest_dominated_splitting(const IntMatrix& a) {
  require(a.determinant() != 0 && is_hyperbolic(a), ErrorKind::NotHyperbolic, "matrix is not hyperbolic");
  std::vector<SplittingBlock> out;
  for (const auto& g : detail::modulus_groups(a)) {
    require(g.size() <= 2, ErrorKind::BlockTooLarge, "modulus group of size " + std::to_string(g.size()));
    double s = 0.0;
    for (const auto& z : g) s += std::log(std::abs(z));
    out.push_back({s / static_cast<double>(g.size()), static_cast<int>(g.size())});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dimension 2: common eigenlines and cones.

/// The eigenline spanned by (x0 + x1 sqrt(D), y0 + y1 sqrt(D)).
struct QuadraticLine {
  BigInt x0, x1, y0, y1, disc;
  std::array<double, 2> unit{};
};

struct FamilyIrreducibility {
  bool irreducible = true;
  std::optional<QuadraticLine> witness;  // common invariant line when reducible
};

namespace detail {

inline void require_hyperbolic_gl2(const IntMatrix& m, std::size_t index) {
  require(m.dim() == 2, ErrorKind::DimensionUnsupported, "family must be 2x2");
  const BigInt det = m.determinant();
  const std::int64_t t = m.trace();
  const bool ok = (det == 1 && (t > 2 || t < -2)) || (det == -1 && t != 0);
  require(ok, ErrorKind::UnsupportedFamily,
          "matrix " + std::to_string(index) + " is not a hyperbolic element of GL(2, Z)");
}

/// Coefficients of m21 x^2 + (m22 - m11) x y - m12 y^2, whose zero set is the
/// pair of eigenlines of m.
inline std::array<BigInt, 3> eigenline_form(const IntMatrix& m) {
  return {BigInt(m(1, 0)), BigInt(m(1, 1)) - m(0, 0), BigInt(-m(0, 1))};
}

}  // namespace detail

/// A hyperbolic element of GL(2, Z) has irrational, Galois-conjugate
/// eigenlines, so two members share one eigenline iff they share both, iff
/// their eigenline forms are proportional.
inline FamilyIrreducibility is_irreducible_family_2d(const MatrixFamily& family) {
  for (std::size_t i = 0; i < family.size(); ++i) detail::require_hyperbolic_gl2(family.matrix(i), i);
  const auto f0 = detail::eigenline_form(family.matrix(0));
  FamilyIrreducibility out;
  for (std::size_t i = 1; i < family.size(); ++i) {
    const auto fi = detail::eigenline_form(family.matrix(i));
    const bool proportional = f0[0] * fi[1] == f0[1] * fi[0] && f0[0] * fi[2] == f0[2] * fi[0] &&
                              f0[1] * fi[2] == f0[2] * fi[1];
    if (!proportional) return out;
  }
  out.irreducible = false;
  // Perron eigenline of the first member: lambda = (t + s sqrt(D)) / 2 with
  // s = sign(t); eigenvector (2 m12, m22 - m11 + s sqrt(D)).
  const auto& m = family.matrix(0);
  const std::int64_t t = m.trace();
  const int s = t > 0 ? 1 : -1;
  QuadraticLine w;
  w.disc = BigInt(t) * t - 4 * m.determinant();
  w.x0 = 2 * BigInt(m(0, 1));
  w.x1 = 0;
  w.y0 = BigInt(m(1, 1)) - m(0, 0);
  w.y1 = s;
  const double sq = std::sqrt(w.disc.convert_to<double>());
  const double x = w.x0.convert_to<double>(), y = w.y0.convert_to<double>() + s * sq;
  const double n = std::hypot(x, y);
  w.unit = {x / n, y / n};
  out.witness = w;
  return out;
}

/// Stable and unstable cones in R^2, each the double sector swept
/// counterclockwise from ray1 to ray2 (opening < pi), together with its
/// negative.
struct ConePair {
  std::array<double, 2> u1{1, 0}, u2{0, 1};
  std::array<double, 2> s1{0, -1}, s2{1, 0};
  bool integral = true;  // rays are integer vectors: checks run exactly

  /// C^u = {xy >= 0}, C^s = {xy <= 0}.
  static ConePair quadrant() { return {}; }

  /// C_kappa(V) = {w : |w_perp| <= kappa |w_V|} around the lines of axis_u
  /// and axis_s.
  static ConePair around(std::array<double, 2> axis_u, std::array<double, 2> axis_s, double kappa) {
    require(kappa > 0.0 && kappa < 1.0, ErrorKind::InvalidArgument, "kappa must be in (0, 1)");
    const double h = std::atan(kappa);
    auto rays = [&](std::array<double, 2> v, std::array<double, 2>& r1, std::array<double, 2>& r2) {
      const double n = std::hypot(v[0], v[1]);
      require(n > 0.0, ErrorKind::InvalidArgument, "cone axis must be nonzero");
      const double th = std::atan2(v[1], v[0]);
      r1 = {std::cos(th - h), std::sin(th - h)};
      r2 = {std::cos(th + h), std::sin(th + h)};
    };
    ConePair c;
    rays(axis_u, c.u1, c.u2);
    rays(axis_s, c.s1, c.s2);
    c.integral = false;
    return c;
  }
};

struct ConeCertificate {
  bool ok = false;
  double gamma = 0.0;
  bool exact = true;  // inclusion checks were done in integer arithmetic
};

namespace detail {

template <class T>
T cross(const std::array<T, 2>& a, const std::array<T, 2>& b) {
  return a[0] * b[1] - a[1] * b[0];
}

/// w (or -w) strictly inside the sector from r1 to r2.
template <class T>
bool strictly_inside(const std::array<T, 2>& r1, const std::array<T, 2>& r2, const std::array<T, 2>& w) {
  const bool pos = cross(r1, w) > 0 && cross(w, r2) > 0;
  const bool neg = cross(r1, w) < 0 && cross(w, r2) < 0;
  return pos || neg;
}

/// Both boundary rays of the sector map strictly inside it, with the same
/// orientation sign (so the whole sector does).
template <class T>
bool sector_maps_inside(const std::array<T, 4>& m, const std::array<T, 2>& r1, const std::array<T, 2>& r2,
                        std::array<T, 2>* bad_ray) {
  auto img = [&](const std::array<T, 2>& v) {
    return std::array<T, 2>{m[0] * v[0] + m[1] * v[1], m[2] * v[0] + m[3] * v[1]};
  };
  const auto a = img(r1), b = img(r2);
  for (const auto& [ray, im] : {std::pair{r1, a}, std::pair{r2, b}}) {
    if (!strictly_inside(r1, r2, im)) {
      *bad_ray = ray;
      return false;
    }
  }
  // Same side: both images in the positive sector or both in its negative.
  if ((cross(r1, a) > 0) != (cross(r1, b) > 0)) {
    *bad_ray = r2;
    return false;
  }
  return true;
}

/// min ||M v||^2 over unit v in the closed sector [r1, r2]: at a boundary
/// ray or at the least eigenvector of M^T M if that lies inside.
inline double min_stretch_sq(const std::array<double, 4>& m, std::array<double, 2> r1, std::array<double, 2> r2) {
  const double g00 = m[0] * m[0] + m[2] * m[2];
  const double g01 = m[0] * m[1] + m[2] * m[3];
  const double g11 = m[1] * m[1] + m[3] * m[3];
  auto q = [&](std::array<double, 2> v) {
    const double n2 = v[0] * v[0] + v[1] * v[1];
    return (g00 * v[0] * v[0] + 2 * g01 * v[0] * v[1] + g11 * v[1] * v[1]) / n2;
  };
  double best = std::min(q(r1), q(r2));
  const double tr = g00 + g11, det = g00 * g11 - g01 * g01;
  const double lmin = 0.5 * (tr - std::sqrt(std::max(0.0, tr * tr - 4 * det)));
  std::array<double, 2> e = std::abs(g01) > 0 ? std::array<double, 2>{g01, lmin - g00}
                                              : (g00 <= g11 ? std::array<double, 2>{1, 0} : std::array<double, 2>{0, 1});
  for (int sgn : {1, -1}) {
    const std::array<double, 2> v{sgn * e[0], sgn * e[1]};
    if (cross(r1, v) >= 0 && cross(v, r2) >= 0) best = std::min(best, q(v));
  }
  return best;
}

inline std::string ray_str(double x, double y) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "(%.17g, %.17g)", x, y);
  return buf;
}

}  // namespace detail

/// Cone hyperbolicity of a 2x2 family: A(C^u) inside int C^u and
/// A^{-1}(C^s) inside int C^s for every member, and the expansion rate
/// gamma = min log ||Av|| over unit v in C^u and log ||A^{-1} v|| over C^s.
/// Throws ConeNotPreserved naming the member and the offending ray.
inline ConeCertificate certify_cone_hyperbolic(const MatrixFamily& family, const ConePair& cones = ConePair::quadrant()) {
  require(family.dim() == 2, ErrorKind::DimensionUnsupported, "cone certificate needs dim 2");
  ConeCertificate cert;
  cert.exact = cones.integral;
  double gamma = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < family.size(); ++i) {
    const auto& a = family.matrix(i);
    require(a.determinant() != 0, ErrorKind::ConeNotPreserved, "matrix " + std::to_string(i) + " is singular");
    const auto adj = a.adjugate();
    const double det = a.determinant().convert_to<double>();
    const std::array<double, 4> fwd{static_cast<double>(a(0, 0)), static_cast<double>(a(0, 1)),
                                    static_cast<double>(a(1, 0)), static_cast<double>(a(1, 1))};
    const std::array<double, 4> inv{adj[0].convert_to<double>() / det, adj[1].convert_to<double>() / det,
                                    adj[2].convert_to<double>() / det, adj[3].convert_to<double>() / det};
    auto fail = [&](const char* which, double x, double y) {
      throw Error(ErrorKind::ConeNotPreserved,
                  "matrix " + std::to_string(i) + " " + a.str() + ": " + which + " boundary ray " + detail::ray_str(x, y));
    };
    if (cones.integral) {
      // Sign of det does not matter for a double cone, so adj(A) stands in for A^{-1}.
      auto big = [](double v) { return BigInt(static_cast<long long>(v)); };
      const std::array<BigInt, 4> mf{a(0, 0), a(0, 1), a(1, 0), a(1, 1)};
      const std::array<BigInt, 4> mi{adj[0], adj[1], adj[2], adj[3]};
      std::array<BigInt, 2> bad;
      if (!detail::sector_maps_inside(mf, {big(cones.u1[0]), big(cones.u1[1])}, {big(cones.u2[0]), big(cones.u2[1])}, &bad))
        fail("unstable", bad[0].convert_to<double>(), bad[1].convert_to<double>());
      if (!detail::sector_maps_inside(mi, {big(cones.s1[0]), big(cones.s1[1])}, {big(cones.s2[0]), big(cones.s2[1])}, &bad))
        fail("stable", bad[0].convert_to<double>(), bad[1].convert_to<double>());
    } else {
      std::array<double, 2> bad;
      if (!detail::sector_maps_inside(fwd, cones.u1, cones.u2, &bad)) fail("unstable", bad[0], bad[1]);
      if (!detail::sector_maps_inside(inv, cones.s1, cones.s2, &bad)) fail("stable", bad[0], bad[1]);
    }
    gamma = std::min(gamma, 0.5 * std::log(detail::min_stretch_sq(fwd, cones.u1, cones.u2)));
    gamma = std::min(gamma, 0.5 * std::log(detail::min_stretch_sq(inv, cones.s1, cones.s2)));
  }
  cert.gamma = gamma;
  cert.ok = gamma > 0.0;
  return cert;
}

// ---------------------------------------------------------------------------
// JSON.

inline nlohmann::json to_json(const SpectrumEstimate& s) {
  return {{"exponents", s.exponents}, {"stderrs", s.stderrs}, {"n_samples", s.n_samples}};
}

inline nlohmann::json to_json(const GenericReport& g) {
  return {{"generic", g.generic}, {"reasons", g.reasons}, {"exact", g.exact}};
}

inline nlohmann::json to_json(const ConeCertificate& c) {
  return {{"ok", c.ok}, {"gamma", c.gamma}, {"exact", c.exact}};
}

inline nlohmann::json to_json(const FamilyIrreducibility& f) {
  nlohmann::json j{{"irreducible", f.irreducible}};
  if (f.witness) {
    const auto& w = *f.witness;
    // Exact witness as strings: (x0 + x1 sqrt(D), y0 + y1 sqrt(D)).
    j["witness"] = {{"x", {w.x0.str(), w.x1.str()}},
                    {"y", {w.y0.str(), w.y1.str()}},
                    {"discriminant", w.disc.str()},
                    {"unit", {w.unit[0], w.unit[1]}}};
  } else {
    j["witness"] = nullptr;
  }
  return j;
}

inline nlohmann::json to_json(const std::vector<SplittingBlock>& blocks) {
  auto a = nlohmann::json::array();
  for (const auto& b : blocks) a.push_back({{"log_modulus", b.log_modulus}, {"dim", b.dim}});
  return a;
}

}  // namespace rigidity
