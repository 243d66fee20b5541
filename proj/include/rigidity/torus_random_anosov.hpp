#pragma once

// Random compositions of Anosov maps of T^2 near a hyperbolic toral
// automorphism A:
//   perturbed:   f(x) = A x + v + eps g(x)           mod Z^2
//   conjugated:  f = phi^{-1} o (A x + v) o phi,     phi = id + psi
// with g, psi Z^2-periodic trigonometric vector fields. Provides cone
// certificates with a Lipschitz margin, SRB exponents by the QR cocycle,
// stable/unstable directions along words, the stable-bundle dispersion
// statistic, and a grid solver for H o f = A o H.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "rigidity/circle_dynamics.hpp"
#include "rigidity/errors.hpp"
#include "rigidity/int_matrix.hpp"
#include "rigidity/matrix_cocycles.hpp"
#include "rigidity/random.hpp"
#include "rigidity/stats.hpp"

namespace rigidity {

using Vec2 = std::array<double, 2>;
using Mat2 = std::array<double, 4>;  // row-major

inline Vec2 mul(const Mat2& m, const Vec2& v) { return {m[0] * v[0] + m[1] * v[1], m[2] * v[0] + m[3] * v[1]}; }
inline Mat2 mul(const Mat2& a, const Mat2& b) {
  return {a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3], a[2] * b[0] + a[3] * b[2], a[2] * b[1] + a[3] * b[3]};
}
inline double det(const Mat2& m) { return m[0] * m[3] - m[1] * m[2]; }
inline Mat2 inverse(const Mat2& m) {
  const double d = det(m);
  return {m[3] / d, -m[1] / d, -m[2] / d, m[0] / d};
}
/// Largest singular value.
inline double op_norm(const Mat2& m) {
  const double a = m[0] * m[0] + m[2] * m[2], b = m[0] * m[1] + m[2] * m[3], c = m[1] * m[1] + m[3] * m[3];
  return std::sqrt(0.5 * (a + c + std::hypot(a - c, 2 * b)));
}
inline double norm(const Vec2& v) { return std::hypot(v[0], v[1]); }
inline Vec2 normalized(const Vec2& v) {
  const double n = norm(v);
  return {v[0] / n, v[1] / n};
}
inline Vec2 wrap(const Vec2& p) { return {frac(p[0]), frac(p[1])}; }
/// Angle between the lines spanned by a and b, in [0, pi/2].
inline double line_angle(const Vec2& a, const Vec2& b) {
  return std::atan2(std::abs(a[0] * b[1] - a[1] * b[0]), std::abs(a[0] * b[0] + a[1] * b[1]));
}

inline Mat2 to_mat2(const IntMatrix& m) {
  require(m.dim() == 2, ErrorKind::DimensionUnsupported, "torus maps need a 2x2 matrix");
  return {static_cast<double>(m(0, 0)), static_cast<double>(m(0, 1)), static_cast<double>(m(1, 0)),
          static_cast<double>(m(1, 1))};
}

// ---------------------------------------------------------------------------
// Trigonometric vector fields on T^2.

/// a sin(2 pi (kx x + ky y)) + b cos(2 pi (kx x + ky y))
struct Trig2Term {
  int kx = 0, ky = 0;
  double a = 0.0, b = 0.0;
};

class VectorField2 {
 public:
  VectorField2() = default;
  VectorField2(std::vector<Trig2Term> first, std::vector<Trig2Term> second) : c_{std::move(first), std::move(second)} {
    for (const auto& comp : c_)
      for (const auto& t : comp)
        require(t.kx != 0 || t.ky != 0, ErrorKind::InvalidArgument, "zero frequency term (use the translation)");
  }

  const std::vector<Trig2Term>& component(int i) const { return c_[static_cast<std::size_t>(i)]; }
  bool empty() const { return c_[0].empty() && c_[1].empty(); }

  void eval(const Vec2& p, Vec2* value, Mat2* jac) const {
    Vec2 v{0, 0};
    Mat2 j{0, 0, 0, 0};
    for (int i = 0; i < 2; ++i) {
      for (const auto& t : c_[static_cast<std::size_t>(i)]) {
        const double th = kTwoPi * (t.kx * p[0] + t.ky * p[1]);
        const double s = std::sin(th), c = std::cos(th);
        v[static_cast<std::size_t>(i)] += t.a * s + t.b * c;
        const double d = kTwoPi * (t.a * c - t.b * s);
        j[static_cast<std::size_t>(2 * i)] += d * t.kx;
        j[static_cast<std::size_t>(2 * i + 1)] += d * t.ky;
      }
    }
    if (value) *value = v;
    if (jac) *jac = j;
  }

  Vec2 value(const Vec2& p) const {
    Vec2 v;
    eval(p, &v, nullptr);
    return v;
  }

  /// Upper bound of sup ||Dg|| (operator norm).
  double jacobian_bound() const { return bound(1); }
  /// Lipschitz constant of Dg in operator norm.
  double jacobian_lipschitz() const { return bound(2); }

 private:
  double bound(int order) const {
    double s2 = 0.0;
    for (const auto& comp : c_) {
      double s = 0.0;
      for (const auto& t : comp) s += std::pow(kTwoPi * std::hypot(t.kx, t.ky), order) * std::hypot(t.a, t.b);
      s2 += s * s;
    }
    return std::sqrt(s2);
  }

  std::array<std::vector<Trig2Term>, 2> c_;
};

// ---------------------------------------------------------------------------
// Maps.

inline constexpr int kInverseNewtonIters = 30;
inline constexpr double kInverseNewtonTol = 1e-13;

/// f(x) = A x + v + eps g(x) mod Z^2.
class PerturbedToralMap {
 public:
  PerturbedToralMap(IntMatrix linear, Vec2 translation, double epsilon = 0.0, VectorField2 g = {})
      : a_(std::move(linear)), v_(translation), eps_(epsilon), g_(std::move(g)) {
    am_ = to_mat2(a_);
    require(a_.is_unimodular(), ErrorKind::InvalidArgument, "linear part must have |det| = 1");
    require(is_hyperbolic(a_), ErrorKind::NotHyperbolic, "linear part must be hyperbolic");
    require(epsilon >= 0.0 && std::isfinite(epsilon), ErrorKind::InvalidArgument, "epsilon must be >= 0");
    for (double t : v_) require(t >= 0.0 && t < 1.0, ErrorKind::InvalidArgument, "translation must be in [0,1)^2");
    ainv_ = inverse(am_);
  }

  const IntMatrix& linear() const { return a_; }
  const Vec2& translation() const { return v_; }
  double epsilon() const { return eps_; }
  const VectorField2& perturbation() const { return g_; }

  Vec2 lift(const Vec2& p) const {
    const Vec2 ap = mul(am_, p);
    if (eps_ == 0.0 || g_.empty()) return {ap[0] + v_[0], ap[1] + v_[1]};
    const Vec2 g = g_.value(p);
    return {ap[0] + v_[0] + eps_ * g[0], ap[1] + v_[1] + eps_ * g[1]};
  }

  /// Lift and Jacobian at p.
  void step(const Vec2& p, Vec2* image, Mat2* jac) const {
    Vec2 g{0, 0};
    Mat2 dg{0, 0, 0, 0};
    if (eps_ != 0.0 && !g_.empty()) g_.eval(p, &g, &dg);
    const Vec2 ap = mul(am_, p);
    if (image) *image = {ap[0] + v_[0] + eps_ * g[0], ap[1] + v_[1] + eps_ * g[1]};
    if (jac) *jac = {am_[0] + eps_ * dg[0], am_[1] + eps_ * dg[1], am_[2] + eps_ * dg[2], am_[3] + eps_ * dg[3]};
  }

  Mat2 jacobian(const Vec2& p) const {
    Mat2 j;
    step(p, nullptr, &j);
    return j;
  }

  double jacobian_lipschitz() const { return eps_ * g_.jacobian_lipschitz(); }

  /// eps Lip(g) ||A^{-1}|| < 1: f is a diffeomorphism and Newton below is safe.
  bool invertibility_certified() const { return eps_ * g_.jacobian_bound() * op_norm(ainv_) < 1.0; }

  /// f^{-1}(y) mod Z^2 by damped Newton from A^{-1}(y - v).
  Vec2 inverse_point(const Vec2& y) const {
    const Vec2 target{y[0] - v_[0], y[1] - v_[1]};
    Vec2 x = mul(ainv_, target);
    if (eps_ == 0.0 || g_.empty()) return wrap(x);
    auto residual = [&](const Vec2& p) {
      Vec2 im;
      step(p, &im, nullptr);
      return Vec2{im[0] - y[0], im[1] - y[1]};
    };
    Vec2 r = residual(x);
    for (int it = 0; it < kInverseNewtonIters && norm(r) > kInverseNewtonTol; ++it) {
      const Vec2 dx = mul(inverse(jacobian(x)), r);
      double lam = 1.0;
      for (int h = 0; h < 30; ++h, lam *= 0.5) {
        const Vec2 cand{x[0] - lam * dx[0], x[1] - lam * dx[1]};
        const Vec2 rc = residual(cand);
        if (norm(rc) < norm(r) || h == 29) {
          x = cand;
          r = rc;
          break;
        }
      }
    }
    require(norm(r) <= kInverseNewtonTol, ErrorKind::NoConvergence, "Newton inverse did not converge");
    return wrap(x);
  }

 private:
  IntMatrix a_;
  Mat2 am_{}, ainv_{};
  Vec2 v_{};
  double eps_ = 0.0;
  VectorField2 g_;
};

/// phi(x) = x + psi(x) with sup ||D psi|| < 1.
class ToralDiffeo {
 public:
  ToralDiffeo() = default;
  explicit ToralDiffeo(VectorField2 psi) : psi_(std::move(psi)) {
    require(psi_.jacobian_bound() < 1.0, ErrorKind::InvalidArgument, "conjugacy must satisfy sup||D psi|| < 1");
  }
  const VectorField2& psi() const { return psi_; }

  Vec2 operator()(const Vec2& p) const {
    const Vec2 s = psi_.value(p);
    return {p[0] + s[0], p[1] + s[1]};
  }
  Mat2 jacobian(const Vec2& p) const {
    Mat2 j;
    psi_.eval(p, nullptr, &j);
    return {1 + j[0], j[1], j[2], 1 + j[3]};
  }
  /// Lift-preserving inverse by Newton from y - psi(y).
  Vec2 inverse(const Vec2& y) const {
    const Vec2 s0 = psi_.value(y);
    Vec2 x{y[0] - s0[0], y[1] - s0[1]};
    for (int it = 0; it < 60; ++it) {
      Vec2 s;
      Mat2 j;
      psi_.eval(x, &s, &j);
      const Vec2 r{x[0] + s[0] - y[0], x[1] + s[1] - y[1]};
      if (norm(r) <= 1e-15) break;
      const Vec2 dx = mul(rigidity::inverse(Mat2{1 + j[0], j[1], j[2], 1 + j[3]}), r);
      x = {x[0] - dx[0], x[1] - dx[1]};
    }
    return x;
  }
  double delta1() const { return psi_.jacobian_bound(); }
  double delta2() const { return psi_.jacobian_lipschitz(); }

 private:
  VectorField2 psi_;
};

/// f = phi^{-1} o (A x + v) o phi.
class ConjugatedToralMap {
 public:
  ConjugatedToralMap(IntMatrix linear, Vec2 translation, ToralDiffeo phi)
      : a_(std::move(linear)), v_(translation), phi_(std::move(phi)) {
    am_ = to_mat2(a_);
    require(a_.is_unimodular(), ErrorKind::InvalidArgument, "linear part must have |det| = 1");
    require(is_hyperbolic(a_), ErrorKind::NotHyperbolic, "linear part must be hyperbolic");
    for (double t : v_) require(t >= 0.0 && t < 1.0, ErrorKind::InvalidArgument, "translation must be in [0,1)^2");
    ainv_ = inverse(am_);
  }

  const IntMatrix& linear() const { return a_; }
  const Vec2& translation() const { return v_; }
  const ToralDiffeo& phi() const { return phi_; }

  Vec2 lift(const Vec2& p) const {
    const Vec2 z = mul(am_, phi_(p));
    return phi_.inverse({z[0] + v_[0], z[1] + v_[1]});
  }

  void step(const Vec2& p, Vec2* image, Mat2* jac) const {
    const Vec2 fp = lift(p);
    if (image) *image = fp;
    if (jac) *jac = mul(rigidity::inverse(phi_.jacobian(fp)), mul(am_, phi_.jacobian(p)));
  }

  Mat2 jacobian(const Vec2& p) const {
    Mat2 j;
    step(p, nullptr, &j);
    return j;
  }

  /// Lipschitz bound of Df = Dphi(f)^{-1} A Dphi on the lift.
  double jacobian_lipschitz() const {
    const double d1 = phi_.delta1(), l2 = phi_.delta2(), na = op_norm(am_);
    const double lip_f = na * (1 + d1) / (1 - d1);
    return l2 / ((1 - d1) * (1 - d1)) * lip_f * na * (1 + d1) + na * l2 / (1 - d1);
  }

  bool invertibility_certified() const { return true; }

  Vec2 inverse_point(const Vec2& y) const {
    const Vec2 z = phi_(y);
    return wrap(phi_.inverse(mul(ainv_, Vec2{z[0] - v_[0], z[1] - v_[1]})));
  }

 private:
  IntMatrix a_;
  Mat2 am_{}, ainv_{};
  Vec2 v_{};
  ToralDiffeo phi_;
};

/// Either kind of fiber map, with a uniform interface.
class ToralMap {
 public:
  ToralMap(PerturbedToralMap m) : m_(std::move(m)) {}
  ToralMap(ConjugatedToralMap m) : m_(std::move(m)) {}

  const IntMatrix& linear() const {
    return std::visit([](const auto& m) -> const IntMatrix& { return m.linear(); }, m_);
  }
  const Vec2& translation() const {
    return std::visit([](const auto& m) -> const Vec2& { return m.translation(); }, m_);
  }
  Vec2 lift(const Vec2& p) const {
    return std::visit([&](const auto& m) { return m.lift(p); }, m_);
  }
  Vec2 operator()(const Vec2& p) const { return wrap(lift(p)); }
  void step(const Vec2& p, Vec2* image, Mat2* jac) const {
    std::visit([&](const auto& m) { m.step(p, image, jac); }, m_);
  }
  Mat2 jacobian(const Vec2& p) const {
    return std::visit([&](const auto& m) { return m.jacobian(p); }, m_);
  }
  /// Periodic part f_lift(x) - A x.
  Vec2 displacement(const Vec2& p) const {
    const Vec2 f = lift(p);
    const Vec2 ap = mul(to_mat2(linear()), p);
    return {f[0] - ap[0], f[1] - ap[1]};
  }
  Vec2 inverse(const Vec2& y) const {
    return std::visit([&](const auto& m) { return m.inverse_point(y); }, m_);
  }
  double jacobian_lipschitz() const {
    return std::visit([](const auto& m) { return m.jacobian_lipschitz(); }, m_);
  }
  bool invertibility_certified() const {
    return std::visit([](const auto& m) { return m.invertibility_certified(); }, m_);
  }
  const std::variant<PerturbedToralMap, ConjugatedToralMap>& variant() const { return m_; }

 private:
  std::variant<PerturbedToralMap, ConjugatedToralMap> m_;
};

// ---------------------------------------------------------------------------
// Systems and cone certificates.

struct PerturbedConeCertificate {
  bool ok = false;
  double gamma = 0.0;
  double min_margin = 0.0;  // smallest inclusion margin after the Lipschitz allowance
  int grid_n = 0;
  // First failure, if any.
  std::size_t bad_map = 0;
  Vec2 bad_point{};
  std::string reason;
};

namespace detail {

/// Signed inclusion margin of w in the double sector (r1, r2) (unit rays):
/// distance of w to the nearer boundary line, with the half (+1 or -1) it
/// lies in.
inline double sector_margin(const Vec2& r1, const Vec2& r2, const Vec2& w, int* half) {
  const double c1 = r1[0] * w[1] - r1[1] * w[0], c2 = w[0] * r2[1] - w[1] * r2[0];
  const int s = c1 >= 0 ? 1 : -1;
  *half = s;
  return std::min(s * c1, s * c2);
}

inline double min_stretch(const Mat2& m, const Vec2& r1, const Vec2& r2) {
  return std::sqrt(min_stretch_sq(m, {r1[0], r1[1]}, {r2[0], r2[1]}));
}

}  // namespace detail

class RandomToralSystem;
inline PerturbedConeCertificate perturbed_cone_margins(const RandomToralSystem& system, int grid_n);

inline constexpr int kDefaultConeGrid = 64;
inline constexpr int kMaxConeGrid = 1024;

class RandomToralSystem {
 public:
  RandomToralSystem(std::vector<ToralMap> maps, std::vector<double> probs, ConePair cones = ConePair::quadrant())
      : maps_(std::move(maps)), probs_(std::move(probs)), cones_(cones) {
    require(!maps_.empty(), ErrorKind::InvalidSystem, "empty torus system");
    require(maps_.size() == probs_.size(), ErrorKind::InvalidSystem, "one probability per map");
    try {
      cdf_ = cumulative_probs(probs_);
    } catch (const Error& e) {
      throw Error(ErrorKind::InvalidSystem, e.what());
    }
    std::vector<IntMatrix> lin;
    for (const auto& m : maps_) lin.push_back(m.linear());
    std::vector<double> w(lin.size(), 1.0 / static_cast<double>(lin.size()));
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < w.size(); ++i) s += w[i];
    w.back() = 1.0 - s;
    try {
      linear_cert_ = certify_cone_hyperbolic(MatrixFamily(lin, w), cones_);
    } catch (const Error& e) {
      throw Error(ErrorKind::InvalidSystem, std::string("linear parts fail the shared cones: ") + e.what());
    }
    require(linear_cert_.ok, ErrorKind::InvalidSystem, "linear parts are not cone hyperbolic");
    u_axis_ = normalized({cones_.u1[0] / norm(cones_.u1) + cones_.u2[0] / norm(cones_.u2),
                          cones_.u1[1] / norm(cones_.u1) + cones_.u2[1] / norm(cones_.u2)});
    s_axis_ = normalized({cones_.s1[0] / norm(cones_.s1) + cones_.s2[0] / norm(cones_.s2),
                          cones_.s1[1] / norm(cones_.s1) + cones_.s2[1] / norm(cones_.s2)});
    // Refine until the Lipschitz allowance is small enough.
    for (int n = kDefaultConeGrid; n <= kMaxConeGrid; n *= 2) {
      cert_ = perturbed_cone_margins(*this, n);
      if (cert_.ok) break;
    }
  }
  explicit RandomToralSystem(ToralMap m) : RandomToralSystem(std::vector<ToralMap>{std::move(m)}, {1.0}) {}

  std::size_t size() const { return maps_.size(); }
  const ToralMap& map(std::size_t i) const { return maps_[i]; }
  const std::vector<ToralMap>& maps() const { return maps_; }
  const std::vector<double>& probs() const { return probs_; }
  const std::vector<double>& cumulative() const { return cdf_; }
  const ConePair& cones() const { return cones_; }
  const ConeCertificate& linear_certificate() const { return linear_cert_; }
  /// Certificate on the first grid (64, 128, ..., 1024) that succeeds, or the
  /// finest failure; computed at construction.
  const PerturbedConeCertificate& certificate() const { return cert_; }
  const Vec2& unstable_axis() const { return u_axis_; }
  const Vec2& stable_axis() const { return s_axis_; }

  void require_certified() const {
    require(cert_.ok, ErrorKind::ConeViolation, "system is not cone certified: " + cert_.reason);
  }

 private:
  std::vector<ToralMap> maps_;
  std::vector<double> probs_;
  std::vector<double> cdf_;
  ConePair cones_;
  ConeCertificate linear_cert_;
  PerturbedConeCertificate cert_;
  Vec2 u_axis_{}, s_axis_{};
};

/// Cone inclusion and expansion at cell centres of a grid_n x grid_n grid,
/// with the Jacobian's Lipschitz constant covering the rest of each cell.
/// Never throws on failure; see certify_perturbed_cones.
inline PerturbedConeCertificate perturbed_cone_margins(const RandomToralSystem& system, int grid_n) {
  require(grid_n >= 64, ErrorKind::InvalidArgument, "grid_n must be >= 64");
  const auto& c = system.cones();
  const Vec2 u1 = normalized({c.u1[0], c.u1[1]}), u2 = normalized({c.u2[0], c.u2[1]});
  const Vec2 s1 = normalized({c.s1[0], c.s1[1]}), s2 = normalized({c.s2[0], c.s2[1]});
  const double r = 0.5 * std::sqrt(2.0) / grid_n;
  PerturbedConeCertificate out;
  out.grid_n = grid_n;
  out.ok = true;
  double min_stretch = std::numeric_limits<double>::infinity();
  double min_margin = std::numeric_limits<double>::infinity();
  auto fail = [&](std::size_t i, const Vec2& p, std::string why) {
    if (!out.ok) return;
    out.ok = false;
    out.bad_map = i;
    out.bad_point = p;
    out.reason = std::move(why);
  };
  for (std::size_t i = 0; i < system.size(); ++i) {
    const auto& f = system.map(i);
    const double delta = f.jacobian_lipschitz() * r;
    for (int a = 0; a < grid_n; ++a) {
      for (int b = 0; b < grid_n; ++b) {
        const Vec2 p{(a + 0.5) / grid_n, (b + 0.5) / grid_n};
        const Mat2 j = f.jacobian(p);
        if (!(std::abs(det(j)) > 0.0)) {
          fail(i, p, "singular Jacobian");
          continue;
        }
        const Mat2 ji = inverse(j);
        const double ni = op_norm(ji);
        const double delta_inv = ni * delta < 1.0 ? ni * ni * delta / (1.0 - ni * delta)
                                                  : std::numeric_limits<double>::infinity();
        int h1, h2, h3, h4;
        const double mu = std::min(detail::sector_margin(u1, u2, mul(j, u1), &h1),
                                   detail::sector_margin(u1, u2, mul(j, u2), &h2)) - delta;
        const double ms = std::min(detail::sector_margin(s1, s2, mul(ji, s1), &h3),
                                   detail::sector_margin(s1, s2, mul(ji, s2), &h4)) - delta_inv;
        min_margin = std::min({min_margin, mu, ms});
        if (mu <= 0.0 || h1 != h2) fail(i, p, "unstable cone not mapped inside");
        if (ms <= 0.0 || h3 != h4) fail(i, p, "stable cone not mapped inside by the inverse");
        const double eu = detail::min_stretch(j, u1, u2) - delta;
        const double es = detail::min_stretch(ji, s1, s2) - delta_inv;
        min_stretch = std::min({min_stretch, eu, es});
      }
    }
    if (out.ok && !f.invertibility_certified())
      fail(i, {0, 0}, "invertibility bound eps Lip(g) ||A^-1|| < 1 fails");
  }
  out.min_margin = min_margin;
  out.gamma = min_stretch > 0.0 ? std::log(min_stretch) : -std::numeric_limits<double>::infinity();
  if (out.ok && !(out.gamma > 0.0)) {
    out.ok = false;
    out.reason = "no uniform expansion";
  }
  return out;
}

/// Throwing form: ConeViolation naming the map and grid point.
inline PerturbedConeCertificate certify_perturbed_cones(const RandomToralSystem& system, int grid_n) {
  auto cert = perturbed_cone_margins(system, grid_n);
  if (!cert.ok) {
    char buf[96];
    std::snprintf(buf, sizeof buf, " (map %zu at (%.6f, %.6f))", cert.bad_map, cert.bad_point[0], cert.bad_point[1]);
    throw Error(ErrorKind::ConeViolation, cert.reason + buf);
  }
  return cert;
}

// ---------------------------------------------------------------------------
// Exponents.

inline constexpr int kDefaultTorusBurnIn = 1000;

/// SRB exponents (lambda+, lambda-) by the QR cocycle along random orbits
/// started Lebesgue-uniform; orbit r uses stream r of the seed.
inline SpectrumEstimate srb_exponents(const RandomToralSystem& system, std::uint64_t seed, int n_orbits, int n_steps,
                                      int burn_in = kDefaultTorusBurnIn) {
  system.require_certified();
  require(n_steps >= 10000, ErrorKind::InvalidArgument, "n_steps must be >= 10^4");
  require(n_orbits >= 2, ErrorKind::InvalidArgument, "n_orbits must be >= 2");
  require(burn_in >= 0, ErrorKind::InvalidArgument, "burn_in must be >= 0");
  std::vector<double> top(static_cast<std::size_t>(n_orbits)), bottom(static_cast<std::size_t>(n_orbits));
  parallel_for(top.size(), [&](std::size_t r) {
    Rng rng(seed, r);
    Vec2 x{rng.uniform(), rng.uniform()};
    Vec2 q1{1, 0}, q2{0, 1};
    CompensatedSum s1, s2;
    for (int t = 0; t < burn_in + n_steps; ++t) {
      const auto& f = system.map(rng.pick(system.cumulative()));
      Vec2 fx;
      Mat2 j;
      f.step(x, &fx, &j);
      x = wrap(fx);
      Vec2 z1 = mul(j, q1), z2 = mul(j, q2);
      const double r11 = norm(z1);
      q1 = {z1[0] / r11, z1[1] / r11};
      const double r12 = q1[0] * z2[0] + q1[1] * z2[1];
      z2 = {z2[0] - r12 * q1[0], z2[1] - r12 * q1[1]};
      const double r22 = norm(z2);
      q2 = {z2[0] / r22, z2[1] / r22};
      if (t >= burn_in) {
        s1.add(std::log(r11));
        s2.add(std::log(r22));
      }
    }
    top[r] = s1.value() / n_steps;
    bottom[r] = s2.value() / n_steps;
  });
  const auto a = mean_stderr(top), b = mean_stderr(bottom);
  SpectrumEstimate out;
  out.exponents = {a.mean, b.mean};
  out.stderrs = {a.std_error, b.std_error};
  out.n_samples = static_cast<std::int64_t>(n_orbits) * n_steps;
  return out;
}

// ---------------------------------------------------------------------------
// Directions.

inline constexpr double kDirectionTol = 1e-10;
inline constexpr double kDirectionFailTol = 1e-8;

namespace detail {

inline void check_word(const RandomToralSystem& system, std::span<const std::size_t> word, int depth) {
  require(depth >= 20, ErrorKind::InvalidArgument, "depth must be >= 20");
  require(word.size() >= static_cast<std::size_t>(depth), ErrorKind::InvalidArgument, "word shorter than depth");
  for (auto w : word) require(w < system.size(), ErrorKind::InvalidArgument, "word index out of range");
}

/// Accumulates P <- P * M and tracks the direction of P v0 until the angle
/// change drops below kDirectionTol.
class DirectionTracker {
 public:
  explicit DirectionTracker(Vec2 v0) : v0_(v0), dir_(normalized(v0)) {}
  /// Returns true once converged.
  bool push(const Mat2& m) {
    p_ = mul(p_, m);
    const double s = std::max({std::abs(p_[0]), std::abs(p_[1]), std::abs(p_[2]), std::abs(p_[3])});
    for (double& e : p_) e /= s;
    const Vec2 d = normalized(mul(p_, v0_));
    last_change_ = line_angle(d, dir_);
    dir_ = d;
    return last_change_ < kDirectionTol;
  }
  Vec2 direction() const { return dir_; }
  double last_change() const { return last_change_; }

 private:
  Vec2 v0_;
  Mat2 p_{1, 0, 0, 1};
  Vec2 dir_;
  double last_change_ = 1.0;
};

inline Vec2 canonical_sign(Vec2 d, const Vec2& axis) {
  if (d[0] * axis[0] + d[1] * axis[1] < 0) d = {-d[0], -d[1]};
  return d;
}

}  // namespace detail

/// E^u at x for the past word (past_word[0] is the map applied last): the
/// limit of Df_{w0}(x_{-1}) ... Df_{w_{n-1}}(x_{-n}) v0 for v0 in the unstable cone.
inline Vec2 unstable_direction(const RandomToralSystem& system, std::span<const std::size_t> past_word, Vec2 x,
                               int depth) {
  system.require_certified();
  detail::check_word(system, past_word, depth);
  detail::DirectionTracker tr(system.unstable_axis());
  Vec2 p = wrap(x);
  for (int n = 0; n < depth; ++n) {
    const auto& f = system.map(past_word[static_cast<std::size_t>(n)]);
    p = f.inverse(p);
    if (tr.push(f.jacobian(p)) && n >= 1) return detail::canonical_sign(tr.direction(), system.unstable_axis());
  }
  require(tr.last_change() <= kDirectionFailTol, ErrorKind::NoConvergence, "unstable direction did not converge");
  return detail::canonical_sign(tr.direction(), system.unstable_axis());
}

/// E^s at x for the future word: the limit of
/// Df_{w0}(x_0)^{-1} ... Df_{w_{n-1}}(x_{n-1})^{-1} v0 for v0 in the stable cone.
inline Vec2 stable_direction(const RandomToralSystem& system, std::span<const std::size_t> future_word, Vec2 x,
                             int depth) {
  system.require_certified();
  detail::check_word(system, future_word, depth);
  detail::DirectionTracker tr(system.stable_axis());
  Vec2 p = wrap(x);
  for (int n = 0; n < depth; ++n) {
    const auto& f = system.map(future_word[static_cast<std::size_t>(n)]);
    Vec2 fp;
    Mat2 j;
    f.step(p, &fp, &j);
    p = wrap(fp);
    if (tr.push(inverse(j)) && n >= 1) return detail::canonical_sign(tr.direction(), system.stable_axis());
  }
  require(tr.last_change() <= kDirectionFailTol, ErrorKind::NoConvergence, "stable direction did not converge");
  return detail::canonical_sign(tr.direction(), system.stable_axis());
}

struct Dispersion {
  double max_angle = 0.0;
  double mean_angle = 0.0;
};

/// At n_points uniform points, the stable direction under n_futures
/// independent future words; max and mean pairwise angle.
inline Dispersion stable_bundle_dispersion(const RandomToralSystem& system, std::uint64_t seed, int n_points,
                                           int n_futures, int depth) {
  require(n_points >= 1 && n_futures >= 2, ErrorKind::InvalidArgument, "need n_points >= 1 and n_futures >= 2");
  std::vector<double> maxes(static_cast<std::size_t>(n_points)), sums(static_cast<std::size_t>(n_points));
  parallel_for(maxes.size(), [&](std::size_t i) {
    Rng rng(seed, i);
    const Vec2 x{rng.uniform(), rng.uniform()};
    std::vector<Vec2> dirs;
    std::vector<std::size_t> word(static_cast<std::size_t>(depth));
    for (int k = 0; k < n_futures; ++k) {
      for (auto& w : word) w = rng.pick(system.cumulative());
      dirs.push_back(stable_direction(system, word, x, depth));
    }
    double mx = 0.0, sum = 0.0;
    for (std::size_t a = 0; a < dirs.size(); ++a)
      for (std::size_t b = a + 1; b < dirs.size(); ++b) {
        const double ang = line_angle(dirs[a], dirs[b]);
        mx = std::max(mx, ang);
        sum += ang;
      }
    maxes[i] = mx;
    sums[i] = sum;
  });
  Dispersion out;
  CompensatedSum total;
  for (std::size_t i = 0; i < maxes.size(); ++i) {
    out.max_angle = std::max(out.max_angle, maxes[i]);
    total.add(sums[i]);
  }
  const double pairs = 0.5 * n_futures * (n_futures - 1.0) * n_points;
  out.mean_angle = total.value() / pairs;
  return out;
}

// ---------------------------------------------------------------------------
// Conjugacy H = id + u with H o f = A o H.

class ConjugacyGrid {
 public:
  ConjugacyGrid() = default;
  explicit ConjugacyGrid(int n) : n_(n), u_(static_cast<std::size_t>(n) * static_cast<std::size_t>(n)) {
    require(n >= 4, ErrorKind::InvalidArgument, "grid too small");
  }

  int n() const { return n_; }
  Vec2& at(int i, int j) { return u_[index(i, j)]; }
  const Vec2& at(int i, int j) const { return u_[index(i, j)]; }
  Vec2 node(int i, int j) const { return {static_cast<double>(i) / n_, static_cast<double>(j) / n_}; }

  /// Periodic bilinear interpolation of u.
  Vec2 displacement(const Vec2& p) const {
    const double x = frac(p[0]) * n_, y = frac(p[1]) * n_;
    const int i = std::min(static_cast<int>(x), n_ - 1), j = std::min(static_cast<int>(y), n_ - 1);
    const double tx = x - i, ty = y - j;
    const int i1 = (i + 1) % n_, j1 = (j + 1) % n_;
    const Vec2 &a = at(i, j), &b = at(i1, j), &c = at(i, j1), &d = at(i1, j1);
    Vec2 out;
    for (std::size_t k = 0; k < 2; ++k)
      out[k] = (1 - tx) * (1 - ty) * a[k] + tx * (1 - ty) * b[k] + (1 - tx) * ty * c[k] + tx * ty * d[k];
    return out;
  }
  /// H(p) on the lift.
  Vec2 operator()(const Vec2& p) const {
    const Vec2 u = displacement(p);
    return {p[0] + u[0], p[1] + u[1]};
  }
  /// H^{-1}(y) by fixed-point iteration x <- y - u(x).
  Vec2 inverse(const Vec2& y) const {
    Vec2 x = y;
    for (int it = 0; it < 200; ++it) {
      const Vec2 u = displacement(x);
      const Vec2 nx{y[0] - u[0], y[1] - u[1]};
      const double change = std::hypot(nx[0] - x[0], nx[1] - x[1]);
      x = nx;
      if (change < 1e-15) break;
    }
    return x;
  }

  double sup_norm() const {
    double m = 0.0;
    for (const auto& v : u_) m = std::max(m, norm(v));
    return m;
  }

 private:
  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j);
  }
  int n_ = 0;
  std::vector<Vec2> u_;
};

struct ConjugacySolution {
  ConjugacyGrid grid;
  double residual = 0.0;  // sup ||H(f x) - A H(x) mod Z^2|| at the nodes
  int iterations = 0;
};

/// Distance of a vector to the nearest point of Z^2.
inline double torus_norm(const Vec2& d) {
  return std::hypot(d[0] - std::round(d[0]), d[1] - std::round(d[1]));
}

/// sup over the points of ||H(f(x)) - A H(x) mod Z^2||.
inline double conjugacy_residual(const ConjugacyGrid& h, const ToralMap& f, int verify_n) {
  const Mat2 a = to_mat2(f.linear());
  double worst = 0.0;
  for (int i = 0; i < verify_n; ++i)
    for (int j = 0; j < verify_n; ++j) {
      const Vec2 p{(i + 0.5) / verify_n, (j + 0.5) / verify_n};
      const Vec2 lhs = h(f.lift(p));
      const Vec2 rhs = mul(a, h(p));
      worst = std::max(worst, torus_norm({lhs[0] - rhs[0], lhs[1] - rhs[1]}));
    }
  return worst;
}

/// Solves A u(x) - u(f x) = f(x) - A x along the eigenlines of A:
///   unstable: u+(x) <- (u+(f x) + d+(x)) / lambda_u
///   stable:   u-(x) <- lambda_s u-(f^{-1} x) - d-(f^{-1} x)
/// Jacobi sweeps on the grid with bilinear interpolation, until the node
/// residual is below tol and the sweep changes u by less than 1e-3 tol.
inline ConjugacySolution solve_linear_conjugacy(const ToralMap& f, int grid_n, double tol, int max_iters) {
  require(grid_n >= 16, ErrorKind::InvalidArgument, "grid_n must be >= 16");
  require(tol > 0.0, ErrorKind::InvalidArgument, "tol must be positive");
  require(max_iters >= 1, ErrorKind::InvalidArgument, "max_iters must be >= 1");
  const Mat2 a = to_mat2(f.linear());
  const double tr = a[0] + a[3], dt = det(a);
  const double disc = std::sqrt(tr * tr - 4 * dt);
  double lu = 0.5 * (tr + disc), ls = 0.5 * (tr - disc);
  if (std::abs(lu) < std::abs(ls)) std::swap(lu, ls);
  // Eigenvectors and the dual basis.
  auto eigvec = [&](double l) {
    return std::abs(a[1]) > std::abs(a[2]) ? normalized({a[1], l - a[0]}) : normalized({l - a[3], a[2]});
  };
  const Vec2 eu = eigvec(lu), es = eigvec(ls);
  const Mat2 basis{eu[0], es[0], eu[1], es[1]};
  const Mat2 dual = inverse(basis);  // coordinates (c+, c-) of a vector

  const int n = grid_n;
  const std::size_t nn = static_cast<std::size_t>(n) * static_cast<std::size_t>(n);
  std::vector<Vec2> fwd(nn), bwd(nn);
  std::vector<double> dplus(nn), dminus_back(nn);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * n + j;
      const Vec2 p{static_cast<double>(i) / n, static_cast<double>(j) / n};
      fwd[k] = f(p);
      bwd[k] = f.inverse(p);
      dplus[k] = mul(dual, f.displacement(p))[0];
      dminus_back[k] = mul(dual, f.displacement(bwd[k]))[1];
    }

  // Scalar grids for the two components.
  ConjugacyGrid cur(n), next(n);
  ConjugacySolution sol;
  auto interp = [&](const ConjugacyGrid& g, const Vec2& p) { return g.displacement(p); };
  for (int it = 1; it <= max_iters; ++it) {
    double change = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const std::size_t k = static_cast<std::size_t>(i) * n + j;
        const Vec2 cf = mul(dual, interp(cur, fwd[k]));
        const Vec2 cb = mul(dual, interp(cur, bwd[k]));
        const double up = (cf[0] + dplus[k]) / lu;
        const double um = ls * cb[1] - dminus_back[k];
        const Vec2 u{up * eu[0] + um * es[0], up * eu[1] + um * es[1]};
        const Vec2& old = cur.at(i, j);
        change = std::max(change, std::hypot(u[0] - old[0], u[1] - old[1]));
        next.at(i, j) = u;
      }
    std::swap(cur, next);
    sol.iterations = it;
    if (change < 1e-3 * tol) {
      double res = 0.0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const Vec2 p = cur.node(i, j);
          const Vec2 lhs = cur(f.lift(p)), rhs = mul(a, cur(p));
          res = std::max(res, torus_norm({lhs[0] - rhs[0], lhs[1] - rhs[1]}));
        }
      sol.residual = res;
      if (res < tol) {
        sol.grid = std::move(cur);
        return sol;
      }
      char buf[96];
      std::snprintf(buf, sizeof buf, "iteration settled with residual %.3e above tol %.3e", res, tol);
      throw Error(ErrorKind::NoConvergence, buf);
    }
  }
  throw Error(ErrorKind::NoConvergence, "conjugacy iteration hit max_iters");
}

struct TranslationCheck {
  bool is_translation = false;
  Vec2 v{};
  double residual = 0.0;
};

/// Whether H2 o H1^{-1} - id is constant (H1 absent means the identity): v is
/// the per-coordinate circular mean over the grid nodes of H2, residual the
/// sup torus distance to v.
inline TranslationCheck verify_translation(const std::optional<ConjugacyGrid>& h1, const ConjugacyGrid& h2,
                                           double tol) {
  const int n = h2.n();
  std::vector<Vec2> d;
  d.reserve(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Vec2 y = h2.node(i, j);
      const Vec2 x = h1 ? h1->inverse(y) : y;
      const Vec2 hy = h2(x);
      d.push_back({hy[0] - y[0], hy[1] - y[1]});
    }
  TranslationCheck out;
  for (std::size_t c = 0; c < 2; ++c) {
    CompensatedSum cs, sn;
    for (const auto& e : d) {
      cs.add(std::cos(kTwoPi * e[c]));
      sn.add(std::sin(kTwoPi * e[c]));
    }
    out.v[c] = frac(std::atan2(sn.value(), cs.value()) / kTwoPi);
  }
  for (const auto& e : d) out.residual = std::max(out.residual, torus_norm({e[0] - out.v[0], e[1] - out.v[1]}));
  out.is_translation = out.residual < tol;
  return out;
}

// ---------------------------------------------------------------------------
// JSON.

inline nlohmann::json to_json(const VectorField2& g) {
  auto comp = [&](int i) {
    auto a = nlohmann::json::array();
    for (const auto& t : g.component(i)) a.push_back({t.kx, t.ky, t.a, t.b});
    return a;
  };
  return nlohmann::json::array({comp(0), comp(1)});
}

inline VectorField2 vector_field_from_json(const nlohmann::json& j) {
  require(j.is_array() && j.size() == 2, ErrorKind::Config, "vector field must be two term lists");
  std::array<std::vector<Trig2Term>, 2> c;
  for (std::size_t i = 0; i < 2; ++i) {
    require(j[i].is_array(), ErrorKind::Config, "vector field component must be a list");
    for (const auto& t : j[i]) {
      require(t.is_array() && t.size() == 4 && t[0].is_number_integer() && t[1].is_number_integer() &&
                  t[2].is_number() && t[3].is_number(),
              ErrorKind::Config, "terms are [kx, ky, a, b]");
      c[i].push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<double>(), t[3].get<double>()});
    }
  }
  try {
    return VectorField2(c[0], c[1]);
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, e.what());
  }
}

inline nlohmann::json to_json(const ToralMap& m) {
  nlohmann::json j;
  if (const auto* p = std::get_if<PerturbedToralMap>(&m.variant())) {
    j = {{"type", "perturbed"},
         {"matrix", to_json(p->linear())},
         {"translation", {p->translation()[0], p->translation()[1]}},
         {"epsilon", p->epsilon()},
         {"g", to_json(p->perturbation())}};
  } else {
    const auto& c = std::get<ConjugatedToralMap>(m.variant());
    j = {{"type", "conjugated"},
         {"matrix", to_json(c.linear())},
         {"translation", {c.translation()[0], c.translation()[1]}},
         {"psi", to_json(c.phi().psi())}};
  }
  return j;
}

inline ToralMap toral_map_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::Config, "torus map must be an object");
  const std::string type = j.value("type", "perturbed");
  const bool conj = type == "conjugated";
  require(conj || type == "perturbed", ErrorKind::Config, "torus map type must be 'perturbed' or 'conjugated'");
  for (const auto& [k, v] : j.items()) {
    const bool known = k == "type" || k == "matrix" || k == "translation" ||
                       (conj ? k == "psi" : (k == "epsilon" || k == "g"));
    require(known, ErrorKind::Config, "unknown key '" + k + "' in torus map");
  }
  require(j.contains("matrix"), ErrorKind::Config, "torus map needs 'matrix'");
  const IntMatrix a = int_matrix_from_json(j["matrix"]);
  Vec2 v{0, 0};
  if (j.contains("translation")) {
    const auto& t = j["translation"];
    require(t.is_array() && t.size() == 2 && t[0].is_number() && t[1].is_number(), ErrorKind::Config,
            "'translation' must be [x, y]");
    v = {t[0].get<double>(), t[1].get<double>()};
  }
  try {
    if (conj) {
      require(j.contains("psi"), ErrorKind::Config, "conjugated map needs 'psi'");
      return ConjugatedToralMap(a, v, ToralDiffeo(vector_field_from_json(j["psi"])));
    }
    double eps = 0.0;
    if (j.contains("epsilon")) {
      require(j["epsilon"].is_number(), ErrorKind::Config, "'epsilon' must be a number");
      eps = j["epsilon"].get<double>();
    }
    VectorField2 g;
    if (j.contains("g")) g = vector_field_from_json(j["g"]);
    return PerturbedToralMap(a, v, eps, g);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config) throw;
    throw Error(ErrorKind::Config, e.what());
  }
}

inline nlohmann::json to_json(const RandomToralSystem& s) {
  auto maps = nlohmann::json::array();
  for (const auto& m : s.maps()) maps.push_back(to_json(m));
  return {{"maps", maps}, {"probs", s.probs()}};
}

inline nlohmann::json to_json(const PerturbedConeCertificate& c) {
  nlohmann::json j{{"ok", c.ok}, {"gamma", c.gamma}, {"min_margin", c.min_margin}, {"grid_n", c.grid_n}};
  if (!c.ok) j["failure"] = {{"map", c.bad_map}, {"point", {c.bad_point[0], c.bad_point[1]}}, {"reason", c.reason}};
  return j;
}

}  // namespace rigidity
