#pragma once

// Exact polynomial arithmetic over Z and Q for characteristic polynomials of
// small integer matrices. Coefficients are stored lowest degree first.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <boost/multiprecision/cpp_int.hpp>

#include "rigidity/errors.hpp"

namespace rigidity {

using BigInt = boost::multiprecision::cpp_int;
using BigRational = boost::multiprecision::cpp_rational;
using IntPoly = std::vector<BigInt>;
using RatPoly = std::vector<BigRational>;

template <class T>
void trim(std::vector<T>& p) {
  while (p.size() > 1 && p.back() == 0) p.pop_back();
}

template <class T>
int poly_degree(const std::vector<T>& p) {
  for (std::size_t i = p.size(); i-- > 0;)
    if (p[i] != 0) return static_cast<int>(i);
  return -1;
}

inline RatPoly to_rational(const IntPoly& p) {
  RatPoly r;
  r.reserve(p.size());
  for (const auto& c : p) r.emplace_back(c);
  return r;
}

template <class T, class X>
X poly_eval(const std::vector<T>& p, const X& x) {
  X acc = 0;
  for (std::size_t i = p.size(); i-- > 0;) acc = acc * x + X(p[i]);
  return acc;
}

inline IntPoly poly_mul(const IntPoly& a, const IntPoly& b) {
  IntPoly c(a.size() + b.size() - 1, 0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) c[i + j] += a[i] * b[j];
  trim(c);
  return c;
}

inline RatPoly poly_derivative(const RatPoly& p) {
  if (p.size() <= 1) return {0};
  RatPoly d(p.size() - 1);
  for (std::size_t i = 1; i < p.size(); ++i) d[i - 1] = p[i] * static_cast<long>(i);
  trim(d);
  return d;
}

/// Remainder of a by b over Q (b nonzero).
inline RatPoly poly_rem(RatPoly a, const RatPoly& b) {
  const int db = poly_degree(b);
  require(db >= 0, ErrorKind::InvalidArgument, "division by zero polynomial");
  for (int da = poly_degree(a); da >= db; da = poly_degree(a)) {
    const BigRational f = a[static_cast<std::size_t>(da)] / b[static_cast<std::size_t>(db)];
    for (int i = 0; i <= db; ++i) a[static_cast<std::size_t>(da - db + i)] -= f * b[static_cast<std::size_t>(i)];
    a[static_cast<std::size_t>(da)] = 0;
  }
  trim(a);
  return a;
}

/// Exact division over Z. Returns false if d does not divide p in Z[x].
inline bool poly_divides(const IntPoly& d, IntPoly p, IntPoly* quotient = nullptr) {
  const int dd = poly_degree(d);
  require(dd >= 0, ErrorKind::InvalidArgument, "division by zero polynomial");
  int dp = poly_degree(p);
  if (dp < dd) {
    if (dp >= 0) return false;
    if (quotient) *quotient = {0};
    return true;
  }
  IntPoly q(static_cast<std::size_t>(dp - dd + 1), 0);
  const BigInt& lead = d[static_cast<std::size_t>(dd)];
  while (dp >= dd) {
    const BigInt& top = p[static_cast<std::size_t>(dp)];
    if (top % lead != 0) return false;
    const BigInt f = top / lead;
    q[static_cast<std::size_t>(dp - dd)] = f;
    for (int i = 0; i <= dd; ++i) p[static_cast<std::size_t>(dp - dd + i)] -= f * d[static_cast<std::size_t>(i)];
    dp = poly_degree(p);
  }
  if (dp >= 0) return false;
  trim(q);
  if (quotient) *quotient = std::move(q);
  return true;
}

inline int sign(const BigRational& x) { return x > 0 ? 1 : (x < 0 ? -1 : 0); }

inline std::vector<RatPoly> sturm_chain(const IntPoly& p) {
  std::vector<RatPoly> chain{to_rational(p)};
  chain.push_back(poly_derivative(chain[0]));
  while (poly_degree(chain.back()) > 0) {
    RatPoly r = poly_rem(chain[chain.size() - 2], chain.back());
    if (poly_degree(r) < 0) break;
    for (auto& c : r) c = -c;
    chain.push_back(std::move(r));
  }
  return chain;
}

inline int sign_changes(const std::vector<RatPoly>& chain, const BigRational& x) {
  int changes = 0, last = 0;
  for (const auto& q : chain) {
    const int s = sign(poly_eval(q, x));
    if (s == 0) continue;
    if (last != 0 && s != last) ++changes;
    last = s;
  }
  return changes;
}

/// Number of distinct real roots of p in the open interval (a, b). Requires
/// p(a) != 0 and p(b) != 0.
inline int count_real_roots(const IntPoly& p, const BigRational& a, const BigRational& b) {
  require(poly_degree(p) >= 1, ErrorKind::InvalidArgument, "constant polynomial");
  const auto chain = sturm_chain(p);
  return sign_changes(chain, a) - sign_changes(chain, b);
}

/// Whether p has a real root in the closed interval [a, b].
inline bool has_root_in(const IntPoly& p, const BigRational& a, const BigRational& b) {
  if (poly_eval(p, a) == 0 || poly_eval(p, b) == 0) return true;
  return count_real_roots(p, a, b) > 0;
}

inline std::vector<BigInt> positive_divisors(BigInt n) {
  if (n < 0) n = -n;
  std::vector<BigInt> small, large;
  for (BigInt k = 1; k * k <= n; ++k) {
    if (n % k != 0) continue;
    small.push_back(k);
    if (k * k != n) large.push_back(n / k);
  }
  small.insert(small.end(), large.rbegin(), large.rend());
  return small;
}

/// Integer roots of a monic integer polynomial (= its rational roots).
inline std::vector<BigInt> integer_roots(const IntPoly& p) {
  require(poly_degree(p) >= 1 && p.back() == 1, ErrorKind::InvalidArgument, "polynomial must be monic");
  std::vector<BigInt> roots;
  if (p[0] == 0) roots.push_back(0);
  for (const auto& d : positive_divisors(p[0] == 0 ? BigInt(0) : p[0])) {
    if (poly_eval(p, BigInt(d)) == 0) roots.push_back(d);
    if (poly_eval(p, BigInt(-d)) == 0) roots.push_back(-d);
  }
  return roots;
}

namespace detail {

inline bool is_perfect_square(const BigInt& n, BigInt* root = nullptr) {
  if (n < 0) return false;
  const BigInt r = boost::multiprecision::sqrt(n);
  if (root) *root = r;
  return r * r == n;
}

/// Roots of a monic polynomial as eigenvalues of its companion matrix.
inline std::vector<std::complex<double>> companion_roots(const std::vector<double>& coeffs) {
  const int n = static_cast<int>(coeffs.size()) - 1;
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) c(i, i - 1) = 1.0;
  for (int i = 0; i < n; ++i) c(i, n - 1) = -coeffs[static_cast<std::size_t>(i)];
  Eigen::EigenSolver<Eigen::MatrixXd> es(c, false);
  std::vector<std::complex<double>> out;
  for (int i = 0; i < n; ++i) out.push_back(es.eigenvalues()[i]);
  return out;
}

/// Monic quadratic factor x^2 + b x + c of a monic quartic, if any.
inline bool find_quadratic_factor(const IntPoly& p, IntPoly* factor) {
  const BigInt &p0 = p[0], &p1 = p[1], &p2 = p[2], &p3 = p[3];
  if (p0 == 0) return false;  // handled by the root test
  // (x^2 + b x + c)(x^2 + e x + f): cf = p0, b + e = p3, c + f + b e = p2,
  // b f + c e = p1.
  for (const auto& m : positive_divisors(p0)) {
    for (const BigInt c : {BigInt(m), BigInt(-m)}) {
      const BigInt f = p0 / c;
      std::vector<BigInt> bs;
      if (f != c) {
        const BigInt num = p1 - c * p3, den = f - c;
        if (num % den == 0) bs.push_back(num / den);
      } else {
        // b^2 - p3 b + (p2 - 2c) = 0
        const BigInt disc = p3 * p3 - 4 * (p2 - 2 * c);
        BigInt r;
        if (is_perfect_square(disc, &r)) {
          for (const BigInt s : {BigInt(p3 + r), BigInt(p3 - r)})
            if (s % 2 == 0) bs.push_back(s / 2);
        }
      }
      for (const auto& b : bs) {
        const BigInt e = p3 - b;
        if (c + f + b * e == p2 && b * f + c * e == p1) {
          if (factor) *factor = {c, b, 1};
          return true;
        }
      }
    }
  }
  return false;
}

}  // namespace detail

struct IrreducibilityResult {
  bool irreducible = true;
  bool exact = true;
  IntPoly factor;  // a nontrivial factor when reducible
};

/// Irreducibility over Q of a monic integer polynomial.
/// Degree <= 4 is decided exactly (rational roots, then quadratic factors by
/// coefficient matching). Degrees 5 and 6 use numeric root subsets as
/// candidate factors verified by exact division; a reducible verdict is then
/// still exact, an irreducible one is flagged non-exact.
inline IrreducibilityResult check_irreducible(const IntPoly& p) {
  IrreducibilityResult out;
  const int n = poly_degree(p);
  require(n >= 1 && p.back() == 1, ErrorKind::InvalidArgument, "polynomial must be monic");
  require(n <= 6, ErrorKind::DimensionUnsupported, "degree above 6");
  if (n == 1) return out;
  const auto roots = integer_roots(p);
  if (!roots.empty()) {
    out.irreducible = false;
    out.factor = {-roots.front(), 1};
    return out;
  }
  if (n <= 3) return out;
  if (n == 4) {
    IntPoly f;
    if (detail::find_quadratic_factor(p, &f)) {
      out.irreducible = false;
      out.factor = std::move(f);
    }
    return out;
  }

  // Numeric roots via the companion matrix, then try every subset of size
  // 2..n/2 whose product polynomial is numerically integral.
  std::vector<std::complex<double>> z;
  {
    std::vector<double> coeffs;
    for (const auto& c : p) coeffs.push_back(c.convert_to<double>());
    z = detail::companion_roots(coeffs);
  }
  out.exact = false;
  const int m = static_cast<int>(z.size());
  for (int mask = 1; mask < (1 << m); ++mask) {
    const int k = __builtin_popcount(static_cast<unsigned>(mask));
    if (k < 2 || k > n / 2) continue;
    std::vector<std::complex<double>> q{1.0};
    for (int i = 0; i < m; ++i) {
      if (!(mask >> i & 1)) continue;
      std::vector<std::complex<double>> next(q.size() + 1, 0.0);
      for (std::size_t j = 0; j < q.size(); ++j) {
        next[j + 1] += q[j];
        next[j] -= z[static_cast<std::size_t>(i)] * q[j];
      }
      q = std::move(next);
    }
    IntPoly cand;
    bool integral = true;
    for (const auto& c : q) {
      const double r = std::round(c.real());
      if (std::abs(c.imag()) > 1e-6 * (1.0 + std::abs(c)) || std::abs(c.real() - r) > 1e-6 * (1.0 + std::abs(r))) {
        integral = false;
        break;
      }
      cand.emplace_back(static_cast<long long>(r));
    }
    if (integral && poly_divides(cand, p)) {
      out.irreducible = false;
      out.exact = true;
      out.factor = std::move(cand);
      return out;
    }
  }
  return out;
}

inline std::string to_string(const IntPoly& p) {
  std::string s;
  for (std::size_t i = p.size(); i-- > 0;) {
    if (p[i] == 0 && p.size() > 1) continue;
    const BigInt c = p[i];
    if (!s.empty()) s += c < 0 ? " - " : " + ";
    else if (c < 0) s += "-";
    const BigInt a = c < 0 ? BigInt(-c) : c;
    if (a != 1 || i == 0) s += a.str();
    if (i >= 1) s += "x";
    if (i >= 2) s += "^" + std::to_string(i);
  }
  return s.empty() ? "0" : s;
}

}  // namespace rigidity
