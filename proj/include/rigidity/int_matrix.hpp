#pragma once

// Small square integer matrices (dim 2..6) with exact determinant,
// adjugate and characteristic polynomial.

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "rigidity/errors.hpp"
#include "rigidity/int_polynomial.hpp"

namespace rigidity {

inline constexpr int kMinDim = 2;
inline constexpr int kMaxDim = 6;

inline std::int64_t narrow(const BigInt& v) {
  require(v >= std::numeric_limits<std::int64_t>::min() && v <= std::numeric_limits<std::int64_t>::max(),
          ErrorKind::Overflow, "integer matrix entry overflows int64");
  return v.convert_to<std::int64_t>();
}

class IntMatrix {
 public:
  IntMatrix() = default;
  IntMatrix(int dim, std::vector<std::int64_t> row_major) : dim_(dim), a_(std::move(row_major)) {
    require(dim_ >= kMinDim && dim_ <= kMaxDim, ErrorKind::DimensionUnsupported,
            "matrix dimension must be in [2, 6]");
    require(a_.size() == static_cast<std::size_t>(dim_ * dim_), ErrorKind::InvalidArgument,
            "entry count does not match dimension");
  }
  IntMatrix(std::initializer_list<std::initializer_list<std::int64_t>> rows)
      : IntMatrix(static_cast<int>(rows.size()), flatten(rows)) {}

  static IntMatrix identity(int dim) {
    std::vector<std::int64_t> a(static_cast<std::size_t>(dim * dim), 0);
    for (int i = 0; i < dim; ++i) a[static_cast<std::size_t>(i * dim + i)] = 1;
    return IntMatrix(dim, std::move(a));
  }

  int dim() const { return dim_; }
  std::int64_t operator()(int i, int j) const { return a_[static_cast<std::size_t>(i * dim_ + j)]; }
  const std::vector<std::int64_t>& entries() const { return a_; }

  friend bool operator==(const IntMatrix& x, const IntMatrix& y) { return x.dim_ == y.dim_ && x.a_ == y.a_; }

  friend IntMatrix operator*(const IntMatrix& x, const IntMatrix& y) {
    require(x.dim_ == y.dim_, ErrorKind::InvalidArgument, "dimension mismatch");
    const int n = x.dim_;
    std::vector<std::int64_t> c(static_cast<std::size_t>(n * n));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        BigInt s = 0;
        for (int k = 0; k < n; ++k) s += BigInt(x(i, k)) * y(k, j);
        c[static_cast<std::size_t>(i * n + j)] = narrow(s);
      }
    return IntMatrix(n, std::move(c));
  }

  IntMatrix power(int k) const {
    require(k >= 0, ErrorKind::InvalidArgument, "negative power");
    IntMatrix r = identity(dim_), b = *this;
    for (; k > 0; k >>= 1) {
      if (k & 1) r = r * b;
      if (k > 1) b = b * b;
    }
    return r;
  }

  std::int64_t trace() const {
    BigInt s = 0;
    for (int i = 0; i < dim_; ++i) s += (*this)(i, i);
    return narrow(s);
  }

  /// Characteristic polynomial det(xI - A), monic, lowest degree first
  /// (Faddeev-LeVerrier; the divisions by k are exact over Z).
  IntPoly char_poly() const { return leverrier().first; }

  /// adj(A), so that A adj(A) = det(A) I.
  std::vector<BigInt> adjugate() const { return leverrier().second; }

  BigInt determinant() const {
    const auto p = char_poly();
    return dim_ % 2 == 0 ? p[0] : BigInt(-p[0]);
  }

  bool is_unimodular() const {
    const BigInt d = determinant();
    return d == 1 || d == -1;
  }

  /// Exact inverse; requires |det| = 1.
  IntMatrix inverse() const {
    const BigInt d = determinant();
    require(d == 1 || d == -1, ErrorKind::InvalidArgument, "matrix is not in GL(d, Z)");
    const auto adj = adjugate();
    std::vector<std::int64_t> inv;
    for (const auto& v : adj) inv.push_back(narrow(v * d));
    return IntMatrix(dim_, std::move(inv));
  }

  Eigen::MatrixXd to_eigen() const {
    Eigen::MatrixXd m(dim_, dim_);
    for (int i = 0; i < dim_; ++i)
      for (int j = 0; j < dim_; ++j) m(i, j) = static_cast<double>((*this)(i, j));
    return m;
  }

  std::string str() const {
    std::string s = "[";
    for (int i = 0; i < dim_; ++i) {
      s += i ? ",[" : "[";
      for (int j = 0; j < dim_; ++j) s += (j ? "," : "") + std::to_string((*this)(i, j));
      s += "]";
    }
    return s + "]";
  }

 private:
  static std::vector<std::int64_t> flatten(std::initializer_list<std::initializer_list<std::int64_t>> rows) {
    std::vector<std::int64_t> a;
    for (const auto& r : rows) {
      require(r.size() == rows.size(), ErrorKind::InvalidArgument, "matrix must be square");
      a.insert(a.end(), r.begin(), r.end());
    }
    return a;
  }

  std::pair<IntPoly, std::vector<BigInt>> leverrier() const {
    const int n = dim_;
    const auto sz = static_cast<std::size_t>(n * n);
    std::vector<BigInt> a(sz), m(sz, 0), am(sz);
    for (std::size_t i = 0; i < sz; ++i) a[i] = a_[i];
    IntPoly c(static_cast<std::size_t>(n + 1), 0);
    c[static_cast<std::size_t>(n)] = 1;
    for (int k = 1; k <= n; ++k) {
      // M_k = A M_{k-1} + c_{n-k+1} I
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          BigInt s = 0;
          for (int l = 0; l < n; ++l) s += a[static_cast<std::size_t>(i * n + l)] * m[static_cast<std::size_t>(l * n + j)];
          am[static_cast<std::size_t>(i * n + j)] = s;
        }
      for (int i = 0; i < n; ++i) am[static_cast<std::size_t>(i * n + i)] += c[static_cast<std::size_t>(n - k + 1)];
      m = am;
      // c_{n-k} = -tr(A M_k) / k
      BigInt tr = 0;
      for (int i = 0; i < n; ++i)
        for (int l = 0; l < n; ++l) tr += a[static_cast<std::size_t>(i * n + l)] * m[static_cast<std::size_t>(l * n + i)];
      c[static_cast<std::size_t>(n - k)] = -tr / k;
    }
    // A M_n + c_0 I = 0 and det A = (-1)^n c_0, so adj A = (-1)^(n+1) M_n.
    if (n % 2 == 0)
      for (auto& v : m) v = -v;
    return {c, m};
  }

  int dim_ = 2;
  std::vector<std::int64_t> a_ = {1, 0, 0, 1};
};

inline nlohmann::json to_json(const IntMatrix& m) {
  auto rows = nlohmann::json::array();
  for (int i = 0; i < m.dim(); ++i) {
    auto r = nlohmann::json::array();
    for (int j = 0; j < m.dim(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Parses a row-major list of integer rows.
inline IntMatrix int_matrix_from_json(const nlohmann::json& j) {
  require(j.is_array() && !j.empty(), ErrorKind::Config, "matrix must be a list of rows");
  const int n = static_cast<int>(j.size());
  std::vector<std::int64_t> a;
  for (const auto& row : j) {
    require(row.is_array() && static_cast<int>(row.size()) == n, ErrorKind::Config, "matrix must be square");
    for (const auto& v : row) {
      require(v.is_number_integer(), ErrorKind::Config, "matrix entries must be integers");
      a.push_back(v.get<std::int64_t>());
    }
  }
  try {
    return IntMatrix(n, std::move(a));
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, e.what());
  }
}

}  // namespace rigidity
