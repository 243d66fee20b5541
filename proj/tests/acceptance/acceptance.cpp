// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Runtime limits are part of the criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "rigidity/experiments.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace rigidity;

namespace {

// Constants quoted to six decimals; the last-digit rounding is allowed on
// top of the statistical tolerance.
constexpr double kCatQuoted = 0.962424;
constexpr double kCommutingQuoted = 1.443636;
constexpr double kQuoteRounding = 5e-7;

const IntMatrix kCat{{2, 1}, {1, 1}};

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [x]");
  }
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

int failures = 0;

void criterion(int id, const char* title, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_s > 0) o.check(secs < limit_s, fmt("runtime %.1f s < %.0f s", secs, limit_s));
  else
    o.detail += fmt("; runtime %.1f s", secs);
  std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str());
  std::fflush(stdout);
  failures += o.pass ? 0 : 1;
}

double rel_matrix_error(const Mat2& a, const Mat2& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += a[i] * a[i];
  }
  return std::sqrt(num / den);
}

Mat2 fd_jacobian(const ToralMap& f, const Vec2& p, double h) {
  Mat2 j{};
  for (std::size_t c = 0; c < 2; ++c) {
    Vec2 a = p, b = p;
    a[c] += h;
    b[c] -= h;
    const Vec2 fa = f.lift(a), fb = f.lift(b);
    j[c] = (fa[0] - fb[0]) / (2 * h);
    j[2 + c] = (fa[1] - fb[1]) / (2 * h);
  }
  return j;
}

ToralDiffeo planted_phi() {
  return ToralDiffeo(VectorField2({{1, 1, 0.01 / kTwoPi, 0}}, {{1, -1, 0.01 / kTwoPi, 0}}));
}

VectorField2 shear_y() { return VectorField2({{0, 1, 1.0, 0.0}}, {}); }
VectorField2 shear_x() { return VectorField2({{1, 0, 1.0, 0.0}}, {}); }

RandomToralSystem rigid_pair() {
  return RandomToralSystem({ToralMap(ConjugatedToralMap(kCat, {0.1, 0.2}, planted_phi())),
                            ToralMap(ConjugatedToralMap(kCat, {0.5, 0.7}, planted_phi()))},
                           {0.5, 0.5});
}

RandomToralSystem perturbed_pair() {
  return RandomToralSystem({ToralMap(PerturbedToralMap(kCat, {0, 0}, 0.05, shear_y())),
                            ToralMap(PerturbedToralMap(kCat, {0.3, 0.1}, 0.05, shear_x()))},
                           {0.5, 0.5});
}

RandomToralSystem single_torus(double eps, VectorField2 g, Vec2 v = {0, 0}) {
  return RandomToralSystem(ToralMap(PerturbedToralMap(kCat, v, eps, std::move(g))));
}

}  // namespace

int main() {
  criterion(1, "circle exactness (doubling map)", 10, [] {
    Outcome o;
    const RandomCircleSystem sys(ExpandingCircleMap(2, 0.0, {}));
    const auto q = stationary_density(build_annealed_ulam(sys, 4096));
    const auto quad = lyapunov_quadrature(sys, q);
    o.check(std::abs(quad.value - std::log(2.0)) <= 1e-6, fmt("quadrature %.12f vs log 2", quad.value));
    const auto b = lyapunov_birkhoff(sys, 101, 16, 62500);
    o.check(within_stderr(b.value, std::log(2.0), b.std_error) && b.std_error < 2e-4,
            fmt("Birkhoff %.12f +- %.2e over %.0f steps", b.value, b.std_error, static_cast<double>(b.n_samples)));
    return o;
  });

  criterion(2, "degree-bound inequality", 300, [] {
    Outcome o;
    Rng rng(2024);
    int ok = 0;
    double worst = 1e300;
    for (int i = 0; i < 50; ++i) {
      const auto sys = testing_support::random_expanding_system(rng, 0.1);
      const auto rep = rigidity_pipeline(sys, 500 + static_cast<std::uint64_t>(i));
      const double d_quad = rep.defect;
      const double d_mc = rep.degree_bound - rep.birkhoff.value;
      const bool good = d_quad >= -(3 * rep.exponent.std_error + 5e-3) && d_mc >= -(3 * rep.birkhoff.std_error + 5e-3);
      ok += good;
      worst = std::min({worst, d_quad, d_mc});
    }
    o.check(ok == 50, fmt("%.0f/50 random systems satisfy the bound (smallest defect %.3e)", ok, worst));
    const RandomCircleSystem pert(ExpandingCircleMap(2, 0.0, {{1, 0.3 / kTwoPi, 0.0}}));
    const auto rep = rigidity_pipeline(pert, 77);
    o.check(rep.defect > 1e-2, fmt("perturbed doubling defect %.6f > 1e-2 (Birkhoff defect %.6f +- %.1e)", rep.defect,
                                   rep.degree_bound - rep.birkhoff.value, rep.birkhoff.std_error));
    return o;
  });

  criterion(3, "rigidity round trip", 60, [] {
    Outcome o;
    const CircleDiffeo h0({{1, 0.05 / kTwoPi, 0.0}});
    const auto g1 = conjugate_by(ExpandingCircleMap(2, 0.3), h0);
    const auto g2 = conjugate_by(ExpandingCircleMap(3, 0.7), h0);
    const RandomCircleSystem sys({g1.map, g2.map}, {0.5, 0.5});
    const auto rep = rigidity_pipeline(sys, 3);
    o.check(rep.rigid, fmt("rigid (defect %.2e)", rep.defect));
    if (!rep.conjugacy) return o.check(false, "no conjugacy"), o;
    std::vector<double> diff;
    for (int j = 0; j <= 4000; ++j) {
      const double x = j / 4000.0;
      diff.push_back((*rep.conjugacy)(x) - h0(x));
    }
    const double c = circular_mean(diff);
    double err = 0;
    for (double d : diff) err = std::max(err, circular_distance(d, c));
    o.check(err <= 1e-2, fmt("h vs h0 up to rotation %.2e", err));
    const double r1 = circular_distance((*rep.affine_residuals)[0].rotation, 0.3);
    const double r2 = circular_distance((*rep.affine_residuals)[1].rotation, 0.7);
    o.check(r1 <= 1e-2 && r2 <= 1e-2, fmt("rotation errors %.2e, %.2e", r1, r2));
    double inv = 0;
    for (double d : rep.per_map_invariance_defect) inv = std::max(inv, d);
    o.check(inv < 1e-3, fmt("per-map invariance defect %.2e", inv));
    return o;
  });

  criterion(4, "matrix anchors", 30, [] {
    Outcome o;
    const MatrixFamily cat(kCat);
    const auto top = top_lyapunov(cat, 41, 62500, 16);
    o.check(std::abs(top.value - kCatQuoted) <= 3 * top.std_error + kQuoteRounding && top.std_error < 5e-4,
            fmt("cat top %.9f +- %.1e", top.value, top.std_error));
    const auto qr = lyapunov_spectrum_qr(cat, 42, 62500, 16);
    const double sum = qr.exponents[0] + qr.exponents[1];
    o.check(std::abs(sum) <= 3 * (qr.stderrs[0] + qr.stderrs[1]) + 1e-12, fmt("QR pair sum %.2e", sum));
    const MatrixFamily comm({kCat, kCat * kCat}, {0.5, 0.5});
    const auto tc = top_lyapunov(comm, 43, 62500, 16);
    o.check(std::abs(tc.value - kCommutingQuoted) <= 3 * tc.std_error + kQuoteRounding,
            fmt("{A, A^2} top %.6f +- %.1e", tc.value, tc.std_error));
    return o;
  });

  criterion(5, "exact certificates", 60, [] {
    Outcome o;
    int total = 0, disagree = 0, inexact = 0;
    for (long a = -5; a <= 5; ++a)
      for (long b = -5; b <= 5; ++b)
        for (long c = -5; c <= 5; ++c)
          for (long d = -5; d <= 5; ++d) {
            const auto rep = is_generic_automorphism(IntMatrix{{a, b}, {c, d}});
            const long det = a * d - b * c;
            if (det != 1 && det != -1) {
              disagree += rep.generic;
              continue;
            }
            ++total;
            disagree += rep.generic != testing_support::generic_gl2_oracle(a, b, c, d);
            inexact += !rep.exact;
          }
    o.check(disagree == 0 && inexact == 0,
            fmt("%.0f disagreements over %.0f GL(2,Z) matrices (%.0f inexact)", disagree, total, inexact));
    const IntMatrix m2{{3, 2}, {1, 1}};
    const auto cert = certify_cone_hyperbolic(MatrixFamily({kCat, m2}, {0.5, 0.5}));
    // Closed form: both Gram matrices of M and M^{-1} put their least
    // eigenvector outside the sector, so the minimum is at a boundary ray.
    double best = 1e300;
    for (const auto& m : {kCat, m2}) {
      const auto mi = m.inverse();
      auto col2 = [](const IntMatrix& x, int j) {
        return static_cast<double>(x(0, j) * x(0, j) + x(1, j) * x(1, j));
      };
      best = std::min({best, col2(m, 0), col2(m, 1), col2(mi, 0), col2(mi, 1)});
    }
    const double closed = 0.5 * std::log(best);
    o.check(cert.ok && std::abs(cert.gamma - closed) <= 1e-12,
            fmt("cone gamma %.15f vs closed form %.15f", cert.gamma, closed));
    return o;
  });

  criterion(6, "torus inequality", 120, [] {
    Outcome o;
    const auto lin = srb_exponents(single_torus(0.0, {}), 61, 16, 62500);
    o.check(std::abs(lin.exponents[0] - kCatQuoted) <= 3 * lin.stderrs[0] + kQuoteRounding &&
                std::abs(lin.exponents[1] + kCatQuoted) <= 3 * lin.stderrs[1] + kQuoteRounding,
            fmt("cat map %.9f, %.9f", lin.exponents[0], lin.exponents[1]));
    const auto pert = srb_exponents(single_torus(0.05, shear_y()), 62, 16, 62500);
    const double gap = kCatQuoted - pert.exponents[0];
    o.check(gap > 5 * pert.stderrs[0],
            fmt("eps=0.05 lambda+ %.6f, gap %.2e = %.1f stderr", pert.exponents[0], gap, gap / pert.stderrs[0]));
    return o;
  });

  criterion(7, "conjugacy solver round trip", 120, [] {
    Outcome o;
    const auto phi = planted_phi();
    const ToralMap f(ConjugatedToralMap(kCat, {0, 0}, phi));
    const auto sol = solve_linear_conjugacy(f, 256, 1e-6, 200);
    double err = 0;
    for (int i = 0; i < 256; ++i)
      for (int j = 0; j < 256; ++j) {
        const Vec2 ps = phi.psi().value(sol.grid.node(i, j)), u = sol.grid.at(i, j);
        err = std::max(err, std::hypot(u[0] - ps[0], u[1] - ps[1]));
      }
    o.check(err < 1e-4, fmt("planted phi sup error %.2e", err));
    const double res = conjugacy_residual(sol.grid, f, 4 * 256);
    o.check(res < 1e-6, fmt("residual on 1024^2 grid %.2e", res));
    const Vec2 v{0.3, 0.6};
    const auto aff = solve_linear_conjugacy(ToralMap(PerturbedToralMap(kCat, v)), 32, 1e-10, 200);
    // (A - I)^{-1} v for A - I = [[1,1],[1,0]]
    const Vec2 c{v[1], v[0] - v[1]};
    double aerr = 0;
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j)
        aerr = std::max(aerr, std::hypot(circular_distance(aff.grid.at(i, j)[0], c[0]),
                                                circular_distance(aff.grid.at(i, j)[1], c[1])));
    o.check(aerr <= 1e-10, fmt("affine constant error %.2e", aerr));
    return o;
  });

  criterion(8, "non-randomness statistic", 120, [] {
    Outcome o;
    const auto single = stable_bundle_dispersion(single_torus(0.05, shear_y()), 81, 32, 8, 60);
    o.check(single.max_angle < 1e-6, fmt("single map %.2e", single.max_angle));
    const auto rigid = stable_bundle_dispersion(rigid_pair(), 82, 32, 8, 60);
    o.check(rigid.max_angle < 1e-6, fmt("rigid conjugated pair %.2e", rigid.max_angle));
    const auto pert = stable_bundle_dispersion(perturbed_pair(), 83, 32, 8, 60);
    o.check(pert.max_angle > 1e-3, fmt("independent perturbations %.2e (mean %.2e)", pert.max_angle, pert.mean_angle));
    return o;
  });

  criterion(9, "property suites", 0, [] {
    Outcome o;
    // Equivariance of the unstable direction.
    {
      const auto s = perturbed_pair();
      Rng rng(91);
      double worst = 0;
      for (int i = 0; i < 50; ++i) {
        std::vector<std::size_t> w(60);
        for (auto& x : w) x = rng.pick(s.cumulative());
        const Vec2 x{rng.uniform(), rng.uniform()};
        const std::size_t k = rng.pick(s.cumulative());
        std::vector<std::size_t> w2{k};
        w2.insert(w2.end(), w.begin(), w.end());
        Vec2 fx;
        Mat2 j;
        s.map(k).step(x, &fx, &j);
        worst = std::max(worst, line_angle(mul(j, unstable_direction(s, w, x, 60)),
                                           unstable_direction(s, w2, wrap(fx), 60)));
      }
      o.check(worst < 1e-8, fmt("equivariance angle %.2e", worst));
    }
    // Conjugation invariance of exponents.
    {
      const IntMatrix p{{1, 1}, {0, 1}};
      const IntMatrix b{{1, 1}, {1, 2}};
      const auto pi = p.inverse();
      const auto e1 = top_lyapunov(MatrixFamily({kCat, b}, {0.5, 0.5}), 92, 62500, 16);
      const auto e2 = top_lyapunov(MatrixFamily({p * kCat * pi, p * b * pi}, {0.5, 0.5}), 93, 62500, 16);
      const double se = std::hypot(e1.std_error, e2.std_error);
      o.check(std::abs(e1.value - e2.value) <= 3 * se, fmt("matrix conjugation %.6f vs %.6f", e1.value, e2.value));
      // circle: conjugated affine pair against the affine one
      const CircleDiffeo h0({{1, 0.05 / kTwoPi, 0.0}});
      const RandomCircleSystem aff({ExpandingCircleMap(2, 0.3), ExpandingCircleMap(3, 0.7)}, {0.5, 0.5});
      const RandomCircleSystem conj({conjugate_by(aff.map(0), h0).map, conjugate_by(aff.map(1), h0).map}, {0.5, 0.5});
      const auto c1 = lyapunov_birkhoff(aff, 94, 16, 62500), c2 = lyapunov_birkhoff(conj, 95, 16, 62500);
      const double sc = std::hypot(c1.std_error, c2.std_error);
      o.check(std::abs(c1.value - c2.value) <= 3 * sc, fmt("circle conjugation %.6f vs %.6f", c1.value, c2.value));
      // torus: conjugation by the translation c = (0.3, 0.6)
      const auto t1 = srb_exponents(single_torus(0.05, shear_y()), 96, 16, 62500);
      const auto t2 = srb_exponents(
          single_torus(0.05, VectorField2({{0, 1, std::cos(kTwoPi * 0.6), std::sin(kTwoPi * 0.6)}}, {}), {0.9, 0.3}),
          97, 16, 62500);
      const double st = std::hypot(t1.stderrs[0], t2.stderrs[0]);
      o.check(std::abs(t1.exponents[0] - t2.exponents[0]) <= 3 * st,
              fmt("torus translation conjugation %.6f vs %.6f", t1.exponents[0], t2.exponents[0]));
    }
    // Determinism of reports.
    {
      const auto cfg = parse_config_text(R"({"experiment": "torus-exponents", "seed": 5,
        "system": {"maps": [{"type": "perturbed", "matrix": [[2,1],[1,1]], "epsilon": 0.02, "g": [[[0,1,1.0,0.0]],[]]}]},
        "params": {"n_orbits": 4, "n_steps": 20000}})");
      auto a = prepare_experiment(cfg), b = prepare_experiment(cfg);
      auto ra = a.compute(), rb = b.compute();
      const auto sa = to_report_string(build_report(a, ra)), sb = to_report_string(build_report(b, rb));
      o.check(sa == sb, fmt("identical report bytes (%.0f bytes)", static_cast<double>(sa.size())));
    }
    // Derivatives against central differences.
    {
      double worst = 0;
      Rng rng(98);
      const ExpandingCircleMap f(3, 0.2, {{1, 0.05, 0.02}, {2, 0.01, -0.03}});
      for (int i = 0; i < 200; ++i) {
        const double x = rng.uniform(), h = 1e-6;
        const double fd = (f.lift(x + h) - f.lift(x - h)) / (2 * h);
        worst = std::max(worst, std::abs(fd - f.derivative(x)) / std::abs(f.derivative(x)));
      }
      const ToralMap tp(PerturbedToralMap(kCat, {0.1, 0.2}, 0.05, shear_y()));
      const ToralMap tc(ConjugatedToralMap(kCat, {0.1, 0.2}, planted_phi()));
      for (int i = 0; i < 200; ++i) {
        const Vec2 p{rng.uniform(), rng.uniform()};
        worst = std::max(worst, rel_matrix_error(tp.jacobian(p), fd_jacobian(tp, p, 1e-6)));
        worst = std::max(worst, rel_matrix_error(tc.jacobian(p), fd_jacobian(tc, p, 1e-6)));
      }
      o.check(worst < 1e-6, fmt("derivative vs finite difference relative error %.2e", worst));
    }
    return o;
  });

  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
