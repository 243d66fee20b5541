#pragma once

// Experiment runner behind the rigidity-lab CLI.
//
// A config is one JSON object:
//   { "experiment": <name>, "seed": <uint64>, "system": {...},
//     "params": {...}, "output": {"report": "...", "data_prefix": "..."} }
// Parsing resolves every default, builds the system and checks every
// parameter before anything is computed; all failures there are Config
// errors (exit 2). Errors raised while computing exit 3.
//
// Seeds: the master seed goes straight to the module entry points, which
// derive stream k as splitmix64(seed ^ golden * (k + 1)) per orbit or
// replicate, so results do not depend on the thread count.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rigidity/errors.hpp"
#include "rigidity/io.hpp"
#include "rigidity/matrix_cocycles.hpp"
#include "rigidity/rigidity_s1.hpp"
#include "rigidity/torus_random_anosov.hpp"

namespace rigidity {

inline constexpr const char* kVersion = "1.0.0";

struct ExperimentInfo {
  std::string name;
  std::string module;
  std::string entry;
  std::string description;
};

inline const std::vector<ExperimentInfo>& list_experiments() {
  static const std::vector<ExperimentInfo> table = {
      {"s1-rigidity", "rigidity_s1", "rigidity_pipeline",
       "stationary exponent vs degree bound; conjugacy to affine maps in the equality case"},
      {"matrix-exponents", "matrix_cocycles", "lyapunov_spectrum_qr",
       "Lyapunov spectrum of an i.i.d. product of integer matrices"},
      {"torus-exponents", "torus_random_anosov", "srb_exponents",
       "SRB exponents of a random composition of toral Anosov maps vs the linear ones"},
      {"cone-check", "matrix_cocycles", "certify_cone_hyperbolic",
       "common invariant cone certificate for a matrix family"},
      {"generic-check", "matrix_cocycles", "is_generic_automorphism",
       "genericity of a hyperbolic toral automorphism, with its dominated splitting"},
      {"conjugacy-solve", "torus_random_anosov", "solve_linear_conjugacy",
       "grid solution of H o f = A o H for one toral map"},
      {"bundle-dispersion", "torus_random_anosov", "stable_bundle_dispersion",
       "spread of the stable direction over independent futures"},
  };
  return table;
}

namespace detail {

/// Reads typed parameters with defaults and bounds, records the resolved
/// values and rejects anything left over.
class ParamReader {
 public:
  ParamReader(const nlohmann::json& given, std::string where) : given_(given), where_(std::move(where)) {
    require(given_.is_null() || given_.is_object(), ErrorKind::Config, where_ + " must be an object");
  }

  std::int64_t integer(const std::string& key, std::int64_t def, std::int64_t lo, std::int64_t hi) {
    std::int64_t v = def;
    if (has(key)) {
      const auto& j = given_.at(key);
      require(j.is_number_integer(), ErrorKind::Config, where_ + "." + key + " must be an integer");
      v = j.get<std::int64_t>();
    }
    require(v >= lo && v <= hi, ErrorKind::Config,
            where_ + "." + key + " must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    resolved_[key] = v;
    return v;
  }

  double real(const std::string& key, double def, double lo, double hi) {
    double v = def;
    if (has(key)) {
      const auto& j = given_.at(key);
      require(j.is_number(), ErrorKind::Config, where_ + "." + key + " must be a number");
      v = j.get<double>();
    }
    require(std::isfinite(v) && v >= lo && v <= hi, ErrorKind::Config,
            where_ + "." + key + " must be in [" + format_double(lo) + ", " + format_double(hi) + "]");
    resolved_[key] = v;
    return v;
  }

  bool boolean(const std::string& key, bool def) {
    bool v = def;
    if (has(key)) {
      require(given_.at(key).is_boolean(), ErrorKind::Config, where_ + "." + key + " must be true or false");
      v = given_.at(key).get<bool>();
    }
    resolved_[key] = v;
    return v;
  }

  std::string text(const std::string& key, const std::string& def) {
    std::string v = def;
    if (has(key)) {
      require(given_.at(key).is_string(), ErrorKind::Config, where_ + "." + key + " must be a string");
      v = given_.at(key).get<std::string>();
    }
    resolved_[key] = v;
    return v;
  }

  /// Raw value (already validated by the caller), recorded as given.
  std::optional<nlohmann::json> raw(const std::string& key) {
    if (!has(key)) return std::nullopt;
    resolved_[key] = given_.at(key);
    return given_.at(key);
  }

  nlohmann::json finish() {
    if (given_.is_object())
      for (const auto& [k, _] : given_.items())
        require(resolved_.contains(k), ErrorKind::Config, "unknown key '" + k + "' in " + where_);
    return resolved_.is_null() ? nlohmann::json::object() : resolved_;
  }

 private:
  bool has(const std::string& key) const { return given_.is_object() && given_.contains(key); }

  const nlohmann::json& given_;
  std::string where_;
  nlohmann::json resolved_ = nlohmann::json::object();
};

/// Wraps construction errors as Config errors.
template <class Fn>
auto as_config(const std::string& what, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config) throw;
    throw Error(ErrorKind::Config, what + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, what + ": " + e.what());
  }
}

inline ConePair cones_from_json(const std::optional<nlohmann::json>& j) {
  if (!j || (j->is_string() && j->get<std::string>() == "quadrant")) return ConePair::quadrant();
  require(j->is_object(), ErrorKind::Config, "cones must be \"quadrant\" or {axis_u, axis_s, kappa}");
  detail::reject_unknown_keys(*j, {"axis_u", "axis_s", "kappa"}, "cones");
  auto axis = [&](const char* k) {
    require(j->contains(k) && (*j)[k].is_array() && (*j)[k].size() == 2 && (*j)[k][0].is_number() &&
                (*j)[k][1].is_number(),
            ErrorKind::Config, std::string("cones.") + k + " must be [x, y]");
    return std::array<double, 2>{(*j)[k][0].get<double>(), (*j)[k][1].get<double>()};
  };
  require(j->contains("kappa") && (*j)["kappa"].is_number(), ErrorKind::Config, "cones.kappa must be a number");
  const auto u = axis("axis_u"), s = axis("axis_s");
  const double kappa = (*j)["kappa"].get<double>();
  return as_config("cones", [&] { return ConePair::around(u, s, kappa); });
}

inline RandomToralSystem torus_system_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {"maps", "probs", "cones"}, "torus system");
  require(j.contains("maps") && j["maps"].is_array() && !j["maps"].empty(), ErrorKind::Config,
          "torus system needs a non-empty 'maps' list");
  std::vector<ToralMap> maps;
  for (const auto& m : j["maps"]) maps.push_back(toral_map_from_json(m));
  std::vector<double> probs;
  if (j.contains("probs")) {
    require(j["probs"].is_array(), ErrorKind::Config, "'probs' must be a list");
    for (const auto& p : j["probs"]) {
      require(p.is_number(), ErrorKind::Config, "'probs' entries must be numbers");
      probs.push_back(p.get<double>());
    }
  } else {
    probs.assign(maps.size(), 1.0 / static_cast<double>(maps.size()));
  }
  std::optional<nlohmann::json> cones;
  if (j.contains("cones")) cones = j["cones"];
  const auto cp = cones_from_json(cones);
  return as_config("torus system", [&] { return RandomToralSystem(maps, probs, cp); });
}

}  // namespace detail

struct ExperimentResult {
  nlohmann::json fields = nlohmann::json::object();
  std::vector<CsvTable> tables;
};

/// A validated experiment: the resolved config plus the computation.
struct PreparedExperiment {
  std::string name;
  std::uint64_t seed = 0;
  nlohmann::json resolved;
  std::string report_name;
  std::string data_prefix;
  std::function<ExperimentResult()> compute;
};

namespace detail {

// Each prepare_* validates params and builds the system; the returned
// closure only computes.

inline std::function<ExperimentResult()> prepare_s1(const nlohmann::json& sys, ParamReader& p, std::uint64_t seed) {
  // Optional "conjugate_by": [[k, a, b], ...] plants h0(x) = x + sum a sin + b cos and
  // replaces every map f by h0^{-1} f h0.
  std::optional<CircleDiffeo> h0;
  nlohmann::json plain = sys;
  if (sys.is_object() && sys.contains("conjugate_by")) {
    std::vector<TrigTerm> terms;
    require(sys["conjugate_by"].is_array(), ErrorKind::Config, "'conjugate_by' must be a list of [k, a, b]");
    for (const auto& t : sys["conjugate_by"]) {
      require(t.is_array() && t.size() == 3 && t[0].is_number_integer() && t[1].is_number() && t[2].is_number(),
              ErrorKind::Config, "'conjugate_by' entries must be [k, a, b]");
      terms.push_back({t[0].get<int>(), t[1].get<double>(), t[2].get<double>()});
    }
    h0 = as_config("conjugate_by", [&] { return CircleDiffeo(terms); });
    plain.erase("conjugate_by");
  }
  auto system = as_config("circle system", [&] { return circle_system_from_json(plain); });
  std::vector<double> fit_residuals;
  if (h0) {
    system = as_config("conjugate_by", [&] {
      std::vector<ExpandingCircleMap> maps;
      for (const auto& f : system.maps()) {
        auto fit = conjugate_by(f, *h0);
        fit_residuals.push_back(fit.fit_residual);
        maps.push_back(std::move(fit.map));
      }
      return RandomCircleSystem(std::move(maps), system.probs());
    });
  }
  RigidityOptions o;
  o.n_bins = static_cast<int>(p.integer("n_bins", 4096, 16, 1 << 20));
  o.subdivisions = static_cast<int>(p.integer("subdivisions", kDefaultSubdivisions, 1, 1 << 16));
  o.threshold = p.real("threshold", 5e-3, 0.0, 1.0);
  o.density_tol = p.real("density_tol", 1e-12, 1e-16, 1e-2);
  o.max_iters = static_cast<int>(p.integer("max_iters", 10000, 1, 10000000));
  o.n_orbits = static_cast<int>(p.integer("n_orbits", 16, 8, 4096));
  o.n_steps = p.integer("n_steps", 100000, 1000, 1000000000000);
  o.burn_in = p.integer("burn_in", 1000, 0, 1000000000);
  o.n_test = static_cast<int>(p.integer("n_test", 1024, 16, 1 << 22));
  return [system, o, seed, h0, fit_residuals] {
    const auto rep = rigidity_pipeline(system, seed, o);
    ExperimentResult r;
    r.fields = to_json(rep);
    if (h0) {
      nlohmann::json planted{{"fit_residuals", fit_residuals}};
      if (rep.conjugacy) {
        // h and h0 both fix 0; compare after removing the best rotation too
        const int m = 4096;
        std::vector<double> diff;
        for (int j = 0; j <= m; ++j) {
          const double x = static_cast<double>(j) / m;
          diff.push_back((*rep.conjugacy)(x) - (*h0)(x));
        }
        const double c = circular_mean(diff);
        double direct = 0.0, aligned = 0.0;
        for (double d : diff) {
          direct = std::max(direct, circular_distance(d, 0.0));
          aligned = std::max(aligned, circular_distance(d, c));
        }
        planted["h_sup_error"] = direct;
        planted["h_sup_error_up_to_rotation"] = aligned;
        planted["rotation_offset"] = c;
      }
      r.fields["planted"] = planted;
    }
    r.fields["system"] = to_json(system);
    CsvTable dens("density", {"bin_index", "left_endpoint", "mass"});
    for (int j = 0; j < rep.density->n_bins(); ++j)
      dens.row() << j << rep.density->left_endpoint(j) << rep.density->mass()[static_cast<std::size_t>(j)];
    r.tables.push_back(std::move(dens));
    if (rep.conjugacy) {
      CsvTable h("conjugacy", {"x", "h"});
      const auto& g = rep.conjugacy->grid();
      const int n = rep.conjugacy->n();
      for (int j = 0; j <= n; ++j) h.row() << static_cast<double>(j) / n << g[static_cast<std::size_t>(j)];
      r.tables.push_back(std::move(h));
    }
    return r;
  };
}

inline std::function<ExperimentResult()> prepare_matrix_exponents(const nlohmann::json& sys, ParamReader& p,
                                                                  std::uint64_t seed) {
  auto fam = as_config("matrix family", [&] { return matrix_family_from_json(sys); });
  const int n_steps = static_cast<int>(p.integer("n_steps", 1000000, 1000, 2000000000));
  const int n_reps = static_cast<int>(p.integer("n_reps", 16, 2, 4096));
  const int burn_in = static_cast<int>(p.integer("burn_in", kDefaultMatrixBurnIn, 0, 1000000000));
  const bool spectrum = p.boolean("spectrum", true);
  return [fam, n_steps, n_reps, burn_in, spectrum, seed] {
    ExperimentResult r;
    const auto top = top_lyapunov(fam, seed, n_steps, n_reps, burn_in);
    r.fields["top_exponent"] = to_json(top);
    r.fields["family"] = to_json(fam);
    CsvTable t("exponents", {"index", "exponent", "stderr"});
    if (spectrum) {
      const auto s = lyapunov_spectrum_qr(fam, seed, n_steps, n_reps, burn_in);
      r.fields["spectrum"] = to_json(s);
      double sum = 0.0, se = 0.0;
      for (std::size_t i = 0; i < s.exponents.size(); ++i) {
        t.row() << i << s.exponents[i] << s.stderrs[i];
        sum += s.exponents[i];
        se += s.stderrs[i];
      }
      r.fields["spectrum_sum"] = sum;
      r.fields["spectrum_sum_stderr_bound"] = se;
    } else {
      t.row() << std::size_t{0} << top.value << top.std_error;
    }
    r.tables.push_back(std::move(t));
    return r;
  };
}

inline nlohmann::json linear_exponents(const IntMatrix& a) {
  std::vector<double> logs;
  for (const auto& z : eigenvalues(a)) logs.push_back(std::log(std::abs(z)));
  std::sort(logs.rbegin(), logs.rend());
  return logs;
}

inline std::function<ExperimentResult()> prepare_torus_exponents(const nlohmann::json& sys, ParamReader& p,
                                                                 std::uint64_t seed) {
  auto system = torus_system_from_json(sys);
  const int n_orbits = static_cast<int>(p.integer("n_orbits", 16, 2, 4096));
  const int n_steps = static_cast<int>(p.integer("n_steps", 62500, 10000, 2000000000));
  const int burn_in = static_cast<int>(p.integer("burn_in", kDefaultTorusBurnIn, 0, 1000000000));
  return [system, n_orbits, n_steps, burn_in, seed] {
    ExperimentResult r;
    r.fields["cone_certificate"] = to_json(system.certificate());
    const auto e = srb_exponents(system, seed, n_orbits, n_steps, burn_in);
    r.fields["exponents"] = to_json(e);
    auto lin = nlohmann::json::array();
    for (const auto& m : system.maps()) lin.push_back(linear_exponents(m.linear()));
    r.fields["linear_exponents"] = lin;
    // inequality check against the linear part (meaningful when all maps share A)
    const double up = lin[0][0].get<double>(), down = lin[0][1].get<double>();
    r.fields["unstable_gap"] = up - e.exponents[0];
    r.fields["unstable_gap_in_stderr"] = e.stderrs[0] > 0 ? (up - e.exponents[0]) / e.stderrs[0] : 0.0;
    r.fields["stable_gap"] = e.exponents[1] - down;
    r.fields["system"] = to_json(system);
    CsvTable t("exponents", {"index", "exponent", "stderr", "linear"});
    for (std::size_t i = 0; i < 2; ++i) t.row() << i << e.exponents[i] << e.stderrs[i] << lin[0][i].get<double>();
    r.tables.push_back(std::move(t));
    return r;
  };
}

inline std::function<ExperimentResult()> prepare_cone_check(const nlohmann::json& sys, ParamReader& p,
                                                            std::uint64_t) {
  auto fam = as_config("matrix family", [&] { return matrix_family_from_json(sys); });
  const auto cones = cones_from_json(p.raw("cones"));
  return [fam, cones] {
    ExperimentResult r;
    const auto c = certify_cone_hyperbolic(fam, cones);
    r.fields = to_json(c);
    r.fields["family"] = to_json(fam);
    r.fields["cones"] = {{"u1", cones.u1}, {"u2", cones.u2}, {"s1", cones.s1}, {"s2", cones.s2}};
    if (fam.dim() == 2) {
      try {
        r.fields["irreducibility"] = to_json(is_irreducible_family_2d(fam));
      } catch (const Error& e) {
        r.fields["irreducibility"] = {{"skipped", e.what()}};
      }
    }
    CsvTable t("cone_rays", {"cone", "ray", "x", "y"});
    t.row() << "unstable" << 1 << cones.u1[0] << cones.u1[1];
    t.row() << "unstable" << 2 << cones.u2[0] << cones.u2[1];
    t.row() << "stable" << 1 << cones.s1[0] << cones.s1[1];
    t.row() << "stable" << 2 << cones.s2[0] << cones.s2[1];
    r.tables.push_back(std::move(t));
    return r;
  };
}

inline std::function<ExperimentResult()> prepare_generic_check(const nlohmann::json& sys, ParamReader&,
                                                               std::uint64_t) {
  detail::reject_unknown_keys(sys, {"matrix"}, "generic-check system");
  require(sys.contains("matrix"), ErrorKind::Config, "generic-check system needs 'matrix'");
  const IntMatrix a = int_matrix_from_json(sys["matrix"]);
  return [a] {
    ExperimentResult r;
    r.fields = to_json(is_generic_automorphism(a));
    r.fields["matrix"] = to_json(a);
    r.fields["characteristic_polynomial"] = to_string(a.char_poly());
    r.fields["hyperbolic"] = is_hyperbolic(a);
    CsvTable t("eigenvalues", {"index", "real", "imag", "log_modulus"});
    const auto ev = eigenvalues(a);
    for (std::size_t i = 0; i < ev.size(); ++i) t.row() << i << ev[i].real() << ev[i].imag() << std::log(std::abs(ev[i]));
    r.tables.push_back(std::move(t));
    if (is_hyperbolic(a) && a.is_unimodular()) {
      try {
        r.fields["splitting"] = to_json(finest_dominated_splitting(a));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::BlockTooLarge) throw;
        r.fields["splitting"] = {{"error", e.what()}};
      }
    }
    return r;
  };
}

inline std::function<ExperimentResult()> prepare_conjugacy(const nlohmann::json& sys, ParamReader& p,
                                                           std::uint64_t) {
  require(sys.is_object(), ErrorKind::Config, "conjugacy-solve system must be an object");
  detail::reject_unknown_keys(sys, {"map"}, "conjugacy-solve system");
  require(sys.contains("map"), ErrorKind::Config, "conjugacy-solve system needs 'map'");
  const ToralMap f = toral_map_from_json(sys["map"]);
  const int grid_n = static_cast<int>(p.integer("grid_n", 256, 16, 4096));
  const double tol = p.real("tol", 1e-6, 1e-15, 1.0);
  const int max_iters = static_cast<int>(p.integer("max_iters", 200, 1, 100000));
  const int verify_factor = static_cast<int>(p.integer("verify_factor", 4, 1, 16));
  const bool export_grid = p.boolean("export_grid", true);
  return [f, grid_n, tol, max_iters, verify_factor, export_grid] {
    ExperimentResult r;
    const auto sol = solve_linear_conjugacy(f, grid_n, tol, max_iters);
    const double verify = conjugacy_residual(sol.grid, f, verify_factor * grid_n);
    r.fields["map"] = to_json(f);
    r.fields["iterations"] = sol.iterations;
    r.fields["residual"] = sol.residual;
    r.fields["verification_residual"] = verify;
    r.fields["verification_grid"] = verify_factor * grid_n;
    r.fields["converged"] = verify < tol;
    r.fields["sup_displacement"] = sol.grid.sup_norm();
    if (const auto* c = std::get_if<ConjugatedToralMap>(&f.variant())) {
      // planted phi: H should equal phi + (A - I)^{-1} v
      ConjugacyGrid planted(grid_n);
      double err = 0.0;
      for (int i = 0; i < grid_n; ++i)
        for (int j = 0; j < grid_n; ++j) planted.at(i, j) = c->phi().psi().value(planted.node(i, j));
      const auto tr = verify_translation(planted, sol.grid, 1e-3);
      const Mat2 a = to_mat2(f.linear());
      const Vec2 t = tr.v;
      const Vec2 at = mul(a, t);
      const Vec2 rec{frac(at[0] - t[0]), frac(at[1] - t[1])};
      for (int i = 0; i < grid_n; ++i)
        for (int j = 0; j < grid_n; ++j) {
          const Vec2 u = sol.grid.at(i, j), ps = planted.at(i, j);
          err = std::max(err, torus_norm({u[0] - ps[0] - t[0], u[1] - ps[1] - t[1]}));
        }
      r.fields["planted"] = {{"is_translation", tr.is_translation},
                             {"offset", {tr.v[0], tr.v[1]}},
                             {"offset_residual", tr.residual},
                             {"recovered_translation", {rec[0], rec[1]}},
                             {"sup_error", err}};
    }
    if (export_grid) {
      CsvTable t("conjugacy_grid", {"x", "y", "u1", "u2"});
      for (int i = 0; i < grid_n; ++i)
        for (int j = 0; j < grid_n; ++j) {
          const Vec2 p = sol.grid.node(i, j), u = sol.grid.at(i, j);
          t.row() << p[0] << p[1] << u[0] << u[1];
        }
      r.tables.push_back(std::move(t));
    }
    return r;
  };
}

inline std::function<ExperimentResult()> prepare_dispersion(const nlohmann::json& sys, ParamReader& p,
                                                            std::uint64_t seed) {
  auto system = torus_system_from_json(sys);
  const int n_points = static_cast<int>(p.integer("n_points", 32, 1, 1000000));
  const int n_futures = static_cast<int>(p.integer("n_futures", 8, 2, 1024));
  const int depth = static_cast<int>(p.integer("depth", 60, 20, 100000));
  const double threshold = p.real("threshold", 1e-6, 0.0, 1.0);
  const int field_n = static_cast<int>(p.integer("field_grid", 16, 0, 1024));
  return [system, n_points, n_futures, depth, threshold, field_n, seed] {
    ExperimentResult r;
    const auto d = stable_bundle_dispersion(system, seed, n_points, n_futures, depth);
    r.fields["max_angle"] = d.max_angle;
    r.fields["mean_angle"] = d.mean_angle;
    r.fields["threshold"] = threshold;
    r.fields["independent_of_future"] = d.max_angle < threshold;
    r.fields["system"] = to_json(system);
    if (field_n > 0) {
      // stable direction field along one fixed future word
      CsvTable t("stable_field", {"x", "y", "dx", "dy"});
      Rng rng(seed, static_cast<std::uint64_t>(n_points));
      std::vector<std::size_t> word(static_cast<std::size_t>(depth));
      for (auto& w : word) w = rng.pick(system.cumulative());
      for (int i = 0; i < field_n; ++i)
        for (int j = 0; j < field_n; ++j) {
          const Vec2 x{(i + 0.5) / field_n, (j + 0.5) / field_n};
          const Vec2 e = stable_direction(system, word, x, depth);
          t.row() << x[0] << x[1] << e[0] << e[1];
        }
      r.tables.push_back(std::move(t));
    }
    return r;
  };
}

}  // namespace detail

/// Parses and validates a config. seed_override replaces the config seed.
inline PreparedExperiment prepare_experiment(const nlohmann::json& cfg,
                                             std::optional<std::uint64_t> seed_override = std::nullopt) {
  require(cfg.is_object(), ErrorKind::Config, "config must be a JSON object");
  detail::reject_unknown_keys(cfg, {"experiment", "seed", "system", "params", "output"}, "config");
  require(cfg.contains("experiment") && cfg["experiment"].is_string(), ErrorKind::Config,
          "config needs 'experiment'");
  PreparedExperiment ex;
  ex.name = cfg["experiment"].get<std::string>();
  bool known = false;
  for (const auto& e : list_experiments()) known = known || e.name == ex.name;
  require(known, ErrorKind::Config, "unknown experiment '" + ex.name + "'");
  if (cfg.contains("seed")) {
    require(cfg["seed"].is_number_unsigned(), ErrorKind::Config, "'seed' must be a non-negative integer");
    ex.seed = cfg["seed"].get<std::uint64_t>();
  }
  if (seed_override) ex.seed = *seed_override;
  require(cfg.contains("system"), ErrorKind::Config, "config needs 'system'");
  const auto& sys = cfg["system"];

  const nlohmann::json no_params = nlohmann::json::object();
  detail::ParamReader p(cfg.contains("params") ? cfg["params"] : no_params, "params");
  const auto prepare = [&]() -> std::function<ExperimentResult()> {
    if (ex.name == "s1-rigidity") return detail::prepare_s1(sys, p, ex.seed);
    if (ex.name == "matrix-exponents") return detail::prepare_matrix_exponents(sys, p, ex.seed);
    if (ex.name == "torus-exponents") return detail::prepare_torus_exponents(sys, p, ex.seed);
    if (ex.name == "cone-check") return detail::prepare_cone_check(sys, p, ex.seed);
    if (ex.name == "generic-check") return detail::prepare_generic_check(sys, p, ex.seed);
    if (ex.name == "conjugacy-solve") return detail::prepare_conjugacy(sys, p, ex.seed);
    return detail::prepare_dispersion(sys, p, ex.seed);
  };
  ex.compute = detail::as_config("system", prepare);
  const auto params = p.finish();

  const nlohmann::json no_output = nlohmann::json::object();
  detail::ParamReader out(cfg.contains("output") ? cfg["output"] : no_output, "output");
  ex.report_name = out.text("report", ex.name + ".json");
  ex.data_prefix = out.text("data_prefix", ex.name);
  for (const auto* s : {&ex.report_name, &ex.data_prefix})
    require(!s->empty() && s->find('/') == std::string::npos && s->find('\\') == std::string::npos,
            ErrorKind::Config, "output names must be plain file names");
  const auto output = out.finish();

  ex.resolved = {{"experiment", ex.name}, {"seed", ex.seed}, {"system", sys}, {"params", params}, {"output", output}};
  return ex;
}

inline nlohmann::json parse_config_text(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }
}

inline nlohmann::json load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::Config, "cannot read config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

struct RunOutput {
  std::string report_path;
  std::vector<std::string> data_paths;
  nlohmann::json report;
};

/// Computes and assembles the report (no files written).
inline nlohmann::json build_report(const PreparedExperiment& ex, ExperimentResult& result) {
  nlohmann::json report = result.fields;
  const std::string canonical = to_report_string(ex.resolved, 0);
  report["experiment"] = ex.name;
  report["config"] = ex.resolved;
  report["provenance"] = {{"config_hash", "fnv1a64:" + hex64(fnv1a64(canonical))},
                          {"seed", ex.seed},
                          {"version", std::string("rigidity-lab ") + kVersion}};
  auto files = nlohmann::json::array();
  for (const auto& t : result.tables) files.push_back(ex.data_prefix + "_" + t.name() + ".csv");
  report["data_files"] = files;
  return report;
}

/// Runs a prepared experiment and writes the report and CSV files into
/// output_dir.
inline RunOutput run_experiment(const PreparedExperiment& ex, const std::string& output_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(output_dir, ec);
  require(!ec && fs::is_directory(output_dir), ErrorKind::Config, "cannot create output directory '" + output_dir + "'");
  auto result = ex.compute();
  RunOutput out;
  out.report = build_report(ex, result);
  for (const auto& t : result.tables) {
    const auto path = (fs::path(output_dir) / (ex.data_prefix + "_" + t.name() + ".csv")).string();
    write_file(path, t.str());
    out.data_paths.push_back(path);
  }
  out.report_path = (fs::path(output_dir) / ex.report_name).string();
  write_file(out.report_path, to_report_string(out.report));
  return out;
}

}  // namespace rigidity
