#pragma once

// Seeded generators shared by property tests and the acceptance suite.

#include <cmath>
#include <vector>

#include "rigidity/circle_dynamics.hpp"
#include "rigidity/random.hpp"

namespace testing_support {

/// Random degree in {+-2, +-3, +-4}, random rotation, one to three trig terms
/// (k <= 3), rescaled and redrawn until certify_expanding gives margin >=
/// min_margin on a 1024 grid.
inline rigidity::ExpandingCircleMap random_expanding_map(rigidity::Rng& rng, double min_margin) {
  for (;;) {
    const int mag = 2 + static_cast<int>(rng.uniform() * 3.0);
    const int degree = rng.uniform() < 0.25 ? -mag : mag;
    const double rotation = rng.uniform();
    const int n_terms = 1 + static_cast<int>(rng.uniform() * 3.0);
    std::vector<rigidity::TrigTerm> terms;
    double slope_bound = 0.0;
    for (int t = 0; t < n_terms; ++t) {
      const int k = 1 + static_cast<int>(rng.uniform() * 3.0);
      const double a = 2.0 * rng.uniform() - 1.0;
      const double b = 2.0 * rng.uniform() - 1.0;
      terms.push_back({k, a, b});
      slope_bound += rigidity::kTwoPi * k * (std::abs(a) + std::abs(b));
    }
    // Allowed derivative perturbation, a random fraction of the slack.
    const double slack = std::abs(degree) - 1.0 - min_margin;
    const double scale = rng.uniform() * 0.9 * slack / slope_bound;
    for (auto& t : terms) {
      t.a *= scale;
      t.b *= scale;
    }
    rigidity::ExpandingCircleMap f(degree, rotation, terms);
    if (rigidity::certify_expanding(f, 1024).margin >= min_margin) return f;
  }
}

inline rigidity::RandomCircleSystem random_expanding_system(rigidity::Rng& rng, double min_margin) {
  const int m = 1 + static_cast<int>(rng.uniform() * 3.0);
  std::vector<rigidity::ExpandingCircleMap> maps;
  std::vector<double> w;
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    maps.push_back(random_expanding_map(rng, min_margin));
    w.push_back(0.2 + rng.uniform());
    total += w.back();
  }
  for (auto& x : w) x /= total;
  double s = 0.0;
  for (int i = 0; i + 1 < m; ++i) s += w[static_cast<std::size_t>(i)];
  w.back() = 1.0 - s;
  return rigidity::RandomCircleSystem(std::move(maps), std::move(w));
}

}  // namespace testing_support
