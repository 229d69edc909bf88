#pragma once

#include "dem/energy.hpp"
#include "dem/symmetry.hpp"

#include <algorithm>
#include <cmath>

namespace dem::test {

// Central finite-difference gradient of the target energy.
inline Vec fd_gradient(const Target& t, const VecRef& x, double h = 1e-5) {
  Vec g(x.size());
  Vec xp = x, xm = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    xm(i) = x(i) - h;
    g(i) = (t.energy(xp) - t.energy(xm)) / (2.0 * h);
    xp(i) = xm(i) = x(i);
  }
  return g;
}

inline double rel_err(const Vec& a, const Vec& b) {
  return (a - b).norm() / std::max(1e-12, std::max(a.norm(), b.norm()));
}

inline double min_pair_distance(const VecRef& x, const ParticleShape& s) {
  double m = 1e300;
  for (double d : pairwise_distances(x, s)) m = std::min(m, d);
  return m;
}

// Random configuration with every pair at least min_dist apart.
inline Vec random_config(const ParticleShape& s, double spread, double min_dist, Rng& rng) {
  for (;;) {
    Vec x(s.n_particles * s.space_dim);
    for (auto& v : x) v = spread * rng.normal();
    if (min_pair_distance(x, s) >= min_dist) return x;
  }
}

inline Vec random_vec(int d, double scale, Rng& rng) {
  Vec x(d);
  for (auto& v : x) v = scale * rng.normal();
  return x;
}

}  // namespace dem::test
