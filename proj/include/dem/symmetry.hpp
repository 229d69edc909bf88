#pragma once

#include "dem/energy.hpp"

#include <vector>

namespace dem {

/// Element of SO(s) x S_n, plus a translation used only for invariance tests.
/// Acting on x: (g o x)_i = R x_{perm[i]} (+ translation).
struct GroupElement {
  Mat rotation;
  std::vector<int> perm;
  Vec translation;

  static GroupElement identity(const ParticleShape& shape);
  /// Uniform random rotation with det +1 and a uniform random permutation.
  static GroupElement random(const ParticleShape& shape, Rng& rng, bool with_translation = false);
  GroupElement inverse() const;
};

/// Subtracts the particle mean in place; columns of a (s x n) view.
void project_mean_free_inplace(Eigen::Ref<Vec> x, const ParticleShape& shape);
Vec project_mean_free(const VecRef& x, const ParticleShape& shape);
/// Projects every column of a batch (dim x batch).
void project_mean_free_columns(Mat& xs, const ParticleShape& shape);

Vec center_of_mass(const VecRef& x, const ParticleShape& shape);

Vec sample_meanfree_gaussian(const ParticleShape& shape, double sigma, Rng& rng);

Vec apply_group(const GroupElement& g, const VecRef& x, const ParticleShape& shape);

/// Coupled-noise equivariance check of the K-sample score estimator: compares
/// S_K(g o x) computed with noise {g o eps_i} against g o S_K(x) computed with
/// {eps_i}. Returns the max-abs deviation. With coupled=false the second
/// estimate uses fresh noise instead.
double check_estimator_equivariance(const Target& target, const VecRef& x_t, double sigma, int k,
                                    const GroupElement& g, Rng& rng, bool coupled = true);

}  // namespace dem
