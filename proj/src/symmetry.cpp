#include "dem/symmetry.hpp"

#include "dem/estimator.hpp"

#include <algorithm>
#include <numeric>

namespace dem {

namespace {

void check_shape(const VecRef& x, const ParticleShape& shape) {
  if (x.size() != static_cast<Eigen::Index>(shape.n_particles) * shape.space_dim)
    throw Error(Errc::ShapeMismatch, "configuration size does not match the particle shape");
}

}  // namespace

GroupElement GroupElement::identity(const ParticleShape& shape) {
  GroupElement g;
  g.rotation = Mat::Identity(shape.space_dim, shape.space_dim);
  g.perm.resize(static_cast<std::size_t>(shape.n_particles));
  std::iota(g.perm.begin(), g.perm.end(), 0);
  g.translation = Vec::Zero(shape.space_dim);
  return g;
}

GroupElement GroupElement::random(const ParticleShape& shape, Rng& rng, bool with_translation) {
  GroupElement g = identity(shape);
  const int s = shape.space_dim;
  Mat a(s, s);
  rng.fill_normal(a);
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ();
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  // Haar measure: fix column signs by the diagonal of R.
  for (int i = 0; i < s; ++i)
    if (r(i, i) < 0) q.col(i) *= -1.0;
  if (q.determinant() < 0) q.col(0) *= -1.0;
  g.rotation = q;
  std::shuffle(g.perm.begin(), g.perm.end(), rng.engine());
  if (with_translation)
    for (int i = 0; i < s; ++i) g.translation(i) = 3.0 * rng.normal();
  return g;
}

GroupElement GroupElement::inverse() const {
  GroupElement inv;
  inv.rotation = rotation.transpose();
  inv.perm.resize(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv.perm[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  inv.translation = -(inv.rotation * translation);
  return inv;
}

void project_mean_free_inplace(Eigen::Ref<Vec> x, const ParticleShape& shape) {
  check_shape(x, shape);
  Eigen::Map<Mat> p(x.data(), shape.space_dim, shape.n_particles);
  const Vec com = p.rowwise().mean();
  p.colwise() -= com;
}

Vec project_mean_free(const VecRef& x, const ParticleShape& shape) {
  Vec out = x;
  project_mean_free_inplace(out, shape);
  return out;
}

void project_mean_free_columns(Mat& xs, const ParticleShape& shape) {
  for (Eigen::Index j = 0; j < xs.cols(); ++j) project_mean_free_inplace(xs.col(j), shape);
}

Vec center_of_mass(const VecRef& x, const ParticleShape& shape) {
  check_shape(x, shape);
  return Eigen::Map<const Mat>(x.data(), shape.space_dim, shape.n_particles).rowwise().mean();
}

Vec sample_meanfree_gaussian(const ParticleShape& shape, double sigma, Rng& rng) {
  if (sigma < 0) throw Error(Errc::InvalidArgument, "sigma must be non-negative");
  Vec x(shape.n_particles * shape.space_dim);
  rng.fill_normal(x);
  x *= sigma;
  project_mean_free_inplace(x, shape);
  return x;
}

Vec apply_group(const GroupElement& g, const VecRef& x, const ParticleShape& shape) {
  check_shape(x, shape);
  const int s = shape.space_dim;
  if (g.rotation.rows() != s || g.rotation.cols() != s ||
      g.perm.size() != static_cast<std::size_t>(shape.n_particles))
    throw Error(Errc::ShapeMismatch, "group element does not match the particle shape");
  Vec out(x.size());
  for (int i = 0; i < shape.n_particles; ++i) {
    out.segment(i * s, s) = g.rotation * x.segment(g.perm[static_cast<std::size_t>(i)] * s, s);
    if (g.translation.size() == s) out.segment(i * s, s) += g.translation;
  }
  return out;
}

double check_estimator_equivariance(const Target& target, const VecRef& x_t, double sigma, int k,
                                    const GroupElement& g, Rng& rng, bool coupled) {
  if (!target.particles()) throw Error(Errc::InvalidArgument, "equivariance check needs a particle target");
  const ParticleShape shape = *target.particles();
  GroupElement rot = g;
  rot.translation = Vec::Zero(shape.space_dim);

  const Mat eps = draw_estimator_noise(target, k, rng);
  const ScoreEstimate base = estimate_score_from_noise(target, x_t, sigma, eps, EstimatorKind::LogSumExp);

  const Vec gx = apply_group(rot, x_t, shape);
  Mat geps;
  if (coupled) {
    geps.resize(eps.rows(), eps.cols());
    for (Eigen::Index i = 0; i < eps.cols(); ++i) geps.col(i) = apply_group(rot, eps.col(i), shape);
  } else {
    geps = draw_estimator_noise(target, k, rng);
  }
  const ScoreEstimate moved = estimate_score_from_noise(target, gx, sigma, geps, EstimatorKind::LogSumExp);
  return (moved.value - apply_group(rot, base.value, shape)).lpNorm<Eigen::Infinity>();
}

}  // namespace dem
