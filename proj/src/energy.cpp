#include "dem/energy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace dem {

Target::Target(std::string name, int dim, std::optional<ParticleShape> particles)
    : name_(std::move(name)), dim_(dim), particles_(particles) {
  if (dim <= 0) throw Error(Errc::InvalidArgument, "target dimension must be positive");
  if (particles_ && particles_->n_particles * particles_->space_dim != dim)
    throw Error(Errc::InvalidArgument, "dim must equal n_particles * space_dim");
}

double Target::energy(const VecRef& x) const {
  double e = 0.0;
  if (!try_eval(x, e, nullptr))
    throw Error(Errc::DistanceFloor, name_ + ": configuration violates the distance floor");
  return e;
}

double Target::energy_grad(const VecRef& x, Vec& grad) const {
  double e = 0.0;
  grad.resize(dim_);
  if (!try_eval(x, e, &grad))
    throw Error(Errc::DistanceFloor, name_ + ": configuration violates the distance floor");
  return e;
}

Vec Target::grad(const VecRef& x) const {
  Vec g;
  energy_grad(x, g);
  return g;
}

Vec Target::convolved_score(const VecRef&, double) const {
  throw Error(Errc::InvalidArgument, name_ + " has no analytic convolved score");
}

Mat Target::sample_exact(std::size_t, Rng&) const {
  throw Error(Errc::InvalidArgument, name_ + " has no exact sampler");
}

// ---------------------------------------------------------------------------

GaussianOracle::GaussianOracle(int dim) : Target("gaussian", dim) {}

bool GaussianOracle::try_eval(const VecRef& x, double& energy, Vec* grad) const {
  energy = 0.5 * x.squaredNorm();
  if (grad) *grad = x;
  return true;
}

Vec GaussianOracle::convolved_score(const VecRef& x, double sigma) const {
  return -x / (1.0 + sigma * sigma);
}

Mat GaussianOracle::sample_exact(std::size_t n, Rng& rng) const {
  Mat out(dim(), static_cast<Eigen::Index>(n));
  rng.fill_normal(out);
  return out;
}

std::optional<double> GaussianOracle::log_partition() const {
  return 0.5 * dim() * std::log(2.0 * std::numbers::pi);
}

TargetPtr gaussian_oracle(int dim) { return std::make_shared<GaussianOracle>(dim); }

// ---------------------------------------------------------------------------

Vec GmmSpec::weights() const {
  Vec w = (log_weights.array() - log_weights.maxCoeff()).exp();
  return w / w.sum();
}

GmmSpec GmmSpec::standard(std::uint64_t seed) {
  GmmSpec spec;
  Rng rng(derive_seed(seed, streams::kGmmMeans));
  spec.means.resize(2, 40);
  for (int i = 0; i < 40; ++i) {
    spec.means(0, i) = rng.uniform(-40.0, 40.0);
    spec.means(1, i) = rng.uniform(-40.0, 40.0);
  }
  spec.log_weights = Vec::Zero(40);
  return spec;
}

GmmSpec GmmSpec::from_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open GMM means table " + path);
  std::vector<double> vals;
  std::string line;
  while (std::getline(in, line)) {
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::istringstream ls(line);
    double a = 0, b = 0;
    if (!(ls >> a)) continue;
    if (!(ls >> b)) throw Error(Errc::Io, "GMM means table rows need two columns: " + path);
    vals.push_back(a);
    vals.push_back(b);
  }
  if (vals.empty()) throw Error(Errc::Io, "GMM means table is empty: " + path);
  GmmSpec spec;
  const auto n = static_cast<Eigen::Index>(vals.size() / 2);
  spec.means = Eigen::Map<Mat>(vals.data(), 2, n);
  spec.log_weights = Vec::Zero(n);
  return spec;
}

GmmTarget::GmmTarget(GmmSpec spec) : Target("gmm", 2), spec_(std::move(spec)) {
  if (spec_.means.rows() != 2 || spec_.means.cols() == 0)
    throw Error(Errc::InvalidArgument, "GMM means must be a non-empty 2 x n table");
  if (spec_.log_weights.size() != spec_.means.cols())
    throw Error(Errc::InvalidArgument, "GMM weight count differs from mean count");
  if (!(spec_.variance > 0)) throw Error(Errc::InvalidArgument, "GMM variance must be positive");
  const double lmax = spec_.log_weights.maxCoeff();
  const double lse = lmax + std::log((spec_.log_weights.array() - lmax).exp().sum());
  log_w_ = spec_.log_weights.array() - lse;
}

double GmmTarget::log_density(const VecRef& x, double var, Vec* grad) const {
  const auto n = spec_.means.cols();
  Eigen::ArrayXd logc(n);
  for (Eigen::Index i = 0; i < n; ++i)
    logc(i) = log_w_(i) - (x - spec_.means.col(i)).squaredNorm() / (2.0 * var);
  const double m = logc.maxCoeff();
  const Eigen::ArrayXd r = (logc - m).exp();
  const double s = r.sum();
  if (grad) {
    Vec g = Vec::Zero(2);
    for (Eigen::Index i = 0; i < n; ++i) g += r(i) * (spec_.means.col(i) - x);
    *grad = g / (s * var);
  }
  return m + std::log(s) - std::log(2.0 * std::numbers::pi * var);
}

bool GmmTarget::try_eval(const VecRef& x, double& energy, Vec* grad) const {
  energy = -log_density(x, spec_.variance, grad);
  if (grad) *grad = -*grad;
  return true;
}

Vec GmmTarget::convolved_score(const VecRef& x, double sigma) const {
  Vec g;
  log_density(x, spec_.variance + sigma * sigma, &g);
  return g;
}

Mat GmmTarget::sample_exact(std::size_t n, Rng& rng) const {
  const Vec w = spec_.weights();
  Vec cum(w.size());
  std::partial_sum(w.begin(), w.end(), cum.begin());
  const double sd = std::sqrt(spec_.variance);
  Mat out(2, static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double u = rng.uniform();
    Eigen::Index k = std::upper_bound(cum.begin(), cum.end(), u) - cum.begin();
    k = std::min<Eigen::Index>(k, w.size() - 1);
    out(0, j) = spec_.means(0, k) + sd * rng.normal();
    out(1, j) = spec_.means(1, k) + sd * rng.normal();
  }
  return out;
}

// ---------------------------------------------------------------------------

double DoubleWellSpec::pair(double d, double* dfdd) const {
  const double u = d - d0;
  const double u2 = u * u;
  if (dfdd) *dfdd = a + 2.0 * b * u + 4.0 * c * u2 * u;
  return a * u + b * u2 + c * u2 * u2;
}

DoubleWellTarget::DoubleWellTarget(DoubleWellSpec spec)
    : Target("dw4", spec.n_particles * spec.space_dim, ParticleShape{spec.n_particles, spec.space_dim}),
      spec_(spec) {}

bool DoubleWellTarget::try_eval(const VecRef& x, double& energy, Vec* grad) const {
  const int n = spec_.n_particles, s = spec_.space_dim;
  const double pref = 1.0 / (2.0 * spec_.tau);
  if (grad) grad->setZero(dim());
  double e = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const Vec r = x.segment(i * s, s) - x.segment(j * s, s);
      const double d = r.norm();
      double df = 0.0;
      e += spec_.pair(d, grad ? &df : nullptr);
      if (grad && d > 0.0) {
        const Vec f = (pref * df / d) * r;
        grad->segment(i * s, s) += f;
        grad->segment(j * s, s) -= f;
      }
    }
  }
  energy = pref * e;
  return true;
}

// ---------------------------------------------------------------------------

double LennardJonesSpec::pair(double d, double* dfdd) const {
  const double q = r_m / d;
  const double q6 = q * q * q * q * q * q;
  const double q12 = q6 * q6;
  if (dfdd) *dfdd = (-12.0 * q12 + 12.0 * q6) / d;
  return q12 - 2.0 * q6;
}

LennardJonesTarget::LennardJonesTarget(LennardJonesSpec spec)
    : Target("lj" + std::to_string(spec.n_particles), spec.n_particles * spec.space_dim,
             ParticleShape{spec.n_particles, spec.space_dim}),
      spec_(spec) {
  if (!(spec_.distance_floor > 0)) throw Error(Errc::InvalidArgument, "distance floor must be positive");
}

double LennardJonesTarget::lj_part(const VecRef& x) const {
  const int n = spec_.n_particles, s = spec_.space_dim;
  double e = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double d = (x.segment(i * s, s) - x.segment(j * s, s)).norm();
      if (d <= spec_.distance_floor)
        throw Error(Errc::DistanceFloor, "pair distance below the Lennard-Jones floor");
      e += spec_.pair(d);
    }
  // ordered-pair sum with eps/(2 tau) equals eps/tau over unordered pairs
  return spec_.epsilon / spec_.tau * e;
}

double LennardJonesTarget::osc_part(const VecRef& x) const {
  const int n = spec_.n_particles, s = spec_.space_dim;
  const auto P = Eigen::Map<const Mat>(x.data(), s, n);
  const Vec com = P.rowwise().mean();
  return spec_.osc_scale * 0.5 * (P.colwise() - com).squaredNorm();
}

bool LennardJonesTarget::try_eval(const VecRef& x, double& energy, Vec* grad) const {
  const int n = spec_.n_particles, s = spec_.space_dim;
  const double pref = spec_.epsilon / spec_.tau;
  if (grad) grad->setZero(dim());
  double e = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double r[3];
      double d2 = 0.0;
      for (int k = 0; k < s; ++k) {
        r[k] = x(i * s + k) - x(j * s + k);
        d2 += r[k] * r[k];
      }
      const double d = std::sqrt(d2);
      if (d <= spec_.distance_floor) return false;
      double df = 0.0;
      e += spec_.pair(d, grad ? &df : nullptr);
      if (grad) {
        const double f = pref * df / d;
        for (int k = 0; k < s; ++k) {
          (*grad)(i * s + k) += f * r[k];
          (*grad)(j * s + k) -= f * r[k];
        }
      }
    }
  }
  const auto P = Eigen::Map<const Mat>(x.data(), s, n);
  const Vec com = P.rowwise().mean();
  const Mat disp = P.colwise() - com;
  energy = pref * e + spec_.osc_scale * 0.5 * disp.squaredNorm();
  if (grad) Eigen::Map<Mat>(grad->data(), s, n) += spec_.osc_scale * disp;
  return true;
}

// ---------------------------------------------------------------------------

ScaledTarget::ScaledTarget(TargetPtr base, double scale)
    : Target(base->name(), base->dim(), base->particles()), base_(std::move(base)), scale_(scale) {
  if (!(scale_ > 0)) throw Error(Errc::InvalidArgument, "scale must be positive");
}

bool ScaledTarget::try_eval(const VecRef& x, double& energy, Vec* grad) const {
  const Vec xs = scale_ * x;
  if (!base_->try_eval(xs, energy, grad)) return false;
  if (grad) *grad *= scale_;
  return true;
}

Vec ScaledTarget::convolved_score(const VecRef& x, double sigma) const {
  return scale_ * base_->convolved_score(scale_ * x, scale_ * sigma);
}

Mat ScaledTarget::sample_exact(std::size_t n, Rng& rng) const {
  return base_->sample_exact(n, rng) / scale_;
}

std::optional<double> ScaledTarget::log_partition() const {
  auto z = base_->log_partition();
  if (!z) return z;
  return *z - dim() * std::log(scale_);
}

ShiftedTarget::ShiftedTarget(TargetPtr base, double shift)
    : Target(base->name(), base->dim(), base->particles()), base_(std::move(base)), shift_(shift) {}

bool ShiftedTarget::try_eval(const VecRef& x, double& energy, Vec* grad) const {
  if (!base_->try_eval(x, energy, grad)) return false;
  energy += shift_;
  return true;
}

ConstantTarget::ConstantTarget(int dim, double value) : Target("constant", dim), value_(value) {}

bool ConstantTarget::try_eval(const VecRef&, double& energy, Vec* grad) const {
  energy = value_;
  if (grad) grad->setZero(dim());
  return true;
}

std::vector<double> pairwise_distances(const VecRef& x, const ParticleShape& shape) {
  const int n = shape.n_particles, s = shape.space_dim;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) out.push_back((x.segment(i * s, s) - x.segment(j * s, s)).norm());
  return out;
}

}  // namespace dem
